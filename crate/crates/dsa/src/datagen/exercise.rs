//! Exercise generation: multi-skill problems with skill-grounded solution
//! steps and self-consistency answer selection.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm_client::{
    GenerationClient, GenerationRequest, SamplingParams, EXERCISE_SAMPLING,
};
use crate::skill_graph::{normalize_name, Skill, SkillGraph, SkillId};

use super::answer::{majority_index, normalize_answer};
use super::prompts::{exercise_problem_prompt, solve_prompt};
use super::DatagenError;

/// How an exercise item entered the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generated,
    AugmentedSimilar,
    Composed,
}

/// One solution step, grounded in a specific skill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionStep {
    pub text: String,
    pub grounded_skill_id: SkillId,
}

/// One generated exercise: a problem, its skill-grounded solution steps, and
/// the normalized final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExerciseItem {
    pub id: String,
    pub required_skill_ids: Vec<SkillId>,
    pub problem: String,
    pub steps: Vec<SolutionStep>,
    pub final_answer: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parent_ids: Vec<String>,
}

impl ExerciseItem {
    pub fn validate(&self, graph: Option<&SkillGraph>) -> Result<(), DatagenError> {
        if self.required_skill_ids.is_empty() {
            return Err(DatagenError::InvalidExercise(format!(
                "{}: required_skill_ids is empty",
                self.id
            )));
        }
        if self.final_answer.is_empty() {
            return Err(DatagenError::InvalidExercise(format!("{}: final_answer is empty", self.id)));
        }
        if self.steps.is_empty() {
            return Err(DatagenError::InvalidExercise(format!("{}: no solution steps", self.id)));
        }
        for step in &self.steps {
            if !self.required_skill_ids.contains(&step.grounded_skill_id) {
                return Err(DatagenError::InvalidExercise(format!(
                    "{}: step grounded in {} which is not a required skill",
                    self.id, step.grounded_skill_id
                )));
            }
        }
        match self.provenance {
            Provenance::Generated => {
                if !self.parent_ids.is_empty() {
                    return Err(DatagenError::InvalidExercise(format!(
                        "{}: generated items have no parents",
                        self.id
                    )));
                }
            }
            Provenance::AugmentedSimilar => {
                if self.parent_ids.len() != 1 {
                    return Err(DatagenError::InvalidExercise(format!(
                        "{}: augmented items have exactly 1 parent, got {}",
                        self.id,
                        self.parent_ids.len()
                    )));
                }
            }
            Provenance::Composed => {
                if self.parent_ids.len() != 2 {
                    return Err(DatagenError::InvalidExercise(format!(
                        "{}: composed items have exactly 2 parents, got {}",
                        self.id,
                        self.parent_ids.len()
                    )));
                }
            }
        }
        if let Some(g) = graph {
            for id in &self.required_skill_ids {
                if !g.contains(id) {
                    return Err(DatagenError::UnknownSkill(id.clone()));
                }
            }
        }
        Ok(())
    }
}

static STEP_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[Uu]sing (?:the )?[Ss]kill\s*<([^>]+)>").unwrap());
static ANSWER_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)the answer is\s*(.+)").unwrap());

pub(super) struct ParsedSolution {
    pub steps: Vec<(String, Vec<String>)>, // (step text, tag names in order)
    pub answer: String,                    // normalized
}

/// Parse one solution sample: numbered step lines plus a final answer line.
pub(super) fn parse_solution_sample(sample: &str) -> Result<ParsedSolution, DatagenError> {
    let mut steps = Vec::new();
    let mut answer: Option<String> = None;
    for line in sample.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let content = {
            let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
            match line[digits.len()..].strip_prefix('.') {
                Some(rest) if !digits.is_empty() => rest.trim(),
                _ => line,
            }
        };
        // The answer phrase may terminate the sample on its own line or as a
        // final numbered line; it is not a solution step.
        if let Some(caps) = ANSWER_LINE.captures(content) {
            let raw = caps.get(1).unwrap().as_str();
            answer = Some(normalize_answer(raw));
            if content.to_lowercase().starts_with("the answer is") {
                continue;
            }
        }
        let tags: Vec<String> =
            STEP_TAG.captures_iter(content).map(|c| c[1].trim().to_string()).collect();
        steps.push((content.to_string(), tags));
    }
    let answer = answer
        .filter(|a| !a.is_empty())
        .ok_or_else(|| DatagenError::Unparseable("solution sample has no answer line".into()))?;
    if steps.is_empty() {
        return Err(DatagenError::Unparseable("solution sample has no steps".into()));
    }
    Ok(ParsedSolution { steps, answer })
}

fn word_set(text: &str) -> std::collections::BTreeSet<String> {
    normalize_name(text).split(' ').filter(|w| !w.is_empty()).map(|w| w.to_string()).collect()
}

/// Ground every step of a parsed solution in one of the required skills.
///
/// A step's explicit tag wins when it names a required skill; otherwise the
/// tag is inferred from the required skill whose name tokens overlap the
/// step text the most. A step with no usable tag and zero overlap rejects
/// the sample: skill grounding is a structural requirement.
pub(super) fn ground_steps(
    parsed: &ParsedSolution,
    required: &[&Skill],
) -> Result<Vec<SolutionStep>, DatagenError> {
    let mut out = Vec::with_capacity(parsed.steps.len());
    for (text, tags) in &parsed.steps {
        let mut grounded: Option<SkillId> = None;
        for tag in tags {
            let norm = normalize_name(tag);
            if let Some(skill) = required.iter().find(|s| normalize_name(&s.name) == norm) {
                grounded = Some(skill.id.clone());
                break;
            }
        }
        if grounded.is_none() {
            let step_words = word_set(text);
            let mut best: Option<(usize, &&Skill)> = None;
            for skill in required {
                let overlap = word_set(&skill.name).intersection(&step_words).count();
                if overlap > 0 {
                    best = match best {
                        Some((count, _)) if count >= overlap => best,
                        _ => Some((overlap, skill)),
                    };
                }
            }
            grounded = best.map(|(_, s)| s.id.clone());
        }
        match grounded {
            Some(id) => out.push(SolutionStep { text: text.clone(), grounded_skill_id: id }),
            None => {
                return Err(DatagenError::Ungroundable { step: text.clone() });
            }
        }
    }
    Ok(out)
}

/// Draw `k` solution samples for `problem` and select the majority answer.
///
/// Ties trigger exactly one re-draw of `k` fresh samples (the re-draw prompt
/// is marked so replay caches key it separately); a persistent tie rejects
/// the item. Among majority-agreeing samples the first whose steps can all
/// be skill-grounded supplies the kept steps.
pub(crate) fn solve_with_consistency(
    problem: &str,
    required: &[&Skill],
    client: &dyn GenerationClient,
    k: u32,
    params: SamplingParams,
    max_tokens: u32,
) -> Result<(Vec<SolutionStep>, String), DatagenError> {
    if k == 0 {
        return Err(DatagenError::InvalidConfig("self-consistency k must be >= 1".into()));
    }
    let mut last_reason = String::new();
    for redraw in [false, true] {
        let prompt = solve_prompt(problem, required, redraw);
        let req = GenerationRequest::new(&prompt, params)
            .with_n_samples(k)
            .with_max_tokens(max_tokens);
        let resp = client.generate(&req)?;
        let mut parsed: Vec<Option<ParsedSolution>> = Vec::with_capacity(resp.samples.len());
        let mut answers: Vec<String> = Vec::with_capacity(resp.samples.len());
        for sample in &resp.samples {
            match parse_solution_sample(sample) {
                Ok(p) => {
                    answers.push(p.answer.clone());
                    parsed.push(Some(p));
                }
                Err(_) => {
                    // Unparseable samples still occupy a vote slot with an
                    // empty answer so k stays honest.
                    answers.push(String::new());
                    parsed.push(None);
                }
            }
        }
        match majority_index(&answers) {
            None => {
                last_reason = format!("no majority among answers {answers:?}");
                continue;
            }
            Some(winner_idx) => {
                let winner = answers[winner_idx].clone();
                if winner.is_empty() {
                    last_reason = "majority of samples were unparseable".to_string();
                    continue;
                }
                let mut ground_err = String::new();
                for (p, a) in parsed.iter().zip(&answers) {
                    if *a != winner {
                        continue;
                    }
                    let p = p.as_ref().expect("non-empty answer implies parsed");
                    match ground_steps(p, required) {
                        Ok(steps) => return Ok((steps, winner)),
                        Err(e) => ground_err = e.to_string(),
                    }
                }
                last_reason = format!("no majority-agreeing sample grounded: {ground_err}");
                continue;
            }
        }
    }
    Err(DatagenError::Rejected { reason: last_reason })
}

/// Generate one exercise item for a sampled skill subset.
///
/// One problem is generated at exercise sampling parameters, then `k`
/// solution samples are drawn and the majority answer selected.
pub fn generate_exercise(
    id: &str,
    skill_ids: &[SkillId],
    graph: &SkillGraph,
    client: &dyn GenerationClient,
    k: u32,
    max_tokens: u32,
) -> Result<ExerciseItem, DatagenError> {
    if skill_ids.is_empty() {
        return Err(DatagenError::InvalidConfig("skill_ids is empty".into()));
    }
    let required: Vec<&Skill> = skill_ids
        .iter()
        .map(|sid| graph.get(sid).ok_or_else(|| DatagenError::UnknownSkill(sid.clone())))
        .collect::<Result<_, _>>()?;
    let prompt = exercise_problem_prompt(&required, id, 1);
    let req = GenerationRequest::new(&prompt, EXERCISE_SAMPLING).with_max_tokens(max_tokens);
    let resp = client.generate(&req)?;
    let problem = resp.samples[0].trim().to_string();
    if problem.is_empty() {
        return Err(DatagenError::Rejected { reason: "empty problem statement".into() });
    }
    let (steps, final_answer) =
        solve_with_consistency(&problem, &required, client, k, EXERCISE_SAMPLING, max_tokens)?;
    let item = ExerciseItem {
        id: id.to_string(),
        required_skill_ids: skill_ids.to_vec(),
        problem,
        steps,
        final_answer,
        provenance: Provenance::Generated,
        parent_ids: vec![],
    };
    item.validate(Some(graph))?;
    Ok(item)
}
