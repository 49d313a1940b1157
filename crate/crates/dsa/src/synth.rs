//! Deterministic synthetic fixtures: a full-scale math syllabus, a small
//! learnable classification task dressed as an exercise corpus, and a
//! scripted generation client that understands every pipeline prompt.
//!
//! Everything here is a pure function of its seeds, which makes it suitable
//! for offline demos, the `--backend stub` CLI mode, and the reproducibility
//! experiments in the test suites.


use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::datagen::{normalize_answer, ExerciseItem, Provenance, SolutionStep};
use crate::llm_client::{
    BackendKind, ClientError, GenerationClient, GenerationRequest, GenerationResponse, TokenUsage,
};
use crate::skill_graph::{build_from_syllabus, SkillGraph, SyllabusLevel};
use crate::util::{approx_token_count, derive_seed, stable_bucket};

/// Level names and skill counts of the full math syllabus fixture
/// (Pre-K through Pre-calculus, 4,907 skills).
pub const MATH_SYLLABUS_LEVELS: &[(&str, usize)] = &[
    ("Pre-K", 135),
    ("Kindergarten", 258),
    ("First Grade", 284),
    ("Second Grade", 349),
    ("Third Grade", 425),
    ("Fourth Grade", 415),
    ("Fifth Grade", 447),
    ("Sixth Grade", 413),
    ("Seventh Grade", 374),
    ("Eighth Grade", 392),
    ("Algebra 1", 396),
    ("Algebra 2", 367),
    ("Geometry", 277),
    ("Pre-calculus", 375),
];

/// The full-scale math syllabus fixture: synthetic skill names, real level
/// structure and per-level counts.
pub fn math_syllabus() -> Vec<SyllabusLevel> {
    MATH_SYLLABUS_LEVELS
        .iter()
        .enumerate()
        .map(|(index, (name, count))| SyllabusLevel {
            level_name: name.to_string(),
            level_index: index as u32,
            skills: (0..*count)
                .map(|i| format!("{} skill {:03}", name.to_lowercase(), i))
                .collect(),
        })
        .collect()
}

/// A small syllabus for demos and quick tests: three levels, twelve skills.
pub fn demo_syllabus() -> Vec<SyllabusLevel> {
    let levels: [(&str, &[&str]); 3] = [
        ("Foundations", &["counting", "addition", "subtraction", "comparison"]),
        ("Operations", &["multiplication", "division", "fractions", "measurement"]),
        ("Applications", &["ratios", "percentages", "equations", "word problems"]),
    ];
    levels
        .iter()
        .enumerate()
        .map(|(index, (name, skills))| SyllabusLevel {
            level_name: name.to_string(),
            level_index: index as u32,
            skills: skills.iter().map(|s| s.to_string()).collect(),
        })
        .collect()
}

/// Shape of the synthetic classification task.
#[derive(Debug, Clone)]
pub struct SynthTaskSpec {
    pub classes: usize,
    pub signal_words_per_class: usize,
    pub noise_words: usize,
    /// Inclusive range of tokens per problem.
    pub problem_tokens: (usize, usize),
    /// Fraction of tokens drawn from the item's class pool.
    pub signal_ratio: f64,
    pub seed: u64,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        SynthTaskSpec {
            classes: 10,
            signal_words_per_class: 6,
            noise_words: 20,
            problem_tokens: (8, 14),
            signal_ratio: 0.7,
            seed: 0,
        }
    }
}

/// A learnable toy task: each problem's tokens mostly come from one class's
/// signal vocabulary and its final answer names that class. Bag-of-token
/// features therefore predict the answer, while a corrupted answer leaves a
/// persistent high-loss footprint.
#[derive(Debug, Clone)]
pub struct SynthTask {
    spec: SynthTaskSpec,
    class_answers: Vec<String>,
    class_words: Vec<Vec<String>>,
    noise_pool: Vec<String>,
    graph: SkillGraph,
}

impl SynthTask {
    pub fn build(spec: SynthTaskSpec) -> Self {
        assert!(spec.classes >= 2, "need at least two classes");
        // Pick class answers whose label buckets are pairwise distinct, so a
        // corrupted answer always changes the featurized label.
        let mut class_answers = Vec::with_capacity(spec.classes);
        let mut used_buckets = std::collections::BTreeSet::new();
        let mut candidate = 3u64;
        while class_answers.len() < spec.classes {
            let answer = candidate.to_string();
            let bucket = stable_bucket(&normalize_answer(&answer), spec.classes);
            if used_buckets.insert(bucket) {
                class_answers.push(answer);
            }
            candidate += 7;
        }
        let class_words = (0..spec.classes)
            .map(|c| (0..spec.signal_words_per_class).map(|j| format!("w{c}x{j}")).collect())
            .collect();
        let noise_pool = (0..spec.noise_words).map(|j| format!("fill{j}")).collect();
        let graph = build_from_syllabus(&demo_syllabus()).expect("demo syllabus is valid");
        SynthTask { spec, class_answers, class_words, noise_pool, graph }
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn graph(&self) -> &SkillGraph {
        &self.graph
    }

    pub fn class_answers(&self) -> &[String] {
        &self.class_answers
    }

    fn problem_for_class(&self, class: usize, rng: &mut ChaCha8Rng) -> String {
        let (lo, hi) = self.spec.problem_tokens;
        let n = rng.gen_range(lo..=hi);
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..n {
            if rng.gen_bool(self.spec.signal_ratio) {
                tokens.push(self.class_words[class][rng.gen_range(0..self.class_words[class].len())].clone());
            } else {
                tokens.push(self.noise_pool[rng.gen_range(0..self.noise_pool.len())].clone());
            }
        }
        format!("Evaluate {}.", tokens.join(" "))
    }

    /// Generate `n` exercise items, classes balanced round-robin.
    pub fn generate_corpus(&self, n: usize) -> Vec<ExerciseItem> {
        (0..n)
            .map(|i| {
                let class = i % self.spec.classes;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(self.spec.seed, &format!("item-{i}")));
                let problem = self.problem_for_class(class, &mut rng);
                let skill_ids = self
                    .graph
                    .sample_skill_subset(
                        &crate::skill_graph::CountDistribution::TruncatedGeometric {
                            q: crate::skill_graph::DEFAULT_SKILL_COUNT_Q,
                            min: 1,
                            max: 4,
                        },
                        derive_seed(self.spec.seed, &format!("skills-{i}")),
                    )
                    .expect("demo graph is non-empty");
                let steps = skill_ids
                    .iter()
                    .map(|sid| {
                        let name = &self.graph.get(sid).unwrap().name;
                        SolutionStep {
                            text: format!("Using the Skill <{name}>, reduce the expression."),
                            grounded_skill_id: sid.clone(),
                        }
                    })
                    .collect();
                ExerciseItem {
                    id: format!("syn-{i:05}"),
                    required_skill_ids: skill_ids,
                    problem,
                    steps,
                    final_answer: self.class_answers[class].clone(),
                    provenance: Provenance::Generated,
                    parent_ids: vec![],
                }
            })
            .collect()
    }

    /// The class whose signal words dominate `text`; ties break to the
    /// lowest class index.
    pub fn infer_class(&self, text: &str) -> usize {
        let mut counts = vec![0usize; self.spec.classes];
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let token = token.to_lowercase();
            for (c, words) in self.class_words.iter().enumerate() {
                if words.iter().any(|w| *w == token) {
                    counts[c] += 1;
                }
            }
        }
        counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .unwrap_or(0)
    }

    /// Scripted client wired to this task's vocabulary.
    pub fn client(&self) -> SynthClient {
        SynthClient { task: Some(self.clone()), classes: self.spec.classes, salt: self.spec.seed }
    }
}

/// Replace the final answers of a deterministic `fraction` of items with a
/// different answer from the corpus. Returns the corrupted ids.
pub fn inject_label_noise(
    items: &mut [ExerciseItem],
    fraction: f64,
    seed: u64,
) -> std::collections::BTreeSet<String> {
    if items.is_empty() {
        return Default::default();
    }
    let mut answers: Vec<String> = items.iter().map(|i| normalize_answer(&i.final_answer)).collect();
    answers.sort();
    answers.dedup();
    let n = ((items.len() as f64 * fraction).ceil() as usize).min(items.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "label-noise"));
    let mut indices: Vec<usize> = (0..items.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(n);
    let mut corrupted = std::collections::BTreeSet::new();
    for i in indices {
        let own = normalize_answer(&items[i].final_answer);
        let candidates: Vec<&String> = answers.iter().filter(|a| **a != own).collect();
        items[i].final_answer = if candidates.is_empty() {
            format!("not-{own}")
        } else {
            candidates[rng.gen_range(0..candidates.len())].clone()
        };
        corrupted.insert(items[i].id.clone());
    }
    corrupted
}

/// Deterministic scripted backend. Dispatches on the fixed opening phrase of
/// each pipeline prompt and derives all content from a hash of the prompt,
/// so identical requests always produce identical responses.
pub struct SynthClient {
    task: Option<SynthTask>,
    classes: usize,
    salt: u64,
}

impl SynthClient {
    /// A task-free client for arbitrary graphs: answers are hash-derived but
    /// self-consistent.
    pub fn generic(salt: u64) -> Self {
        SynthClient { task: None, classes: 16, salt }
    }

    fn rng_for(&self, prompt: &str) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.salt.to_le_bytes());
        hasher.update(prompt.as_bytes());
        let digest = hasher.finalize();
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
    }

    fn tagged_skills(prompt: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = prompt;
        while let Some(start) = rest.find('<') {
            let Some(end) = rest[start + 1..].find('>') else { break };
            out.push(rest[start + 1..start + 1 + end].to_string());
            rest = &rest[start + 1 + end + 1..];
        }
        out.dedup();
        out
    }

    fn line_after<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
        prompt.lines().find_map(|l| l.strip_prefix(prefix)).map(str::trim)
    }

    fn decompose(&self, prompt: &str) -> String {
        let target = prompt
            .strip_prefix("What are the basic skills that are required to learn ")
            .and_then(|rest| rest.split('?').next())
            .unwrap_or("")
            .trim();
        // Two generations of sub-skills, then leaves.
        for marker in ["basics", "methods", "practice"] {
            if target.to_lowercase().contains(marker) {
                return "[]".to_string();
            }
        }
        let subs = vec![
            format!("{target} basics"),
            format!("{target} methods"),
            format!("{target} practice"),
        ];
        serde_json::to_string(&subs).unwrap()
    }

    fn textbook(&self, prompt: &str) -> String {
        let name = prompt
            .split('"')
            .nth(1)
            .unwrap_or("the skill")
            .to_string();
        let predecessors = prompt
            .split("Its prerequisite skills are: ")
            .nth(1)
            .and_then(|rest| rest.split('.').next())
            .map(|s| s.trim().to_string())
            .unwrap_or_default();
        let mut rng = self.rng_for(prompt);
        let example_a = rng.gen_range(2..9);
        let example_b = rng.gen_range(2..9);
        let link_sentence = if predecessors.is_empty() {
            "This chapter starts from first principles.".to_string()
        } else {
            format!("This chapter builds directly on {predecessors}.")
        };
        format!(
            "Chapter: {name}\n\n{link_sentence}\n\
             We develop {name} through worked examples such as {example_a} and {example_b}, \
             practicing each idea until it is routine.\n\n\
             == KEY CONCEPTS ==\n\
             1. The definition of {name}\n\
             2. Applying {name} to worked examples\n\
             3. Common mistakes in {name}\n\
             == HOMEWORK ==\n\
             [1] State the definition of {name} in your own words.\n\
             [2] Work three new examples of {name}.\n\
             [3] Find the mistake in a worked example of {name}.\n"
        )
    }

    fn problem(&self, prompt: &str) -> String {
        let mut rng = self.rng_for(prompt);
        match &self.task {
            Some(task) => {
                let class = stable_bucket(prompt, task.spec.classes);
                task.problem_for_class(class, &mut rng)
            }
            None => {
                let skills = Self::tagged_skills(prompt);
                let quantities: Vec<String> =
                    (0..skills.len().max(2)).map(|_| rng.gen_range(2..50).to_string()).collect();
                format!(
                    "A puzzle combines the quantities {} using {}.",
                    quantities.join(", "),
                    skills.join(" and ")
                )
            }
        }
    }

    fn answer_for_problem(&self, problem: &str) -> String {
        match &self.task {
            Some(task) => task.class_answers[task.infer_class(problem)].clone(),
            None => stable_bucket(problem, 97).to_string(),
        }
    }

    fn solve(&self, prompt: &str) -> String {
        let problem = Self::line_after(prompt, "Problem: ").unwrap_or("");
        let skills = Self::tagged_skills(prompt);
        let answer = self.answer_for_problem(problem);
        let mut lines = Vec::new();
        let mut step = 1;
        for skill in &skills {
            lines.push(format!(
                "{step}. Using the Skill <{skill}>, simplify the statement one stage further."
            ));
            step += 1;
        }
        if lines.is_empty() {
            lines.push(format!("{step}. Work the problem directly."));
            step += 1;
        }
        lines.push(format!("{step}. The answer is {answer}."));
        lines.join("\n")
    }

    fn augment(&self, prompt: &str) -> String {
        let mut rng = self.rng_for(prompt);
        match &self.task {
            Some(task) => {
                let answer = Self::line_after(prompt, "Example answer: ").unwrap_or("");
                let class = task
                    .class_answers
                    .iter()
                    .position(|a| a == answer)
                    .unwrap_or_else(|| stable_bucket(answer, task.spec.classes));
                task.problem_for_class(class, &mut rng)
            }
            None => {
                let parent = Self::line_after(prompt, "Example problem: ").unwrap_or("a puzzle");
                let twist = rng.gen_range(2..50);
                format!("{parent} This time the key quantity is {twist}.")
            }
        }
    }

    fn compose(&self, prompt: &str) -> String {
        let a = Self::line_after(prompt, "Problem A: ").unwrap_or("");
        let b = Self::line_after(prompt, "Problem B: ").unwrap_or("");
        format!("{a} After finishing that, also: {b}")
    }
}

impl GenerationClient for SynthClient {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        req.validate()?;
        let prompt = req.prompt.as_str();
        let sample = if prompt.starts_with("What are the basic skills") {
            self.decompose(prompt)
        } else if prompt.starts_with("Write a textbook chapter") {
            self.textbook(prompt)
        } else if prompt.starts_with("Write one exercise problem") {
            self.problem(prompt)
        } else if prompt.starts_with("Solve the following problem") {
            self.solve(prompt)
        } else if prompt.starts_with("Write one new problem similar to") {
            self.augment(prompt)
        } else if prompt.starts_with("Combine the following two problems") {
            self.compose(prompt)
        } else {
            format!("ack {}", stable_bucket(prompt, self.classes))
        };
        let samples = vec![sample; req.n_samples as usize];
        let usage = TokenUsage {
            prompt_tokens: approx_token_count(prompt),
            completion_tokens: samples.iter().map(|s| approx_token_count(s)).sum(),
        };
        Ok(GenerationResponse { samples, usage, backend: BackendKind::Stub })
    }
}
