//! Prompt builders for every generation task.
//!
//! Prompts double as cache keys (see `llm_client::canonical_request_hash`),
//! so anything that must distinguish two generations — item tags, retry
//! attempts, re-draws — is spelled out in the prompt text. The fixed opening
//! phrases also let scripted backends dispatch on task kind.

use crate::skill_graph::Skill;

use super::ExerciseItem;

/// Sentinel opening the key-concept section of a textbook response.
pub const KEY_CONCEPTS_MARKER: &str = "== KEY CONCEPTS ==";
/// Sentinel opening the homework section of a textbook response.
pub const HOMEWORK_MARKER: &str = "== HOMEWORK ==";
/// Phrase introducing the final answer line of a solution sample.
pub const ANSWER_PHRASE: &str = "The answer is";

fn skill_list(skills: &[&Skill]) -> String {
    skills.iter().map(|s| format!("<{}>", s.name)).collect::<Vec<_>>().join(", ")
}

fn attempt_suffix(attempt: u32) -> String {
    if attempt <= 1 {
        String::new()
    } else {
        format!("\n(Attempt {attempt}: follow the required output format exactly.)")
    }
}

/// Textbook chapter generation for one skill.
pub fn textbook_prompt(skill: &Skill, predecessors: &[&Skill], attempt: u32) -> String {
    let predecessor_text = if predecessors.is_empty() {
        "This is a foundational skill with no prerequisites.".to_string()
    } else {
        format!(
            "Its prerequisite skills are: {}. Open by linking the new material to each of them by name.",
            predecessors.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(", ")
        )
    };
    let description = skill
        .description
        .as_deref()
        .map(|d| format!(" ({d})"))
        .unwrap_or_default();
    format!(
        "Write a textbook chapter teaching the skill \"{name}\"{description}. \
         {predecessor_text} \
         Cover the material in detail with worked examples. \
         After the chapter body, emit a line containing exactly \"{kc}\" followed by one key concept per line. \
         Then emit a line containing exactly \"{hw}\" followed by homework problems, one per line, \
         each starting with the bracketed number of the key concept it practices, e.g. \"[1] ...\". \
         Every key concept must be covered by at least one homework problem, and homework must stay \
         within this single skill.{attempt}",
        name = skill.name,
        kc = KEY_CONCEPTS_MARKER,
        hw = HOMEWORK_MARKER,
        attempt = attempt_suffix(attempt),
    )
}

/// Exercise problem generation from a sampled skill subset. `tag` keeps
/// otherwise-identical requests distinct in the replay cache so each item
/// gets its own generation.
pub fn exercise_problem_prompt(skills: &[&Skill], tag: &str, attempt: u32) -> String {
    format!(
        "Write one exercise problem that requires all of the following skills to solve: {skills}. \
         The problem must need every listed skill, not just one. \
         Respond with the problem statement only.\nItem tag: {tag}{attempt}",
        skills = skill_list(skills),
        attempt = attempt_suffix(attempt),
    )
}

/// Solution sampling for self-consistency. The response format is one
/// numbered step per line, each step grounded in a named skill, ending with
/// an answer line.
pub fn solve_prompt(problem: &str, skills: &[&Skill], redraw: bool) -> String {
    let redraw_note = if redraw {
        "\n(Re-draw: the previous samples did not agree on an answer.)"
    } else {
        ""
    };
    format!(
        "Solve the following problem step by step.\nProblem: {problem}\n\
         Allowed skills: {skills}. \
         Write numbered steps, and ground every step in one allowed skill by writing \
         \"Using the Skill <Name>\" inside the step. \
         End with a final line \"{answer} X.\"{redraw_note}",
        skills = skill_list(skills),
        answer = ANSWER_PHRASE,
    )
}

/// Generate a problem similar to a hard-to-learn parent item.
pub fn augment_problem_prompt(parent: &ExerciseItem, skills: &[&Skill], variant: usize) -> String {
    let solution = parent
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.text))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "Write one new problem similar to the example below, exercising the same skills: {skills}.\n\
         Example problem: {problem}\n\
         Example solution:\n{solution}\n\
         Example answer: {answer}\n\
         Respond with the new problem statement only.\nVariant: {variant}",
        skills = skill_list(skills),
        problem = parent.problem,
        answer = parent.final_answer,
    )
}

/// Compose two easy problems into one harder problem requiring both
/// problems' skills.
pub fn compose_problem_prompt(a: &ExerciseItem, b: &ExerciseItem, skills: &[&Skill]) -> String {
    format!(
        "Combine the following two problems into a single harder problem that \
         requires all of these skills: {skills}.\n\
         Problem A: {pa}\nProblem B: {pb}\n\
         Respond with the combined problem statement only.",
        skills = skill_list(skills),
        pa = a.problem,
        pb = b.problem,
    )
}
