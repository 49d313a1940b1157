//! Training-data generation: the textbook corpus (curriculum pre-training
//! data) and the exercise corpus (instruction-tuning data), emitted as JSONL
//! with per-level statistics.

pub mod answer;
pub mod prompts;

mod exercise;
mod textbook;

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_client::{bounded_parallel_map, ClientError, GenerationClient};
use crate::skill_graph::{CountDistribution, GraphError, SkillGraph, SkillId};
use crate::util::{approx_token_count, derive_seed, write_atomic};

pub use answer::normalize_answer;
pub(crate) use exercise::solve_with_consistency;
pub use exercise::{generate_exercise, ExerciseItem, Provenance, SolutionStep};
pub use textbook::{generate_textbook, HomeworkProblem, TextbookDoc};

/// Schema tag carried by every textbook corpus line.
pub const TEXTBOOK_SCHEMA: &str = "textbook/v1";
/// Schema tag carried by every exercise corpus line.
pub const EXERCISE_SCHEMA: &str = "exercise/v1";

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("textbook violates constraints: {0}")]
    InvalidTextbook(String),
    #[error("exercise violates constraints: {0}")]
    InvalidExercise(String),
    #[error("response is unparseable: {0}")]
    Unparseable(String),
    #[error("skill {0} is not in the graph")]
    UnknownSkill(SkillId),
    #[error("item rejected: {reason}")]
    Rejected { reason: String },
    #[error("step cannot be grounded in any required skill: {step:?}")]
    Ungroundable { step: String },
    #[error("{what} failed after one regeneration: {cause}")]
    RetryExhausted { what: String, cause: Box<DatagenError> },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{failed} of {attempted} items failed generation (rate {rate:.2} > allowed {allowed:.2})")]
    TooManyFailures { failed: usize, attempted: usize, rate: f64, allowed: f64 },
    #[error("corpus line {line} has schema {got:?}, expected {want:?}")]
    SchemaMismatch { line: usize, got: String, want: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("corpus io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus decode error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Knobs for corpus generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatagenConfig {
    /// Number of exercise items to generate.
    pub exercise_count: usize,
    /// Self-consistency sample count for answers.
    pub self_consistency_k: u32,
    /// Distribution of skills-per-problem.
    pub count_distribution: CountDistribution,
    /// Base seed for per-item skill sampling.
    pub seed: u64,
    /// Per-item failures are tolerated up to this rate.
    pub max_failure_rate: f64,
    pub max_tokens: u32,
    /// Bound on concurrent client requests.
    pub parallelism: usize,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            exercise_count: 100,
            self_consistency_k: crate::llm_client::DEFAULT_SELF_CONSISTENCY_K,
            count_distribution: CountDistribution::default(),
            seed: 0,
            max_failure_rate: 0.1,
            max_tokens: crate::llm_client::DEFAULT_MAX_TOKENS,
            parallelism: 4,
        }
    }
}

/// One item that failed generation, kept for the corpus report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item: String,
    pub reason: String,
}

/// Per-level row of the corpus statistics report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStat {
    pub level: u32,
    pub skill_count: usize,
    pub token_count: u64,
}

/// Statistics report: level rows plus totals. Token counts are approximate
/// (whitespace-delimited).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub levels: Vec<LevelStat>,
    pub total_skills: usize,
    pub total_tokens: u64,
    pub textbook_docs: usize,
    pub exercise_items: usize,
}

/// Approximate token count of an exercise item's text content.
pub fn exercise_token_count(item: &ExerciseItem) -> u64 {
    approx_token_count(&item.problem)
        + item.steps.iter().map(|s| approx_token_count(&s.text)).sum::<u64>()
        + approx_token_count(&item.final_answer)
}

#[derive(Serialize)]
struct TaggedRef<'a, T: Serialize> {
    schema: &'static str,
    #[serde(flatten)]
    item: &'a T,
}

#[derive(Deserialize)]
struct TaggedOwned<T> {
    schema: String,
    #[serde(flatten)]
    item: T,
}

fn write_tagged_jsonl<T: Serialize>(
    path: &Path,
    schema: &'static str,
    items: &[T],
) -> Result<(), DatagenError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &TaggedRef { schema, item })?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;
    Ok(())
}

fn read_tagged_jsonl<T: DeserializeOwned>(
    path: &Path,
    schema: &str,
) -> Result<Vec<T>, DatagenError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tagged: TaggedOwned<T> = serde_json::from_str(line)?;
        if tagged.schema != schema {
            return Err(DatagenError::SchemaMismatch {
                line: lineno + 1,
                got: tagged.schema,
                want: schema.to_string(),
            });
        }
        out.push(tagged.item);
    }
    Ok(out)
}

/// Write a textbook corpus as JSONL, one schema-tagged document per line.
pub fn write_textbook_corpus(path: &Path, docs: &[TextbookDoc]) -> Result<(), DatagenError> {
    write_tagged_jsonl(path, TEXTBOOK_SCHEMA, docs)
}

pub fn read_textbook_corpus(path: &Path) -> Result<Vec<TextbookDoc>, DatagenError> {
    read_tagged_jsonl(path, TEXTBOOK_SCHEMA)
}

/// Write an exercise corpus as JSONL, one schema-tagged item per line.
pub fn write_exercise_corpus(path: &Path, items: &[ExerciseItem]) -> Result<(), DatagenError> {
    write_tagged_jsonl(path, EXERCISE_SCHEMA, items)
}

pub fn read_exercise_corpus(path: &Path) -> Result<Vec<ExerciseItem>, DatagenError> {
    read_tagged_jsonl(path, EXERCISE_SCHEMA)
}

fn check_failure_rate(
    failed: usize,
    attempted: usize,
    allowed: f64,
) -> Result<(), DatagenError> {
    if attempted == 0 {
        return Ok(());
    }
    let rate = failed as f64 / attempted as f64;
    if rate > allowed {
        return Err(DatagenError::TooManyFailures { failed, attempted, rate, allowed });
    }
    Ok(())
}

/// Generate textbook documents for every skill (or the first `limit` skills)
/// in curriculum order. Per-item failures are collected, not fatal, unless
/// their rate exceeds `cfg.max_failure_rate`.
pub fn generate_textbook_corpus(
    graph: &SkillGraph,
    cfg: &DatagenConfig,
    client: &dyn GenerationClient,
    limit: Option<usize>,
) -> Result<(Vec<TextbookDoc>, Vec<ItemFailure>), DatagenError> {
    let curriculum = graph.topological_curriculum()?;
    let mut order = curriculum.flat();
    if let Some(n) = limit {
        order.truncate(n);
    }
    let results = bounded_parallel_map(&order, cfg.parallelism, |skill_id| {
        generate_textbook(skill_id, graph, client, cfg.max_tokens)
    });
    let mut docs = Vec::new();
    let mut failures = Vec::new();
    for (skill_id, result) in order.iter().zip(results) {
        match result {
            Ok(doc) => docs.push(doc),
            Err(e @ DatagenError::Client(_)) => return Err(e),
            Err(e) => failures.push(ItemFailure { item: skill_id.to_string(), reason: e.to_string() }),
        }
    }
    check_failure_rate(failures.len(), order.len(), cfg.max_failure_rate)?;
    Ok((docs, failures))
}

/// Generate `n` exercise items, each over an independently sampled skill
/// subset (seeded per item from `cfg.seed`).
pub fn generate_exercise_corpus(
    graph: &SkillGraph,
    cfg: &DatagenConfig,
    client: &dyn GenerationClient,
    n: usize,
) -> Result<(Vec<ExerciseItem>, Vec<ItemFailure>), DatagenError> {
    if n > 0 && graph.is_empty() {
        return Err(DatagenError::Graph(GraphError::EmptyGraph));
    }
    let indices: Vec<usize> = (0..n).collect();
    let results = bounded_parallel_map(&indices, cfg.parallelism, |i| {
        let id = format!("ex-{i:05}");
        let seed = derive_seed(cfg.seed, &format!("exercise-{i}"));
        let skill_ids = graph.sample_skill_subset(&cfg.count_distribution, seed)?;
        generate_exercise(&id, &skill_ids, graph, client, cfg.self_consistency_k, cfg.max_tokens)
    });
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for (i, result) in indices.iter().zip(results) {
        match result {
            Ok(item) => items.push(item),
            Err(e @ DatagenError::Client(_)) => return Err(e),
            Err(e) => {
                failures.push(ItemFailure { item: format!("ex-{i:05}"), reason: e.to_string() })
            }
        }
    }
    check_failure_rate(failures.len(), n, cfg.max_failure_rate)?;
    Ok((items, failures))
}

/// Compute the per-level statistics table for generated corpora.
///
/// Textbook tokens are attributed to the skill's level; exercise tokens to
/// the maximum level among the item's required skills.
pub fn corpus_stats(
    graph: &SkillGraph,
    textbooks: &[TextbookDoc],
    exercises: &[ExerciseItem],
) -> CorpusStats {
    let mut rows: BTreeMap<u32, LevelStat> = BTreeMap::new();
    for skill in graph.skills() {
        let row = rows
            .entry(skill.level)
            .or_insert(LevelStat { level: skill.level, skill_count: 0, token_count: 0 });
        row.skill_count += 1;
    }
    for doc in textbooks {
        if let Some(skill) = graph.get(&doc.skill_id) {
            rows.entry(skill.level)
                .or_insert(LevelStat { level: skill.level, skill_count: 0, token_count: 0 })
                .token_count += doc.token_count;
        }
    }
    for item in exercises {
        let level = item
            .required_skill_ids
            .iter()
            .filter_map(|id| graph.get(id))
            .map(|s| s.level)
            .max()
            .unwrap_or(0);
        rows.entry(level)
            .or_insert(LevelStat { level, skill_count: 0, token_count: 0 })
            .token_count += exercise_token_count(item);
    }
    CorpusStats {
        total_skills: graph.len(),
        total_tokens: rows.values().map(|r| r.token_count).sum(),
        textbook_docs: textbooks.len(),
        exercise_items: exercises.len(),
        levels: rows.into_values().collect(),
    }
}

/// Generate both corpora and write them (plus the statistics report) to
/// disk. Textbook docs are emitted in curriculum order; exercise items in
/// item-index order.
pub fn build_corpora(
    graph: &SkillGraph,
    cfg: &DatagenConfig,
    client: &dyn GenerationClient,
    textbook_path: &Path,
    exercise_path: &Path,
    stats_path: &Path,
) -> Result<CorpusStats, DatagenError> {
    let (textbooks, mut failures) = generate_textbook_corpus(graph, cfg, client, None)?;
    let (exercises, exercise_failures) =
        generate_exercise_corpus(graph, cfg, client, cfg.exercise_count)?;
    failures.extend(exercise_failures);
    write_textbook_corpus(textbook_path, &textbooks)?;
    write_exercise_corpus(exercise_path, &exercises)?;
    let stats = corpus_stats(graph, &textbooks, &exercises);
    let report = serde_json::json!({
        "stats": stats,
        "failures": failures,
        "approximate_tokens": true,
    });
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_atomic(stats_path, &bytes)?;
    Ok(stats)
}
