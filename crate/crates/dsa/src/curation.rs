//! The dynamic-update loop: turn cartography categories into dataset edits
//! and iterate training windows to convergence.
//!
//! Each window trains for a fixed number of epochs with trace recording,
//! categorizes every training example, then rewrites the training set:
//! Error items are dropped, HardToLearn items get similar generated
//! companions, EasyToLearn items are paired and composed into harder
//! problems, Ambiguous items are kept. Originals of Hard and Easy items are
//! retained alongside the generated items.
//!
//! Every window persists a snapshot under
//! `runs/<run-id>/window-<k>/{dataset.jsonl, cartography.jsonl, plan.json,
//! summary.json, model.bin}` (plus model metadata); a run can be resumed
//! from its last complete window.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cartography::{
    categorize_window, Baseline, CartographyError, CartographyRecord, CartographySummary,
    Category,
};
use crate::datagen::{
    read_exercise_corpus, solve_with_consistency, write_exercise_corpus, DatagenError,
    ExerciseItem, Provenance,
};
use crate::llm_client::{
    bounded_parallel_map, GenerationClient, GenerationRequest, AUGMENT_SAMPLING,
    EXERCISE_SAMPLING,
};
use crate::skill_graph::{Skill, SkillGraph, SkillId};
use crate::toy_trainer::{ToyTrainer, Trainer, TrainerError};
use crate::util::{derive_seed, write_atomic, write_jsonl};

use crate::datagen::prompts::{augment_problem_prompt, compose_problem_prompt};

/// Fraction of the initial dataset held out for convergence measurement.
/// The slice is fixed up front and never trained on or edited.
pub const HOLDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("augmentation of {parent} produced no accepted items: {reasons:?}")]
    AllRejected { parent: String, reasons: Vec<String> },
    #[error("composition of ({a}, {b}) rejected: {reason}")]
    ComposeRejected { a: String, b: String, reason: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot resume run: {0}")]
    Resume(String),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Cartography(#[from] CartographyError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error("run directory io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("run directory decode error: {0}")]
    Json(#[from] serde_json::Error),
}

fn is_client_failure(e: &DatagenError) -> bool {
    matches!(e, DatagenError::Client(_))
}

/// Dataset edit applied to one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Drop,
    AugmentSimilar,
    Compose,
    Keep,
}

/// The fixed category-to-action mapping.
pub fn action_for(category: Category) -> Action {
    match category {
        Category::Error => Action::Drop,
        Category::HardToLearn => Action::AugmentSimilar,
        Category::EasyToLearn => Action::Compose,
        Category::Ambiguous => Action::Keep,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub example_id: String,
    pub category: Category,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCounts {
    pub drop: usize,
    pub augment_similar: usize,
    pub compose: usize,
    pub keep: usize,
}

/// Per-example categories and actions for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationPlan {
    pub window_index: usize,
    pub entries: Vec<PlanEntry>,
    pub counts: ActionCounts,
}

/// Map a window's cartography records to the fixed action plan.
pub fn plan_updates(window_index: usize, records: &[CartographyRecord]) -> CurationPlan {
    let mut entries: Vec<PlanEntry> = records
        .iter()
        .map(|r| PlanEntry {
            example_id: r.example_id.clone(),
            category: r.category,
            action: action_for(r.category),
        })
        .collect();
    entries.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    let mut counts = ActionCounts::default();
    for e in &entries {
        match e.action {
            Action::Drop => counts.drop += 1,
            Action::AugmentSimilar => counts.augment_similar += 1,
            Action::Compose => counts.compose += 1,
            Action::Keep => counts.keep += 1,
        }
    }
    CurationPlan { window_index, entries, counts }
}

/// Loop control knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Epochs per window between dataset updates.
    pub update_every_epochs: usize,
    pub max_windows: usize,
    /// Stop once relative held-out loss improvement falls below this.
    pub convergence_threshold: f64,
    /// Similar items generated per hard example.
    pub augment_per_hard: usize,
    /// Most easy pairs composed per window.
    pub compose_cap: usize,
    pub self_consistency_k: u32,
    pub max_tokens: u32,
    pub parallelism: usize,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            update_every_epochs: 3,
            max_windows: 3,
            convergence_threshold: 0.01,
            augment_per_hard: 1,
            compose_cap: 32,
            self_consistency_k: crate::llm_client::DEFAULT_SELF_CONSISTENCY_K,
            max_tokens: crate::llm_client::DEFAULT_MAX_TOKENS,
            parallelism: 4,
            seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        if self.update_every_epochs == 0 {
            return Err(CurationError::InvalidConfig("update_every_epochs must be >= 1".into()));
        }
        if !(self.convergence_threshold > 0.0 && self.convergence_threshold < 1.0) {
            return Err(CurationError::InvalidConfig(format!(
                "convergence_threshold {} outside (0, 1)",
                self.convergence_threshold
            )));
        }
        if self.augment_per_hard == 0 || self.compose_cap == 0 {
            return Err(CurationError::InvalidConfig(
                "augment_per_hard and compose_cap must be >= 1".into(),
            ));
        }
        if self.self_consistency_k == 0 || self.max_tokens == 0 {
            return Err(CurationError::InvalidConfig(
                "self_consistency_k and max_tokens must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A generation attempt that was rejected (tie, parse failure, grounding
/// failure) rather than failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRejection {
    pub id_hint: String,
    pub reason: String,
}

/// Accepted items plus the rejections that occurred while producing them.
#[derive(Debug, Clone, Default)]
pub struct AugmentOutcome {
    pub items: Vec<ExerciseItem>,
    pub rejections: Vec<GenerationRejection>,
}

fn resolve_skills<'g>(
    graph: &'g SkillGraph,
    ids: &[SkillId],
) -> Result<Vec<&'g Skill>, CurationError> {
    ids.iter()
        .map(|id| {
            graph
                .get(id)
                .ok_or_else(|| CurationError::Datagen(DatagenError::UnknownSkill(id.clone())))
        })
        .collect()
}

/// Generate `n` problems similar to a hard-to-learn item.
///
/// Problems are generated at the augmentation sampling parameters (high
/// temperature for diversity); answers are re-derived through the standard
/// self-consistency solve at exercise parameters. Rejected variants are
/// reported, not silently dropped; if every variant is rejected the call
/// errors with the collected reasons.
pub fn augment_similar(
    item: &ExerciseItem,
    graph: &SkillGraph,
    client: &dyn GenerationClient,
    n: usize,
    k: u32,
    max_tokens: u32,
    id_prefix: &str,
) -> Result<AugmentOutcome, CurationError> {
    let required = resolve_skills(graph, &item.required_skill_ids)?;
    let mut outcome = AugmentOutcome::default();
    for variant in 0..n {
        let id = format!("{id_prefix}-{variant}");
        let prompt = augment_problem_prompt(item, &required, variant);
        let req = GenerationRequest::new(&prompt, AUGMENT_SAMPLING).with_max_tokens(max_tokens);
        let problem = match client.generate(&req) {
            Ok(resp) => resp.samples[0].trim().to_string(),
            Err(e) => return Err(CurationError::Datagen(e.into())),
        };
        if problem.is_empty() {
            outcome
                .rejections
                .push(GenerationRejection { id_hint: id, reason: "empty problem".into() });
            continue;
        }
        match solve_with_consistency(&problem, &required, client, k, EXERCISE_SAMPLING, max_tokens)
        {
            Ok((steps, final_answer)) => {
                let new_item = ExerciseItem {
                    id,
                    required_skill_ids: item.required_skill_ids.clone(),
                    problem,
                    steps,
                    final_answer,
                    provenance: Provenance::AugmentedSimilar,
                    parent_ids: vec![item.id.clone()],
                };
                new_item.validate(Some(graph))?;
                outcome.items.push(new_item);
            }
            Err(e) if is_client_failure(&e) => return Err(e.into()),
            Err(e) => {
                outcome.rejections.push(GenerationRejection { id_hint: id, reason: e.to_string() })
            }
        }
    }
    if n > 0 && outcome.items.is_empty() {
        return Err(CurationError::AllRejected {
            parent: item.id.clone(),
            reasons: outcome.rejections.into_iter().map(|r| r.reason).collect(),
        });
    }
    Ok(outcome)
}

/// Compose two distinct easy items into one harder item requiring the union
/// of their skills.
pub fn compose_easy(
    a: &ExerciseItem,
    b: &ExerciseItem,
    graph: &SkillGraph,
    client: &dyn GenerationClient,
    k: u32,
    max_tokens: u32,
    id: &str,
) -> Result<ExerciseItem, CurationError> {
    if a.id == b.id {
        return Err(CurationError::Precondition(format!(
            "compose requires two distinct items, got {} twice",
            a.id
        )));
    }
    let mut union: Vec<SkillId> = a.required_skill_ids.clone();
    for sid in &b.required_skill_ids {
        if !union.contains(sid) {
            union.push(sid.clone());
        }
    }
    let required = resolve_skills(graph, &union)?;
    let prompt = compose_problem_prompt(a, b, &required);
    let req = GenerationRequest::new(&prompt, AUGMENT_SAMPLING).with_max_tokens(max_tokens);
    let problem = client
        .generate(&req)
        .map_err(|e| CurationError::Datagen(e.into()))?
        .samples[0]
        .trim()
        .to_string();
    if problem.is_empty() {
        return Err(CurationError::ComposeRejected {
            a: a.id.clone(),
            b: b.id.clone(),
            reason: "empty problem".into(),
        });
    }
    match solve_with_consistency(&problem, &required, client, k, EXERCISE_SAMPLING, max_tokens) {
        Ok((steps, final_answer)) => {
            let item = ExerciseItem {
                id: id.to_string(),
                required_skill_ids: union,
                problem,
                steps,
                final_answer,
                provenance: Provenance::Composed,
                parent_ids: vec![a.id.clone(), b.id.clone()],
            };
            item.validate(Some(graph))?;
            Ok(item)
        }
        Err(e) if is_client_failure(&e) => Err(e.into()),
        Err(e) => Err(CurationError::ComposeRejected {
            a: a.id.clone(),
            b: b.id.clone(),
            reason: e.to_string(),
        }),
    }
}

/// Everything recorded about one completed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window_index: usize,
    pub trained_examples: usize,
    pub dataset_size_after: usize,
    pub cartography: CartographySummary,
    pub action_counts: ActionCounts,
    pub augment_accepted: usize,
    pub augment_rejected: usize,
    pub compose_accepted: usize,
    pub compose_rejected: usize,
    pub holdout_loss: Option<f64>,
    pub relative_improvement: Option<f64>,
    pub converged: bool,
}

/// Final state of a (possibly resumed) loop run.
#[derive(Debug, Clone)]
pub struct LoopOutcome {
    /// The training set after the last window's edits.
    pub final_dataset: Vec<ExerciseItem>,
    /// The untouched held-out slice.
    pub holdout: Vec<ExerciseItem>,
    pub windows: Vec<WindowSummary>,
    pub converged: bool,
}

fn window_dir(run_dir: &Path, k: usize) -> PathBuf {
    run_dir.join(format!("window-{k}"))
}

fn write_window_snapshot(
    run_dir: &Path,
    k: usize,
    dataset: &[ExerciseItem],
    records: Option<&[CartographyRecord]>,
    plan: Option<&CurationPlan>,
    summary: Option<&WindowSummary>,
    trainer: &dyn Trainer,
) -> Result<(), CurationError> {
    let tmp = run_dir.join(format!("window-{k}.tmp"));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    std::fs::create_dir_all(&tmp)?;
    write_exercise_corpus(&tmp.join("dataset.jsonl"), dataset)?;
    if let Some(records) = records {
        write_jsonl(&tmp.join("cartography.jsonl"), records)?;
    }
    if let Some(plan) = plan {
        let mut bytes = serde_json::to_vec_pretty(plan)?;
        bytes.push(b'\n');
        write_atomic(&tmp.join("plan.json"), &bytes)?;
    }
    if let Some(summary) = summary {
        let mut bytes = serde_json::to_vec_pretty(summary)?;
        bytes.push(b'\n');
        write_atomic(&tmp.join("summary.json"), &bytes)?;
    }
    trainer.save_model(&tmp.join("model.bin"), &tmp.join("model.meta.json"))?;
    let target = window_dir(run_dir, k);
    if target.exists() {
        std::fs::remove_dir_all(&target)?;
    }
    // Rename is the completion marker: a window directory either exists in
    // full or not at all.
    std::fs::rename(&tmp, &target)?;
    Ok(())
}

/// Split the input into (train, holdout) deterministically.
pub fn split_holdout(dataset: &[ExerciseItem], seed: u64) -> (Vec<ExerciseItem>, Vec<ExerciseItem>) {
    let n = dataset.len();
    let holdout_n = ((n as f64 * HOLDOUT_FRACTION).round() as usize).min(n.saturating_sub(1));
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "holdout"));
    indices.shuffle(&mut rng);
    let mut holdout_idx: BTreeSet<usize> = indices.into_iter().take(holdout_n).collect();
    let mut train = Vec::with_capacity(n - holdout_n);
    let mut holdout = Vec::with_capacity(holdout_n);
    for (i, item) in dataset.iter().enumerate() {
        if holdout_idx.remove(&i) {
            holdout.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    (train, holdout)
}

struct LoopState {
    train: Vec<ExerciseItem>,
    holdout: Vec<ExerciseItem>,
    prev_holdout_loss: Option<f64>,
    next_window: usize,
    windows: Vec<WindowSummary>,
}

/// Run the dynamic loop from scratch, persisting snapshots under `run_dir`.
pub fn run_dynamic_loop(
    dataset: &[ExerciseItem],
    graph: &SkillGraph,
    trainer: &mut dyn Trainer,
    client: &dyn GenerationClient,
    baseline: &Baseline,
    cfg: &LoopConfig,
    run_dir: &Path,
) -> Result<LoopOutcome, CurationError> {
    cfg.validate()?;
    baseline.validate()?;
    if dataset.is_empty() {
        return Err(CurationError::Precondition("dataset is empty".into()));
    }
    let mut ids = BTreeSet::new();
    for item in dataset {
        if !ids.insert(item.id.as_str()) {
            return Err(CurationError::Precondition(format!("duplicate example id {}", item.id)));
        }
    }
    std::fs::create_dir_all(run_dir)?;
    let (train, holdout) = split_holdout(dataset, cfg.seed);
    write_exercise_corpus(&run_dir.join("holdout.jsonl"), &holdout)?;
    write_window_snapshot(run_dir, 0, &train, None, None, None, trainer)?;
    let state = LoopState { train, holdout, prev_holdout_loss: None, next_window: 1, windows: vec![] };
    drive_loop(state, graph, trainer, client, baseline, cfg, run_dir)
}

/// Continue a run from its last complete window. The trainer is
/// reconstructed from the persisted checkpoint.
pub fn resume_dynamic_loop(
    graph: &SkillGraph,
    client: &dyn GenerationClient,
    baseline: &Baseline,
    cfg: &LoopConfig,
    run_dir: &Path,
) -> Result<(LoopOutcome, ToyTrainer), CurationError> {
    cfg.validate()?;
    let last = last_complete_window(run_dir)?
        .ok_or_else(|| CurationError::Resume(format!("{} has no window-0", run_dir.display())))?;
    let wdir = window_dir(run_dir, last);
    let train = read_exercise_corpus(&wdir.join("dataset.jsonl"))?;
    let holdout = read_exercise_corpus(&run_dir.join("holdout.jsonl"))?;
    let mut trainer =
        ToyTrainer::load_checkpoint(&wdir.join("model.bin"), &wdir.join("model.meta.json"))?;
    let mut windows = Vec::new();
    for k in 1..=last {
        let summary_path = window_dir(run_dir, k).join("summary.json");
        let summary: WindowSummary = serde_json::from_slice(&std::fs::read(&summary_path)?)?;
        windows.push(summary);
    }
    let prev_holdout_loss = windows.last().and_then(|w| w.holdout_loss);
    if windows.last().map(|w| w.converged).unwrap_or(false) {
        let converged = true;
        return Ok((LoopOutcome { final_dataset: train, holdout, windows, converged }, trainer));
    }
    let state = LoopState { train, holdout, prev_holdout_loss, next_window: last + 1, windows };
    let outcome = drive_loop(state, graph, &mut trainer, client, baseline, cfg, run_dir)?;
    Ok((outcome, trainer))
}

/// Index of the last complete window directory, if any.
pub fn last_complete_window(run_dir: &Path) -> Result<Option<usize>, CurationError> {
    if !run_dir.is_dir() {
        return Err(CurationError::Resume(format!("{} is not a directory", run_dir.display())));
    }
    let mut last: Option<usize> = None;
    for entry in std::fs::read_dir(run_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("window-") {
            if let Ok(k) = num.parse::<usize>() {
                last = Some(last.map_or(k, |prev| prev.max(k)));
            }
        }
    }
    Ok(last)
}

fn drive_loop(
    mut state: LoopState,
    graph: &SkillGraph,
    trainer: &mut dyn Trainer,
    client: &dyn GenerationClient,
    baseline: &Baseline,
    cfg: &LoopConfig,
    run_dir: &Path,
) -> Result<LoopOutcome, CurationError> {
    let mut converged = false;
    while state.next_window <= cfg.max_windows && !converged {
        let k = state.next_window;
        let trained_examples = state.train.len();

        // Train one window with trace recording.
        let traces = trainer.train_epochs(&state.train, cfg.update_every_epochs)?;
        let (records, cartography) = categorize_window(&traces, baseline, k)?;
        let plan = plan_updates(k, &records);

        // Held-out loss measures the model right after training, before any
        // dataset edit.
        let holdout_loss = if state.holdout.is_empty() {
            None
        } else {
            Some(trainer.mean_loss(&state.holdout)?)
        };
        let relative_improvement = match (state.prev_holdout_loss, holdout_loss) {
            (Some(prev), Some(curr)) if prev > 0.0 => Some((prev - curr) / prev),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        if let Some(improvement) = relative_improvement {
            if improvement < cfg.convergence_threshold {
                converged = true;
            }
        }

        // Apply the plan.
        let by_id: std::collections::BTreeMap<&str, &ExerciseItem> =
            state.train.iter().map(|i| (i.id.as_str(), i)).collect();
        let dropped: BTreeSet<&str> = plan
            .entries
            .iter()
            .filter(|e| e.action == Action::Drop)
            .map(|e| e.example_id.as_str())
            .collect();
        let hard_ids: Vec<&str> = plan
            .entries
            .iter()
            .filter(|e| e.action == Action::AugmentSimilar)
            .map(|e| e.example_id.as_str())
            .collect();
        let easy_ids: Vec<&str> = plan
            .entries
            .iter()
            .filter(|e| e.action == Action::Compose)
            .map(|e| e.example_id.as_str())
            .collect();

        // Augment every hard item, bounded-parallel, deterministic order.
        let augment_results = bounded_parallel_map(&hard_ids, cfg.parallelism, |id| {
            let parent = by_id[id];
            augment_similar(
                parent,
                graph,
                client,
                cfg.augment_per_hard,
                cfg.self_consistency_k,
                cfg.max_tokens,
                &format!("w{k}-aug-{id}"),
            )
        });
        let mut augmented: Vec<ExerciseItem> = Vec::new();
        let mut augment_rejected = 0usize;
        for result in augment_results {
            match result {
                Ok(outcome) => {
                    augment_rejected += outcome.rejections.len();
                    augmented.extend(outcome.items);
                }
                Err(CurationError::AllRejected { reasons, .. }) => {
                    augment_rejected += reasons.len().max(1);
                }
                Err(e) => return Err(e),
            }
        }

        // Pair easy items at random under the window seed and compose each
        // pair, up to the cap. The odd item out simply stays in the set.
        let mut pair_pool = easy_ids.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("window-{k}-pairs")));
        pair_pool.shuffle(&mut rng);
        let pairs: Vec<(&str, &str)> = pair_pool
            .chunks_exact(2)
            .take(cfg.compose_cap)
            .map(|c| (c[0], c[1]))
            .collect();
        let compose_results = bounded_parallel_map(&pairs, cfg.parallelism, |(a, b)| {
            compose_easy(
                by_id[a],
                by_id[b],
                graph,
                client,
                cfg.self_consistency_k,
                cfg.max_tokens,
                &format!("w{k}-cmp-{a}+{b}"),
            )
        });
        let mut composed: Vec<ExerciseItem> = Vec::new();
        let mut compose_rejected = 0usize;
        for result in compose_results {
            match result {
                Ok(item) => composed.push(item),
                Err(CurationError::ComposeRejected { .. }) => compose_rejected += 1,
                Err(e) => return Err(e),
            }
        }

        let augment_accepted = augmented.len();
        let compose_accepted = composed.len();
        let mut new_train: Vec<ExerciseItem> = state
            .train
            .iter()
            .filter(|i| !dropped.contains(i.id.as_str()))
            .cloned()
            .collect();
        new_train.extend(augmented);
        new_train.extend(composed);

        let summary = WindowSummary {
            window_index: k,
            trained_examples,
            dataset_size_after: new_train.len(),
            cartography,
            action_counts: plan.counts,
            augment_accepted,
            augment_rejected,
            compose_accepted,
            compose_rejected,
            holdout_loss,
            relative_improvement,
            converged,
        };
        write_window_snapshot(
            run_dir,
            k,
            &new_train,
            Some(&records),
            Some(&plan),
            Some(&summary),
            trainer,
        )?;
        state.train = new_train;
        state.prev_holdout_loss = holdout_loss;
        state.windows.push(summary);
        state.next_window += 1;
    }
    Ok(LoopOutcome {
        final_dataset: state.train,
        holdout: state.holdout,
        windows: state.windows,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartography::calibrate_baseline;
    use crate::synth::{SynthTask, SynthTaskSpec};
    use crate::toy_trainer::{ToyHyper, ToyTrainer, DEFAULT_VOCAB_SIZE};

    fn record(id: &str, category: Category) -> CartographyRecord {
        CartographyRecord {
            example_id: id.into(),
            mean_loss: 1.0,
            std_loss: 0.1,
            category,
            epoch_window: 1,
        }
    }

    #[test]
    fn all_ambiguous_plan_keeps_everything() {
        let records: Vec<CartographyRecord> =
            (0..5).map(|i| record(&format!("e{i}"), Category::Ambiguous)).collect();
        let plan = plan_updates(1, &records);
        assert_eq!(plan.counts, ActionCounts { drop: 0, augment_similar: 0, compose: 0, keep: 5 });
        assert!(plan.entries.iter().all(|e| e.action == Action::Keep));
    }

    #[test]
    fn plan_counts_follow_fixed_mapping() {
        let mut records = Vec::new();
        for i in 0..2 {
            records.push(record(&format!("err{i}"), Category::Error));
        }
        for i in 0..3 {
            records.push(record(&format!("hard{i}"), Category::HardToLearn));
        }
        for i in 0..4 {
            records.push(record(&format!("easy{i}"), Category::EasyToLearn));
        }
        let plan = plan_updates(2, &records);
        assert_eq!(plan.counts, ActionCounts { drop: 2, augment_similar: 3, compose: 4, keep: 0 });
    }

    fn task_and_corpus(n: usize, seed: u64) -> (SynthTask, Vec<ExerciseItem>) {
        let task = SynthTask::build(SynthTaskSpec { seed, ..Default::default() });
        let corpus = task.generate_corpus(n);
        (task, corpus)
    }

    #[test]
    fn augment_n_zero_is_empty() {
        let (task, corpus) = task_and_corpus(5, 0);
        let client = task.client();
        let outcome =
            augment_similar(&corpus[0], task.graph(), &client, 0, 3, 2048, "aug").unwrap();
        assert!(outcome.items.is_empty());
        assert!(outcome.rejections.is_empty());
    }

    #[test]
    fn augment_produces_child_with_parent_link() {
        let (task, corpus) = task_and_corpus(5, 1);
        let client = task.client();
        let outcome =
            augment_similar(&corpus[2], task.graph(), &client, 1, 3, 2048, "aug-x").unwrap();
        assert_eq!(outcome.items.len(), 1);
        let item = &outcome.items[0];
        assert_eq!(item.provenance, Provenance::AugmentedSimilar);
        assert_eq!(item.parent_ids, vec![corpus[2].id.clone()]);
        assert_eq!(item.id, "aug-x-0");
        item.validate(Some(task.graph())).unwrap();
    }

    // Reachability oracle: the variant's skills stay inside the parent's
    // prerequisite closure.
    #[test]
    fn augmented_skills_stay_in_parent_closure() {
        let (task, corpus) = task_and_corpus(20, 2);
        let client = task.client();
        for parent in corpus.iter().take(10) {
            let outcome =
                augment_similar(parent, task.graph(), &client, 2, 3, 2048, &format!("a-{}", parent.id))
                    .unwrap();
            let closure = task.graph().prerequisite_closure(&parent.required_skill_ids);
            for item in &outcome.items {
                for sid in &item.required_skill_ids {
                    assert!(closure.contains(sid), "{sid} outside parent closure");
                }
            }
        }
    }

    #[test]
    fn compose_same_item_is_a_precondition_error() {
        let (task, corpus) = task_and_corpus(3, 3);
        let client = task.client();
        let err = compose_easy(&corpus[0], &corpus[0], task.graph(), &client, 3, 2048, "c")
            .unwrap_err();
        assert!(matches!(err, CurationError::Precondition(_)));
    }

    #[test]
    fn composed_item_carries_both_parents_and_their_skills() {
        let (task, corpus) = task_and_corpus(10, 4);
        let client = task.client();
        let item =
            compose_easy(&corpus[0], &corpus[1], task.graph(), &client, 3, 2048, "cmp-0").unwrap();
        assert_eq!(item.provenance, Provenance::Composed);
        assert_eq!(item.parent_ids, vec![corpus[0].id.clone(), corpus[1].id.clone()]);
        for parent in [&corpus[0], &corpus[1]] {
            for sid in &parent.required_skill_ids {
                assert!(item.required_skill_ids.contains(sid));
            }
        }
        item.validate(Some(task.graph())).unwrap();
    }

    // Scan oracle over a 50-pair fixture.
    #[test]
    fn composed_skill_count_at_least_max_of_parents() {
        let (task, corpus) = task_and_corpus(100, 5);
        let client = task.client();
        for i in 0..50 {
            let (a, b) = (&corpus[2 * i], &corpus[2 * i + 1]);
            let item =
                compose_easy(a, b, task.graph(), &client, 3, 2048, &format!("cmp-{i}")).unwrap();
            assert!(
                item.required_skill_ids.len()
                    >= a.required_skill_ids.len().max(b.required_skill_ids.len())
            );
        }
    }

    fn quick_baseline(task: &SynthTask, corpus: &[ExerciseItem], seed: u64) -> Baseline {
        let error_set = crate::cartography::build_error_set(corpus, 0.1, seed);
        let mut trainer =
            ToyTrainer::from_corpus(corpus, task.classes(), DEFAULT_VOCAB_SIZE, ToyHyper::default(), seed);
        calibrate_baseline(&error_set, &mut trainer, 3).unwrap()
    }

    #[test]
    fn max_windows_zero_returns_dataset_unchanged() {
        let (task, corpus) = task_and_corpus(40, 6);
        let client = task.client();
        let baseline = quick_baseline(&task, &corpus, 6);
        let mut trainer =
            ToyTrainer::from_corpus(&corpus, task.classes(), DEFAULT_VOCAB_SIZE, ToyHyper::default(), 6);
        let dir = tempfile::tempdir().unwrap();
        let cfg = LoopConfig { max_windows: 0, seed: 6, ..LoopConfig::default() };
        let outcome = run_dynamic_loop(
            &corpus,
            task.graph(),
            &mut trainer,
            &client,
            &baseline,
            &cfg,
            dir.path(),
        )
        .unwrap();
        assert!(outcome.windows.is_empty());
        // Train plus holdout is exactly the input, untouched.
        let mut union: Vec<ExerciseItem> = outcome.final_dataset.clone();
        union.extend(outcome.holdout.clone());
        union.sort_by(|a, b| a.id.cmp(&b.id));
        let mut input = corpus.clone();
        input.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(union, input);
        assert!(dir.path().join("window-0/dataset.jsonl").exists());
        assert!(dir.path().join("holdout.jsonl").exists());
    }

    #[test]
    fn loop_conserves_ids_and_enforces_drop_rules() {
        let (task, mut corpus) = task_and_corpus(120, 7);
        crate::synth::inject_label_noise(&mut corpus, 0.1, 7);
        let client = task.client();
        let baseline = quick_baseline(&task, &corpus, 7);
        let mut trainer =
            ToyTrainer::from_corpus(&corpus, task.classes(), DEFAULT_VOCAB_SIZE, ToyHyper::default(), 7);
        let dir = tempfile::tempdir().unwrap();
        let cfg = LoopConfig {
            max_windows: 3,
            seed: 7,
            convergence_threshold: 1e-9,
            ..LoopConfig::default()
        };
        let outcome = run_dynamic_loop(
            &corpus,
            task.graph(),
            &mut trainer,
            &client,
            &baseline,
            &cfg,
            dir.path(),
        )
        .unwrap();

        let mut train_ids: BTreeSet<String> = read_exercise_corpus(
            &dir.path().join("window-0/dataset.jsonl"),
        )
        .unwrap()
        .into_iter()
        .map(|i| i.id)
        .collect();
        for summary in &outcome.windows {
            let k = summary.window_index;
            let wdir = dir.path().join(format!("window-{k}"));
            let plan: CurationPlan =
                serde_json::from_slice(&std::fs::read(wdir.join("plan.json")).unwrap()).unwrap();
            let dataset = read_exercise_corpus(&wdir.join("dataset.jsonl")).unwrap();
            let after: BTreeSet<String> = dataset.iter().map(|i| i.id.clone()).collect();
            assert_eq!(after.len(), dataset.len(), "no id appears twice");
            for entry in &plan.entries {
                match entry.action {
                    Action::Drop => assert!(
                        !after.contains(&entry.example_id),
                        "window {k}: error item {} survived",
                        entry.example_id
                    ),
                    Action::AugmentSimilar => assert!(
                        after.contains(&entry.example_id),
                        "window {k}: hard item {} was dropped",
                        entry.example_id
                    ),
                    _ => {}
                }
            }
            // Identity conservation: after = before - dropped + generated.
            let dropped: BTreeSet<&String> = plan
                .entries
                .iter()
                .filter(|e| e.action == Action::Drop)
                .map(|e| &e.example_id)
                .collect();
            for id in &after {
                let generated = id.starts_with(&format!("w{k}-"));
                assert!(
                    generated || (train_ids.contains(id) && !dropped.contains(id)),
                    "window {k}: unexpected id {id}"
                );
            }
            train_ids = after;
        }
    }

    // Ledger replay: per-window sizes recomputed from the persisted plans
    // and acceptance counts must match the dataset line counts.
    #[test]
    fn window_sizes_match_ledger_replay() {
        let (task, mut corpus) = task_and_corpus(100, 8);
        crate::synth::inject_label_noise(&mut corpus, 0.1, 8);
        let client = task.client();
        let baseline = quick_baseline(&task, &corpus, 8);
        let mut trainer =
            ToyTrainer::from_corpus(&corpus, task.classes(), DEFAULT_VOCAB_SIZE, ToyHyper::default(), 8);
        let dir = tempfile::tempdir().unwrap();
        let cfg = LoopConfig {
            max_windows: 3,
            seed: 8,
            convergence_threshold: 1e-9,
            compose_cap: 5,
            ..LoopConfig::default()
        };
        let outcome = run_dynamic_loop(
            &corpus,
            task.graph(),
            &mut trainer,
            &client,
            &baseline,
            &cfg,
            dir.path(),
        )
        .unwrap();
        let mut size = crate::util::count_jsonl_lines(&dir.path().join("window-0/dataset.jsonl"))
            .unwrap();
        for summary in &outcome.windows {
            let wdir = dir.path().join(format!("window-{}", summary.window_index));
            let plan: CurationPlan =
                serde_json::from_slice(&std::fs::read(wdir.join("plan.json")).unwrap()).unwrap();
            let expected = size - plan.counts.drop
                + summary.augment_accepted
                + summary.compose_accepted;
            let actual = crate::util::count_jsonl_lines(&wdir.join("dataset.jsonl")).unwrap();
            assert_eq!(actual, expected, "window {}", summary.window_index);
            assert_eq!(actual, summary.dataset_size_after);
            // Compose acceptance can never exceed the pairing bound.
            assert!(
                summary.compose_accepted + summary.compose_rejected
                    <= (plan.counts.compose / 2).min(cfg.compose_cap)
            );
            size = actual;
        }
    }

    #[test]
    fn two_runs_are_byte_identical() {
        let (task, corpus) = task_and_corpus(60, 9);
        let baseline = quick_baseline(&task, &corpus, 9);
        let cfg = LoopConfig { max_windows: 2, seed: 9, convergence_threshold: 1e-9, ..LoopConfig::default() };
        let run = |root: &Path| {
            let client = task.client();
            let mut trainer = ToyTrainer::from_corpus(
                &corpus,
                task.classes(),
                DEFAULT_VOCAB_SIZE,
                ToyHyper::default(),
                9,
            );
            run_dynamic_loop(&corpus, task.graph(), &mut trainer, &client, &baseline, &cfg, root)
                .unwrap();
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run(a.path());
        run(b.path());
        assert_dirs_equal(a.path(), b.path());
    }

    fn assert_dirs_equal(a: &Path, b: &Path) {
        let list = |root: &Path| {
            let mut files = Vec::new();
            let mut stack = vec![root.to_path_buf()];
            while let Some(dir) = stack.pop() {
                for entry in std::fs::read_dir(&dir).unwrap() {
                    let path = entry.unwrap().path();
                    if path.is_dir() {
                        stack.push(path);
                    } else {
                        files.push(path.strip_prefix(root).unwrap().to_path_buf());
                    }
                }
            }
            files.sort();
            files
        };
        let fa = list(a);
        let fb = list(b);
        assert_eq!(fa, fb, "file sets differ");
        for rel in fa {
            let ba = std::fs::read(a.join(&rel)).unwrap();
            let bb = std::fs::read(b.join(&rel)).unwrap();
            assert_eq!(ba, bb, "file {} differs", rel.display());
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (task, mut corpus) = task_and_corpus(80, 10);
        crate::synth::inject_label_noise(&mut corpus, 0.1, 10);
        let baseline = quick_baseline(&task, &corpus, 10);
        let cfg = LoopConfig {
            max_windows: 3,
            seed: 10,
            convergence_threshold: 1e-9,
            ..LoopConfig::default()
        };
        let client = task.client();

        // Uninterrupted reference run.
        let full_dir = tempfile::tempdir().unwrap();
        let mut trainer = ToyTrainer::from_corpus(
            &corpus, task.classes(), DEFAULT_VOCAB_SIZE, ToyHyper::default(), 10,
        );
        run_dynamic_loop(
            &corpus, task.graph(), &mut trainer, &client, &baseline, &cfg, full_dir.path(),
        )
        .unwrap();

        // Interrupted run: stop after window 1, then resume.
        let part_dir = tempfile::tempdir().unwrap();
        let mut trainer2 = ToyTrainer::from_corpus(
            &corpus, task.classes(), DEFAULT_VOCAB_SIZE, ToyHyper::default(), 10,
        );
        let cfg_one = LoopConfig { max_windows: 1, ..cfg.clone() };
        run_dynamic_loop(
            &corpus, task.graph(), &mut trainer2, &client, &baseline, &cfg_one, part_dir.path(),
        )
        .unwrap();
        let (outcome, _) =
            resume_dynamic_loop(task.graph(), &client, &baseline, &cfg, part_dir.path()).unwrap();
        assert_eq!(outcome.windows.len(), 3);
        assert_dirs_equal(full_dir.path(), part_dir.path());
    }
}
