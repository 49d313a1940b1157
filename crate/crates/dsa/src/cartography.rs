//! Per-example training-dynamics statistics and four-way categorization.
//!
//! Each training example accumulates one loss per epoch. The mean and the
//! population standard deviation of that trace, compared against a
//! calibrated error baseline and the corpus averages, place the example in
//! one of four buckets: Error, HardToLearn, EasyToLearn, or Ambiguous.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{normalize_answer, ExerciseItem};
use crate::toy_trainer::{Trainer, TrainerError};
use crate::util::{derive_seed, write_atomic};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum CartographyError {
    #[error("loss trace for {example_id} is invalid: {reason}")]
    InvalidTrace { example_id: String, reason: String },
    #[error("statistics over an empty list")]
    EmptyInput,
    #[error("baseline is invalid: {0}")]
    InvalidBaseline(String),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error("report io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report decode error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-epoch losses of one training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub example_id: String,
    pub losses: Vec<f64>,
}

impl LossTrace {
    pub fn new(example_id: impl Into<String>, losses: Vec<f64>) -> Self {
        LossTrace { example_id: example_id.into(), losses }
    }

    pub fn validate(&self) -> Result<(), CartographyError> {
        if self.losses.is_empty() {
            return Err(CartographyError::InvalidTrace {
                example_id: self.example_id.clone(),
                reason: "trace must cover at least one epoch".into(),
            });
        }
        for (i, loss) in self.losses.iter().enumerate() {
            if !loss.is_finite() || *loss < 0.0 {
                return Err(CartographyError::InvalidTrace {
                    example_id: self.example_id.clone(),
                    reason: format!("loss {loss} at epoch {i} is not a finite non-negative real"),
                });
            }
        }
        Ok(())
    }
}

/// Mean and population standard deviation of one example's trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartographyStats {
    pub example_id: String,
    pub mean_loss: f64,
    pub std_loss: f64,
}

/// Mean and std of a loss trace.
///
/// The std uses the population form (divisor E, the epoch count), computed
/// with Welford's online update for numerical stability.
pub fn compute_stats(trace: &LossTrace) -> Result<CartographyStats, CartographyError> {
    trace.validate()?;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for (i, &loss) in trace.losses.iter().enumerate() {
        let delta = loss - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (loss - mean);
    }
    let variance = m2 / trace.losses.len() as f64;
    Ok(CartographyStats {
        example_id: trace.example_id.clone(),
        mean_loss: mean,
        std_loss: variance.max(0.0).sqrt(),
    })
}

/// Unweighted means of per-example mean losses and stds across the corpus.
pub fn corpus_averages(stats: &[CartographyStats]) -> Result<(f64, f64), CartographyError> {
    if stats.is_empty() {
        return Err(CartographyError::EmptyInput);
    }
    let n = stats.len() as f64;
    let loss_average = stats.iter().map(|s| s.mean_loss).sum::<f64>() / n;
    let sigma_average = stats.iter().map(|s| s.std_loss).sum::<f64>() / n;
    Ok((loss_average, sigma_average))
}

/// Loss/variance thresholds calibrated by training on constructed error
/// examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub loss_b: f64,
    pub sigma_b: f64,
    pub n_error_examples: usize,
    pub epochs_used: usize,
}

/// Error-example calibration trains for three epochs by default.
pub const DEFAULT_BASELINE_EPOCHS: usize = 3;

impl Baseline {
    pub fn validate(&self) -> Result<(), CartographyError> {
        if !(self.loss_b > 0.0) || !self.loss_b.is_finite() {
            return Err(CartographyError::InvalidBaseline(format!(
                "loss_b must be a positive finite real, got {}",
                self.loss_b
            )));
        }
        if !(self.sigma_b >= 0.0) || !self.sigma_b.is_finite() {
            return Err(CartographyError::InvalidBaseline(format!(
                "sigma_b must be a non-negative finite real, got {}",
                self.sigma_b
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CartographyError> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CartographyError> {
        let bytes = std::fs::read(path)?;
        let baseline: Baseline = serde_json::from_slice(&bytes)?;
        baseline.validate()?;
        Ok(baseline)
    }
}

/// The four training-dynamics buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Error,
    HardToLearn,
    EasyToLearn,
    Ambiguous,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Category::Error => write!(f, "error"),
            Category::HardToLearn => write!(f, "hard-to-learn"),
            Category::EasyToLearn => write!(f, "easy-to-learn"),
            Category::Ambiguous => write!(f, "ambiguous"),
        }
    }
}

/// Assign one category to an example's stats.
///
/// Rules are evaluated in fixed precedence — Error, Hard, Easy, then
/// Ambiguous — and the first match wins; boundary equalities therefore
/// resolve to the earlier rule.
///
/// - Error: mean >= loss_b and std <= sigma_b.
/// - Hard: loss_avg <= mean <= loss_b and sigma_b <= std <= sigma_avg.
/// - Easy: mean <= loss_b, mean <= loss_avg, std <= sigma_b, std <= sigma_avg.
/// - Ambiguous: everything else.
pub fn categorize(
    stats: &CartographyStats,
    baseline: &Baseline,
    loss_avg: f64,
    sigma_avg: f64,
) -> Category {
    let mean = stats.mean_loss;
    let std = stats.std_loss;
    if mean >= baseline.loss_b && std <= baseline.sigma_b {
        return Category::Error;
    }
    if loss_avg <= mean && mean <= baseline.loss_b && baseline.sigma_b <= std && std <= sigma_avg {
        return Category::HardToLearn;
    }
    if mean <= baseline.loss_b
        && mean <= loss_avg
        && std <= baseline.sigma_b
        && std <= sigma_avg
    {
        return Category::EasyToLearn;
    }
    Category::Ambiguous
}

/// Construct calibration error examples from a corpus slice.
///
/// A deterministic sample of `max(32, noise_fraction * |items|)` items is
/// copied; each copy gets a final answer drawn uniformly from the corpus's
/// *other* distinct answers and its solution steps shuffled. Copies carry
/// `err:`-prefixed ids so calibration traces never collide with training
/// ids.
pub fn build_error_set(
    items: &[ExerciseItem],
    noise_fraction: f64,
    seed: u64,
) -> Vec<ExerciseItem> {
    if items.is_empty() {
        return Vec::new();
    }
    let target = ((items.len() as f64 * noise_fraction).ceil() as usize).max(32).min(items.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "error-set"));
    let mut indices: Vec<usize> = (0..items.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(target);
    indices.sort_unstable();

    let mut answers: Vec<String> =
        items.iter().map(|i| normalize_answer(&i.final_answer)).collect();
    answers.sort();
    answers.dedup();

    indices
        .into_iter()
        .map(|i| {
            let mut item = items[i].clone();
            item.id = format!("err:{}", item.id);
            let own = normalize_answer(&item.final_answer);
            let candidates: Vec<&String> = answers.iter().filter(|a| **a != own).collect();
            item.final_answer = if candidates.is_empty() {
                format!("not-{own}")
            } else {
                candidates[rng.gen_range(0..candidates.len())].clone()
            };
            item.steps.shuffle(&mut rng);
            item
        })
        .collect()
}

/// Calibrate the error baseline: train on the error set for `epochs` epochs
/// and average the per-example trace statistics.
pub fn calibrate_baseline(
    error_set: &[ExerciseItem],
    trainer: &mut dyn Trainer,
    epochs: usize,
) -> Result<Baseline, CartographyError> {
    if error_set.is_empty() {
        return Err(CartographyError::EmptyInput);
    }
    let traces = trainer.train_epochs(error_set, epochs)?;
    let stats: Vec<CartographyStats> =
        traces.iter().map(compute_stats).collect::<Result<_, _>>()?;
    let (loss_b, sigma_b) = corpus_averages(&stats)?;
    let baseline =
        Baseline { loss_b, sigma_b, n_error_examples: error_set.len(), epochs_used: epochs };
    baseline.validate()?;
    Ok(baseline)
}

/// One line of the cartography report JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartographyRecord {
    pub example_id: String,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub category: Category,
    pub epoch_window: usize,
}

/// Summary JSON: per-category counts plus the threshold quadruple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartographySummary {
    pub error: usize,
    pub hard_to_learn: usize,
    pub easy_to_learn: usize,
    pub ambiguous: usize,
    pub loss_b: f64,
    pub sigma_b: f64,
    pub loss_avg: f64,
    pub sigma_avg: f64,
}

impl CartographySummary {
    pub fn from_records(
        records: &[CartographyRecord],
        baseline: &Baseline,
        loss_avg: f64,
        sigma_avg: f64,
    ) -> Self {
        let count = |cat: Category| records.iter().filter(|r| r.category == cat).count();
        CartographySummary {
            error: count(Category::Error),
            hard_to_learn: count(Category::HardToLearn),
            easy_to_learn: count(Category::EasyToLearn),
            ambiguous: count(Category::Ambiguous),
            loss_b: baseline.loss_b,
            sigma_b: baseline.sigma_b,
            loss_avg,
            sigma_avg,
        }
    }
}

/// Compute stats, averages, and categories for a window's traces.
pub fn categorize_window(
    traces: &[LossTrace],
    baseline: &Baseline,
    epoch_window: usize,
) -> Result<(Vec<CartographyRecord>, CartographySummary), CartographyError> {
    let stats: Vec<CartographyStats> =
        traces.iter().map(compute_stats).collect::<Result<_, _>>()?;
    let (loss_avg, sigma_avg) = corpus_averages(&stats)?;
    let records: Vec<CartographyRecord> = stats
        .iter()
        .map(|s| CartographyRecord {
            example_id: s.example_id.clone(),
            mean_loss: s.mean_loss,
            std_loss: s.std_loss,
            category: categorize(s, baseline, loss_avg, sigma_avg),
            epoch_window,
        })
        .collect();
    let summary = CartographySummary::from_records(&records, baseline, loss_avg, sigma_avg);
    Ok((records, summary))
}
