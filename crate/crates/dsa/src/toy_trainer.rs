//! Desk-scale trainer: multinomial logistic regression over bag-of-token
//! features, trained with plain mini-batch SGD on softmax cross-entropy.
//!
//! Convex, fully deterministic under a fixed seed, and analytically
//! checkable, yet it exhibits the loss/variance separation the cartography
//! statistics need, so the dynamic loop can be exercised end to end without
//! GPU training.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cartography::LossTrace;
use crate::datagen::{normalize_answer, ExerciseItem};
use crate::util::{derive_seed, stable_bucket, write_atomic};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("training on an empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}: training diverged")]
    Diverged { epoch: u64 },
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint metadata error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Fixed token vocabulary: the top `max_size` tokens by corpus frequency,
/// ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

/// Default vocabulary capacity.
pub const DEFAULT_VOCAB_SIZE: usize = 2048;

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

impl Vocabulary {
    pub fn build<'a>(texts: impl Iterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for text in texts {
            for token in tokenize(text) {
                *counts.entry(token).or_default() += 1;
            }
        }
        let mut by_freq: Vec<(String, u64)> = counts.into_iter().collect();
        // Descending frequency; BTreeMap iteration already fixed ties
        // lexicographically, and sort_by is stable.
        by_freq.sort_by(|a, b| b.1.cmp(&a.1));
        by_freq.truncate(max_size);
        let tokens: Vec<String> = by_freq.into_iter().map(|(t, _)| t).collect();
        Vocabulary::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Sparse bag-of-token counts of `text` over this vocabulary, sorted by
    /// token index.
    pub fn count_features(&self, text: &str) -> Vec<(usize, u32)> {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for token in tokenize(text) {
            if let Some(&i) = self.index.get(&token) {
                *counts.entry(i).or_default() += 1;
            }
        }
        counts.into_iter().collect()
    }
}

/// One featurized training example: sparse non-negative token counts over a
/// fixed vocabulary plus a class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyExample {
    pub example_id: String,
    /// Sparse (vocab index, count) pairs, strictly increasing in index.
    pub features: Vec<(usize, u32)>,
    pub label: usize,
}

/// Featurize an exercise item: token counts of the problem text, label from
/// the hash bucket of the normalized final answer. Fixture tasks that need
/// explicit labels construct [`ToyExample`] directly instead.
pub fn featurize(item: &ExerciseItem, vocab: &Vocabulary, n_classes: usize) -> ToyExample {
    ToyExample {
        example_id: item.id.clone(),
        features: vocab.count_features(&item.problem),
        label: stable_bucket(&normalize_answer(&item.final_answer), n_classes),
    }
}

/// SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ToyHyper {
    fn default() -> Self {
        ToyHyper { learning_rate: 0.5, batch_size: 16 }
    }
}

/// Multinomial logistic regression model: weight matrix `classes x vocab`
/// (row-major) plus a bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub classes: usize,
    pub vocab_size: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub hyper: ToyHyper,
    pub seed: u64,
    pub epochs_trained: u64,
}

impl ToyModel {
    pub fn new(classes: usize, vocab_size: usize, hyper: ToyHyper, seed: u64) -> Self {
        assert!(classes >= 2, "need at least two classes");
        ToyModel {
            classes,
            vocab_size,
            weights: vec![0.0; classes * vocab_size],
            bias: vec![0.0; classes],
            hyper,
            seed,
            epochs_trained: 0,
        }
    }

    fn logits(&self, example: &ToyExample) -> Vec<f64> {
        let mut z = self.bias.clone();
        for &(idx, count) in &example.features {
            debug_assert!(idx < self.vocab_size);
            let x = count as f64;
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += self.weights[c * self.vocab_size + idx] * x;
            }
        }
        z
    }

    fn softmax(mut z: Vec<f64>) -> Vec<f64> {
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for zc in z.iter_mut() {
            *zc = (*zc - max).exp();
            sum += *zc;
        }
        for zc in z.iter_mut() {
            *zc /= sum;
        }
        z
    }

    /// Cross-entropy loss of a single example.
    pub fn example_loss(&self, example: &ToyExample) -> f64 {
        let probs = Self::softmax(self.logits(example));
        -probs[example.label].max(f64::MIN_POSITIVE).ln()
    }
}

/// Dense gradient of the batch-mean cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

/// Mean softmax cross-entropy over a batch with its analytic gradient.
pub fn loss_and_gradient(model: &ToyModel, batch: &[&ToyExample]) -> Result<(f64, Gradient), TrainerError> {
    if batch.is_empty() {
        return Err(TrainerError::EmptyDataset);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut d_weights = vec![0.0; model.weights.len()];
    let mut d_bias = vec![0.0; model.bias.len()];
    for example in batch {
        debug_assert!(example.label < model.classes);
        let probs = ToyModel::softmax(model.logits(example));
        loss += -probs[example.label].max(f64::MIN_POSITIVE).ln() * scale;
        for c in 0..model.classes {
            let dz = (probs[c] - if c == example.label { 1.0 } else { 0.0 }) * scale;
            d_bias[c] += dz;
            for &(idx, count) in &example.features {
                d_weights[c * model.vocab_size + idx] += dz * count as f64;
            }
        }
    }
    Ok((loss, Gradient { d_weights, d_bias }))
}

/// The deterministic epoch shuffle: derived from the model seed and the
/// global epoch index, so an interrupted run resumes bit-identically.
pub fn epoch_shuffle_order(seed: u64, epoch_index: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("epoch-{epoch_index}")));
    order.shuffle(&mut rng);
    order
}

/// Mini-batch SGD for `epochs` epochs. After each epoch a full forward pass
/// appends every example's loss to its trace (input order). Returns one
/// trace per example.
pub fn train_epochs(
    model: &mut ToyModel,
    data: &[ToyExample],
    epochs: usize,
) -> Result<Vec<LossTrace>, TrainerError> {
    if data.is_empty() {
        return Err(TrainerError::EmptyDataset);
    }
    let mut traces: Vec<LossTrace> =
        data.iter().map(|e| LossTrace::new(e.example_id.clone(), Vec::with_capacity(epochs))).collect();
    for _ in 0..epochs {
        let order = epoch_shuffle_order(model.seed, model.epochs_trained, data.len());
        for batch_indices in order.chunks(model.hyper.batch_size.max(1)) {
            let batch: Vec<&ToyExample> = batch_indices.iter().map(|&i| &data[i]).collect();
            let (loss, grad) = loss_and_gradient(model, &batch)?;
            if !loss.is_finite() {
                return Err(TrainerError::Diverged { epoch: model.epochs_trained });
            }
            let lr = model.hyper.learning_rate;
            for (w, dw) in model.weights.iter_mut().zip(&grad.d_weights) {
                *w -= lr * dw;
            }
            for (b, db) in model.bias.iter_mut().zip(&grad.d_bias) {
                *b -= lr * db;
            }
        }
        // Trace pass: fixed input order, single-threaded reduction.
        for (example, trace) in data.iter().zip(traces.iter_mut()) {
            let loss = model.example_loss(example);
            if !loss.is_finite() {
                return Err(TrainerError::Diverged { epoch: model.epochs_trained });
            }
            trace.losses.push(loss);
        }
        model.epochs_trained += 1;
    }
    Ok(traces)
}

/// Training backend contract used by baseline calibration and the dynamic
/// loop.
pub trait Trainer {
    /// Train on `data` for `epochs`, returning one per-epoch loss trace per
    /// example, in input order.
    fn train_epochs(
        &mut self,
        data: &[ExerciseItem],
        epochs: usize,
    ) -> Result<Vec<LossTrace>, TrainerError>;

    /// Mean loss over `data` without updating parameters.
    fn mean_loss(&self, data: &[ExerciseItem]) -> Result<f64, TrainerError>;

    /// Persist the model as a flat binary checkpoint plus JSON metadata.
    fn save_model(&self, bin_path: &Path, meta_path: &Path) -> Result<(), TrainerError>;
}

/// [`Trainer`] over exercise items: featurizes with a fixed vocabulary and
/// trains the logistic-regression model.
#[derive(Debug, Clone)]
pub struct ToyTrainer {
    pub model: ToyModel,
    pub vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    classes: usize,
    vocab_size: usize,
    hyper: ToyHyper,
    seed: u64,
    epochs_trained: u64,
    vocab: Vec<String>,
}

impl ToyTrainer {
    pub fn new(model: ToyModel, vocab: Vocabulary) -> Self {
        assert_eq!(model.vocab_size, vocab.len());
        ToyTrainer { model, vocab }
    }

    /// Build vocabulary from the corpus problems and initialize a fresh
    /// model.
    pub fn from_corpus(
        items: &[ExerciseItem],
        classes: usize,
        vocab_cap: usize,
        hyper: ToyHyper,
        seed: u64,
    ) -> Self {
        let vocab = Vocabulary::build(items.iter().map(|i| i.problem.as_str()), vocab_cap);
        let model = ToyModel::new(classes, vocab.len(), hyper, seed);
        ToyTrainer { model, vocab }
    }

    fn featurize_all(&self, items: &[ExerciseItem]) -> Vec<ToyExample> {
        items.iter().map(|i| featurize(i, &self.vocab, self.model.classes)).collect()
    }

    /// Load a checkpoint written by [`Trainer::save_model`].
    pub fn load_checkpoint(bin_path: &Path, meta_path: &Path) -> Result<Self, TrainerError> {
        let meta: CheckpointMeta = serde_json::from_slice(&std::fs::read(meta_path)?)?;
        let mut file = std::fs::File::open(bin_path)?;
        let mut header = [0u8; 8];
        file.read_exact(&mut header)?;
        let classes = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let vocab_size = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        if classes != meta.classes || vocab_size != meta.vocab_size {
            return Err(TrainerError::BadCheckpoint(format!(
                "binary header ({classes} x {vocab_size}) disagrees with metadata ({} x {})",
                meta.classes, meta.vocab_size
            )));
        }
        let mut read_f64s = |n: usize| -> Result<Vec<f64>, TrainerError> {
            let mut buf = vec![0u8; n * 8];
            file.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
        };
        let weights = read_f64s(classes * vocab_size)?;
        let bias = read_f64s(classes)?;
        if meta.vocab.len() != vocab_size {
            return Err(TrainerError::BadCheckpoint(format!(
                "metadata vocab has {} tokens, expected {vocab_size}",
                meta.vocab.len()
            )));
        }
        Ok(ToyTrainer {
            model: ToyModel {
                classes,
                vocab_size,
                weights,
                bias,
                hyper: meta.hyper,
                seed: meta.seed,
                epochs_trained: meta.epochs_trained,
            },
            vocab: Vocabulary::from_tokens(meta.vocab),
        })
    }
}

impl Trainer for ToyTrainer {
    fn train_epochs(
        &mut self,
        data: &[ExerciseItem],
        epochs: usize,
    ) -> Result<Vec<LossTrace>, TrainerError> {
        let examples = self.featurize_all(data);
        train_epochs(&mut self.model, &examples, epochs)
    }

    fn mean_loss(&self, data: &[ExerciseItem]) -> Result<f64, TrainerError> {
        if data.is_empty() {
            return Err(TrainerError::EmptyDataset);
        }
        let examples = self.featurize_all(data);
        let total: f64 = examples.iter().map(|e| self.model.example_loss(e)).sum();
        Ok(total / examples.len() as f64)
    }

    fn save_model(&self, bin_path: &Path, meta_path: &Path) -> Result<(), TrainerError> {
        // Flat binary: u32 classes, u32 vocab_size (LE), then row-major
        // weights and the bias vector as little-endian f64.
        let mut buf = Vec::with_capacity(8 + (self.model.weights.len() + self.model.bias.len()) * 8);
        buf.write_all(&(self.model.classes as u32).to_le_bytes())?;
        buf.write_all(&(self.model.vocab_size as u32).to_le_bytes())?;
        for w in &self.model.weights {
            buf.write_all(&w.to_le_bytes())?;
        }
        for b in &self.model.bias {
            buf.write_all(&b.to_le_bytes())?;
        }
        write_atomic(bin_path, &buf)?;
        let meta = CheckpointMeta {
            classes: self.model.classes,
            vocab_size: self.model.vocab_size,
            hyper: self.model.hyper,
            seed: self.model.seed,
            epochs_trained: self.model.epochs_trained,
            vocab: self.vocab.tokens().to_vec(),
        };
        let mut bytes = serde_json::to_vec_pretty(&meta)?;
        bytes.push(b'\n');
        write_atomic(meta_path, &bytes)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(id: &str, features: &[(usize, u32)], label: usize) -> ToyExample {
        ToyExample { example_id: id.into(), features: features.to_vec(), label }
    }

    #[test]
    fn featurize_empty_text_is_zero_vector() {
        let vocab = Vocabulary::from_tokens(vec!["add".into(), "two".into()]);
        let item = ExerciseItem {
            id: "e".into(),
            required_skill_ids: vec!["s".into()],
            problem: "".into(),
            steps: vec![],
            final_answer: "1".into(),
            provenance: crate::datagen::Provenance::Generated,
            parent_ids: vec![],
        };
        let ex = featurize(&item, &vocab, 4);
        assert!(ex.features.is_empty());
        assert!(ex.label < 4);
    }

    #[test]
    fn repeated_token_counts_twice() {
        let vocab = Vocabulary::from_tokens(vec!["add".into()]);
        assert_eq!(vocab.count_features("add add"), vec![(0, 2)]);
    }

    #[test]
    fn feature_sums_match_independent_recount() {
        let texts = ["add two and three", "subtract three from five", "add five twice"];
        let vocab = Vocabulary::build(texts.iter().copied(), 64);
        let total: u32 = texts
            .iter()
            .map(|t| vocab.count_features(t).iter().map(|(_, c)| c).sum::<u32>())
            .sum();
        // Independent recount: every whitespace word is alphanumeric here
        // and the vocabulary has room for all of them.
        let expected: u32 = texts.iter().map(|t| t.split_whitespace().count() as u32).sum();
        assert_eq!(total, expected);
    }

    #[test]
    fn vocab_ranks_by_frequency_then_lexicographic() {
        let texts = ["b b b", "a a", "c a", "d"];
        let vocab = Vocabulary::build(texts.iter().copied(), 3);
        assert_eq!(vocab.tokens(), &["b".to_string(), "a".into(), "c".into()]);
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        for classes in [2usize, 5, 10] {
            let model = ToyModel::new(classes, 4, ToyHyper::default(), 0);
            let ex = example("e", &[(0, 1), (2, 3)], classes - 1);
            let loss = model.example_loss(&ex);
            assert!(
                (loss - (classes as f64).ln()).abs() < 1e-12,
                "classes {classes}: loss {loss}"
            );
        }
    }

    #[test]
    fn saturated_correct_logits_drive_loss_to_zero() {
        let mut model = ToyModel::new(3, 2, ToyHyper::default(), 0);
        model.bias[1] = 50.0;
        let ex = example("e", &[], 1);
        assert!(model.example_loss(&ex) < 1e-12);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..20 {
            let classes = rng.gen_range(2..5);
            let vocab = rng.gen_range(2..7);
            let mut model = ToyModel::new(classes, vocab, ToyHyper::default(), 0);
            for w in model.weights.iter_mut() {
                *w = rng.gen::<f64>() - 0.5;
            }
            for b in model.bias.iter_mut() {
                *b = rng.gen::<f64>() - 0.5;
            }
            let batch_own: Vec<ToyExample> = (0..rng.gen_range(1..4))
                .map(|i| {
                    let nnz = rng.gen_range(1..=vocab);
                    let mut idxs: Vec<usize> = (0..vocab).collect();
                    idxs.shuffle(&mut rng);
                    idxs.truncate(nnz);
                    idxs.sort_unstable();
                    example(
                        &format!("e{i}"),
                        &idxs.iter().map(|&j| (j, rng.gen_range(1..4))).collect::<Vec<_>>(),
                        rng.gen_range(0..classes),
                    )
                })
                .collect();
            let batch: Vec<&ToyExample> = batch_own.iter().collect();
            let (_, grad) = loss_and_gradient(&model, &batch).unwrap();
            let h = 1e-5;
            for k in 0..model.weights.len() {
                let mut plus = model.clone();
                plus.weights[k] += h;
                let mut minus = model.clone();
                minus.weights[k] -= h;
                let (lp, _) = loss_and_gradient(&plus, &batch).unwrap();
                let (lm, _) = loss_and_gradient(&minus, &batch).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (grad.d_weights[k] - fd).abs() / grad.d_weights[k].abs().max(1.0);
                assert!(rel < 1e-5, "trial {trial} weight {k}: analytic {} fd {fd}", grad.d_weights[k]);
            }
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters_and_traces() {
        let data = vec![example("a", &[(0, 1)], 0), example("b", &[(1, 2)], 1)];
        let mut model =
            ToyModel::new(2, 2, ToyHyper { learning_rate: 0.0, batch_size: 2 }, 7);
        let before = model.clone();
        let traces = train_epochs(&mut model, &data, 4).unwrap();
        assert_eq!(model.weights, before.weights);
        assert_eq!(model.bias, before.bias);
        for trace in traces {
            assert_eq!(trace.losses.len(), 4);
            assert!(trace.losses.windows(2).all(|w| w[0] == w[1]), "constant trace");
        }
    }

    #[test]
    fn single_example_loss_is_nonincreasing_to_near_zero() {
        let data = vec![example("only", &[(0, 2), (3, 1)], 2)];
        let mut model =
            ToyModel::new(4, 5, ToyHyper { learning_rate: 0.5, batch_size: 1 }, 3);
        let traces = train_epochs(&mut model, &data, 200).unwrap();
        let losses = &traces[0].losses;
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
        assert!(*losses.last().unwrap() < 0.05, "final loss {}", losses.last().unwrap());
    }

    // Reference oracle: an independently coded scalar-loop epoch, sharing
    // only the published shuffle order.
    #[test]
    fn one_epoch_matches_scalar_reference_implementation() {
        let data = vec![
            example("a", &[(0, 1), (2, 2)], 0),
            example("b", &[(1, 1)], 2),
            example("c", &[(0, 3), (1, 1), (2, 1)], 1),
        ];
        let hyper = ToyHyper { learning_rate: 0.3, batch_size: 2 };
        let (classes, vocab) = (3usize, 3usize);
        let mut model = ToyModel::new(classes, vocab, hyper, 11);
        let traces = train_epochs(&mut model, &data, 1).unwrap();

        // Scalar reference: dense weights, explicit exp/sum loops.
        let mut w = vec![vec![0.0f64; vocab]; classes];
        let mut b = vec![0.0f64; classes];
        let dense = |e: &ToyExample| {
            let mut x = vec![0.0f64; vocab];
            for &(i, c) in &e.features {
                x[i] = c as f64;
            }
            x
        };
        let order = epoch_shuffle_order(11, 0, data.len());
        for chunk in order.chunks(hyper.batch_size) {
            let mut dw = vec![vec![0.0f64; vocab]; classes];
            let mut db = vec![0.0f64; classes];
            for &i in chunk {
                let x = dense(&data[i]);
                let mut z = vec![0.0f64; classes];
                for c in 0..classes {
                    z[c] = b[c];
                    for v in 0..vocab {
                        z[c] += w[c][v] * x[v];
                    }
                }
                let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|zc| (zc - zmax).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for c in 0..classes {
                    let p = exps[c] / sum;
                    let dz = (p - if c == data[i].label { 1.0 } else { 0.0 }) / chunk.len() as f64;
                    db[c] += dz;
                    for v in 0..vocab {
                        dw[c][v] += dz * x[v];
                    }
                }
            }
            for c in 0..classes {
                b[c] -= hyper.learning_rate * db[c];
                for v in 0..vocab {
                    w[c][v] -= hyper.learning_rate * dw[c][v];
                }
            }
        }
        // Per-example losses after the epoch, scalar route.
        for (i, trace) in traces.iter().enumerate() {
            let x = dense(&data[i]);
            let mut z = vec![0.0f64; classes];
            for c in 0..classes {
                z[c] = b[c];
                for v in 0..vocab {
                    z[c] += w[c][v] * x[v];
                }
            }
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|zc| (zc - zmax).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let ref_loss = -(exps[data[i].label] / sum).ln();
            assert!(
                (trace.losses[0] - ref_loss).abs() < 1e-10,
                "example {i}: {} vs reference {ref_loss}",
                trace.losses[0]
            );
        }
        for c in 0..classes {
            assert!((model.bias[c] - b[c]).abs() < 1e-10);
            for v in 0..vocab {
                assert!((model.weights[c * vocab + v] - w[c][v]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn training_is_deterministic_under_fixed_seed() {
        let data: Vec<ToyExample> =
            (0..20).map(|i| example(&format!("e{i}"), &[(i % 5, 1 + (i % 3) as u32)], i % 4)).collect();
        let run = || {
            let mut model =
                ToyModel::new(4, 5, ToyHyper { learning_rate: 0.2, batch_size: 4 }, 99);
            train_epochs(&mut model, &data, 3).map(|t| (model, t))
        };
        let (m1, t1) = run().unwrap();
        let (m2, t2) = run().unwrap();
        assert_eq!(m1.weights, m2.weights);
        assert_eq!(t1, t2);
    }

    #[test]
    fn checkpoint_round_trips() {
        let items: Vec<ExerciseItem> = (0..6)
            .map(|i| ExerciseItem {
                id: format!("e{i}"),
                required_skill_ids: vec!["s".into()],
                problem: format!("add two and {i} more things"),
                steps: vec![],
                final_answer: format!("{}", i % 3),
                provenance: crate::datagen::Provenance::Generated,
                parent_ids: vec![],
            })
            .collect();
        let mut trainer = ToyTrainer::from_corpus(&items, 4, 32, ToyHyper::default(), 5);
        trainer.train_epochs(&items, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("model.bin");
        let meta = dir.path().join("model.meta.json");
        trainer.save_model(&bin, &meta).unwrap();
        let back = ToyTrainer::load_checkpoint(&bin, &meta).unwrap();
        assert_eq!(back.model, trainer.model);
        assert_eq!(back.vocab, trainer.vocab);
        assert_eq!(
            back.mean_loss(&items).unwrap(),
            trainer.mean_loss(&items).unwrap(),
            "loaded model scores identically"
        );
    }

    // Corrupted labels keep losses above the clean mean: the signature the
    // error bucket keys on.
    #[test]
    fn injected_label_noise_produces_error_signature() {
        let mut ok = 0;
        let trials = 20;
        for seed in 0..trials {
            let task = crate::synth::SynthTask::build(crate::synth::SynthTaskSpec {
                seed,
                ..Default::default()
            });
            let mut items = task.generate_corpus(300);
            let corrupted = crate::synth::inject_label_noise(&mut items, 0.1, seed);
            let mut trainer = ToyTrainer::from_corpus(
                &items,
                task.classes(),
                DEFAULT_VOCAB_SIZE,
                ToyHyper::default(),
                seed,
            );
            let traces = trainer.train_epochs(&items, 6).unwrap();
            let stats: Vec<crate::cartography::CartographyStats> =
                traces.iter().map(|t| crate::cartography::compute_stats(t).unwrap()).collect();
            let clean_mean = {
                let clean: Vec<&crate::cartography::CartographyStats> =
                    stats.iter().filter(|s| !corrupted.contains(&s.example_id)).collect();
                clean.iter().map(|s| s.mean_loss).sum::<f64>() / clean.len() as f64
            };
            let all_above = stats
                .iter()
                .filter(|s| corrupted.contains(&s.example_id))
                .all(|s| s.mean_loss > clean_mean);
            if all_above {
                ok += 1;
            }
        }
        assert!(ok * 10 >= trials * 9, "error signature in {ok}/{trials} trials");
    }
}
