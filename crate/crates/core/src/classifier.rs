//! Multinomial logistic regression trained by SGD, used incrementally
//! as labels arrive.
//!
//! Loss is softmax cross-entropy plus `alpha/2 * ||W||^2` (bias not
//! penalized). The step size follows the "optimal" schedule
//! `eta_t = 1 / (alpha * (t0 + t))` with `t0 = 1 / (alpha * eta0)`, so the
//! first step uses exactly `eta0`. Weights are stored as `wscale * W` so the
//! L2 shrinkage is O(1) per step on sparse rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sparse::SparseVec;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClassifierError {
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("label {0:?} has not been registered with the classifier")]
    UnseenLabel(String),
    #[error("need at least two distinct labels to fit, got {0}")]
    FewerThanTwoClasses(usize),
    #[error("classifier is not initialized")]
    Uninitialized,
}

/// Labels in creation order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<String>,
    created_at: Vec<u64>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `label` if new. Returns its index and whether it was added.
    pub fn insert(&mut self, label: &str, event_seq: u64) -> (usize, bool) {
        match self.index_of(label) {
            Some(i) => (i, false),
            None => {
                self.labels.push(label.to_string());
                self.created_at.push(event_seq);
                (self.labels.len() - 1, true)
            }
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn created_at(&self, index: usize) -> u64 {
        self.created_at[index]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labeled documents, at most one active label per document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingBuffer {
    pairs: Vec<(String, String)>,
}

impl TrainingBuffer {
    /// Assigns `label` to `doc_id`, replacing any previous label in place.
    /// Returns the previous label.
    pub fn assign(&mut self, doc_id: &str, label: &str) -> Option<String> {
        match self.pairs.iter_mut().find(|(d, _)| d == doc_id) {
            Some(pair) => Some(std::mem::replace(&mut pair.1, label.to_string())),
            None => {
                self.pairs.push((doc_id.to_string(), label.to_string()));
                None
            }
        }
    }

    pub fn label_of(&self, doc_id: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(d, _)| d == doc_id)
            .map(|(_, l)| l.as_str())
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn distinct_labels(&self) -> usize {
        let mut seen: Vec<&str> = self.pairs.iter().map(|(_, l)| l.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub alpha: f64,
    pub eta0: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub reinit_epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 5e-6,
            eta0: 0.1,
            tolerance: 1e-2,
            seed: 42,
            reinit_epochs: 5,
        }
    }
}

impl Hyperparams {
    fn learning_rate(&self, step: u64) -> f64 {
        let t0 = 1.0 / (self.alpha * self.eta0);
        1.0 / (self.alpha * (t0 + step as f64))
    }
}

/// Layout of `[tf-idf | theta]` feature rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub vocab: usize,
    pub topics: usize,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.vocab + self.topics
    }

    /// Concatenates a tf-idf row with a topic distribution (when the layout
    /// has topic columns).
    pub fn build(
        &self,
        tfidf_row: &SparseVec,
        theta_row: Option<&[f64]>,
    ) -> Result<SparseVec, ClassifierError> {
        if tfidf_row.dim != self.vocab {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.vocab,
                actual: tfidf_row.dim,
            });
        }
        match (self.topics, theta_row) {
            (0, None) => Ok(tfidf_row.clone()),
            (k, Some(theta)) if theta.len() == k && k > 0 => Ok(tfidf_row.concat_dense(theta)),
            (_, theta) => Err(ClassifierError::DimensionMismatch {
                expected: self.width(),
                actual: self.vocab + theta.map_or(0, <[f64]>::len),
            }),
        }
    }
}

/// Softmax cross-entropy plus L2 for a single example.
pub fn objective(
    weights: &[Vec<f64>],
    bias: &[f64],
    x: &SparseVec,
    y: usize,
    alpha: f64,
) -> f64 {
    let scores: Vec<f64> = weights
        .iter()
        .zip(bias)
        .map(|(w, b)| x.dot(w) + b)
        .collect();
    let penalty: f64 = weights.iter().flatten().map(|w| w * w).sum::<f64>() * alpha / 2.0;
    log_sum_exp(&scores) - scores[y] + penalty
}

/// Analytic gradient of [`objective`] as `(dW, db)`.
pub fn gradient(
    weights: &[Vec<f64>],
    bias: &[f64],
    x: &SparseVec,
    y: usize,
    alpha: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let scores: Vec<f64> = weights
        .iter()
        .zip(bias)
        .map(|(w, b)| x.dot(w) + b)
        .collect();
    let p = softmax(&scores);
    let db: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(c, &pc)| pc - if c == y { 1.0 } else { 0.0 })
        .collect();
    let dw = weights
        .iter()
        .zip(&db)
        .map(|(w, &g)| {
            let mut row: Vec<f64> = w.iter().map(|v| alpha * v).collect();
            for (i, xi) in x.iter() {
                row[i] += g * xi;
            }
            row
        })
        .collect();
    (dw, db)
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Linear softmax classifier over a fixed label list.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    labels: Vec<String>,
    dim: usize,
    weights: Vec<f64>,
    wscale: f64,
    bias: Vec<f64>,
    hyper: Hyperparams,
    steps: u64,
}

impl ClassifierState {
    /// A classifier with no classes; every prediction errors until
    /// [`reinitialize`] runs.
    pub fn uninitialized(dim: usize, hyper: Hyperparams) -> Self {
        Self::zeros(Vec::new(), dim, hyper)
    }

    fn zeros(labels: Vec<String>, dim: usize, hyper: Hyperparams) -> Self {
        Self {
            weights: vec![0.0; labels.len() * dim],
            bias: vec![0.0; labels.len()],
            labels,
            dim,
            wscale: 1.0,
            hyper,
            steps: 0,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.labels.len() >= 2
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    /// Unscaled `C x F` weights.
    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.weights
            .chunks(self.dim.max(1))
            .take(self.labels.len())
            .map(|row| row.iter().map(|w| w * self.wscale).collect())
            .collect()
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn check_dim(&self, x: &SparseVec) -> Result<(), ClassifierError> {
        if x.dim != self.dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim,
                actual: x.dim,
            });
        }
        Ok(())
    }

    fn scores(&self, x: &SparseVec) -> Vec<f64> {
        (0..self.labels.len())
            .map(|c| {
                let row = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.wscale * x.dot(row) + self.bias[c]
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &SparseVec) -> Result<Vec<f64>, ClassifierError> {
        if !self.is_initialized() {
            return Err(ClassifierError::Uninitialized);
        }
        self.check_dim(x)?;
        Ok(softmax(&self.scores(x)))
    }

    /// Argmax class index; ties go to the earliest-created label.
    pub fn predict(&self, x: &SparseVec) -> Result<usize, ClassifierError> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    pub fn predict_all(&self, rows: &[SparseVec]) -> Result<Vec<usize>, ClassifierError> {
        rows.iter().map(|x| self.predict(x)).collect()
    }

    /// One SGD pass over `batch` in the given order.
    pub fn fit_incremental(&mut self, batch: &[(&SparseVec, &str)]) -> Result<(), ClassifierError> {
        let resolved = self.resolve(batch)?;
        for (x, y) in resolved {
            self.step(x, y);
        }
        Ok(())
    }

    fn resolve<'a>(
        &self,
        batch: &[(&'a SparseVec, &str)],
    ) -> Result<Vec<(&'a SparseVec, usize)>, ClassifierError> {
        batch
            .iter()
            .map(|&(x, label)| {
                self.check_dim(x)?;
                let y = self
                    .labels
                    .iter()
                    .position(|l| l == label)
                    .ok_or_else(|| ClassifierError::UnseenLabel(label.to_string()))?;
                Ok((x, y))
            })
            .collect()
    }

    /// Updates on one example and returns its loss before the update
    /// (penalty excluded).
    fn step(&mut self, x: &SparseVec, y: usize) -> f64 {
        let eta = self.hyper.learning_rate(self.steps);
        let scores = self.scores(x);
        let loss = log_sum_exp(&scores) - scores[y];
        let p = softmax(&scores);
        self.wscale *= 1.0 - eta * self.hyper.alpha;
        for (c, pc) in p.into_iter().enumerate() {
            let g = pc - if c == y { 1.0 } else { 0.0 };
            let row = &mut self.weights[c * self.dim..(c + 1) * self.dim];
            let scaled = eta * g / self.wscale;
            for (i, xi) in x.iter() {
                row[i] -= scaled * xi;
            }
            self.bias[c] -= eta * g;
        }
        if self.wscale < 1e-9 {
            for w in &mut self.weights {
                *w *= self.wscale;
            }
            self.wscale = 1.0;
        }
        self.steps += 1;
        loss
    }

    pub fn snapshot(&self) -> ClassifierSnapshot {
        ClassifierSnapshot {
            labels: self.labels.clone(),
            weights: self.weights(),
            bias: self.bias.clone(),
            hyperparams: self.hyper,
            loss: "log_loss".into(),
            penalty: "l2".into(),
            learning_rate: "optimal".into(),
            steps: self.steps,
        }
    }

    pub fn from_snapshot(snapshot: &ClassifierSnapshot) -> Self {
        let dim = snapshot.weights.first().map_or(0, Vec::len);
        Self {
            labels: snapshot.labels.clone(),
            dim,
            weights: snapshot.weights.iter().flatten().copied().collect(),
            wscale: 1.0,
            bias: snapshot.bias.clone(),
            hyper: snapshot.hyperparams,
            steps: snapshot.steps,
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Serializable view of a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSnapshot {
    pub labels: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub hyperparams: Hyperparams,
    pub loss: String,
    pub penalty: String,
    pub learning_rate: String,
    pub steps: u64,
}

/// Fresh zero weights over every label in `labels`, then up to
/// `reinit_epochs` shuffled passes over `pairs`. Training stops early once
/// an epoch's mean loss fails to beat the best so far by `tolerance`.
pub fn reinitialize(
    labels: &LabelSet,
    pairs: &[(&SparseVec, &str)],
    dim: usize,
    hyper: Hyperparams,
    shuffle_seed: u64,
) -> Result<ClassifierState, ClassifierError> {
    let mut distinct: Vec<&str> = pairs.iter().map(|(_, l)| *l).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(ClassifierError::FewerThanTwoClasses(distinct.len()));
    }
    let mut state = ClassifierState::zeros(labels.labels().to_vec(), dim, hyper);
    let resolved = state.resolve(pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    let mut best = f64::INFINITY;
    for _ in 0..hyper.reinit_epochs {
        order.shuffle(&mut rng);
        let total: f64 = order
            .iter()
            .map(|&i| state.step(resolved[i].0, resolved[i].1))
            .sum();
        let mean = total / resolved.len() as f64;
        if mean > best - hyper.tolerance {
            break;
        }
        best = mean;
    }
    Ok(state)
}
