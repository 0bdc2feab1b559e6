//! Topic models: collapsed Gibbs LDA, supervised LDA with binary
//! responses, and imported document-topic distributions.

mod gibbs;
mod import;
mod slda;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::BowMatrix;

pub use gibbs::{infer_theta, train_lda, GibbsState, InferConfig, LdaConfig};
pub use import::{estimate_phi, import_external_topics, read_keywords, read_theta_csv};
pub use slda::{refresh_slda, train_slda, update_slda_responses, ResponseMatrix, SldaConfig, SldaState};

#[derive(Debug, thiserror::Error)]
pub enum TopicModelError {
    #[error("invalid topic count {0}: need at least 2")]
    InvalidK(usize),
    #[error("need at least {k} documents for {k} topics, got {docs}")]
    TooFewDocuments { k: usize, docs: usize },
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("topic index {index} out of range for {k} topics")]
    TopicOutOfRange { index: usize, k: usize },
    #[error("model has no topic-word distribution")]
    MissingPhi,
    #[error("response rows ({responses}) do not match documents ({docs})")]
    ResponseShape { responses: usize, docs: usize },
    #[error("response row {row} must have exactly one 1 or be all zeros")]
    InvalidResponseRow { row: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("prediction count {predictions} does not cover {docs} documents")]
    PredictionCoverage { predictions: usize, docs: usize },
    #[error("row count mismatch: expected {expected}, got {actual}")]
    RowCountMismatch { expected: usize, actual: usize },
    #[error("document {0:?} missing from theta file")]
    MissingDocument(String),
    #[error("theta row {row} has a negative entry")]
    NegativeEntry { row: usize },
    #[error("theta row {row} sums to zero and cannot be normalized")]
    ZeroRow { row: usize },
    #[error("malformed {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where a topic model's distributions came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSource {
    Lda,
    Slda,
    /// sLDA trained before any responses existed, i.e. plain LDA.
    SldaColdstart,
    Imported,
}

/// Trained or imported topic model.
///
/// `phi` is `K x V` and `theta` is `D x K`; both are row-stochastic.
/// `keywords[k]` ranks terms by descending `phi[k]` with ties broken by
/// term index (for imported models it is taken verbatim from the import).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub source: ModelSource,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub phi: Option<Vec<Vec<f64>>>,
    pub theta: Vec<Vec<f64>>,
    pub keywords: Vec<Vec<String>>,
    /// Final topic assignments per token, kept so sampling can resume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignments: Option<Vec<Vec<u32>>>,
}

impl TopicModel {
    pub fn n_docs(&self) -> usize {
        self.theta.len()
    }

    /// First `n` keywords of topic `k` (all of them if fewer exist).
    pub fn top_keywords(&self, k: usize, n: usize) -> Result<&[String], TopicModelError> {
        let words = self
            .keywords
            .get(k)
            .ok_or(TopicModelError::TopicOutOfRange {
                index: k,
                k: self.k,
            })?;
        Ok(&words[..n.min(words.len())])
    }

    pub fn phi(&self) -> Result<&[Vec<f64>], TopicModelError> {
        self.phi.as_deref().ok_or(TopicModelError::MissingPhi)
    }

    /// Fills `phi` from `theta` and the corpus counts when it is missing.
    pub fn with_estimated_phi(mut self, bow: &BowMatrix) -> Self {
        if self.phi.is_none() {
            self.phi = Some(estimate_phi(&self.theta, bow));
        }
        self
    }

    pub fn save(&self, path: &Path) -> Result<(), TopicModelError> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, self).map_err(std::io::Error::from)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TopicModelError> {
        let file = BufReader::new(File::open(path)?);
        serde_json::from_reader(file).map_err(|e| TopicModelError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Term ranking for one topic: descending weight, ascending index on ties.
pub fn rank_terms(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
}

pub(crate) fn keyword_lists(phi: &[Vec<f64>], terms: &[String]) -> Vec<Vec<String>> {
    phi.iter()
        .map(|row| {
            rank_terms(row)
                .into_iter()
                .map(|i| terms[i].clone())
                .collect()
        })
        .collect()
}
