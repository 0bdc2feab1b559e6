//! Supervised LDA with binary (one-hot) responses.
//!
//! Each labeled document contributes, per label column `l`, a Bernoulli
//! likelihood `sigmoid(eta_l . zbar_d)` for its observed 0/1 response,
//! where `zbar_d` is the document's mean topic assignment. The sampler
//! multiplies each token's topic weights by that likelihood; `eta` is refit
//! by Newton's method (Gaussian prior) between sampling phases. Documents
//! without a response are sampled as in plain LDA.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gibbs::{GibbsState, LdaConfig, ResponseTerm};
use super::{ModelSource, TopicModel, TopicModelError};
use crate::corpus::BowMatrix;

/// One-hot response rows; `None` marks a document without a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    labels: Vec<String>,
    rows: Vec<Option<usize>>,
}

impl ResponseMatrix {
    pub fn new(labels: Vec<String>, rows: Vec<Option<usize>>) -> Result<Self, TopicModelError> {
        if let Some(row) = rows.iter().position(|r| r.is_some_and(|l| l >= labels.len())) {
            return Err(TopicModelError::InvalidResponseRow { row });
        }
        Ok(Self { labels, rows })
    }

    /// An all-unlabeled matrix with no columns.
    pub fn empty(n_docs: usize) -> Self {
        Self {
            labels: Vec::new(),
            rows: vec![None; n_docs],
        }
    }

    /// Reads a `D x L` 0/1 matrix; each row has exactly one 1 or none.
    pub fn from_binary(labels: Vec<String>, matrix: &[Vec<u8>]) -> Result<Self, TopicModelError> {
        let rows = matrix
            .iter()
            .enumerate()
            .map(|(d, row)| {
                if row.len() != labels.len() || row.iter().any(|&v| v > 1) {
                    return Err(TopicModelError::InvalidResponseRow { row: d });
                }
                match row.iter().filter(|&&v| v == 1).count() {
                    0 => Ok(None),
                    1 => Ok(row.iter().position(|&v| v == 1)),
                    _ => Err(TopicModelError::InvalidResponseRow { row: d }),
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { labels, rows })
    }

    /// One-hot rows over `label_set` from per-document label names.
    pub fn from_labels(
        label_set: &[String],
        per_doc: &[Option<&str>],
    ) -> Result<Self, TopicModelError> {
        let rows = per_doc
            .iter()
            .map(|l| {
                l.map(|name| {
                    label_set
                        .iter()
                        .position(|x| x == name)
                        .ok_or_else(|| TopicModelError::UnknownLabel(name.to_string()))
                })
                .transpose()
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            labels: label_set.to_vec(),
            rows,
        })
    }

    pub fn to_binary(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|r| {
                let mut row = vec![0; self.labels.len()];
                if let Some(l) = r {
                    row[*l] = 1;
                }
                row
            })
            .collect()
    }

    /// Drops label columns that no document uses.
    pub fn without_empty_columns(&self) -> Self {
        let mut used = vec![false; self.labels.len()];
        for l in self.rows.iter().flatten() {
            used[*l] = true;
        }
        let mut remap = vec![None; self.labels.len()];
        let mut labels = Vec::new();
        for (i, name) in self.labels.iter().enumerate() {
            if used[i] {
                remap[i] = Some(labels.len());
                labels.push(name.clone());
            }
        }
        Self {
            labels,
            rows: self.rows.iter().map(|r| r.and_then(|l| remap[l])).collect(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> &[Option<usize>] {
        &self.rows
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SldaConfig {
    pub lda: LdaConfig,
    /// Sweeps between refits of the response coefficients.
    pub eta_refit_every: usize,
    /// Variance of the Gaussian prior on each coefficient.
    pub eta_prior_variance: f64,
    /// Newton iterations stop once no coefficient moves more than this.
    pub eta_tolerance: f64,
    pub eta_max_newton: usize,
    /// Sweeps run after the responses are replaced.
    pub refresh_sweeps: usize,
}

impl Default for SldaConfig {
    fn default() -> Self {
        Self {
            lda: LdaConfig::default(),
            eta_refit_every: 50,
            eta_prior_variance: 1.0,
            eta_tolerance: 1e-4,
            eta_max_newton: 50,
            refresh_sweeps: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SldaState {
    pub gibbs: GibbsState,
    /// `L x K`, one row per response column.
    eta: Vec<Vec<f64>>,
    responses: ResponseMatrix,
    config: SldaConfig,
}

impl SldaState {
    /// Wraps an existing sampler (e.g. a trained LDA) with no responses.
    pub fn from_gibbs(gibbs: GibbsState, config: SldaConfig) -> Self {
        let n = gibbs.n_docs();
        Self {
            gibbs,
            eta: Vec::new(),
            responses: ResponseMatrix::empty(n),
            config,
        }
    }

    pub fn eta(&self) -> &[Vec<f64>] {
        &self.eta
    }

    pub fn responses(&self) -> &ResponseMatrix {
        &self.responses
    }

    pub fn config(&self) -> &SldaConfig {
        &self.config
    }

    pub fn to_model(&self, terms: &[String]) -> TopicModel {
        let source = if self.responses.n_labels() == 0 {
            ModelSource::SldaColdstart
        } else {
            ModelSource::Slda
        };
        self.gibbs.to_model(terms, source)
    }

    fn run(&mut self, sweeps: usize) {
        self.fit_eta();
        for i in 0..sweeps {
            let term = ResponseTerm {
                eta: &self.eta,
                labels: self.responses.rows(),
            };
            self.gibbs.sweep(Some(&term));
            if (i + 1) % self.config.eta_refit_every.max(1) == 0 {
                self.fit_eta();
            }
        }
    }

    /// Refits every label's coefficients on the current mean assignments.
    fn fit_eta(&mut self) {
        let zbar = self.gibbs.zbar();
        let k = self.gibbs.k();
        let labeled: Vec<(usize, usize)> = self
            .responses
            .rows()
            .iter()
            .enumerate()
            .filter_map(|(d, r)| r.map(|l| (d, l)))
            .collect();
        for (l, eta) in self.eta.iter_mut().enumerate() {
            let data: Vec<(&[f64], f64)> = labeled
                .iter()
                .map(|&(d, y)| (zbar[d].as_slice(), if y == l { 1.0 } else { 0.0 }))
                .collect();
            *eta = fit_logistic(&data, eta, k, &self.config);
        }
    }
}

/// MAP logistic regression without intercept by Newton's method.
fn fit_logistic(data: &[(&[f64], f64)], start: &[f64], k: usize, config: &SldaConfig) -> Vec<f64> {
    let prec = 1.0 / config.eta_prior_variance;
    let mut eta = DVector::from_column_slice(start);
    for _ in 0..config.eta_max_newton {
        let mut grad = -&eta * prec;
        let mut hess = DMatrix::<f64>::identity(k, k) * prec;
        for &(x, y) in data {
            let s: f64 = x.iter().zip(eta.iter()).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-s).exp());
            let w = p * (1.0 - p);
            for i in 0..k {
                if x[i] == 0.0 {
                    continue;
                }
                grad[i] += (y - p) * x[i];
                let wx = w * x[i];
                for j in 0..k {
                    hess[(i, j)] += wx * x[j];
                }
            }
        }
        let Some(chol) = hess.cholesky() else {
            break;
        };
        let step = chol.solve(&grad);
        eta += &step;
        if step.amax() < config.eta_tolerance {
            break;
        }
    }
    eta.iter().copied().collect()
}

/// Trains sLDA. Response columns no document uses are dropped first; with
/// none left this is exactly `train_lda` with the same seed, flagged
/// [`ModelSource::SldaColdstart`].
pub fn train_slda(
    bow: &BowMatrix,
    terms: &[String],
    responses: &ResponseMatrix,
    config: &SldaConfig,
) -> Result<(TopicModel, SldaState), TopicModelError> {
    let lda = &config.lda;
    lda.validate(bow.n_docs())?;
    if responses.n_docs() != bow.n_docs() {
        return Err(TopicModelError::ResponseShape {
            responses: responses.n_docs(),
            docs: bow.n_docs(),
        });
    }
    let responses = responses.without_empty_columns();
    let gibbs = GibbsState::new(bow, lda.k, lda.alpha, lda.beta, lda.seed);
    let mut state = SldaState {
        gibbs,
        eta: vec![vec![0.0; lda.k]; responses.n_labels()],
        responses,
        config: *config,
    };
    if state.responses.n_labels() == 0 {
        state.gibbs.run(lda.iterations, |_, _| {});
    } else {
        state.run(lda.iterations);
    }
    Ok((state.to_model(terms), state))
}

/// Replaces the responses with one-hot rows of `predicted` over
/// `label_set` and resumes sampling from the current assignments.
///
/// Coefficients of labels already present are carried over by name; new
/// labels start at zero.
pub fn update_slda_responses(
    state: &SldaState,
    label_set: &[String],
    predicted: &[String],
) -> Result<SldaState, TopicModelError> {
    if predicted.len() != state.gibbs.n_docs() {
        return Err(TopicModelError::PredictionCoverage {
            predictions: predicted.len(),
            docs: state.gibbs.n_docs(),
        });
    }
    let per_doc: Vec<Option<&str>> = predicted.iter().map(|p| Some(p.as_str())).collect();
    let responses = ResponseMatrix::from_labels(label_set, &per_doc)?;
    refresh_slda(state, responses)
}

/// Continues sampling from `state` against a new response matrix. Rows
/// left as `None` do not contribute to the response term.
pub fn refresh_slda(state: &SldaState, responses: ResponseMatrix) -> Result<SldaState, TopicModelError> {
    if responses.n_docs() != state.gibbs.n_docs() {
        return Err(TopicModelError::ResponseShape {
            responses: responses.n_docs(),
            docs: state.gibbs.n_docs(),
        });
    }
    let responses = responses.without_empty_columns();
    let k = state.gibbs.k();
    let eta = responses
        .labels()
        .iter()
        .map(|name| {
            state
                .responses
                .labels()
                .iter()
                .position(|l| l == name)
                .map(|i| state.eta[i].clone())
                .unwrap_or_else(|| vec![0.0; k])
        })
        .collect();
    let mut next = state.clone();
    next.eta = eta;
    next.responses = responses;
    next.run(next.config.refresh_sweeps);
    Ok(next)
}
