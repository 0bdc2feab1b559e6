use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{keyword_lists, ModelSource, TopicModel, TopicModelError};
use crate::corpus::{expand_counts, BowMatrix};

/// LDA training settings. Defaults: 35 topics, 2000 sweeps,
/// symmetric priors alpha = 0.1 and beta = 0.01.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub k: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            k: 35,
            iterations: 2000,
            alpha: 0.1,
            beta: 0.01,
            seed: 0,
        }
    }
}

impl LdaConfig {
    pub(crate) fn validate(&self, n_docs: usize) -> Result<(), TopicModelError> {
        if self.k < 2 {
            return Err(TopicModelError::InvalidK(self.k));
        }
        if self.iterations == 0 {
            return Err(TopicModelError::NoIterations);
        }
        if n_docs < self.k {
            return Err(TopicModelError::TooFewDocuments {
                k: self.k,
                docs: n_docs,
            });
        }
        Ok(())
    }
}

/// Supervision applied during a sweep: per-label logistic coefficients
/// over the mean topic assignment, and each document's observed label.
pub(crate) struct ResponseTerm<'a> {
    pub eta: &'a [Vec<f64>],
    pub labels: &'a [Option<usize>],
}

/// Collapsed Gibbs sampler state. Counts are kept consistent with `z`
/// after every token update.
#[derive(Debug, Clone)]
pub struct GibbsState {
    k: usize,
    n_terms: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    docs: Vec<Vec<u32>>,
    z: Vec<Vec<u32>>,
    /// `D x K`, row-major.
    n_dk: Vec<u32>,
    /// `V x K`, word-major so a token's topic counts are contiguous.
    n_wk: Vec<u32>,
    n_k: Vec<u32>,
    rng: ChaCha8Rng,
}

impl GibbsState {
    /// Random initial assignments drawn from the seeded generator.
    pub fn new(bow: &BowMatrix, k: usize, alpha: f64, beta: f64, seed: u64) -> Self {
        let docs: Vec<Vec<u32>> = bow.rows.iter().map(|r| expand_counts(r)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = docs
            .iter()
            .map(|d| d.iter().map(|_| rng.random_range(0..k as u32)).collect())
            .collect();
        Self::assemble(docs, z, bow.n_terms, k, alpha, beta, seed, rng)
    }

    /// Rebuilds a sampler from saved assignments.
    pub fn from_assignments(
        bow: &BowMatrix,
        z: Vec<Vec<u32>>,
        k: usize,
        alpha: f64,
        beta: f64,
        seed: u64,
    ) -> Result<Self, TopicModelError> {
        let docs: Vec<Vec<u32>> = bow.rows.iter().map(|r| expand_counts(r)).collect();
        if z.len() != docs.len() {
            return Err(TopicModelError::RowCountMismatch {
                expected: docs.len(),
                actual: z.len(),
            });
        }
        for (d, (zd, wd)) in z.iter().zip(&docs).enumerate() {
            if zd.len() != wd.len() || zd.iter().any(|&t| t as usize >= k) {
                return Err(TopicModelError::Malformed {
                    path: "assignments".into(),
                    message: format!("document {d} assignments do not match its tokens"),
                });
            }
        }
        let rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::assemble(
            docs, z, bow.n_terms, k, alpha, beta, seed, rng,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        docs: Vec<Vec<u32>>,
        z: Vec<Vec<u32>>,
        n_terms: usize,
        k: usize,
        alpha: f64,
        beta: f64,
        seed: u64,
        rng: ChaCha8Rng,
    ) -> Self {
        let (n_dk, n_wk, n_k) = count(&docs, &z, n_terms, k);
        Self {
            k,
            n_terms,
            alpha,
            beta,
            seed,
            docs,
            z,
            n_dk,
            n_wk,
            n_k,
            rng,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn assignments(&self) -> &[Vec<u32>] {
        &self.z
    }

    pub fn doc_topic_count(&self, d: usize, k: usize) -> u32 {
        self.n_dk[d * self.k + k]
    }

    pub fn topic_total(&self, k: usize) -> u32 {
        self.n_k[k]
    }

    pub fn topic_word_count(&self, k: usize, w: usize) -> u32 {
        self.n_wk[w * self.k + k]
    }

    /// Restarts the random stream; assignments are untouched.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// True when the incremental counts equal a from-scratch recount of `z`
    /// and `n_k` equals the row sums of the topic-word counts.
    pub fn counts_consistent(&self) -> bool {
        let fresh = count(&self.docs, &self.z, self.n_terms, self.k);
        let totals_match = (0..self.k).all(|k| {
            (0..self.n_terms)
                .map(|w| self.n_wk[w * self.k + k] as u64)
                .sum::<u64>()
                == self.n_k[k] as u64
        });
        fresh == (self.n_dk.clone(), self.n_wk.clone(), self.n_k.clone()) && totals_match
    }

    /// Runs `sweeps` full sweeps, calling `on_sweep(i, state)` after each.
    pub fn run(&mut self, sweeps: usize, mut on_sweep: impl FnMut(usize, &GibbsState)) {
        for i in 0..sweeps {
            self.sweep(None);
            on_sweep(i, self);
        }
    }

    pub(crate) fn sweep(&mut self, response: Option<&ResponseTerm<'_>>) {
        let k = self.k;
        let beta = self.beta;
        let alpha = self.alpha;
        let vbeta = self.n_terms as f64 * beta;
        let mut p = vec![0.0; k];
        let mut base: Vec<f64> = Vec::new();
        let mut prob: Vec<(f64, f64)> = Vec::new();
        let mut shift: Vec<f64> = Vec::new();
        let mut scale: Vec<f64> = Vec::new();

        for d in 0..self.docs.len() {
            let n_d = self.docs[d].len();
            if n_d == 0 {
                continue;
            }
            let inv = 1.0 / n_d as f64;
            let supervised = response.and_then(|rt| rt.labels[d].map(|y| (rt.eta, y)));
            if let Some((eta, _)) = supervised {
                let row = &self.n_dk[d * k..(d + 1) * k];
                base.clear();
                base.extend(
                    eta.iter()
                        .map(|e| e.iter().zip(row).map(|(a, &c)| a * c as f64).sum::<f64>()),
                );
                // exp(eta_lt / N_d), topic-major: the odds multiplier of
                // moving one token to t.
                shift.clear();
                shift.extend((0..k).flat_map(|t| eta.iter().map(move |e| (e[t] * inv).exp())));
            }
            for i in 0..n_d {
                let w = self.docs[d][i] as usize;
                let old = self.z[d][i] as usize;
                self.n_dk[d * k + old] -= 1;
                self.n_wk[w * k + old] -= 1;
                self.n_k[old] -= 1;

                let dk = &self.n_dk[d * k..(d + 1) * k];
                let wk = &self.n_wk[w * k..(w + 1) * k];
                for t in 0..k {
                    p[t] = (dk[t] as f64 + alpha) * (wk[t] as f64 + beta)
                        / (self.n_k[t] as f64 + vbeta);
                }

                if let Some((eta, y)) = supervised {
                    for (b, e) in base.iter_mut().zip(eta) {
                        *b -= e[old];
                    }
                    prob.clear();
                    prob.extend(base.iter().map(|b| sigmoid_pair(b * inv)));
                    response_weights(&mut p, &prob, &shift, &base, eta, y, inv, &mut scale);
                }

                let new = draw(&p, &mut self.rng);
                self.z[d][i] = new as u32;
                self.n_dk[d * k + new] += 1;
                self.n_wk[w * k + new] += 1;
                self.n_k[new] += 1;
                if let Some((eta, _)) = supervised {
                    for (b, e) in base.iter_mut().zip(eta) {
                        *b += e[new];
                    }
                }
            }
        }
    }

    /// Mean topic assignment per document (zero row for empty documents).
    pub fn zbar(&self) -> Vec<Vec<f64>> {
        (0..self.docs.len())
            .map(|d| {
                let n = self.docs[d].len();
                let row = &self.n_dk[d * self.k..(d + 1) * self.k];
                if n == 0 {
                    vec![0.0; self.k]
                } else {
                    row.iter().map(|&c| c as f64 / n as f64).collect()
                }
            })
            .collect()
    }

    pub fn phi(&self) -> Vec<Vec<f64>> {
        let vbeta = self.n_terms as f64 * self.beta;
        (0..self.k)
            .map(|t| {
                let denom = self.n_k[t] as f64 + vbeta;
                (0..self.n_terms)
                    .map(|w| (self.n_wk[w * self.k + t] as f64 + self.beta) / denom)
                    .collect()
            })
            .collect()
    }

    pub fn theta(&self) -> Vec<Vec<f64>> {
        let kalpha = self.k as f64 * self.alpha;
        (0..self.docs.len())
            .map(|d| {
                let denom = self.docs[d].len() as f64 + kalpha;
                self.n_dk[d * self.k..(d + 1) * self.k]
                    .iter()
                    .map(|&c| (c as f64 + self.alpha) / denom)
                    .collect()
            })
            .collect()
    }

    /// Collapsed joint log-likelihood `log p(w | z) + log p(z)`.
    pub fn log_likelihood(&self) -> f64 {
        let (k, v) = (self.k as f64, self.n_terms as f64);
        let (a, b) = (self.alpha, self.beta);
        let mut ll = 0.0;
        for t in 0..self.k {
            ll += ln_gamma(v * b) - ln_gamma(self.n_k[t] as f64 + v * b);
            for w in 0..self.n_terms {
                let c = self.n_wk[w * self.k + t];
                if c > 0 {
                    ll += ln_gamma(c as f64 + b) - ln_gamma(b);
                }
            }
        }
        for d in 0..self.docs.len() {
            ll += ln_gamma(k * a) - ln_gamma(self.docs[d].len() as f64 + k * a);
            for t in 0..self.k {
                let c = self.n_dk[d * self.k + t];
                if c > 0 {
                    ll += ln_gamma(c as f64 + a) - ln_gamma(a);
                }
            }
        }
        ll
    }

    pub fn to_model(&self, terms: &[String], source: ModelSource) -> TopicModel {
        let phi = self.phi();
        TopicModel {
            k: self.k,
            source,
            alpha: self.alpha,
            beta: self.beta,
            seed: self.seed,
            keywords: keyword_lists(&phi, terms),
            phi: Some(phi),
            theta: self.theta(),
            assignments: Some(self.z.clone()),
        }
    }
}

type Counts = (Vec<u32>, Vec<u32>, Vec<u32>);

fn count(docs: &[Vec<u32>], z: &[Vec<u32>], n_terms: usize, k: usize) -> Counts {
    let mut n_dk = vec![0; docs.len() * k];
    let mut n_wk = vec![0; n_terms * k];
    let mut n_k = vec![0; k];
    for (d, (words, topics)) in docs.iter().zip(z).enumerate() {
        for (&w, &t) in words.iter().zip(topics) {
            n_dk[d * k + t as usize] += 1;
            n_wk[w as usize * k + t as usize] += 1;
            n_k[t as usize] += 1;
        }
    }
    (n_dk, n_wk, n_k)
}

/// Multiplies `p[t]` by the response likelihood of the document with one
/// more token in topic `t`, up to a factor that does not depend on `t`.
///
/// With `s_l` the current linear predictor and `x = s_l + eta_lt / N`,
/// `Bern(y | sigmoid(x))` divided by its value at `s_l` is
/// `exp(y * eta_lt / N) / (1 - sigmoid(s_l) + sigmoid(s_l) * exp(eta_lt / N))`.
/// Every factor is bounded, so the product is taken directly and the log
/// form is only used if it over- or underflows.
#[allow(clippy::too_many_arguments)]
fn response_weights(
    p: &mut [f64],
    prob: &[(f64, f64)],
    shift: &[f64],
    base: &[f64],
    eta: &[Vec<f64>],
    y: usize,
    inv: f64,
    scale: &mut Vec<f64>,
) {
    let k = p.len();
    let n_labels = prob.len();
    scale.clear();
    scale.resize(k, 0.0);
    let mut finite = true;
    for t in 0..k {
        let row = &shift[t * n_labels..(t + 1) * n_labels];
        let mut denom = 1.0;
        for (&(pl, ql), &e) in prob.iter().zip(row) {
            denom *= ql + pl * e;
        }
        scale[t] = row[y] / denom;
        finite &= scale[t].is_finite() && scale[t] > 0.0;
    }
    if !finite {
        for t in 0..k {
            scale[t] = eta
                .iter()
                .zip(base)
                .enumerate()
                .map(|(l, (e, b))| {
                    let x = (b + e[t]) * inv;
                    (if l == y { x } else { 0.0 }) - softplus(x)
                })
                .sum();
        }
        let max = scale.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        scale.iter_mut().for_each(|v| *v = (*v - max).exp());
    }
    for (pt, st) in p.iter_mut().zip(scale.iter()) {
        *pt *= st;
    }
}

/// `(sigmoid(s), sigmoid(-s))`, each computed without cancellation.
fn sigmoid_pair(s: f64) -> (f64, f64) {
    let e = (-s.abs()).exp();
    let big = 1.0 / (1.0 + e);
    let small = e * big;
    if s >= 0.0 {
        (big, small)
    } else {
        (small, big)
    }
}

pub(crate) fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Index drawn proportionally to the unnormalized weights `p`.
fn draw(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in p.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    p.len() - 1
}

/// Trains LDA by collapsed Gibbs sampling with uniform token weights.
///
/// Empty documents are skipped by the sampler; their theta rows come out
/// uniform.
pub fn train_lda(
    bow: &BowMatrix,
    terms: &[String],
    config: &LdaConfig,
) -> Result<(TopicModel, GibbsState), TopicModelError> {
    config.validate(bow.n_docs())?;
    let empty = bow.rows.iter().filter(|r| r.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} empty documents skipped during sampling");
    }
    let mut state = GibbsState::new(bow, config.k, config.alpha, config.beta, config.seed);
    state.run(config.iterations, |_, _| {});
    Ok((state.to_model(terms, ModelSource::Lda), state))
}

/// Fold-in settings: `sweeps` total, averaging theta after `burn_in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            sweeps: 50,
            burn_in: 25,
            seed: 0,
        }
    }
}

/// Estimates theta for one document with phi held fixed.
pub fn infer_theta(
    model: &TopicModel,
    bow_row: &[(u32, u32)],
    config: &InferConfig,
) -> Result<Vec<f64>, TopicModelError> {
    let phi = model.phi()?;
    let k = model.k;
    let words = expand_counts(bow_row);
    if words.is_empty() {
        return Ok(vec![1.0 / k as f64; k]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut z: Vec<usize> = words.iter().map(|_| rng.random_range(0..k)).collect();
    let mut n_dk = vec![0u32; k];
    for &t in &z {
        n_dk[t] += 1;
    }
    let denom = words.len() as f64 + k as f64 * model.alpha;
    let mut acc = vec![0.0; k];
    let mut samples = 0usize;
    let mut p = vec![0.0; k];
    for sweep in 0..config.sweeps.max(1) {
        for (i, &w) in words.iter().enumerate() {
            n_dk[z[i]] -= 1;
            for t in 0..k {
                p[t] = phi[t][w as usize] * (n_dk[t] as f64 + model.alpha);
            }
            z[i] = draw(&p, &mut rng);
            n_dk[z[i]] += 1;
        }
        if sweep >= config.burn_in {
            for t in 0..k {
                acc[t] += (n_dk[t] as f64 + model.alpha) / denom;
            }
            samples += 1;
        }
    }
    if samples == 0 {
        return Ok(n_dk
            .iter()
            .map(|&c| (c as f64 + model.alpha) / denom)
            .collect());
    }
    let total: f64 = acc.iter().sum();
    Ok(acc.into_iter().map(|a| a / total).collect())
}
