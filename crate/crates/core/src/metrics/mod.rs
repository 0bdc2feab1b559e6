//! Cluster-quality metrics between a predicted and a gold partition,
//! plus NPMI topic coherence.

mod coherence;

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use coherence::{coherence_report, npmi_coherence, npmi_pair, CoherenceIndex, TopicCoherence};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("partitions cover different documents ({pred} vs {gold})")]
    UniverseMismatch { pred: usize, gold: usize },
    #[error("document {0:?} is missing from one partition")]
    MissingDocument(String),
    #[error("need at least two documents, got {0}")]
    TooFewDocuments(usize),
    #[error("both partitions are a single cluster; ANMI is undefined")]
    DegenerateDenominator,
    #[error("need at least two words, got {0}")]
    TooFewWords(usize),
    #[error("reference corpus is empty")]
    EmptyReference,
}

/// Document-id to cluster-id assignment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignment: BTreeMap<String, String>,
}

impl Clustering {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        Self {
            assignment: pairs
                .into_iter()
                .map(|(d, c)| (d.into(), c.into()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Cluster ids of both partitions, aligned by document id.
    pub fn align<'a>(
        &'a self,
        other: &'a Clustering,
    ) -> Result<(Vec<&'a str>, Vec<&'a str>), MetricsError> {
        if self.len() != other.len() {
            return Err(MetricsError::UniverseMismatch {
                pred: self.len(),
                gold: other.len(),
            });
        }
        let mut left = Vec::with_capacity(self.len());
        let mut right = Vec::with_capacity(self.len());
        for (doc, c) in &self.assignment {
            let g = other
                .assignment
                .get(doc)
                .ok_or_else(|| MetricsError::MissingDocument(doc.clone()))?;
            left.push(c.as_str());
            right.push(g.as_str());
        }
        Ok((left, right))
    }
}

/// Contingency counts between two aligned labelings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    /// `rows x cols`, rows indexed by predicted cluster.
    pub table: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub n: usize,
}

impl Contingency {
    pub fn new<A: Eq + Hash, B: Eq + Hash>(pred: &[A], gold: &[B]) -> Result<Self, MetricsError> {
        if pred.len() != gold.len() {
            return Err(MetricsError::UniverseMismatch {
                pred: pred.len(),
                gold: gold.len(),
            });
        }
        let rows = dense_ids(pred);
        let cols = dense_ids(gold);
        let r = rows.iter().max().map_or(0, |m| m + 1);
        let c = cols.iter().max().map_or(0, |m| m + 1);
        let mut table = vec![vec![0; c]; r];
        for (&i, &j) in rows.iter().zip(&cols) {
            table[i][j] += 1;
        }
        let row_sums = table.iter().map(|row| row.iter().sum()).collect();
        let col_sums = (0..c).map(|j| table.iter().map(|row| row[j]).sum()).collect();
        Ok(Self {
            table,
            row_sums,
            col_sums,
            n: pred.len(),
        })
    }
}

/// Linear scan while there are few distinct labels, hashing after.
fn dense_ids<T: Eq + Hash>(labels: &[T]) -> Vec<usize> {
    const SCAN_LIMIT: usize = 32;
    let mut seen: Vec<&T> = Vec::new();
    let mut ids: HashMap<&T, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            if seen.len() < SCAN_LIMIT {
                if let Some(i) = seen.iter().position(|s| *s == l) {
                    return i;
                }
                seen.push(l);
                if seen.len() == SCAN_LIMIT {
                    ids.extend(seen.iter().enumerate().map(|(i, s)| (*s, i)));
                }
                return seen.len() - 1;
            }
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect()
}

/// `(1/N) * sum_k max_j |pred_k ∩ gold_j|`.
pub fn purity<A: Eq + Hash, B: Eq + Hash>(pred: &[A], gold: &[B]) -> Result<f64, MetricsError> {
    let c = Contingency::new(pred, gold)?;
    if c.n == 0 {
        return Err(MetricsError::TooFewDocuments(0));
    }
    let hits: usize = c
        .table
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / c.n as f64)
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index in contingency form. Two identical trivial
/// partitions (all-in-one or all-singletons) score 1.
pub fn adjusted_rand_index<A: Eq + Hash, B: Eq + Hash>(
    pred: &[A],
    gold: &[B],
) -> Result<f64, MetricsError> {
    let c = Contingency::new(pred, gold)?;
    if c.n < 2 {
        return Err(MetricsError::TooFewDocuments(c.n));
    }
    let index: f64 = c.table.iter().flatten().map(|&x| comb2(x)).sum();
    let a: f64 = c.row_sums.iter().map(|&x| comb2(x)).sum();
    let b: f64 = c.col_sums.iter().map(|&x| comb2(x)).sum();
    let expected = a * b / comb2(c.n);
    let max = (a + b) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn entropy_of(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn mutual_information(c: &Contingency) -> f64 {
    let n = c.n as f64;
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (c.row_sums[i] as f64 * c.col_sums[j] as f64)).ln();
            }
        }
    }
    mi
}

/// Exact expected mutual information under the hypergeometric model of
/// random labelings with fixed cluster sizes.
pub fn expected_mutual_information(c: &Contingency) -> f64 {
    let n = c.n;
    let mut ln = vec![0.0; n + 1];
    let mut ln_fact = vec![0.0; n + 1];
    for i in 1..=n {
        ln[i] = (i as f64).ln();
        ln_fact[i] = ln_fact[i - 1] + ln[i];
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &c.row_sums {
        for &b in &c.col_sums {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = ln_fact[a] + ln_fact[b] + ln_fact[n - a] + ln_fact[n - b] - ln_fact[n];
            let ln_ab = ln[n] - ln[a] - ln[b];
            for nij in lo..=hi {
                let term = nij as f64 / nf * (ln[nij] + ln_ab);
                let ln_p = fixed
                    - ln_fact[nij]
                    - ln_fact[a - nij]
                    - ln_fact[b - nij]
                    - ln_fact[n + nij - a - b];
                emi += term * ln_p.exp();
            }
        }
    }
    emi
}

/// Adjusted normalized mutual information,
/// `2 (MI - E[MI]) / ((H(pred) + H(gold)) - 2 E[MI])`.
pub fn adjusted_nmi<A: Eq + Hash, B: Eq + Hash>(
    pred: &[A],
    gold: &[B],
) -> Result<f64, MetricsError> {
    let c = Contingency::new(pred, gold)?;
    if c.n == 0 {
        return Err(MetricsError::TooFewDocuments(0));
    }
    if c.row_sums.len() == 1 && c.col_sums.len() == 1 {
        return Err(MetricsError::DegenerateDenominator);
    }
    let mi = mutual_information(&c);
    let emi = expected_mutual_information(&c);
    let h = entropy_of(&c.row_sums, c.n) + entropy_of(&c.col_sums, c.n);
    let denom = h - 2.0 * emi;
    // Only two identical all-singleton partitions reach a zero denominator
    // here: every relabeling keeps MI at its maximum.
    if denom.abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok(2.0 * (mi - emi) / denom)
}

/// Purity, ARI and ANMI for one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Labeled-document count or elapsed minute, depending on the caller.
    pub checkpoint: u64,
    pub purity: f64,
    pub ari: f64,
    /// NaN when both partitions are a single cluster.
    pub anmi: f64,
}

/// Metrics between predicted labels and gold (major) labels for the same
/// documents, in the same order.
pub fn evaluate_session<A: Eq + Hash, B: Eq + Hash>(
    pred: &[A],
    gold: &[B],
    checkpoint: u64,
) -> Result<MetricsReport, MetricsError> {
    let anmi = match adjusted_nmi(pred, gold) {
        Ok(v) => v,
        Err(MetricsError::DegenerateDenominator) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        checkpoint,
        purity: purity(pred, gold)?,
        ari: adjusted_rand_index(pred, gold)?,
        anmi,
    })
}

/// Writes `checkpoint_key,purity,ari,anmi` rows.
pub fn write_metrics_csv(reports: &[MetricsReport], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["checkpoint_key", "purity", "ari", "anmi"])?;
    for r in reports {
        w.write_record([
            r.checkpoint.to_string(),
            r.purity.to_string(),
            r.ari.to_string(),
            r.anmi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_metrics_csv(reports: &[MetricsReport], path: &Path) -> csv::Result<()> {
    write_metrics_csv(reports, std::fs::File::create(path)?)
}
