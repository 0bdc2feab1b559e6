//! Preference scores and next-document selection.
//!
//! Baseline mode picks the unlabeled document whose classifier posterior
//! has the highest entropy. Topic mode scores each document by
//! `entropy * theta_max`, picks the topic whose documents have the highest
//! median score, then the best-scoring document inside that topic.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierState;
use crate::sparse::SparseVec;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectionError {
    #[error("not a probability distribution (sum {sum})")]
    NotSimplex { sum: f64 },
    #[error("no unlabeled documents remain")]
    NoUnlabeledDocuments,
    #[error("classifier has fewer than two classes")]
    ColdStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Baseline,
    Topic,
}

const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Natural-log entropy, with `0 * ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64, SelectionError> {
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE || dist.iter().any(|&p| p < 0.0 || p.is_nan()) {
        return Err(SelectionError::NotSimplex { sum });
    }
    Ok(-dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>())
}

/// Largest entry and its index (lowest index on ties).
pub fn dominant_topic(theta: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in theta.iter().enumerate() {
        if v > theta[best] {
            best = i;
        }
    }
    (best, theta[best])
}

pub fn topic_preference(entropy: f64, theta_max: f64) -> f64 {
    entropy * theta_max
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceScore {
    pub doc_id: String,
    pub entropy: f64,
    pub dominant_topic: Option<usize>,
    pub theta_max: Option<f64>,
    pub topic_score: Option<f64>,
}

impl PreferenceScore {
    pub fn new(doc_id: impl Into<String>, entropy: f64, theta: Option<&[f64]>) -> Self {
        let dominant = theta.map(dominant_topic);
        Self {
            doc_id: doc_id.into(),
            entropy,
            dominant_topic: dominant.map(|d| d.0),
            theta_max: dominant.map(|d| d.1),
            topic_score: dominant.map(|d| topic_preference(entropy, d.1)),
        }
    }

    fn score(&self, mode: SelectionMode) -> f64 {
        match mode {
            SelectionMode::Baseline => self.entropy,
            SelectionMode::Topic => self.topic_score.unwrap_or(0.0),
        }
    }
}

/// Scores the documents at `indices` with the classifier's posterior.
pub fn score_documents(
    classifier: &ClassifierState,
    features: &[SparseVec],
    thetas: Option<&[Vec<f64>]>,
    doc_ids: &[&str],
    indices: impl IntoIterator<Item = usize>,
) -> Result<Vec<PreferenceScore>, SelectionError> {
    if !classifier.is_initialized() {
        return Err(SelectionError::ColdStart);
    }
    indices
        .into_iter()
        .map(|d| {
            let p = classifier
                .predict_proba(&features[d])
                .map_err(|_| SelectionError::ColdStart)?;
            let h = entropy(&p)?;
            Ok(PreferenceScore::new(
                doc_ids[d],
                h,
                thetas.map(|t| t[d].as_slice()),
            ))
        })
        .collect()
}

/// Median; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Topic whose documents have the highest median topic score; ties go to
/// the lowest topic index.
pub fn select_topic(scores: &[PreferenceScore], k: usize) -> Result<usize, SelectionError> {
    select_topic_where(scores, k, |_| true)
}

/// Like [`select_topic`], but only topics containing at least one document
/// accepted by `is_candidate` may win. Medians still use every score.
fn select_topic_where(
    scores: &[PreferenceScore],
    k: usize,
    is_candidate: impl Fn(&PreferenceScore) -> bool,
) -> Result<usize, SelectionError> {
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut eligible = vec![false; k];
    for s in scores {
        if let Some(t) = s.dominant_topic {
            members[t].push(s.topic_score.unwrap_or(0.0));
            eligible[t] |= is_candidate(s);
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for t in (0..k).filter(|&t| eligible[t]) {
        let m = median(&members[t]);
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((t, m));
        }
    }
    best.map(|(t, _)| t)
        .ok_or(SelectionError::NoUnlabeledDocuments)
}

fn better(a: &PreferenceScore, b: &PreferenceScore, mode: SelectionMode) -> bool {
    match a.score(mode).total_cmp(&b.score(mode)) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.doc_id < b.doc_id,
    }
}

/// Picks the next document to label.
///
/// Labeled documents are ignored entirely. Skipped documents are never
/// returned but still count toward topic medians. Ties go to the
/// lexicographically smallest document id.
pub fn next_document(
    mode: SelectionMode,
    scores: &[PreferenceScore],
    labeled: &HashSet<String>,
    skipped: &HashSet<String>,
) -> Result<String, SelectionError> {
    let unlabeled: Vec<PreferenceScore> = scores
        .iter()
        .filter(|s| !labeled.contains(&s.doc_id))
        .cloned()
        .collect();
    let is_candidate = |s: &PreferenceScore| !skipped.contains(&s.doc_id);
    let topic = match mode {
        SelectionMode::Baseline => None,
        SelectionMode::Topic => {
            let k = unlabeled
                .iter()
                .filter_map(|s| s.dominant_topic)
                .max()
                .map_or(0, |t| t + 1);
            Some(select_topic_where(&unlabeled, k, is_candidate)?)
        }
    };
    unlabeled
        .iter()
        .filter(|s| is_candidate(s))
        .filter(|s| topic.is_none() || s.dominant_topic == topic)
        .fold(None::<&PreferenceScore>, |best, s| match best {
            Some(b) if !better(s, b, mode) => Some(b),
            _ => Some(s),
        })
        .map(|s| s.doc_id.clone())
        .ok_or(SelectionError::NoUnlabeledDocuments)
}

/// Uniform random pick used before the classifier can be fit.
pub fn cold_start_pick<R: Rng>(candidates: &[&str], rng: &mut R) -> Option<String> {
    if candidates.is_empty() {
        return None;
    }
    Some(candidates[rng.random_range(0..candidates.len())].to_string())
}

/// Writes `doc_id,entropy,dominant_topic,theta_max,topic_score` rows.
pub fn write_scores_csv(scores: &[PreferenceScore], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["doc_id", "entropy", "dominant_topic", "theta_max", "topic_score"])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for s in scores {
        w.write_record([
            s.doc_id.clone(),
            s.entropy.to_string(),
            opt(s.dominant_topic.map(|t| t.to_string())),
            opt(s.theta_max.map(|t| t.to_string())),
            opt(s.topic_score.map(|t| t.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topic_score(id: &str, topic: usize, score: f64) -> PreferenceScore {
        PreferenceScore {
            doc_id: id.into(),
            entropy: score,
            dominant_topic: Some(topic),
            theta_max: Some(1.0),
            topic_score: Some(score),
        }
    }

    #[test]
    fn entropy_anchors() {
        assert!((entropy(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
        let direct = -(0.7f64 * 0.7f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        let h = entropy(&[0.7, 0.2, 0.1]).unwrap();
        assert!((h - direct).abs() < 1e-12);
        assert!((h - 0.8018).abs() < 1e-4);
        assert!(matches!(
            entropy(&[0.5, 0.6]),
            Err(SelectionError::NotSimplex { .. })
        ));
    }

    #[test]
    fn dominant_topic_ties() {
        assert_eq!(dominant_topic(&[0.1, 0.8, 0.1]), (1, 0.8));
        assert_eq!(dominant_topic(&[0.25; 4]), (0, 0.25));
    }

    #[test]
    fn topic_preference_product() {
        assert!((topic_preference(2f64.ln(), 0.5) - 0.3466).abs() < 1e-4);
        assert_eq!(topic_preference(1.3, 0.0), 0.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[0.1, 0.9]), 0.5);
    }

    #[test]
    fn select_topic_examples() {
        let scores = [
            topic_score("d1", 0, 0.1),
            topic_score("d2", 0, 0.9),
            topic_score("d3", 1, 0.4),
        ];
        assert_eq!(select_topic(&scores, 2).unwrap(), 0);
        let none = HashSet::new();
        assert_eq!(
            next_document(SelectionMode::Topic, &scores, &none, &none).unwrap(),
            "d2"
        );

        let equal = [topic_score("a", 1, 0.3), topic_score("b", 0, 0.3)];
        assert_eq!(select_topic(&equal, 2).unwrap(), 0);
        assert_eq!(
            select_topic(&[], 3),
            Err(SelectionError::NoUnlabeledDocuments)
        );
    }

    #[test]
    fn baseline_picks_max_entropy() {
        let scores: Vec<_> = [("a", 0.2), ("b", 0.69), ("c", 0.5)]
            .iter()
            .map(|&(id, h)| PreferenceScore::new(id, h, None))
            .collect();
        let none = HashSet::new();
        assert_eq!(
            next_document(SelectionMode::Baseline, &scores, &none, &none).unwrap(),
            "b"
        );
        let all: HashSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            next_document(SelectionMode::Baseline, &scores, &all, &none),
            Err(SelectionError::NoUnlabeledDocuments)
        );
    }

    #[test]
    fn skipped_docs_count_for_medians_but_are_not_picked() {
        // Topic 0 wins on its median only because of the skipped document;
        // its remaining candidate is returned, never the skipped one.
        let scores = [
            topic_score("s", 0, 0.9),
            topic_score("c", 0, 0.5),
            topic_score("x", 1, 0.6),
        ];
        let labeled = HashSet::new();
        let skipped: HashSet<String> = ["s".to_string()].into();
        assert_eq!(
            next_document(SelectionMode::Topic, &scores, &labeled, &skipped).unwrap(),
            "c"
        );
        let both: HashSet<String> = ["s".to_string(), "c".to_string()].into();
        assert_eq!(
            next_document(SelectionMode::Topic, &scores, &labeled, &both).unwrap(),
            "x"
        );
    }

    #[test]
    fn scores_csv_header() {
        let mut buf = Vec::new();
        write_scores_csv(&[PreferenceScore::new("d", 0.5, Some(&[0.2, 0.8]))], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("doc_id,entropy,dominant_topic,theta_max,topic_score\nd,0.5,1,0.8,0.4"));
    }
}
