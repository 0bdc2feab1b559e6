use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::Corpus;
use crate::topic_models::TopicModel;

/// Added to joint document counts so `log P(x, y)` is always finite.
const JOINT_EPSILON: f64 = 1e-12;

/// Document-presence index over a reference corpus.
#[derive(Debug, Clone)]
pub struct CoherenceIndex {
    n_docs: usize,
    postings: HashMap<String, Vec<u32>>,
}

impl CoherenceIndex {
    pub fn new<'a, I, D>(docs: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a str>,
    {
        let mut postings: HashMap<String, Vec<u32>> = HashMap::new();
        let mut n_docs = 0;
        for (d, words) in docs.into_iter().enumerate() {
            let distinct: HashSet<&str> = words.into_iter().collect();
            for w in distinct {
                postings.entry(w.to_string()).or_default().push(d as u32);
            }
            n_docs = d + 1;
        }
        if n_docs == 0 {
            return Err(MetricsError::EmptyReference);
        }
        Ok(Self { n_docs, postings })
    }

    pub fn from_corpus(corpus: &Corpus) -> Result<Self, MetricsError> {
        Self::new(
            corpus
                .docs()
                .iter()
                .map(|d| d.tokens.iter().map(String::as_str)),
        )
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn doc_freq(&self, word: &str) -> usize {
        self.postings.get(word).map_or(0, Vec::len)
    }

    pub fn co_doc_freq(&self, a: &str, b: &str) -> usize {
        let (Some(x), Some(y)) = (self.postings.get(a), self.postings.get(b)) else {
            return 0;
        };
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// NPMI of one word pair with document-level co-occurrence.
///
/// Pairs that never co-occur (including words missing from the reference)
/// score -1; pairs that only ever occur together score 1.
pub fn npmi_pair(index: &CoherenceIndex, x: &str, y: &str) -> f64 {
    let cx = index.doc_freq(x);
    let cy = index.doc_freq(y);
    let cxy = index.co_doc_freq(x, y);
    if cxy == 0 {
        return -1.0;
    }
    if cxy == cx && cxy == cy {
        return 1.0;
    }
    let n = index.n_docs() as f64;
    let pxy = (cxy as f64 + JOINT_EPSILON) / n;
    let px = cx as f64 / n;
    let py = cy as f64 / n;
    ((pxy / (px * py)).ln() / -pxy.ln()).clamp(-1.0, 1.0)
}

/// Mean pairwise NPMI over all unordered pairs of `words`.
pub fn npmi_coherence(words: &[String], index: &CoherenceIndex) -> Result<f64, MetricsError> {
    if words.len() < 2 {
        return Err(MetricsError::TooFewWords(words.len()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            total += npmi_pair(index, &words[i], &words[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCoherence {
    pub topic: usize,
    pub npmi: f64,
    pub top_words: Vec<String>,
}

/// Per-topic NPMI of each topic's top `n` keywords.
pub fn coherence_report(
    model: &TopicModel,
    index: &CoherenceIndex,
    n: usize,
) -> Result<Vec<TopicCoherence>, MetricsError> {
    (0..model.k)
        .map(|t| {
            let words = model.keywords[t][..n.min(model.keywords[t].len())].to_vec();
            Ok(TopicCoherence {
                topic: t,
                npmi: npmi_coherence(&words, index)?,
                top_words: words,
            })
        })
        .collect()
}
