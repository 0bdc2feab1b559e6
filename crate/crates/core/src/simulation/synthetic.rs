//! Seeded synthetic corpora with two-level gold labels.
//!
//! Each sub-label owns a word distribution, each major label owns another,
//! and a shared background distribution mixes in common English stop
//! words. A document draws its tokens from its sub-label's words, its
//! major's, the background and one random unrelated sub-label in fixed
//! shares.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError, Document};

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const BACKGROUND_STOPWORDS: &[&str] = &[
    "the", "and", "of", "to", "in", "is", "that", "it", "for", "was", "on", "with", "as", "this",
    "but", "be", "are", "have", "not", "by",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchySpec {
    /// Number of sub-labels under each major label.
    pub subs_per_major: Vec<usize>,
    pub n_docs: usize,
    pub words_per_sub: usize,
    pub words_per_major: usize,
    pub background_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Token shares of sub, major, background and noise words.
    pub mixture: [f64; 4],
    pub seed: u64,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self {
            subs_per_major: vec![4, 4, 3, 3, 3, 3],
            n_docs: 2000,
            words_per_sub: 40,
            words_per_major: 40,
            background_words: 120,
            min_len: 40,
            max_len: 90,
            mixture: [0.15, 0.15, 0.5, 0.2],
            seed: 0,
        }
    }
}

impl HierarchySpec {
    pub fn n_subs(&self) -> usize {
        self.subs_per_major.iter().sum()
    }
}

/// Distinct pronounceable pseudo-words, e.g. `kadomi`.
pub fn pseudo_words(n: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=4);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
            w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct WordPool {
    words: Vec<String>,
    zipf: Zipf<f64>,
}

impl WordPool {
    fn new(words: Vec<String>) -> Self {
        let zipf = Zipf::new(words.len() as f64, 1.0).expect("non-empty pool");
        Self { words, zipf }
    }

    fn draw<'a>(&'a self, rng: &mut impl Rng) -> &'a str {
        let rank = self.zipf.sample(rng) as usize;
        &self.words[rank.clamp(1, self.words.len()) - 1]
    }
}

/// Generates the corpus. Sub-labels are named `m{i}.s{j}`, majors `m{i}`.
pub fn hierarchical_corpus(spec: &HierarchySpec) -> Result<Corpus, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_subs = spec.n_subs();
    let total = n_subs * spec.words_per_sub + spec.subs_per_major.len() * spec.words_per_major + spec.background_words;
    let mut words = pseudo_words(total, &mut rng).into_iter();
    let mut take = |n: usize| -> Vec<String> { words.by_ref().take(n).collect() };

    let mut subs = Vec::new();
    let mut majors = Vec::new();
    for (m, &count) in spec.subs_per_major.iter().enumerate() {
        majors.push(WordPool::new(take(spec.words_per_major)));
        for s in 0..count {
            subs.push((m, format!("m{m}.s{s}"), WordPool::new(take(spec.words_per_sub))));
        }
    }
    let mut background = take(spec.background_words);
    background.extend(BACKGROUND_STOPWORDS.iter().map(|s| s.to_string()));
    background.shuffle(&mut rng);
    let background = WordPool::new(background);

    let [p_sub, p_major, p_bg, _] = spec.mixture;
    let docs = (0..spec.n_docs)
        .map(|i| {
            let s = i % n_subs;
            let (m, sub_name, sub_pool) = &subs[s];
            let noise = &subs[(s + rng.random_range(1..n_subs.max(2))) % n_subs].2;
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let tokens: Vec<&str> = (0..len)
                .map(|_| {
                    let u: f64 = rng.random();
                    if u < p_sub {
                        sub_pool.draw(&mut rng)
                    } else if u < p_sub + p_major {
                        majors[*m].draw(&mut rng)
                    } else if u < p_sub + p_major + p_bg {
                        background.draw(&mut rng)
                    } else {
                        noise.draw(&mut rng)
                    }
                })
                .collect();
            Document::new(
                format!("doc{i:05}"),
                sentences(&tokens),
                Some(format!("m{m}")),
                Some(sub_name.clone()),
            )
        })
        .collect();
    Corpus::new(docs)
}

fn sentences(tokens: &[&str]) -> String {
    let mut text = String::new();
    for (i, chunk) in tokens.chunks(12).enumerate() {
        if i > 0 {
            text.push(' ');
        }
        let mut sentence = chunk.join(" ");
        if let Some(first) = sentence.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        sentence.push('.');
        text.push_str(&sentence);
    }
    text
}
