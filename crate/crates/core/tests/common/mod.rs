#![allow(dead_code)]

use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use topiclabel::corpus::{BowMatrix, Stopwords, VocabConfig};
use topiclabel::session::{Clock, Condition, Session, SessionConfig, SessionData};
use topiclabel::simulation::synthetic::{hierarchical_corpus, HierarchySpec};
use topiclabel::topic_models::{train_lda, LdaConfig, TopicModel};

pub fn t0() -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000, 0).unwrap()
}

pub fn stepped(seconds: i64) -> Clock {
    Clock::Stepped {
        start: t0(),
        step: Duration::seconds(seconds),
    }
}

pub fn hierarchical_data(n_docs: usize, seed: u64) -> Arc<SessionData> {
    let corpus = hierarchical_corpus(&HierarchySpec {
        n_docs,
        seed,
        ..Default::default()
    })
    .unwrap();
    Arc::new(SessionData::prepare(corpus, &Stopwords::english(), &VocabConfig::default()).unwrap())
}

pub fn lda(data: &SessionData, k: usize, iterations: usize, seed: u64) -> TopicModel {
    let config = LdaConfig {
        k,
        iterations,
        seed,
        ..Default::default()
    };
    train_lda(&data.bow, data.vocab.terms(), &config).unwrap().0
}

pub fn session(
    data: &Arc<SessionData>,
    model: Option<&TopicModel>,
    condition: Condition,
    config: SessionConfig,
) -> Session {
    Session::new(Arc::clone(data), model.cloned(), condition, config, t0())
        .unwrap()
        .with_clock(stepped(1))
}

/// Labels the recommended document with its gold sub-label `n` times.
pub fn label_recommended(s: &mut Session, n: usize) {
    for _ in 0..n {
        let doc = s.recommended_doc().unwrap().to_string();
        let sub = s.data().corpus.by_id(&doc).unwrap().gold_sub.clone().unwrap();
        s.submit_label(&doc, &sub).unwrap();
    }
}

pub fn dirichlet(alpha: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng).max(1e-300))
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|g| g / total).collect()
}

pub fn categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let mut u: f64 = rng.random();
    for (i, &w) in p.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    p.len() - 1
}

/// Topics that each put `1 - leak` of their mass on their own block of
/// `v / k` words and spread `leak` over the whole vocabulary.
pub fn block_topics(k: usize, v: usize, leak: f64) -> Vec<Vec<f64>> {
    let block = v / k;
    (0..k)
        .map(|t| {
            (0..v)
                .map(|w| {
                    let own = if w / block == t { (1.0 - leak) / block as f64 } else { 0.0 };
                    own + leak / v as f64
                })
                .collect()
        })
        .collect()
}

/// Documents drawn from the LDA generative process with the given topic
/// mixtures.
pub fn sample_bow(phi: &[Vec<f64>], thetas: &[Vec<f64>], len: usize, rng: &mut impl Rng) -> BowMatrix {
    let v = phi[0].len();
    let rows = thetas
        .iter()
        .map(|theta| {
            let mut counts = vec![0u32; v];
            for _ in 0..len {
                let t = categorical(theta, rng);
                counts[categorical(&phi[t], rng)] += 1;
            }
            counts
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c > 0)
                .map(|(w, c)| (w as u32, c))
                .collect()
        })
        .collect();
    BowMatrix { n_terms: v, rows }
}

pub struct SyntheticLda {
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub bow: BowMatrix,
    pub terms: Vec<String>,
}

pub fn synthetic_lda(k: usize, v: usize, d: usize, len: usize, seed: u64) -> SyntheticLda {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = block_topics(k, v, 0.05);
    let theta: Vec<Vec<f64>> = (0..d).map(|_| dirichlet(&vec![0.2; k], &mut rng)).collect();
    let bow = sample_bow(&phi, &theta, len, &mut rng);
    SyntheticLda {
        phi,
        theta,
        bow,
        terms: (0..v).map(|w| format!("w{w:03}")).collect(),
    }
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Greedy one-to-one matching of recovered rows to true rows by smallest
/// total variation. Returns `matched[true_row] = (recovered_row, tv)`.
pub fn greedy_match(recovered: &[Vec<f64>], truth: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in recovered.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            pairs.push((total_variation(r, t), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut used_r = vec![false; recovered.len()];
    let mut out = vec![(usize::MAX, f64::INFINITY); truth.len()];
    for (tv, i, j) in pairs {
        if !used_r[i] && out[j].0 == usize::MAX {
            used_r[i] = true;
            out[j] = (i, tv);
        }
    }
    out
}

/// Corpus where label 0 documents mix topics {0, 1} and label 1 documents
/// mix topics {2, 3}, with a little mass leaking to the other pair.
pub fn label_correlated(d: usize, len: usize, seed: u64) -> (SyntheticLda, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 4;
    let v = 80;
    let phi = block_topics(k, v, 0.1);
    let labels: Vec<usize> = (0..d).map(|i| i % 2).collect();
    let theta: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| {
            let alpha = if y == 0 {
                [1.0, 1.0, 0.1, 0.1]
            } else {
                [0.1, 0.1, 1.0, 1.0]
            };
            dirichlet(&alpha, &mut rng)
        })
        .collect();
    let bow = sample_bow(&phi, &theta, len, &mut rng);
    let data = SyntheticLda {
        phi,
        theta,
        bow,
        terms: (0..v).map(|w| format!("w{w:03}")).collect(),
    };
    (data, labels)
}

/// Writes `model`'s theta and keywords in the external import format and
/// reads them back as an imported model.
pub fn reimport(dir: &std::path::Path, data: &SessionData, model: &TopicModel) -> TopicModel {
    let theta_path = dir.join("theta.csv");
    let mut csv = String::from("doc_id");
    for t in 0..model.k {
        csv.push_str(&format!(",t{t}"));
    }
    csv.push('\n');
    for (doc, row) in data.corpus.docs().iter().zip(&model.theta) {
        csv.push_str(&doc.id);
        for v in row {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    std::fs::write(&theta_path, csv).unwrap();
    let kw_path = dir.join("keywords.json");
    std::fs::write(&kw_path, serde_json::to_string(&model.keywords).unwrap()).unwrap();
    let ids: Vec<&str> = data.corpus.ids().collect();
    topiclabel::topic_models::import_external_topics(&theta_path, &kw_path, &ids).unwrap()
}
