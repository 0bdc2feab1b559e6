//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use topiclabel::active_learning::{
    entropy, next_document, select_topic, topic_preference, PreferenceScore, SelectionMode,
};
use topiclabel::classifier::{gradient, objective};
use topiclabel::corpus::{Stopwords, VocabConfig};
use topiclabel::metrics::{adjusted_nmi, adjusted_rand_index, npmi_pair, purity, CoherenceIndex, MetricsError};
use topiclabel::session::{read_event_log, write_event_log, Condition, EventKind, Session, SessionConfig, SessionData};
use topiclabel::simulation::synthetic::{hierarchical_corpus, HierarchySpec};
use topiclabel::simulation::{run_simulation, stratified_subsample, write_curves, SimulationConfig};
use topiclabel::topic_models::{train_slda, GibbsState, LdaConfig, ResponseMatrix, SldaConfig};
use topiclabel::SparseVec;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", c1_metric_oracles),
        ("metric anchors", c2_metric_anchors),
        ("npmi anchors", c3_npmi),
        ("preference anchors", c4_preference),
        ("lda recovery", c5_lda_recovery),
        ("slda alignment", c6_slda_alignment),
        ("classifier gradient check", c7_gradient),
        ("simulated ordering", c8_simulated_ordering),
        ("determinism and replay", c9_determinism),
        ("slda in the loop", c10_slda_protocol),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({secs:.1}s) {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({secs:.1}s) {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

/// Restricted growth strings of length `n` with at most `max_blocks` blocks.
fn partitions(n: usize, max_blocks: u8) -> Vec<Vec<u8>> {
    fn grow(cur: &mut Vec<u8>, n: usize, used: u8, max: u8, out: &mut Vec<Vec<u8>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..=used.min(max - 1) {
            cur.push(b);
            grow(cur, n, used.max(b + 1), max, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, 0, max_blocks, &mut out);
    out
}

const FACTORIALS: [f64; 9] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0, 40320.0];

fn factorial(n: usize) -> f64 {
    FACTORIALS[n]
}

struct Oracle {
    purity: f64,
    ari: f64,
    /// None when both partitions are a single block.
    anmi: Option<f64>,
}

/// Brute-force evaluation straight from the definitions.
fn oracle(pred: &[u8], gold: &[u8]) -> Oracle {
    let n = pred.len();
    let kp = *pred.iter().max().unwrap() as usize + 1;
    let kg = *gold.iter().max().unwrap() as usize + 1;

    let mut purity_sum = 0;
    for c in 0..kp as u8 {
        let best = (0..kg as u8)
            .map(|g| (0..n).filter(|&i| pred[i] == c && gold[i] == g).count())
            .max()
            .unwrap();
        purity_sum += best;
    }

    let (mut both, mut same_p, mut same_g, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1.0;
            let p = pred[i] == pred[j];
            let g = gold[i] == gold[j];
            same_p += p as u8 as f64;
            same_g += g as u8 as f64;
            both += (p && g) as u8 as f64;
        }
    }
    let expected = same_p * same_g / pairs;
    let max = (same_p + same_g) / 2.0;
    let ari = if max == expected { 1.0 } else { (both - expected) / (max - expected) };

    let anmi = if kp == 1 && kg == 1 {
        None
    } else {
        let nf = n as f64;
        let a: Vec<usize> = (0..kp as u8).map(|c| pred.iter().filter(|&&x| x == c).count()).collect();
        let b: Vec<usize> = (0..kg as u8).map(|c| gold.iter().filter(|&&x| x == c).count()).collect();
        let h = |sizes: &[usize]| -> f64 {
            -sizes.iter().map(|&s| s as f64 / nf).map(|p| p * p.ln()).sum::<f64>()
        };
        let mut mi = 0.0;
        for c in 0..kp as u8 {
            for g in 0..kg as u8 {
                let nij = (0..n).filter(|&i| pred[i] == c && gold[i] == g).count();
                if nij > 0 {
                    let nij = nij as f64;
                    mi += nij / nf * (nf * nij / (a[c as usize] * b[g as usize]) as f64).ln();
                }
            }
        }
        let mut emi = 0.0;
        for &ai in &a {
            for &bj in &b {
                let lo = (ai + bj).saturating_sub(n).max(1);
                for nij in lo..=ai.min(bj) {
                    let prob = factorial(ai) * factorial(bj) * factorial(n - ai) * factorial(n - bj)
                        / (factorial(n)
                            * factorial(nij)
                            * factorial(ai - nij)
                            * factorial(bj - nij)
                            * factorial(n + nij - ai - bj));
                    let nij = nij as f64;
                    emi += nij / nf * (nf * nij / (ai * bj) as f64).ln() * prob;
                }
            }
        }
        Some(2.0 * (mi - emi) / (h(&a) + h(&b) - 2.0 * emi))
    };
    Oracle {
        purity: purity_sum as f64 / n as f64,
        ari,
        anmi,
    }
}

fn c1_metric_oracles() -> Outcome {
    let start = Instant::now();
    let parts = partitions(8, 4);
    ensure(parts.len() == 1 + 127 + 966 + 1701, || format!("{} partitions enumerated", parts.len()))?;
    let mut worst: f64 = 0.0;
    let mut checked = 0u64;
    for p in &parts {
        for g in &parts {
            let o = oracle(p, g);
            let pu = purity(p, g).map_err(|e| e.to_string())?;
            let ari = adjusted_rand_index(p, g).map_err(|e| e.to_string())?;
            worst = worst.max((pu - o.purity).abs()).max((ari - o.ari).abs());
            match (adjusted_nmi(p, g), o.anmi) {
                (Ok(v), Some(w)) => worst = worst.max((v - w).abs()),
                (Err(MetricsError::DegenerateDenominator), None) => {}
                (got, want) => return Err(format!("anmi {p:?} vs {g:?}: {got:?} vs {want:?}")),
            }
            if worst > 1e-9 {
                return Err(format!("{p:?} vs {g:?}: max deviation {worst:e}"));
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} pairs, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

fn c2_metric_anchors() -> Outcome {
    let gold = ["a", "a", "b", "b", "c", "c", "c", "d"];
    let pu = purity(&gold, &gold).unwrap();
    let ari = adjusted_rand_index(&gold, &gold).unwrap();
    let anmi = adjusted_nmi(&gold, &gold).unwrap();
    ensure((pu - 1.0).abs() <= 1e-9 && (ari - 1.0).abs() <= 1e-9 && (anmi - 1.0).abs() <= 1e-9, || {
        format!("identical: purity {pu} ari {ari} anmi {anmi}")
    })?;

    let singletons: Vec<usize> = (0..gold.len()).collect();
    let pu_s = purity(&singletons, &gold).unwrap();
    ensure(pu_s == 1.0, || format!("all-singleton purity {pu_s}"))?;

    let balanced: Vec<usize> = (0..60).map(|i| i % 3).collect();
    let constant = vec![0; 60];
    let ari_c = adjusted_rand_index(&constant, &balanced).unwrap();
    ensure(ari_c.abs() <= 1e-12, || format!("constant vs balanced ari {ari_c}"))?;
    Ok(format!("singleton purity {pu_s}, constant ari {ari_c:e}"))
}

// ---------------------------------------------------------------- 3

fn c3_npmi() -> Outcome {
    let together = CoherenceIndex::new([vec!["x", "y"], vec!["x", "y", "z"], vec!["z"]]).unwrap();
    let v1 = npmi_pair(&together, "x", "y");
    ensure((v1 - 1.0).abs() <= 1e-9, || format!("always together: {v1}"))?;

    // p(a) = p(b) = 1/2, p(a, b) = 1/4
    let independent = CoherenceIndex::new([vec!["a", "b"], vec!["a"], vec!["b"], vec!["c"]]).unwrap();
    let v0 = npmi_pair(&independent, "a", "b");
    ensure(v0.abs() <= 1e-9, || format!("independent: {v0}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pairs = 0u64;
    for _ in 0..1000 {
        let vocab: Vec<String> = (0..rng.random_range(2..12)).map(|w| format!("w{w}")).collect();
        let docs: Vec<Vec<&str>> = (0..rng.random_range(1..30))
            .map(|_| {
                let p: f64 = rng.random();
                vocab.iter().filter(|_| rng.random::<f64>() < p).map(String::as_str).collect()
            })
            .collect();
        let index = CoherenceIndex::new(docs.iter().map(|d| d.iter().copied())).unwrap();
        for x in &vocab {
            for y in &vocab {
                if x < y {
                    let v = npmi_pair(&index, x, y);
                    ensure((-1.0..=1.0).contains(&v), || format!("npmi({x},{y}) = {v}"))?;
                    pairs += 1;
                }
            }
        }
    }
    Ok(format!("{pairs} random pairs in range, independent = {v0:.1e}"))
}

// ---------------------------------------------------------------- 4

fn oracle_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

struct Doc {
    id: String,
    h: f64,
    theta: Vec<f64>,
}

impl Doc {
    fn dominant(&self) -> (usize, f64) {
        let mut best = 0;
        for t in 1..self.theta.len() {
            if self.theta[t] > self.theta[best] {
                best = t;
            }
        }
        (best, self.theta[best])
    }

    fn topic_score(&self) -> f64 {
        self.h * self.dominant().1
    }
}

/// Highest-median topic over `docs`, restricted to topics containing one
/// of `candidates`; ties go to the lower index.
fn oracle_topic(docs: &[&Doc], candidates: &[&Doc], k: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for t in 0..k {
        if !candidates.iter().any(|d| d.dominant().0 == t) {
            continue;
        }
        let m = oracle_median(docs.iter().filter(|d| d.dominant().0 == t).map(|d| d.topic_score()).collect());
        if best.is_none() || m > best.unwrap().1 {
            best = Some((t, m));
        }
    }
    best.map(|b| b.0)
}

fn oracle_argmax<'a>(docs: impl Iterator<Item = &'a Doc>, score: impl Fn(&Doc) -> f64) -> Option<String> {
    let mut best: Option<&Doc> = None;
    for d in docs {
        best = match best {
            None => Some(d),
            Some(b) if score(d) > score(b) || (score(d) == score(b) && d.id < b.id) => Some(d),
            keep => keep,
        };
    }
    best.map(|d| d.id.clone())
}

fn c4_preference() -> Outcome {
    let start = Instant::now();
    let h = entropy(&[0.5, 0.5]).unwrap();
    ensure((h - 2f64.ln()).abs() <= 1e-9, || format!("entropy([0.5,0.5]) = {h}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut topic_checks = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=20);
        let k = rng.random_range(1..=5);
        let mut ids: Vec<usize> = (0..40).collect();
        ids.shuffle(&mut rng);
        let docs: Vec<Doc> = (0..n)
            .map(|i| {
                // coarse values so ties in entropy, theta and medians occur
                let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0..4) as f64).collect();
                if w.iter().all(|&x| x == 0.0) {
                    w[0] = 1.0;
                }
                let total: f64 = w.iter().sum();
                Doc {
                    id: format!("d{:02}", ids[i]),
                    h: rng.random_range(0..5) as f64 * 0.25,
                    theta: w.iter().map(|x| x / total).collect(),
                }
            })
            .collect();
        let scores: Vec<PreferenceScore> = docs
            .iter()
            .map(|d| PreferenceScore::new(d.id.clone(), d.h, Some(&d.theta)))
            .collect();
        for (d, s) in docs.iter().zip(&scores) {
            let (t, m) = d.dominant();
            ensure(s.dominant_topic == Some(t) && s.theta_max == Some(m), || format!("case {case}: dominant topic"))?;
            ensure(s.topic_score.unwrap().to_bits() == (d.h * m).to_bits(), || format!("case {case}: H^t"))?;
            ensure(topic_preference(d.h, m).to_bits() == (d.h * m).to_bits(), || format!("case {case}: H^t"))?;
        }

        let all: Vec<&Doc> = docs.iter().collect();
        let got = select_topic(&scores, k).ok();
        ensure(got == oracle_topic(&all, &all, k), || {
            format!("case {case}: select_topic {got:?} vs {:?}", oracle_topic(&all, &all, k))
        })?;

        let labeled: HashSet<String> = docs.iter().filter(|_| rng.random::<f64>() < 0.2).map(|d| d.id.clone()).collect();
        let skipped: HashSet<String> = docs
            .iter()
            .filter(|d| !labeled.contains(&d.id) && rng.random::<f64>() < 0.2)
            .map(|d| d.id.clone())
            .collect();
        let unlabeled: Vec<&Doc> = docs.iter().filter(|d| !labeled.contains(&d.id)).collect();
        let candidates: Vec<&Doc> = unlabeled.iter().copied().filter(|d| !skipped.contains(&d.id)).collect();
        for mode in [SelectionMode::Baseline, SelectionMode::Topic] {
            let want = match mode {
                SelectionMode::Baseline => oracle_argmax(candidates.iter().copied(), |d| d.h),
                SelectionMode::Topic => oracle_topic(&unlabeled, &candidates, k).and_then(|t| {
                    topic_checks += 1;
                    oracle_argmax(candidates.iter().copied().filter(|d| d.dominant().0 == t), Doc::topic_score)
                }),
            };
            let got = next_document(mode, &scores, &labeled, &skipped).ok();
            ensure(got == want, || format!("case {case} {mode:?}: next_document {got:?} vs {want:?}"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 instances, {topic_checks} with a topic pick"))
}

// ---------------------------------------------------------------- 5

fn c5_lda_recovery() -> Outcome {
    let start = Instant::now();
    let truth = synthetic_lda(5, 100, 500, 80, 2024);
    let tokens: Vec<Vec<usize>> = truth
        .bow
        .rows
        .iter()
        .map(|r| r.iter().flat_map(|&(w, c)| std::iter::repeat_n(w as usize, c as usize)).collect())
        .collect();
    let mut state = GibbsState::new(&truth.bow, 5, 0.1, 0.01, 7);
    let mut broken: Option<usize> = None;
    state.run(2000, |sweep, s| {
        if broken.is_some() {
            return;
        }
        let mut n_dk = vec![[0u32; 5]; tokens.len()];
        let mut n_wk = vec![[0u32; 5]; 100];
        let mut n_k = [0u32; 5];
        for (d, (ws, zs)) in tokens.iter().zip(s.assignments()).enumerate() {
            if ws.len() != zs.len() {
                broken = Some(sweep);
                return;
            }
            for (&w, &z) in ws.iter().zip(zs) {
                n_dk[d][z as usize] += 1;
                n_wk[w][z as usize] += 1;
                n_k[z as usize] += 1;
            }
        }
        let ok = (0..5).all(|k| {
            s.topic_total(k) == n_k[k]
                && (0..tokens.len()).all(|d| s.doc_topic_count(d, k) == n_dk[d][k])
                && (0..100).all(|w| s.topic_word_count(k, w) == n_wk[w][k])
        });
        if !ok {
            broken = Some(sweep);
        }
    });
    if let Some(sweep) = broken {
        return Err(format!("counts inconsistent after sweep {sweep}"));
    }
    let matched = greedy_match(&state.phi(), &truth.phi);
    let worst = matched.iter().map(|m| m.1).fold(0.0, f64::max);
    ensure(worst < 0.2, || format!("per-topic TV {matched:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("max TV {worst:.4}, counts consistent for 2000 sweeps"))
}

// ---------------------------------------------------------------- 6

fn c6_slda_alignment() -> Outcome {
    let mut gaps = Vec::new();
    for seed in 0..5 {
        let (data, labels) = label_correlated(300, 60, 100 + seed);
        let names = vec!["first".to_string(), "second".to_string()];
        let per_doc: Vec<Option<&str>> = labels.iter().map(|&y| Some(names[y].as_str())).collect();
        let responses = ResponseMatrix::from_labels(&names, &per_doc).map_err(|e| e.to_string())?;
        let config = SldaConfig {
            lda: LdaConfig {
                k: 4,
                iterations: 500,
                seed,
                ..Default::default()
            },
            ..Default::default()
        };
        let (model, _) = train_slda(&data.bow, &data.terms, &responses, &config).map_err(|e| e.to_string())?;
        let matched = greedy_match(model.phi.as_ref().unwrap(), &data.phi);
        // topics 0 and 1 generate the first label's documents
        let own = [matched[0].0, matched[1].0];
        let mass = |y: usize| {
            let rows: Vec<f64> = labels
                .iter()
                .zip(&model.theta)
                .filter(|(&l, _)| l == y)
                .map(|(_, th)| own.iter().map(|&t| th[t]).sum())
                .collect();
            rows.iter().sum::<f64>() / rows.len() as f64
        };
        gaps.push(mass(0) - mass(1));
    }
    let median = oracle_median(gaps.clone());
    ensure(median >= 0.2, || format!("gaps {gaps:?}"))?;
    Ok(format!("median gap {median:.3} over seeds {gaps:.3?}"))
}

// ---------------------------------------------------------------- 7

/// Five-point central difference.
fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

fn c7_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for point in 0..100 {
        let classes = rng.random_range(2..=5);
        let dim = rng.random_range(3..=10);
        let alpha = rng.random_range(0.001..0.1);
        let w: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<f64> = (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dense: Vec<f64> = (0..dim)
            .map(|_| if rng.random::<f64>() < 0.5 { rng.random_range(-2.0..2.0) } else { 0.0 })
            .collect();
        let x = SparseVec::from_dense(&dense);
        let y = rng.random_range(0..classes);

        // independent evaluation of the loss
        let scores: Vec<f64> = w
            .iter()
            .zip(&b)
            .map(|(wc, bc)| wc.iter().zip(&dense).map(|(a, c)| a * c).sum::<f64>() + bc)
            .collect();
        let lse = scores.iter().map(|s| s.exp()).sum::<f64>().ln();
        let l2: f64 = w.iter().flatten().map(|v| v * v).sum::<f64>() * alpha / 2.0;
        let direct = lse - scores[y] + l2;
        let lib = objective(&w, &b, &x, y, alpha);
        ensure((direct - lib).abs() <= 1e-12 * direct.abs().max(1.0), || format!("point {point}: objective {lib} vs {direct}"))?;

        let (dw, db) = gradient(&w, &b, &x, y, alpha);
        let mut check = |analytic: f64, numeric: f64, what: String| -> Result<(), String> {
            let scale = analytic.abs().max(numeric.abs());
            let err = if scale < 1e-8 { (analytic - numeric).abs() } else { (analytic - numeric).abs() / scale };
            worst = worst.max(err);
            coords += 1;
            ensure(err <= 1e-5, || format!("point {point} {what}: {analytic} vs {numeric}"))
        };
        for c in 0..classes {
            for i in 0..dim {
                let numeric = central_diff(
                    |v| {
                        let mut w2 = w.clone();
                        w2[c][i] = v;
                        objective(&w2, &b, &x, y, alpha)
                    },
                    w[c][i],
                    1e-3,
                );
                check(dw[c][i], numeric, format!("dW[{c}][{i}]"))?;
            }
            let numeric = central_diff(
                |v| {
                    let mut b2 = b.clone();
                    b2[c] = v;
                    objective(&w, &b2, &x, y, alpha)
                },
                b[c],
                1e-3,
            );
            check(db[c], numeric, format!("db[{c}]"))?;
        }
    }
    Ok(format!("{coords} coordinates, max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 8

fn c8_simulated_ordering() -> Outcome {
    let start = Instant::now();
    let full = hierarchical_corpus(&HierarchySpec {
        n_docs: 4000,
        seed: 11,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let corpus = stratified_subsample(&full, 2000, 5).map_err(|e| e.to_string())?;
    let data = Arc::new(SessionData::prepare(corpus, &Stopwords::english(), &VocabConfig::default()).map_err(|e| e.to_string())?);
    let base = SimulationConfig {
        runs: 5,
        docs_to_label: 400,
        ..Default::default()
    };
    let model = lda(&data, base.k, base.iterations, base.seed);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let imported = reimport(dir.path(), &data, &model);

    let final_of = |condition: Condition, topics| -> Result<(f64, f64), String> {
        let cfg = SimulationConfig { condition, ..base };
        let curves = run_simulation(&data, topics, &cfg).map_err(|e| e.to_string())?;
        let last = curves.final_median().ok_or("empty curve")?;
        ensure(last.labeled_count == 400, || format!("{condition} ended at {}", last.labeled_count))?;
        Ok((last.purity, last.anmi))
    };
    let none = final_of(Condition::None, None)?;
    let with_lda = final_of(Condition::Lda, Some(&model))?;
    let with_imported = final_of(Condition::Imported, Some(&imported))?;
    let detail = format!(
        "purity/anmi none {:.3}/{:.3}, lda {:.3}/{:.3}, imported {:.3}/{:.3}, {:.0}s",
        none.0,
        none.1,
        with_lda.0,
        with_lda.1,
        with_imported.0,
        with_imported.1,
        start.elapsed().as_secs_f64()
    );
    let ok = with_lda.0 >= none.0 && with_lda.1 >= none.1 && with_imported.0 >= none.0 && with_imported.1 >= none.1;
    ensure(ok, || detail.clone())?;
    ensure(start.elapsed() < Duration::from_secs(1800), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn c9_determinism() -> Outcome {
    let data = hierarchical_data(300, 9);
    let model = lda(&data, 10, 100, 1);
    let cfg = SimulationConfig {
        condition: Condition::Lda,
        runs: 3,
        docs_to_label: 60,
        seed: 42,
        ..Default::default()
    };
    let csv = || -> Result<Vec<u8>, String> {
        let curves = run_simulation(&data, Some(&model), &cfg).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_curves(&curves, &mut buf).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    let (a, b) = (csv()?, csv()?);
    ensure(a == b, || "simulation CSVs differ".into())?;

    let config = SessionConfig {
        seed: 13,
        ..Default::default()
    };
    let mut live = session(&data, Some(&model), Condition::Lda, config);
    while live.events().len() < 50 {
        let doc = live.recommended_doc().map_err(|e| e.to_string())?.to_string();
        // a skip always adds exactly one event
        if 50 - live.events().len() <= 3 {
            live.skip_document(&doc).map_err(|e| e.to_string())?;
        } else {
            let sub = data.corpus.by_id(&doc).unwrap().gold_sub.clone().unwrap();
            live.submit_label(&doc, &sub).map_err(|e| e.to_string())?;
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = dir.path().join("events.jsonl");
    write_event_log(&fixture, live.events()).map_err(|e| e.to_string())?;
    let events = read_event_log(&fixture).map_err(|e| e.to_string())?;
    ensure(events.len() == 50, || format!("fixture has {} events", events.len()))?;
    let replayed = Session::replay(Arc::clone(&data), Some(model), Condition::Lda, config, t0(), &events)
        .map_err(|e| e.to_string())?;
    ensure(replayed.classifier() == live.classifier(), || "classifier weights differ".into())?;
    ensure(replayed.recommendations() == live.recommendations(), || "recommendation sequences differ".into())?;
    Ok(format!(
        "{} CSV bytes identical, {} recommendations replayed",
        a.len(),
        live.recommendations().len()
    ))
}

// ---------------------------------------------------------------- 10

fn c10_slda_protocol() -> Outcome {
    let data = hierarchical_data(300, 10);
    let model = lda(&data, 10, 200, 1);
    let mut s = session(&data, Some(&model), Condition::Slda, SessionConfig::default());
    label_recommended(&mut s, 120);
    let events = s.events();
    let mut fired_at = Vec::new();
    let mut assigned = 0;
    for (i, e) in events.iter().enumerate() {
        match e.kind {
            EventKind::AssignLabel => assigned += 1,
            EventKind::RetrainScheduled => {
                fired_at.push(assigned);
                let next: Vec<EventKind> = events[i + 1..].iter().take(3).map(|e| e.kind).collect();
                ensure(
                    next == [EventKind::RetrainInstalled, EventKind::FeaturesRebuilt, EventKind::ClassifierReinit],
                    || format!("retrain at label {assigned} followed by {next:?}"),
                )?;
            }
            _ => {}
        }
    }
    ensure(assigned == 120, || format!("{assigned} labels"))?;
    ensure(fired_at == [50, 100], || format!("retrains fired at {fired_at:?}"))?;
    Ok(format!("retrains at {fired_at:?}, {} events", events.len()))
}
