//! Scripted-annotator benchmark.
//!
//! A simulated annotator labels whatever document the session recommends
//! with that document's gold sub-label, while the classifier's clustering
//! is scored against the gold major labels after every label.

pub mod synthetic;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active_learning::median;
use crate::corpus::{Corpus, CorpusError};
use crate::session::{
    AnnotationEvent, Checkpoints, Clock, Condition, RetrainMode, Session, SessionConfig,
    SessionData, SessionError,
};
use crate::topic_models::TopicModel;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("every document needs both a gold major and a gold sub label")]
    MissingHierarchicalLabels,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("runs have different checkpoints (run {run})")]
    RaggedRuns { run: usize },
    #[error("curves file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub condition: Condition,
    pub docs_to_label: usize,
    pub runs: usize,
    pub seed: u64,
    pub retrain_every: usize,
    pub k: usize,
    pub iterations: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            condition: Condition::Lda,
            docs_to_label: 400,
            runs: 15,
            seed: 0,
            retrain_every: 50,
            k: 35,
            iterations: 2000,
        }
    }
}

impl SimulationConfig {
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs).map(|r| self.run_seed(r)).collect()
    }

    pub fn validate(&self, n_docs: usize) -> Result<(), SimulationError> {
        if self.runs == 0 {
            return Err(SimulationError::InvalidConfig("runs must be at least 1".into()));
        }
        if self.docs_to_label > n_docs {
            return Err(SimulationError::InvalidConfig(format!(
                "docs_to_label {} exceeds corpus size {n_docs}",
                self.docs_to_label
            )));
        }
        if self.retrain_every == 0 {
            return Err(SimulationError::InvalidConfig("retrain_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub labeled_count: usize,
    pub purity: f64,
    pub ari: f64,
    pub anmi: f64,
}

impl CurvePoint {
    /// Bitwise equality, so NaN matches NaN.
    pub fn same_bits(&self, other: &Self) -> bool {
        self.labeled_count == other.labeled_count
            && self.purity.to_bits() == other.purity.to_bits()
            && self.ari.to_bits() == other.ari.to_bits()
            && self.anmi.to_bits() == other.anmi.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCurve {
    pub run: usize,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCurves {
    pub runs: Vec<RunCurve>,
    pub aggregate: Vec<CurvePoint>,
}

impl MetricsCurves {
    pub fn final_median(&self) -> Option<&CurvePoint> {
        self.aggregate.last()
    }
}

/// Everything one simulated run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub curve: RunCurve,
    pub events: Vec<AnnotationEvent>,
}

pub fn session_config(config: &SimulationConfig, run: usize) -> SessionConfig {
    SessionConfig {
        seed: config.run_seed(run),
        retrain_every: config.retrain_every,
        ..SessionConfig::default()
    }
}

/// Drives one session to `docs_to_label` labels.
pub fn simulate_run(
    data: &Arc<SessionData>,
    topics: Option<&TopicModel>,
    config: &SimulationConfig,
    run: usize,
) -> Result<RunOutput, SimulationError> {
    let corpus = &data.corpus;
    if !corpus.has_hierarchical_labels() {
        return Err(SimulationError::MissingHierarchicalLabels);
    }
    config.validate(corpus.len())?;
    let start = DateTime::UNIX_EPOCH;
    let mut session = Session::new(
        Arc::clone(data),
        topics.cloned(),
        config.condition,
        session_config(config, run),
        start,
    )?
    .with_clock(Clock::Stepped {
        start,
        step: Duration::seconds(1),
    })
    .with_retrain_mode(RetrainMode::Synchronous)?;
    for _ in 0..config.docs_to_label {
        let doc_id = session.recommended_doc()?.to_string();
        let sub = corpus
            .by_id(&doc_id)
            .and_then(|d| d.gold_sub.clone())
            .ok_or(SimulationError::MissingHierarchicalLabels)?;
        session.submit_label(&doc_id, &sub)?;
    }
    let points = session
        .metrics_timeline(Checkpoints::PerLabel)?
        .into_iter()
        .map(|r| CurvePoint {
            labeled_count: r.checkpoint as usize,
            purity: r.purity,
            ari: r.ari,
            anmi: r.anmi,
        })
        .collect();
    Ok(RunOutput {
        curve: RunCurve { run, points },
        events: session.events().to_vec(),
    })
}

/// Runs every seed and aggregates the medians over the labeled counts all
/// runs share (runs start reporting once their classifier is fit, which
/// can happen at different counts).
pub fn run_simulation(
    data: &Arc<SessionData>,
    topics: Option<&TopicModel>,
    config: &SimulationConfig,
) -> Result<MetricsCurves, SimulationError> {
    let mut runs = Vec::with_capacity(config.runs);
    for r in 0..config.runs {
        let out = simulate_run(data, topics, config, r)?;
        log::info!(
            "run {r} (seed {}): {} checkpoints",
            config.run_seed(r),
            out.curve.points.len()
        );
        runs.push(out.curve);
    }
    let first = runs
        .iter()
        .map(|c| c.points.first().map_or(usize::MAX, |p| p.labeled_count))
        .max()
        .unwrap_or(usize::MAX);
    let trimmed: Vec<Vec<CurvePoint>> = runs
        .iter()
        .map(|c| {
            c.points
                .iter()
                .filter(|p| p.labeled_count >= first)
                .copied()
                .collect()
        })
        .collect();
    let aggregate = aggregate_median(&trimmed)?;
    Ok(MetricsCurves { runs, aggregate })
}

/// Elementwise median across runs with identical checkpoints.
pub fn aggregate_median(runs: &[Vec<CurvePoint>]) -> Result<Vec<CurvePoint>, SimulationError> {
    let Some(reference) = runs.first() else {
        return Ok(Vec::new());
    };
    for (r, run) in runs.iter().enumerate() {
        let aligned = run.len() == reference.len()
            && run
                .iter()
                .zip(reference)
                .all(|(a, b)| a.labeled_count == b.labeled_count);
        if !aligned {
            return Err(SimulationError::RaggedRuns { run: r });
        }
    }
    let column = |i: usize, f: fn(&CurvePoint) -> f64| -> f64 {
        let values: Vec<f64> = runs.iter().map(|run| f(&run[i])).collect();
        median(&values)
    };
    Ok((0..reference.len())
        .map(|i| CurvePoint {
            labeled_count: reference[i].labeled_count,
            purity: column(i, |p| p.purity),
            ari: column(i, |p| p.ari),
            anmi: column(i, |p| p.anmi),
        })
        .collect())
}

pub const CURVE_COLUMNS: [&str; 5] = ["run", "labeled_count", "purity", "ari", "anmi"];

pub fn write_curves(curves: &MetricsCurves, out: impl Write) -> Result<(), SimulationError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_COLUMNS)?;
    let mut row = |run: String, p: &CurvePoint| {
        w.write_record([
            run,
            p.labeled_count.to_string(),
            p.purity.to_string(),
            p.ari.to_string(),
            p.anmi.to_string(),
        ])
    };
    for c in &curves.runs {
        for p in &c.points {
            row(c.run.to_string(), p)?;
        }
    }
    for p in &curves.aggregate {
        row("median".into(), p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_curves(curves: &MetricsCurves, path: &Path) -> Result<(), SimulationError> {
    let file = std::fs::File::create(path)?;
    write_curves(curves, std::io::BufWriter::new(file))
}

pub fn read_curves(input: impl Read) -> Result<MetricsCurves, SimulationError> {
    let mut reader = csv::Reader::from_reader(input);
    if reader.headers()?.iter().ne(CURVE_COLUMNS) {
        return Err(SimulationError::Malformed(format!(
            "header must be {}",
            CURVE_COLUMNS.join(",")
        )));
    }
    let mut runs: BTreeMap<usize, Vec<CurvePoint>> = BTreeMap::new();
    let mut aggregate = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| SimulationError::Malformed(format!("row {}: bad {what}", i + 1));
        let number = |j: usize, what: &str| record[j].parse::<f64>().map_err(|_| bad(what));
        let point = CurvePoint {
            labeled_count: record[1].parse().map_err(|_| bad("labeled_count"))?,
            purity: number(2, "purity")?,
            ari: number(3, "ari")?,
            anmi: number(4, "anmi")?,
        };
        match &record[0] {
            "median" => aggregate.push(point),
            run => runs
                .entry(run.parse().map_err(|_| bad("run"))?)
                .or_default()
                .push(point),
        }
    }
    Ok(MetricsCurves {
        runs: runs
            .into_iter()
            .map(|(run, points)| RunCurve { run, points })
            .collect(),
        aggregate,
    })
}

pub fn load_curves(path: &Path) -> Result<MetricsCurves, SimulationError> {
    read_curves(std::fs::File::open(path)?)
}

/// Draws `n` documents with per-major counts proportional to the corpus
/// (largest remainders get the leftovers). Corpus order is kept.
pub fn stratified_subsample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, SimulationError> {
    if n > corpus.len() {
        return Err(SimulationError::InvalidConfig(format!(
            "cannot draw {n} of {} documents",
            corpus.len()
        )));
    }
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in corpus.docs().iter().enumerate() {
        let major = d
            .gold_major
            .as_deref()
            .ok_or(SimulationError::MissingHierarchicalLabels)?;
        strata.entry(major).or_default().push(i);
    }
    let total = corpus.len() as f64;
    let mut quotas: Vec<(usize, f64)> = strata
        .values()
        .map(|m| {
            let exact = n as f64 * m.len() as f64 / total;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut left = n - quotas.iter().map(|q| q.0).sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for s in by_remainder {
        if left == 0 {
            break;
        }
        quotas[s].0 += 1;
        left -= 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (members, (quota, _)) in strata.into_values().zip(quotas) {
        let mut members = members;
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..quota]);
    }
    chosen.sort_unstable();
    Ok(corpus.subset(&chosen)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(n: usize, v: f64) -> CurvePoint {
        CurvePoint {
            labeled_count: n,
            purity: v,
            ari: v,
            anmi: v,
        }
    }

    #[test]
    fn median_of_three_runs() {
        let agg = aggregate_median(&[vec![pt(1, 1.0)], vec![pt(1, 3.0)], vec![pt(1, 2.0)]]).unwrap();
        assert_eq!(agg, vec![pt(1, 2.0)]);
        let single = vec![pt(2, 0.5), pt(3, 0.7)];
        assert_eq!(aggregate_median(std::slice::from_ref(&single)).unwrap(), single);
    }

    #[test]
    fn ragged_runs_rejected() {
        let err = aggregate_median(&[vec![pt(1, 1.0), pt(2, 1.0)], vec![pt(1, 1.0)]]);
        assert!(matches!(err, Err(SimulationError::RaggedRuns { run: 1 })));
        let err = aggregate_median(&[vec![pt(1, 1.0)], vec![pt(2, 1.0)]]);
        assert!(matches!(err, Err(SimulationError::RaggedRuns { run: 1 })));
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let curves = MetricsCurves {
            runs: vec![
                RunCurve {
                    run: 0,
                    points: vec![pt(2, 0.1), pt(3, 0.2), pt(4, 0.3)],
                },
                RunCurve {
                    run: 1,
                    points: vec![pt(2, 0.4), pt(3, f64::NAN), pt(4, 1.0 / 3.0)],
                },
            ],
            aggregate: vec![pt(2, 0.25), pt(3, 0.2), pt(4, 0.3)],
        };
        let mut buf = Vec::new();
        write_curves(&curves, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "run,labeled_count,purity,ari,anmi");
        assert_eq!(lines.len(), 1 + 6 + 3);
        assert!(lines[7].starts_with("median,2,"));
        let back = read_curves(buf.as_slice()).unwrap();
        for (a, b) in back.runs.iter().zip(&curves.runs) {
            assert_eq!(a.run, b.run);
            assert!(a.points.iter().zip(&b.points).all(|(x, y)| x.same_bits(y)));
        }
        assert_eq!(back.aggregate, curves.aggregate);
    }

    #[test]
    fn config_validation() {
        let c = SimulationConfig {
            runs: 0,
            ..Default::default()
        };
        assert!(c.validate(10).is_err());
        let c = SimulationConfig {
            docs_to_label: 11,
            ..Default::default()
        };
        assert!(c.validate(10).is_err());
        let c = SimulationConfig {
            seed: 7,
            runs: 3,
            ..Default::default()
        };
        assert_eq!(c.seeds(), vec![7, 8, 9]);
    }
}
