mod common;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use common::*;
use topiclabel::corpus::{Corpus, Document, Stopwords, VocabConfig};
use topiclabel::session::{Condition, EventKind, SessionData};
use topiclabel::simulation::synthetic::{hierarchical_corpus, HierarchySpec};
use topiclabel::simulation::*;

fn sim(condition: Condition, docs: usize, runs: usize) -> SimulationConfig {
    SimulationConfig {
        condition,
        docs_to_label: docs,
        runs,
        seed: 100,
        ..Default::default()
    }
}

#[test]
fn ten_doc_fixture_labels_everything() {
    let data = hierarchical_data(10, 3);
    let out = simulate_run(&data, None, &sim(Condition::None, 10, 1), 0).unwrap();
    let assigned: Vec<&str> = out
        .events
        .iter()
        .filter(|e| e.kind == EventKind::AssignLabel)
        .map(|e| e.doc_id.as_deref().unwrap())
        .collect();
    assert_eq!(assigned.len(), 10);
    let distinct: HashSet<&str> = assigned.iter().copied().collect();
    assert_eq!(distinct.len(), 10);
    assert!(simulate_run(&data, None, &sim(Condition::None, 11, 1), 0).is_err());
}

#[test]
fn annotator_uses_gold_sub_labels() {
    let data = hierarchical_data(120, 3);
    let out = simulate_run(&data, None, &sim(Condition::None, 40, 1), 0).unwrap();
    for e in out.events.iter().filter(|e| e.kind == EventKind::AssignLabel) {
        let doc = data.corpus.by_id(e.doc_id.as_deref().unwrap()).unwrap();
        assert_eq!(e.label, doc.gold_sub);
    }
    // every labeled count after the classifier starts has a point
    let pts = &out.curve.points;
    assert_eq!(pts.last().unwrap().labeled_count, 40);
    assert!(pts.windows(2).all(|w| w[1].labeled_count == w[0].labeled_count + 1));
}

#[test]
fn none_and_lda_logs_have_the_same_shape() {
    let data = hierarchical_data(120, 3);
    let model = lda(&data, 8, 30, 1);
    let none = simulate_run(&data, None, &sim(Condition::None, 30, 1), 0).unwrap();
    let with_topics = simulate_run(&data, Some(&model), &sim(Condition::Lda, 30, 1), 0).unwrap();
    for out in [&none, &with_topics] {
        assert!(out.events.iter().all(|e| !matches!(
            e.kind,
            EventKind::RetrainScheduled | EventKind::RetrainInstalled | EventKind::FeaturesRebuilt
        )));
        assert_eq!(out.events.iter().filter(|e| e.kind == EventKind::AssignLabel).count(), 30);
    }
    // same seed, different selection rule
    let docs = |o: &RunOutput| -> Vec<String> { o.events.iter().filter_map(|e| e.doc_id.clone()).collect() };
    assert_ne!(docs(&none), docs(&with_topics));
}

#[test]
fn identical_seeds_identical_csv() {
    let data = hierarchical_data(150, 4);
    let model = lda(&data, 8, 30, 1);
    let cfg = sim(Condition::Lda, 40, 3);
    let csv = |curves: &MetricsCurves| {
        let mut buf = Vec::new();
        write_curves(curves, &mut buf).unwrap();
        buf
    };
    let a = run_simulation(&data, Some(&model), &cfg).unwrap();
    let b = run_simulation(&data, Some(&model), &cfg).unwrap();
    assert_eq!(csv(&a), csv(&b));
    let other = run_simulation(&data, Some(&model), &SimulationConfig { seed: 7, ..cfg }).unwrap();
    assert_ne!(csv(&a), csv(&other));
}

#[test]
fn curves_improve_with_labels() {
    let data = hierarchical_data(300, 5);
    let model = lda(&data, 20, 100, 1);
    for (condition, topics) in [(Condition::None, None), (Condition::Lda, Some(&model))] {
        let curves = run_simulation(&data, topics, &sim(condition, 150, 3)).unwrap();
        let first = curves.aggregate.first().unwrap();
        let last = curves.final_median().unwrap();
        assert_eq!(last.labeled_count, 150);
        assert!(last.purity > first.purity, "{condition}: {first:?} -> {last:?}");
    }
}

#[test]
fn aggregate_is_the_elementwise_median() {
    let data = hierarchical_data(100, 6);
    let curves = run_simulation(&data, None, &sim(Condition::None, 25, 15)).unwrap();
    let first = curves.aggregate[0].labeled_count;
    for p in &curves.aggregate {
        let mut column: Vec<f64> = curves
            .runs
            .iter()
            .map(|r| r.points.iter().find(|q| q.labeled_count == p.labeled_count).unwrap().ari)
            .collect();
        column.sort_by(f64::total_cmp);
        assert_eq!(p.ari, column[7]);
        assert!(p.labeled_count >= first);
    }
    for r in &curves.runs {
        assert!(r.points[0].labeled_count <= first);
    }
}

#[test]
fn csv_file_round_trip() {
    let data = hierarchical_data(100, 6);
    let curves = run_simulation(&data, None, &sim(Condition::None, 20, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves.csv");
    export_curves(&curves, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CURVE_COLUMNS.join(","));
    assert!(text.lines().any(|l| l.starts_with("median,")));
    let back = load_curves(&path).unwrap();
    assert_eq!(back.runs.len(), 2);
    for (a, b) in back.aggregate.iter().zip(&curves.aggregate) {
        assert!(a.same_bits(b));
    }
}

#[test]
fn stratified_subsample_keeps_proportions() {
    let corpus = hierarchical_corpus(&HierarchySpec {
        n_docs: 1000,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let sub = stratified_subsample(&corpus, 300, 9).unwrap();
    assert_eq!(sub.len(), 300);
    let count = |c: &Corpus| {
        let mut m = BTreeMap::new();
        for d in c.docs() {
            *m.entry(d.gold_major.clone().unwrap()).or_insert(0usize) += 1;
        }
        m
    };
    let full = count(&corpus);
    for (major, n) in count(&sub) {
        let exact = 300.0 * full[&major] as f64 / 1000.0;
        assert!((n as f64 - exact).abs() < 1.0, "{major}: {n} vs {exact}");
    }
    let ids: Vec<&str> = sub.ids().collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert_eq!(stratified_subsample(&corpus, 300, 9).unwrap().docs(), sub.docs());
    assert!(stratified_subsample(&corpus, 1001, 9).is_err());
}

#[test]
fn unlabeled_corpus_is_rejected() {
    let docs = (0..5)
        .map(|i| Document::new(format!("d{i}"), "apple banana cherry", None, None))
        .collect();
    let cfg = VocabConfig {
        min_df: 1,
        max_df_fraction: 1.0,
    };
    let data = Arc::new(SessionData::prepare(Corpus::new(docs).unwrap(), &Stopwords::empty(), &cfg).unwrap());
    let err = simulate_run(&data, None, &sim(Condition::None, 3, 1), 0).unwrap_err();
    assert!(matches!(err, SimulationError::MissingHierarchicalLabels));
}
