//! Event-sourced annotation session.
//!
//! Every mutation goes through one writer (`&mut Session`) and is recorded
//! as an [`AnnotationEvent`]. The annotator's events, plus the points at
//! which background sLDA refreshes were installed, fully determine the
//! state: [`Session::replay`] rebuilds it and checks every engine event
//! against the log.

mod events;
mod views;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active_learning::{
    cold_start_pick, entropy, next_document, PreferenceScore, SelectionError, SelectionMode,
};
use crate::classifier::{
    argmax, reinitialize, ClassifierError, ClassifierSnapshot, ClassifierState, FeatureLayout,
    Hyperparams, LabelSet, TrainingBuffer,
};
use crate::corpus::{
    bow_counts, build_vocabulary, tfidf_features, BowMatrix, Corpus, CorpusError, FeatureMatrix,
    Stopwords, VocabConfig, Vocabulary,
};
use crate::metrics::{evaluate_session, MetricsError, MetricsReport};
use crate::sparse::SparseVec;
use crate::topic_models::{
    refresh_slda, GibbsState, ModelSource, ResponseMatrix, SldaConfig, SldaState, TopicModel,
    TopicModelError,
};

pub use events::{
    check_gapless, read_event_log, write_event_log, AnnotationEvent, EventKind, EventLogWriter,
};
pub use views::{DocSummary, DocumentDetail, Overview, Suggestion, TopicGroup, TopicWeight};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("label must not be empty")]
    EmptyLabel,
    #[error("document `{0}` is already labeled")]
    AlreadyLabeled(String),
    #[error("condition {0} needs a topic model")]
    MissingTopicModel(Condition),
    #[error("the sLDA condition needs a topic model with token assignments")]
    MissingAssignments,
    #[error("topic model covers {actual} documents, corpus has {expected}")]
    TopicModelShape { expected: usize, actual: usize },
    #[error("no unlabeled documents left")]
    NoUnlabeledDocuments,
    #[error("corpus has no gold major labels")]
    NoGoldLabels,
    #[error("session is closed")]
    Closed,
    #[error("event log gap: expected seq {expected}, found {found}")]
    LogGap { expected: u64, found: u64 },
    #[error("event log is truncated: seq {seq} is missing")]
    LogTruncated { seq: u64 },
    #[error("replay diverged at seq {seq}: {message}")]
    ReplayDivergence { seq: u64, message: String },
    #[error("event log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("sLDA refresh failed: {0}")]
    RetrainFailed(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    TopicModel(#[from] TopicModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    None,
    Lda,
    Slda,
    Imported,
}

impl Condition {
    pub fn uses_topics(self) -> bool {
        self != Self::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Lda => "lda",
            Self::Slda => "slda",
            Self::Imported => "imported",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "lda" => Ok(Self::Lda),
            "slda" => Ok(Self::Slda),
            "imported" => Ok(Self::Imported),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub seed: u64,
    /// sLDA refresh cadence, in assign_label events.
    pub retrain_every: usize,
    pub classifier: Hyperparams,
    pub slda: SldaConfig,
    pub highlight_threshold: f64,
    pub detail_topics: usize,
    pub keywords_per_topic: usize,
    pub suggestions: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            retrain_every: 50,
            classifier: Hyperparams::default(),
            slda: SldaConfig::default(),
            highlight_threshold: 0.05,
            detail_topics: 5,
            keywords_per_topic: 10,
            suggestions: 3,
        }
    }
}

/// How sLDA refreshes run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrainMode {
    /// Inside the triggering call.
    Synchronous,
    /// On a worker thread; installed by the next writer call after it ends.
    Background,
}

/// Source of event timestamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    System,
    /// `start + step * n` for the n-th annotator action.
    Stepped { start: DateTime<Utc>, step: Duration },
}

/// Corpus plus the features every condition shares.
#[derive(Debug, Clone)]
pub struct SessionData {
    pub corpus: Corpus,
    pub vocab: Vocabulary,
    pub tfidf: FeatureMatrix,
    pub bow: BowMatrix,
}

impl SessionData {
    pub fn prepare(
        corpus: Corpus,
        stopwords: &Stopwords,
        config: &VocabConfig,
    ) -> Result<Self, CorpusError> {
        let vocab = build_vocabulary(&corpus, stopwords, config)?;
        Ok(Self::from_vocabulary(corpus, vocab))
    }

    pub fn from_vocabulary(corpus: Corpus, vocab: Vocabulary) -> Self {
        let tfidf = tfidf_features(&corpus, &vocab);
        let bow = bow_counts(&corpus, &vocab);
        Self {
            corpus,
            vocab,
            tfidf,
            bow,
        }
    }

    pub fn gold_majors(&self) -> Option<Vec<&str>> {
        self.corpus
            .docs()
            .iter()
            .map(|d| d.gold_major.as_deref())
            .collect()
    }
}

/// Classifier quality after one classifier update.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub seq: u64,
    pub wall_time: DateTime<Utc>,
    pub labeled: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checkpoints {
    /// One report per labeled-document count.
    PerLabel,
    /// One report per elapsed minute, sampled at the minute boundary.
    PerMinute,
}

/// What the annotator sees after a mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub recommended_doc: Option<String>,
    pub suggestions: Vec<Suggestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub condition: Condition,
    pub config: SessionConfig,
    pub started_at: DateTime<Utc>,
    pub last_seq: u64,
    pub labels: Vec<String>,
    pub buffer: Vec<(String, String)>,
    pub skipped: Vec<String>,
    pub classifier: ClassifierSnapshot,
    pub topic_source: Option<ModelSource>,
    pub labels_since_retrain: usize,
    pub retrain_rounds: u64,
    pub recommended_doc: Option<String>,
}

struct RetrainJob {
    round: u64,
    state: Arc<SldaState>,
    responses: ResponseMatrix,
    seed: u64,
}

impl RetrainJob {
    fn run(self) -> Result<SldaState, TopicModelError> {
        let mut state = (*self.state).clone();
        state.gibbs.reseed(self.seed);
        refresh_slda(&state, self.responses)
    }
}

enum Pending {
    /// Waiting for its install point in a replayed log.
    Deferred(RetrainJob),
    Running {
        round: u64,
        handle: JoinHandle<Result<SldaState, TopicModelError>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Live(RetrainMode),
    Replaying,
}

pub struct Session {
    data: Arc<SessionData>,
    condition: Condition,
    config: SessionConfig,
    started_at: DateTime<Utc>,
    clock: Clock,
    mode: Mode,
    closed: bool,
    actions: u64,
    events: Vec<AnnotationEvent>,
    log: Option<EventLogWriter>,
    labels: LabelSet,
    buffer: TrainingBuffer,
    labeled: HashSet<String>,
    skipped: HashSet<String>,
    classifier: ClassifierState,
    base_topics: Option<Arc<TopicModel>>,
    topics: Option<Arc<TopicModel>>,
    slda: Option<Arc<SldaState>>,
    layout: FeatureLayout,
    features: Arc<Vec<SparseVec>>,
    labels_since_retrain: usize,
    retrain_rounds: u64,
    pending: Option<Pending>,
    queued: bool,
    rng: ChaCha8Rng,
    recommended: Option<String>,
    recommendations: Vec<(u64, Option<String>)>,
    evaluations: Vec<Evaluation>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("condition", &self.condition)
            .field("events", &self.events.len())
            .field("labels", &self.labels.labels())
            .field("recommended", &self.recommended)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Opens a session. Topic conditions need `topics`; the sLDA condition
    /// additionally needs its token assignments so sampling can resume.
    pub fn new(
        data: Arc<SessionData>,
        topics: Option<TopicModel>,
        condition: Condition,
        config: SessionConfig,
        started_at: DateTime<Utc>,
    ) -> Result<Self, SessionError> {
        let n_docs = data.corpus.len();
        let (topics, slda) = if condition.uses_topics() {
            let mut model = topics.ok_or(SessionError::MissingTopicModel(condition))?;
            if model.n_docs() != n_docs {
                return Err(SessionError::TopicModelShape {
                    expected: n_docs,
                    actual: model.n_docs(),
                });
            }
            if model.phi.is_none() {
                model = model.with_estimated_phi(&data.bow);
            }
            let slda = if condition == Condition::Slda {
                let z = model.assignments.clone().ok_or(SessionError::MissingAssignments)?;
                let gibbs =
                    GibbsState::from_assignments(&data.bow, z, model.k, model.alpha, model.beta, config.seed)?;
                if model.source == ModelSource::Lda {
                    model.source = ModelSource::SldaColdstart;
                }
                Some(Arc::new(SldaState::from_gibbs(gibbs, config.slda)))
            } else {
                None
            };
            (Some(Arc::new(model)), slda)
        } else {
            (None, None)
        };
        let (layout, features) = build_features(&data, topics.as_deref());
        let mut session = Self {
            condition,
            config,
            started_at,
            clock: Clock::System,
            mode: Mode::Live(RetrainMode::Synchronous),
            closed: false,
            actions: 0,
            events: Vec::new(),
            log: None,
            labels: LabelSet::new(),
            buffer: TrainingBuffer::default(),
            labeled: HashSet::new(),
            skipped: HashSet::new(),
            classifier: ClassifierState::uninitialized(layout.width(), config.classifier),
            base_topics: topics.clone(),
            topics,
            slda,
            layout,
            features: Arc::new(features),
            labels_since_retrain: 0,
            retrain_rounds: 0,
            pending: None,
            queued: false,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            recommended: None,
            recommendations: Vec::new(),
            evaluations: Vec::new(),
            data,
        };
        session.refresh(false, 0, started_at)?;
        Ok(session)
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_retrain_mode(mut self, mode: RetrainMode) -> Result<Self, SessionError> {
        self.set_retrain_mode(mode)?;
        Ok(self)
    }

    /// Switches retrain mode. A refresh left waiting by a replay is started.
    pub fn set_retrain_mode(&mut self, mode: RetrainMode) -> Result<(), SessionError> {
        self.mode = Mode::Live(mode);
        if let Some(Pending::Deferred(job)) = self.pending.take() {
            self.launch(job, self.now_untracked())?;
        }
        Ok(())
    }

    /// Sends every future event to `writer`.
    pub fn attach_log(&mut self, writer: EventLogWriter) {
        self.log = Some(writer);
    }

    pub fn data(&self) -> &SessionData {
        &self.data
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn started_at(&self) -> DateTime<Utc> {
        self.started_at
    }

    pub fn events(&self) -> &[AnnotationEvent] {
        &self.events
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.labels
    }

    pub fn buffer(&self) -> &TrainingBuffer {
        &self.buffer
    }

    pub fn classifier(&self) -> &ClassifierState {
        &self.classifier
    }

    pub fn topic_model(&self) -> Option<&TopicModel> {
        self.topics.as_deref()
    }

    pub fn feature_layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn features(&self) -> &[SparseVec] {
        &self.features
    }

    pub fn labels_since_retrain(&self) -> usize {
        self.labels_since_retrain
    }

    pub fn retrain_rounds(&self) -> u64 {
        self.retrain_rounds
    }

    pub fn retrain_pending(&self) -> bool {
        self.pending.is_some()
    }

    pub fn is_skipped(&self, doc_id: &str) -> bool {
        self.skipped.contains(doc_id)
    }

    pub fn recommended_doc(&self) -> Result<&str, SessionError> {
        self.recommended
            .as_deref()
            .ok_or(SessionError::NoUnlabeledDocuments)
    }

    /// Recommendation after every state change, keyed by the last seq.
    pub fn recommendations(&self) -> &[(u64, Option<String>)] {
        &self.recommendations
    }

    pub fn evaluations(&self) -> &[Evaluation] {
        &self.evaluations
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn submit_label(&mut self, doc_id: &str, label: &str) -> Result<Outcome, SessionError> {
        self.check_open()?;
        self.poll_retrain()?;
        let now = self.tick();
        self.apply_submit(doc_id, label, now)?;
        Ok(self.outcome())
    }

    pub fn skip_document(&mut self, doc_id: &str) -> Result<Outcome, SessionError> {
        self.check_open()?;
        self.poll_retrain()?;
        let now = self.tick();
        self.apply_skip(doc_id, now)?;
        Ok(self.outcome())
    }

    /// Installs a finished background refresh. Returns whether one was
    /// installed.
    pub fn poll_retrain(&mut self) -> Result<bool, SessionError> {
        match &self.pending {
            Some(Pending::Running { handle, .. }) if handle.is_finished() => {}
            _ => return Ok(false),
        }
        self.finish_running()?;
        Ok(true)
    }

    /// Blocks until a running background refresh has been installed.
    pub fn wait_for_retrain(&mut self) -> Result<bool, SessionError> {
        if matches!(self.pending, Some(Pending::Running { .. })) {
            self.finish_running()?;
            return Ok(true);
        }
        Ok(false)
    }

    fn finish_running(&mut self) -> Result<(), SessionError> {
        let Some(Pending::Running { round, handle }) = self.pending.take() else {
            return Ok(());
        };
        let state = handle
            .join()
            .map_err(|_| SessionError::RetrainFailed("worker panicked".into()))??;
        let now = self.now_untracked();
        self.install(round, state, now)?;
        self.refresh(true, self.last_seq(), now)
    }

    fn check_open(&self) -> Result<(), SessionError> {
        if self.closed {
            return Err(SessionError::Closed);
        }
        Ok(())
    }

    fn tick(&mut self) -> DateTime<Utc> {
        self.actions += 1;
        match self.clock {
            Clock::System => Utc::now(),
            Clock::Stepped { start, step } => start + step * self.actions as i32,
        }
    }

    fn now_untracked(&self) -> DateTime<Utc> {
        match self.clock {
            Clock::System => Utc::now(),
            Clock::Stepped { start, step } => start + step * self.actions as i32,
        }
    }

    fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    fn outcome(&self) -> Outcome {
        let suggestions = self
            .recommended
            .as_deref()
            .and_then(|id| self.data.corpus.index_of(id))
            .map(|d| self.suggestions_for(d))
            .unwrap_or_default();
        Outcome {
            recommended_doc: self.recommended.clone(),
            suggestions,
        }
    }

    fn push(
        &mut self,
        kind: EventKind,
        doc_id: Option<&str>,
        label: Option<&str>,
        round: Option<u64>,
        now: DateTime<Utc>,
    ) -> Result<u64, SessionError> {
        let event = AnnotationEvent {
            seq: self.last_seq() + 1,
            kind,
            doc_id: doc_id.map(str::to_string),
            label: label.map(str::to_string),
            round,
            wall_time: now,
        };
        if let Some(log) = &mut self.log {
            log.append(&event)?;
        }
        log::debug!("event {} {:?}", event.seq, event.kind);
        let seq = event.seq;
        self.events.push(event);
        Ok(seq)
    }

    fn doc_index(&self, doc_id: &str) -> Result<usize, SessionError> {
        self.data
            .corpus
            .index_of(doc_id)
            .ok_or_else(|| SessionError::UnknownDocument(doc_id.to_string()))
    }

    fn apply_submit(&mut self, doc_id: &str, label: &str, now: DateTime<Utc>) -> Result<(), SessionError> {
        let d = self.doc_index(doc_id)?;
        let label = label.trim();
        if label.is_empty() {
            return Err(SessionError::EmptyLabel);
        }
        let is_new = self.labels.index_of(label).is_none();
        if is_new {
            let seq = self.push(EventKind::CreateLabel, None, Some(label), None, now)?;
            self.labels.insert(label, seq);
        }
        let kind = if self.labeled.contains(doc_id) || self.skipped.contains(doc_id) {
            EventKind::Relabel
        } else {
            EventKind::AssignLabel
        };
        self.push(kind, Some(doc_id), Some(label), None, now)?;
        self.buffer.assign(doc_id, label);
        self.labeled.insert(doc_id.to_string());
        self.skipped.remove(doc_id);

        if !self.classifier.is_initialized() {
            if self.buffer.distinct_labels() >= 2 {
                self.reinitialize(now)?;
            }
        } else if is_new {
            self.reinitialize(now)?;
        } else {
            let x = &self.features[d];
            self.classifier.fit_incremental(&[(x, label)])?;
        }

        if kind == EventKind::AssignLabel {
            self.labels_since_retrain += 1;
            if self.labels_since_retrain >= self.config.retrain_every.max(1) {
                self.labels_since_retrain = 0;
                if self.condition == Condition::Slda {
                    self.trigger_retrain(now)?;
                }
            }
        }
        self.refresh(true, self.last_seq(), now)
    }

    fn apply_skip(&mut self, doc_id: &str, now: DateTime<Utc>) -> Result<(), SessionError> {
        self.doc_index(doc_id)?;
        if self.labeled.contains(doc_id) {
            return Err(SessionError::AlreadyLabeled(doc_id.to_string()));
        }
        self.push(EventKind::Skip, Some(doc_id), None, None, now)?;
        self.skipped.insert(doc_id.to_string());
        self.refresh(false, self.last_seq(), now)
    }

    fn reinitialize(&mut self, now: DateTime<Utc>) -> Result<(), SessionError> {
        let seq = self.last_seq() + 1;
        let pairs: Vec<(&SparseVec, &str)> = self
            .buffer
            .pairs()
            .iter()
            .map(|(doc, label)| {
                let d = self.data.corpus.index_of(doc).expect("buffer holds corpus ids");
                (&self.features[d], label.as_str())
            })
            .collect();
        self.classifier = reinitialize(
            &self.labels,
            &pairs,
            self.layout.width(),
            self.config.classifier,
            self.config.seed.wrapping_add(seq),
        )?;
        self.push(EventKind::ClassifierReinit, None, None, None, now)?;
        Ok(())
    }

    fn trigger_retrain(&mut self, now: DateTime<Utc>) -> Result<(), SessionError> {
        if self.pending.is_some() {
            self.queued = true;
            return Ok(());
        }
        let Some(state) = self.slda.clone() else {
            return Ok(());
        };
        let round = self.retrain_rounds + 1;
        self.retrain_rounds = round;
        let names = self.labels.labels().to_vec();
        let predicted = if self.classifier.is_initialized() {
            Some(self.classifier.predict_all(&self.features)?)
        } else {
            None
        };
        let rows: Vec<Option<&str>> = self
            .data
            .corpus
            .docs()
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                self.buffer.label_of(&doc.id).or_else(|| {
                    predicted
                        .as_ref()
                        .map(|p| self.classifier.labels()[p[d]].as_str())
                })
            })
            .collect();
        let responses = ResponseMatrix::from_labels(&names, &rows)?;
        self.push(EventKind::RetrainScheduled, None, None, Some(round), now)?;
        let job = RetrainJob {
            round,
            state,
            responses,
            seed: self.config.seed.wrapping_add(round),
        };
        self.launch(job, now)
    }

    fn launch(&mut self, job: RetrainJob, now: DateTime<Utc>) -> Result<(), SessionError> {
        match self.mode {
            Mode::Replaying => self.pending = Some(Pending::Deferred(job)),
            Mode::Live(RetrainMode::Synchronous) => {
                let round = job.round;
                let state = job.run()?;
                self.install(round, state, now)?;
            }
            Mode::Live(RetrainMode::Background) => {
                let round = job.round;
                let handle = std::thread::spawn(move || job.run());
                self.pending = Some(Pending::Running { round, handle });
            }
        }
        Ok(())
    }

    /// Swaps in a refreshed model, rebuilds features and restarts the
    /// classifier on them.
    fn install(&mut self, round: u64, state: SldaState, now: DateTime<Utc>) -> Result<(), SessionError> {
        let model = state.to_model(self.data.vocab.terms());
        let (layout, features) = build_features(&self.data, Some(&model));
        self.topics = Some(Arc::new(model));
        self.slda = Some(Arc::new(state));
        self.push(EventKind::RetrainInstalled, None, None, Some(round), now)?;
        self.layout = layout;
        self.features = Arc::new(features);
        self.push(EventKind::FeaturesRebuilt, None, None, Some(round), now)?;
        if self.buffer.distinct_labels() >= 2 {
            self.reinitialize(now)?;
        } else {
            self.classifier = ClassifierState::uninitialized(layout.width(), self.config.classifier);
        }
        if std::mem::take(&mut self.queued) {
            self.trigger_retrain(now)?;
        }
        Ok(())
    }

    /// Rescores documents, records an evaluation when the classifier
    /// changed, and picks the next recommendation.
    fn refresh(&mut self, evaluate: bool, seq: u64, now: DateTime<Utc>) -> Result<(), SessionError> {
        let docs = self.data.corpus.docs();
        if !self.classifier.is_initialized() {
            let candidates: Vec<&str> = docs
                .iter()
                .map(|d| d.id.as_str())
                .filter(|id| !self.labeled.contains(*id) && !self.skipped.contains(*id))
                .collect();
            self.recommended = cold_start_pick(&candidates, &mut self.rng);
        } else {
            let thetas = self.topics.as_ref().map(|m| m.theta.as_slice());
            let mut predictions = Vec::with_capacity(docs.len());
            let mut scores = Vec::new();
            for (d, doc) in docs.iter().enumerate() {
                let p = self.classifier.predict_proba(&self.features[d])?;
                predictions.push(argmax(&p));
                if !self.labeled.contains(&doc.id) {
                    let h = entropy(&p)?;
                    scores.push(PreferenceScore::new(
                        doc.id.as_str(),
                        h,
                        thetas.map(|t| t[d].as_slice()),
                    ));
                }
            }
            if evaluate {
                if let Some(gold) = self.data.gold_majors() {
                    let labeled = self.buffer.len();
                    let report = evaluate_session(&predictions, &gold, labeled as u64)?;
                    self.evaluations.push(Evaluation {
                        seq,
                        wall_time: now,
                        labeled,
                        report,
                    });
                }
            }
            let mode = if self.condition.uses_topics() {
                SelectionMode::Topic
            } else {
                SelectionMode::Baseline
            };
            self.recommended = next_document(mode, &scores, &self.labeled, &self.skipped).ok();
        }
        self.recommendations.push((seq, self.recommended.clone()));
        Ok(())
    }

    /// Metric reports against gold major labels.
    ///
    /// Per-label checkpoints keep the last report at each labeled count.
    /// Per-minute checkpoints report, for each minute boundary since the
    /// start, the last evaluation at or before it. Empty until the
    /// classifier has been fit.
    pub fn metrics_timeline(&self, checkpoints: Checkpoints) -> Result<Vec<MetricsReport>, SessionError> {
        if self.data.gold_majors().is_none() {
            return Err(SessionError::NoGoldLabels);
        }
        let mut out: Vec<MetricsReport> = Vec::new();
        match checkpoints {
            Checkpoints::PerLabel => {
                for e in &self.evaluations {
                    if out.last().is_some_and(|r| r.checkpoint == e.report.checkpoint) {
                        out.pop();
                    }
                    out.push(e.report);
                }
            }
            Checkpoints::PerMinute => {
                let Some(last) = self.events.last() else {
                    return Ok(out);
                };
                let elapsed = (last.wall_time - self.started_at).num_milliseconds().max(0);
                let minutes = (elapsed as u64).div_ceil(60_000).max(1);
                let mut i = 0;
                let mut current: Option<&Evaluation> = None;
                for m in 1..=minutes {
                    let boundary = self.started_at + Duration::minutes(m as i64);
                    while i < self.evaluations.len() && self.evaluations[i].wall_time <= boundary {
                        current = Some(&self.evaluations[i]);
                        i += 1;
                    }
                    if let Some(e) = current {
                        out.push(MetricsReport {
                            checkpoint: m,
                            ..e.report
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let mut skipped: Vec<String> = self.skipped.iter().cloned().collect();
        skipped.sort();
        SessionSnapshot {
            condition: self.condition,
            config: self.config,
            started_at: self.started_at,
            last_seq: self.last_seq(),
            labels: self.labels.labels().to_vec(),
            buffer: self.buffer.pairs().to_vec(),
            skipped,
            classifier: self.classifier.snapshot(),
            topic_source: self.topics.as_ref().map(|m| m.source),
            labels_since_retrain: self.labels_since_retrain,
            retrain_rounds: self.retrain_rounds,
            recommended_doc: self.recommended.clone(),
        }
    }

    /// Writes `events.jsonl`, `snapshot.json` and, for topic conditions,
    /// the starting `topics.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), SessionError> {
        std::fs::create_dir_all(dir)?;
        write_event_log(&dir.join("events.jsonl"), &self.events)?;
        let out = BufWriter::new(File::create(dir.join("snapshot.json"))?);
        serde_json::to_writer_pretty(out, &self.snapshot())?;
        if let Some(model) = &self.base_topics {
            model.save(&dir.join("topics.json"))?;
        }
        Ok(())
    }

    /// Rebuilds a saved session by replaying its log, then checks the
    /// result against the saved snapshot.
    pub fn load(dir: &Path, data: Arc<SessionData>, mode: RetrainMode) -> Result<Self, SessionError> {
        let file = BufReader::new(File::open(dir.join("snapshot.json"))?);
        let snapshot: SessionSnapshot = serde_json::from_reader(file)?;
        let events = read_event_log(&dir.join("events.jsonl"))?;
        let topics_path = dir.join("topics.json");
        let topics = if topics_path.exists() {
            Some(TopicModel::load(&topics_path)?)
        } else {
            None
        };
        let session = Self::replay(
            data,
            topics,
            snapshot.condition,
            snapshot.config,
            snapshot.started_at,
            &events,
        )?;
        if session.last_seq() == snapshot.last_seq && session.classifier.snapshot() != snapshot.classifier {
            return Err(SessionError::ReplayDivergence {
                seq: snapshot.last_seq,
                message: "classifier differs from the saved snapshot".into(),
            });
        }
        session.with_retrain_mode(mode)
    }

    /// Rebuilds a session from its event log.
    ///
    /// Annotator events are re-applied and sLDA refreshes are installed
    /// where the log says they were. Every engine event regenerated along
    /// the way must match the log. The result is left with synchronous
    /// retraining; use [`Session::set_retrain_mode`] to change it.
    pub fn replay(
        data: Arc<SessionData>,
        topics: Option<TopicModel>,
        condition: Condition,
        config: SessionConfig,
        started_at: DateTime<Utc>,
        log: &[AnnotationEvent],
    ) -> Result<Self, SessionError> {
        check_gapless(log)?;
        let mut s = Self::new(data, topics, condition, config, started_at)?;
        s.mode = Mode::Replaying;
        let field = |e: &AnnotationEvent, v: &Option<String>| {
            v.clone().ok_or_else(|| SessionError::ReplayDivergence {
                seq: e.seq,
                message: format!("{:?} event is missing a field", e.kind),
            })
        };
        let mut i = 0;
        while i < log.len() {
            let e = &log[i];
            let start = s.events.len();
            if e.kind.is_user() {
                s.actions += 1;
            }
            match e.kind {
                EventKind::CreateLabel => {
                    let next = log
                        .get(i + 1)
                        .ok_or(SessionError::LogTruncated { seq: e.seq + 1 })?;
                    s.apply_submit(&field(next, &next.doc_id)?, &field(e, &e.label)?, e.wall_time)?;
                }
                EventKind::AssignLabel | EventKind::Relabel => {
                    s.apply_submit(&field(e, &e.doc_id)?, &field(e, &e.label)?, e.wall_time)?;
                }
                EventKind::Skip => s.apply_skip(&field(e, &e.doc_id)?, e.wall_time)?,
                EventKind::RetrainInstalled => {
                    let Some(Pending::Deferred(job)) = s.pending.take() else {
                        return Err(SessionError::ReplayDivergence {
                            seq: e.seq,
                            message: "no refresh was pending".into(),
                        });
                    };
                    let round = job.round;
                    let state = job.run()?;
                    s.install(round, state, e.wall_time)?;
                    s.refresh(true, s.last_seq(), e.wall_time)?;
                }
                kind => {
                    return Err(SessionError::ReplayDivergence {
                        seq: e.seq,
                        message: format!("unexpected {kind:?} event"),
                    })
                }
            }
            for j in start..s.events.len() {
                let generated = &mut s.events[j];
                let logged = log
                    .get(j)
                    .ok_or(SessionError::LogTruncated { seq: generated.seq })?;
                if !generated.same_action(logged) {
                    return Err(SessionError::ReplayDivergence {
                        seq: generated.seq,
                        message: format!("expected {:?}, log has {:?}", generated.kind, logged.kind),
                    });
                }
                generated.wall_time = logged.wall_time;
            }
            i = s.events.len();
        }
        s.mode = Mode::Live(RetrainMode::Synchronous);
        Ok(s)
    }
}

fn build_features(data: &SessionData, topics: Option<&TopicModel>) -> (FeatureLayout, Vec<SparseVec>) {
    let layout = FeatureLayout {
        vocab: data.tfidf.cols,
        topics: topics.map_or(0, |m| m.k),
    };
    let rows = data
        .tfidf
        .rows
        .iter()
        .enumerate()
        .map(|(d, row)| {
            layout
                .build(row, topics.map(|m| m.theta[d].as_slice()))
                .expect("layout matches its own inputs")
        })
        .collect();
    (layout, rows)
}
