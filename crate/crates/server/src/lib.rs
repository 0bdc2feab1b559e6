//! JSON HTTP API over annotation sessions.
//!
//! Each session sits behind its own lock: label and skip requests take it
//! exclusively, views share it. Finished background sLDA refreshes are
//! installed by the next writer or by [`spawn_retrain_poller`].

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use topiclabel::metrics::MetricsReport;
use topiclabel::session::{
    read_event_log, AnnotationEvent, Checkpoints, Condition, DocumentDetail, EventLogWriter, Overview,
    RetrainMode, Session, SessionConfig, SessionData, SessionError, Suggestion,
};
use topiclabel::topic_models::TopicModel;

const META_FILE: &str = "meta.json";
const EVENTS_FILE: &str = "events.jsonl";
const DEFAULT_PAGE: usize = 500;

/// A corpus sessions can be opened on, with the topic model topic
/// conditions use.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub data: Arc<SessionData>,
    pub topics: Option<TopicModel>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("session directory {path}: {message}")]
    Restore { path: PathBuf, message: String },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a session directory records besides its event log.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionMeta {
    corpus_id: String,
    condition: Condition,
    config: SessionConfig,
    started_at: DateTime<Utc>,
}

type Handle = Arc<RwLock<Session>>;

pub struct AppState {
    corpora: HashMap<String, CorpusEntry>,
    sessions: RwLock<HashMap<String, Handle>>,
    log_dir: Option<PathBuf>,
    retrain_mode: RetrainMode,
}

impl AppState {
    /// Sessions live in memory only unless `log_dir` is given, in which
    /// case each gets `<log_dir>/<session_id>/` with its event log.
    pub fn new(corpora: HashMap<String, CorpusEntry>, log_dir: Option<PathBuf>, retrain_mode: RetrainMode) -> Self {
        Self {
            corpora,
            sessions: RwLock::new(HashMap::new()),
            log_dir,
            retrain_mode,
        }
    }

    /// Like [`AppState::new`], then replays every session found under
    /// `log_dir`.
    pub fn restore(
        corpora: HashMap<String, CorpusEntry>,
        log_dir: PathBuf,
        retrain_mode: RetrainMode,
    ) -> Result<Self, ServerError> {
        let state = Self::new(corpora, Some(log_dir.clone()), retrain_mode);
        if !log_dir.exists() {
            return Ok(state);
        }
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&log_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(META_FILE).exists())
            .collect();
        dirs.sort();
        for dir in dirs {
            let id = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let session = state.restore_one(&dir)?;
            log::info!("restored session {id} with {} events", session.events().len());
            state.insert(id, session);
        }
        Ok(state)
    }

    fn restore_one(&self, dir: &Path) -> Result<Session, ServerError> {
        let fail = |message: String| ServerError::Restore {
            path: dir.to_path_buf(),
            message,
        };
        let meta_text = std::fs::read_to_string(dir.join(META_FILE))?;
        let meta: SessionMeta = serde_json::from_str(&meta_text).map_err(|e| fail(e.to_string()))?;
        let entry = self
            .corpora
            .get(&meta.corpus_id)
            .ok_or_else(|| fail(format!("unknown corpus `{}`", meta.corpus_id)))?;
        let events_path = dir.join(EVENTS_FILE);
        let events = if events_path.exists() {
            read_event_log(&events_path)?
        } else {
            Vec::new()
        };
        let mut session = Session::replay(
            Arc::clone(&entry.data),
            entry.topics.clone(),
            meta.condition,
            meta.config,
            meta.started_at,
            &events,
        )?;
        session.attach_log(EventLogWriter::open(&events_path)?);
        session.set_retrain_mode(self.retrain_mode)?;
        Ok(session)
    }

    fn insert(&self, id: String, session: Session) {
        self.sessions
            .write()
            .expect("session table lock")
            .insert(id, Arc::new(RwLock::new(session)));
    }

    fn handle(&self, id: &str) -> Result<Handle, ApiError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session `{id}`")))
    }

    fn handles(&self) -> Vec<(String, Handle)> {
        self.sessions
            .read()
            .expect("session table lock")
            .iter()
            .map(|(k, v)| (k.clone(), Arc::clone(v)))
            .collect()
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.handles().into_iter().map(|(k, _)| k).collect();
        ids.sort();
        ids
    }

    /// Opens a session and returns its id.
    pub fn create_session(
        &self,
        corpus_id: &str,
        condition: Condition,
        config: SessionConfig,
    ) -> Result<String, ApiError> {
        let entry = self
            .corpora
            .get(corpus_id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown corpus `{corpus_id}`")))?;
        let topics = if condition.uses_topics() {
            entry.topics.clone()
        } else {
            None
        };
        let started_at = Utc::now();
        let mut session = Session::new(Arc::clone(&entry.data), topics, condition, config, started_at)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        if let Some(root) = &self.log_dir {
            let dir = root.join(&id);
            std::fs::create_dir_all(&dir).map_err(internal)?;
            let meta = SessionMeta {
                corpus_id: corpus_id.to_string(),
                condition,
                config,
                started_at,
            };
            std::fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta).map_err(internal)?)
                .map_err(internal)?;
            session.attach_log(EventLogWriter::open(&dir.join(EVENTS_FILE)).map_err(internal)?);
        }
        session.set_retrain_mode(self.retrain_mode)?;
        log::info!("session {id}: {condition} on corpus {corpus_id}");
        self.insert(id.clone(), session);
        Ok(id)
    }

    /// Installs finished background refreshes. Sessions busy with a
    /// request are left for the next round.
    pub fn poll_retrains(&self) {
        for (id, handle) in self.handles() {
            let Ok(mut session) = handle.try_write() else {
                continue;
            };
            let before = session.events().len();
            match session.poll_retrain() {
                Ok(true) => log_new_events(&id, &session, before),
                Ok(false) => {}
                Err(e) => log::error!("session {id}: refresh failed: {e}"),
            }
        }
    }
}

fn log_new_events(id: &str, session: &Session, before: usize) {
    for e in &session.events()[before..] {
        log::info!(
            "session {id}: #{} {:?} {}",
            e.seq,
            e.kind,
            e.doc_id.as_deref().unwrap_or("")
        );
    }
}

/// Polls every session for finished refreshes at a fixed interval.
pub fn spawn_retrain_poller(state: Arc<AppState>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(every);
        loop {
            ticker.tick().await;
            let state = Arc::clone(&state);
            if let Err(e) = tokio::task::spawn_blocking(move || state.poll_retrains()).await {
                log::error!("refresh poller: {e}");
            }
        }
    })
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Unprocessable(String),
    Internal(String),
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(e.to_string())
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let msg = e.to_string();
        match e {
            SessionError::UnknownDocument(_) => Self::NotFound(msg),
            SessionError::EmptyLabel
            | SessionError::MissingTopicModel(_)
            | SessionError::MissingAssignments
            | SessionError::TopicModelShape { .. } => Self::BadRequest(msg),
            SessionError::AlreadyLabeled(_) | SessionError::NoUnlabeledDocuments | SessionError::Closed => {
                Self::Conflict(msg)
            }
            SessionError::NoGoldLabels => Self::Unprocessable(msg),
            _ => Self::Internal(msg),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            Self::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            Self::NotFound(m) => (StatusCode::NOT_FOUND, m),
            Self::Conflict(m) => (StatusCode::CONFLICT, m),
            Self::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            Self::Internal(m) => {
                log::error!("{m}");
                (StatusCode::INTERNAL_SERVER_ERROR, m)
            }
        };
        (status, Json(ErrorBody { error })).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub condition: Condition,
    pub corpus_id: String,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRequest {
    pub doc_id: String,
    pub label: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelResponse {
    pub recommended_doc: Option<String>,
    pub suggestions: Vec<Suggestion>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SkipRequest {
    pub doc_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SkipResponse {
    pub recommended_doc: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointParam {
    Label,
    #[default]
    Minute,
}

#[derive(Debug, Default, Deserialize)]
pub struct MetricsQuery {
    #[serde(default)]
    pub by: CheckpointParam,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsTimeline {
    pub by: CheckpointParam,
    pub reports: Vec<MetricsReport>,
}

#[derive(Debug, Default, Deserialize)]
pub struct EventsQuery {
    /// Return events with a larger seq.
    #[serde(default)]
    pub after: u64,
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventPage {
    pub events: Vec<AnnotationEvent>,
    /// Pass as `after` for the next page; absent on the last page.
    pub next_after: Option<u64>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/overview", get(overview))
        .route("/sessions/{id}/documents/{doc_id}", get(document))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/skip", post(skip))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(internal)?
}

fn read<T>(handle: &Handle, f: impl FnOnce(&Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
    let session = handle.read().map_err(|_| ApiError::Internal("session lock poisoned".into()))?;
    f(&session)
}

fn write<T>(id: &str, handle: &Handle, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
    let mut session = handle.write().map_err(|_| ApiError::Internal("session lock poisoned".into()))?;
    let before = session.events().len();
    let out = f(&mut session);
    log_new_events(id, &session, before);
    out
}

async fn healthz() -> &'static str {
    "ok"
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let session_id = blocking(move || state.create_session(&req.corpus_id, req.condition, req.config)).await?;
    Ok((StatusCode::CREATED, Json(Created { session_id })))
}

async fn overview(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Overview>, ApiError> {
    let handle = state.handle(&id)?;
    blocking(move || read(&handle, |s| Ok(s.get_overview()))).await.map(Json)
}

async fn document(
    State(state): State<Arc<AppState>>,
    UrlPath((id, doc_id)): UrlPath<(String, String)>,
) -> Result<Json<DocumentDetail>, ApiError> {
    let handle = state.handle(&id)?;
    blocking(move || read(&handle, |s| Ok(s.get_document_detail(&doc_id)?)))
        .await
        .map(Json)
}

async fn submit_label(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<LabelRequest>,
) -> Result<Json<LabelResponse>, ApiError> {
    let handle = state.handle(&id)?;
    let outcome = blocking(move || write(&id, &handle, |s| Ok(s.submit_label(&req.doc_id, &req.label)?))).await?;
    Ok(Json(LabelResponse {
        recommended_doc: outcome.recommended_doc,
        suggestions: outcome.suggestions,
    }))
}

async fn skip(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SkipRequest>,
) -> Result<Json<SkipResponse>, ApiError> {
    let handle = state.handle(&id)?;
    let outcome = blocking(move || write(&id, &handle, |s| Ok(s.skip_document(&req.doc_id)?))).await?;
    Ok(Json(SkipResponse {
        recommended_doc: outcome.recommended_doc,
    }))
}

async fn metrics(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<MetricsQuery>,
) -> Result<Json<MetricsTimeline>, ApiError> {
    let handle = state.handle(&id)?;
    let checkpoints = match q.by {
        CheckpointParam::Label => Checkpoints::PerLabel,
        CheckpointParam::Minute => Checkpoints::PerMinute,
    };
    let reports = blocking(move || read(&handle, |s| Ok(s.metrics_timeline(checkpoints)?))).await?;
    Ok(Json(MetricsTimeline { by: q.by, reports }))
}

async fn events(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Json<EventPage>, ApiError> {
    let handle = state.handle(&id)?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 {
        return Err(ApiError::BadRequest("limit must be positive".into()));
    }
    read(&handle, |s| {
        let rest: Vec<&AnnotationEvent> = s.events().iter().filter(|e| e.seq > q.after).collect();
        let page: Vec<AnnotationEvent> = rest.iter().take(limit).map(|e| (*e).clone()).collect();
        let next_after = (rest.len() > limit).then(|| page.last().map(|e| e.seq)).flatten();
        Ok(Json(EventPage { events: page, next_after }))
    })
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let poller = spawn_retrain_poller(Arc::clone(&state), Duration::from_millis(500));
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    poller.abort();
    result
}
