//! HTTP review service: live CAL sessions driven by human judgments.
//!
//! | route                           | answer                                        |
//! |---------------------------------|-----------------------------------------------|
//! | `POST /sessions`                | 201 + handle; 404 unknown topic; 400 + field  |
//! | `GET /sessions`                 | all handles                                   |
//! | `GET /sessions/{id}`            | one handle                                    |
//! | `GET /sessions/{id}/next`       | offered document; 204 when exhausted          |
//! | `POST /sessions/{id}/judgments` | ack; 409 for a stale document                 |
//! | `GET /sessions/{id}/metrics`    | metrics report plus gain curve                |
//! | `GET /sessions/{id}/export`     | the run log as TSV                            |
//! | `DELETE /sessions/{id}`         | closes the session                            |
//! | `GET /healthz`                  | 200 once the manifest data is loaded, else 503|
//! | `/ui/*`                         | static files from `UI_DIR`                    |
//!
//! Each session lives in `DATA_DIR/sessions/{id}/`: `journal.tsv` gets one
//! run-log line per judgment, synced before the judgment is acknowledged, and
//! `snapshot.json` is rewritten atomically now and then. Resuming restores the
//! snapshot and replays the journal lines past it, which reproduces the model
//! exactly because training is deterministic given the judgment sequence.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next as Middleware};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use tower_http::services::ServeDir;

use crate::engine::{EngineError, Next, Session, SessionConfig, SessionSnapshot, StopAfter};
use crate::eval::{MetricsReport, DEFAULT_CUTOFFS};
use crate::ingest::Judgment;
use crate::manifest::{LoadedData, ManifestError, Overrides, RunManifest};
use crate::runlog::{RunLog, RunLogEntry};

/// Judgments between two snapshots; the journal covers the gap.
pub const DEFAULT_SNAPSHOT_EVERY: usize = 25;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: String,
    pub data_dir: PathBuf,
    /// Required as `Authorization: Bearer <token>` on `/sessions` routes when set.
    pub auth_token: Option<String>,
    pub ui_dir: Option<PathBuf>,
    pub snapshot_every: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            data_dir: data_dir.into(),
            auth_token: None,
            ui_dir: None,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }

    /// Reads `BIND_ADDR`, `DATA_DIR`, `AUTH_TOKEN`, `UI_DIR` and `SNAPSHOT_EVERY`.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let mut config = ServiceConfig::new(var("DATA_DIR").unwrap_or_else(|| "hirecall-data".into()));
        if let Some(bind) = var("BIND_ADDR") {
            config.bind = bind;
        }
        config.auth_token = var("AUTH_TOKEN");
        config.ui_dir = var("UI_DIR").map(PathBuf::from);
        if let Some(n) = var("SNAPSHOT_EVERY").and_then(|v| v.parse().ok()).filter(|n| *n > 0) {
            config.snapshot_every = n;
        }
        config
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Active,
    Exhausted,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub session_id: String,
    pub topic_id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub state: SessionState,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    handle: SessionHandle,
    snapshot: SessionSnapshot,
}

struct Live {
    session: Session,
    since_snapshot: usize,
}

struct SessionSlot {
    dir: PathBuf,
    handle: Mutex<SessionHandle>,
    /// Judge, retrain and next are serialized here.
    live: Mutex<Live>,
    /// Copy of the log for reads that must not wait on retraining.
    view: RwLock<RunLog>,
}

impl SessionSlot {
    fn handle(&self) -> SessionHandle {
        self.handle.lock().unwrap().clone()
    }

    fn set_state(&self, state: SessionState) {
        self.handle.lock().unwrap().state = state;
    }

    fn journal_path(&self) -> PathBuf {
        self.dir.join("journal.tsv")
    }

    fn write_snapshot(&self, live: &mut Live) -> Result<(), ServiceError> {
        let persisted = Persisted {
            handle: self.handle(),
            snapshot: live.session.snapshot(),
        };
        let path = self.dir.join("snapshot.json");
        let tmp = self.dir.join("snapshot.json.tmp");
        let bytes = serde_json::to_vec(&persisted).expect("snapshots serialize");
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        live.since_snapshot = 0;
        Ok(())
    }

    fn append_journal(&self, entry: &RunLogEntry) -> Result<(), ServiceError> {
        let path = self.journal_path();
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        writeln!(f, "{}", RunLog::format_entry(entry)).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }
}

enum Phase {
    Loading,
    Ready(Arc<LoadedData>),
    Failed(String),
}

struct Shared {
    manifest: RunManifest,
    config: ServiceConfig,
    phase: RwLock<Phase>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl AppState {
    /// State that answers 503 until [`AppState::load`] finishes.
    pub fn new(manifest: RunManifest, config: ServiceConfig) -> Self {
        AppState(Arc::new(Shared {
            manifest,
            config,
            phase: RwLock::new(Phase::Loading),
            sessions: RwLock::new(HashMap::new()),
        }))
    }

    /// Loads the manifest data and resumes persisted sessions. Blocking.
    pub fn load(&self) -> Result<(), ServiceError> {
        match self.0.manifest.load_data() {
            Ok(data) => self.install(data),
            Err(e) => {
                *self.0.phase.write().unwrap() = Phase::Failed(e.to_string());
                Err(e.into())
            }
        }
    }

    /// Like [`AppState::load`] with data the caller already holds.
    pub fn install(&self, data: LoadedData) -> Result<(), ServiceError> {
        let data = Arc::new(data);
        let root = self.sessions_root();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
            .map_err(io_err(&root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("snapshot.json").is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            match resume(&dir, &data) {
                Ok(slot) => {
                    let id = slot.handle().session_id;
                    self.0.sessions.write().unwrap().insert(id, Arc::new(slot));
                }
                Err(e) => eprintln!("warning: session {} not resumed: {e}", dir.display()),
            }
        }
        *self.0.phase.write().unwrap() = Phase::Ready(data);
        Ok(())
    }

    fn sessions_root(&self) -> PathBuf {
        self.0.config.data_dir.join("sessions")
    }

    fn data(&self) -> Result<Arc<LoadedData>, ApiError> {
        match &*self.0.phase.read().unwrap() {
            Phase::Ready(data) => Ok(data.clone()),
            Phase::Loading => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "manifest data is still loading")),
            Phase::Failed(e) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("manifest data failed to load: {e}"))),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.0
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id:?}")))
    }

    pub fn handles(&self) -> Vec<SessionHandle> {
        let mut hs: Vec<SessionHandle> = self.0.sessions.read().unwrap().values().map(|s| s.handle()).collect();
        hs.sort_by(|a, b| (a.created_at, &a.session_id).cmp(&(b.created_at, &b.session_id)));
        hs
    }

    /// Snapshots every session; called on graceful shutdown.
    pub fn persist_all(&self) -> Result<(), ServiceError> {
        let slots: Vec<Arc<SessionSlot>> = self.0.sessions.read().unwrap().values().cloned().collect();
        for slot in slots {
            let mut live = slot.live.lock().unwrap();
            slot.write_snapshot(&mut live)?;
        }
        Ok(())
    }
}

/// Rebuilds a session from its snapshot plus the journal tail.
fn resume(dir: &Path, data: &LoadedData) -> Result<SessionSlot, ServiceError> {
    let snap_path = dir.join("snapshot.json");
    let bytes = fs::read(&snap_path).map_err(io_err(&snap_path))?;
    let persisted: Persisted = serde_json::from_slice(&bytes).map_err(|e| ServiceError::Corrupt {
        path: snap_path.clone(),
        message: e.to_string(),
    })?;
    let mut session = Session::restore(persisted.snapshot, data.index.clone(), data.embeddings.clone(), None)?;
    let journal = dir.join("journal.tsv");
    for entry in read_journal(&journal)? {
        if entry.iteration <= session.log().len() {
            continue;
        }
        let corrupt = |message: String| ServiceError::Corrupt {
            path: journal.clone(),
            message,
        };
        if entry.iteration != session.log().len() + 1 {
            return Err(corrupt(format!("journal skips to iteration {}", entry.iteration)));
        }
        session.next_candidates()?;
        session.record_judgment_deferred(&entry.doc_id, entry.judgment)?;
        let replayed = session.log().entries().last().expect("just recorded");
        if replayed.first_stage_score.to_bits() != entry.first_stage_score.to_bits() {
            return Err(corrupt(format!(
                "replay diverged at iteration {}: score {} vs journaled {}",
                entry.iteration, replayed.first_stage_score, entry.first_stage_score
            )));
        }
    }
    let view = RwLock::new(session.log().clone());
    let slot = SessionSlot {
        dir: dir.to_path_buf(),
        handle: Mutex::new(persisted.handle),
        live: Mutex::new(Live {
            session,
            since_snapshot: 0,
        }),
        view,
    };
    slot.write_snapshot(&mut slot.live.lock().unwrap())?;
    Ok(slot)
}

/// Parses the journal, dropping (and truncating away) a torn final line left
/// by a crash mid-write; such a judgment was never acknowledged.
fn read_journal(path: &Path) -> Result<Vec<RunLogEntry>, ServiceError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let name = path.display().to_string();
    let mut entries = Vec::new();
    let mut valid = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if !line.ends_with('\n') {
            break;
        }
        entries.push(RunLog::parse_entry(line.trim_end(), &name, i + 1).map_err(|e| ServiceError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?);
        valid += line.len();
    }
    if valid < text.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(valid as u64).map_err(io_err(path))?;
        f.sync_all().map_err(io_err(path))?;
    }
    Ok(entries)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": message.into(), "field": field }),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError::internal(e)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::InvalidConfig { field, message } => ApiError::field(field, message),
            EngineError::MissingEmbeddings(_) | EngineError::MissingQueryEmbedding { .. } => ApiError::field("fusion", e.to_string()),
            EngineError::NotOffered(_) | EngineError::AlreadyJudged(_) => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            other => ApiError::internal(other),
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

/// Keys a create request may override, on top of the manifest's session settings.
const OVERRIDABLE: [&str; 10] = [
    "fusion",
    "negatives",
    "negatives_count",
    "retrain_every",
    "batch_size",
    "stop_after",
    "seed",
    "cold_start",
    "dense_scale",
    "k",
];

fn session_config(manifest: &RunManifest, overrides: &Map<String, Value>) -> Result<SessionConfig, ApiError> {
    let mut base = manifest.session_config(&Overrides::default());
    if let Some(k) = overrides.get("k") {
        let k = k.as_u64().ok_or_else(|| ApiError::field("k", "expected a positive integer"))?;
        let policy = base
            .rerank
            .as_mut()
            .ok_or_else(|| ApiError::field("k", "the manifest configures no reranker"))?;
        policy.k = k as usize;
    }
    let mut value = serde_json::to_value(&base).expect("configs serialize");
    let obj = value.as_object_mut().expect("configs are objects");
    let mut keys: Vec<&String> = overrides.keys().collect();
    keys.sort();
    for key in keys {
        if !OVERRIDABLE.contains(&key.as_str()) {
            return Err(ApiError::field(key, format!("unknown override {key:?}")));
        }
        if key == "k" {
            continue;
        }
        obj.insert(key.clone(), overrides[key].clone());
        serde_json::from_value::<SessionConfig>(Value::Object(obj.clone()))
            .map_err(|e| ApiError::field(key, format!("bad value: {e}")))?;
    }
    let config: SessionConfig = serde_json::from_value(value).expect("checked key by key");
    config.validate()?;
    Ok(config)
}

fn parse_judgment(v: &Value) -> Option<Judgment> {
    match v {
        Value::Bool(b) => Some(Judgment::from_relevant(*b)),
        Value::Number(n) => match n.as_u64() {
            Some(1) => Some(Judgment::Relevant),
            Some(0) => Some(Judgment::Nonrelevant),
            _ => None,
        },
        Value::String(s) => match s.as_str() {
            "relevant" => Some(Judgment::Relevant),
            "nonrelevant" | "not_relevant" | "non_relevant" => Some(Judgment::Nonrelevant),
            _ => None,
        },
        _ => None,
    }
}

fn body_object(body: Value) -> Result<Map<String, Value>, ApiError> {
    match body {
        Value::Object(m) => Ok(m),
        _ => Err(ApiError::new(StatusCode::BAD_REQUEST, "expected a JSON object")),
    }
}

async fn create_session(State(state): State<AppState>, Json(body): Json<Value>) -> Result<Response, ApiError> {
    let body = body_object(body)?;
    for key in body.keys() {
        if key != "topic_id" && key != "overrides" {
            return Err(ApiError::field(key, format!("unknown field {key:?}")));
        }
    }
    let topic_id = body
        .get("topic_id")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::field("topic_id", "a topic id string is required"))?
        .to_string();
    let overrides = match body.get("overrides") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(ApiError::field("overrides", "expected an object")),
    };
    let data = state.data()?;
    let topic = data
        .topic(&topic_id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown topic {topic_id:?}")))?;
    let mut config = session_config(&state.0.manifest, &overrides)?;
    if let Some(StopAfter::Rule(rule)) = config.stop_after {
        let qrels = data
            .qrels
            .as_ref()
            .filter(|q| q.has_topic(&topic_id))
            .ok_or_else(|| ApiError::field("stop_after", "a 4r+1000 budget needs qrels for the topic"))?;
        config.stop_after = Some(StopAfter::Count(StopAfter::Rule(rule).resolve(qrels.r_t(&topic_id))));
    }

    let handle = blocking(move || {
        let session = Session::new(topic, data.index.clone(), data.embeddings.clone(), config)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = state.sessions_root().join(&id);
        fs::create_dir_all(&dir).map_err(|e| ApiError::internal(io_err(&dir)(e)))?;
        let handle = SessionHandle {
            session_id: id.clone(),
            topic_id,
            created_at: now_secs(),
            state: SessionState::Active,
        };
        let slot = SessionSlot {
            dir,
            handle: Mutex::new(handle.clone()),
            live: Mutex::new(Live {
                session,
                since_snapshot: 0,
            }),
            view: RwLock::new(RunLog::new()),
        };
        File::create(slot.journal_path()).map_err(|e| ApiError::internal(io_err(&slot.journal_path())(e)))?;
        slot.write_snapshot(&mut slot.live.lock().unwrap())?;
        state.0.sessions.write().unwrap().insert(id, Arc::new(slot));
        Ok(handle)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(handle)).into_response())
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionHandle>> {
    Json(state.handles())
}

async fn get_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionHandle>, ApiError> {
    Ok(Json(state.slot(&id)?.handle()))
}

fn closed_error() -> ApiError {
    ApiError::new(StatusCode::CONFLICT, "session is closed")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextDocument {
    pub session_id: String,
    pub doc_id: String,
    pub text: String,
    /// Final (post-rerank) score.
    pub score: f64,
    pub first_stage_score: f64,
    /// The iteration this document would be judged in, starting at 1.
    pub iteration: usize,
}

async fn next_document(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    blocking(move || {
        let mut live = slot.live.lock().unwrap();
        if slot.handle().state == SessionState::Closed {
            return Err(closed_error());
        }
        match live.session.next_candidates()? {
            Next::Exhausted => {
                if slot.handle().state != SessionState::Exhausted {
                    slot.set_state(SessionState::Exhausted);
                    slot.write_snapshot(&mut live)?;
                }
                let mut resp = StatusCode::NO_CONTENT.into_response();
                resp.headers_mut().insert("x-session-state", HeaderValue::from_static("exhausted"));
                Ok(resp)
            }
            Next::Batch(batch) => {
                let c = &batch[0];
                let corpus = live.session.index().corpus();
                let text = corpus.doc(corpus.index_of(&c.doc_id).expect("candidates come from the corpus")).text.clone();
                Ok(Json(NextDocument {
                    session_id: id,
                    doc_id: c.doc_id.clone(),
                    text,
                    score: c.final_score,
                    first_stage_score: c.first_stage_score,
                    iteration: live.session.iteration() + 1,
                })
                .into_response())
            }
        }
    })
    .await
}

async fn judge(State(state): State<AppState>, UrlPath(id): UrlPath<String>, Json(body): Json<Value>) -> Result<Response, ApiError> {
    let body = body_object(body)?;
    let doc_id = body
        .get("doc_id")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::field("doc_id", "a document id string is required"))?
        .to_string();
    let judgment = body
        .get("judgment")
        .and_then(parse_judgment)
        .ok_or_else(|| ApiError::field("judgment", "expected \"relevant\" or \"nonrelevant\""))?;
    let slot = state.slot(&id)?;
    let snapshot_every = state.0.config.snapshot_every;
    blocking(move || {
        let mut live = slot.live.lock().unwrap();
        if slot.handle().state == SessionState::Closed {
            return Err(closed_error());
        }
        live.session.check_offered(&doc_id)?;
        let offered = live
            .session
            .pending()
            .iter()
            .find(|c| c.doc_id == doc_id)
            .expect("checked above");
        let entry = RunLogEntry {
            iteration: live.session.iteration() + 1,
            doc_id: doc_id.clone(),
            first_stage_score: offered.first_stage_score,
            final_score: offered.final_score,
            judgment,
        };
        // Write-ahead: the judgment is durable before it is applied or acknowledged.
        slot.append_journal(&entry)?;
        live.session.record_judgment_deferred(&doc_id, judgment)?;
        slot.view.write().unwrap().push(entry).map_err(ApiError::internal)?;
        live.since_snapshot += 1;
        if live.since_snapshot >= snapshot_every {
            slot.write_snapshot(&mut live)?;
        }
        Ok(Json(json!({ "accepted": true, "next_iteration": live.session.iteration() + 1 })).into_response())
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: String,
    #[serde(flatten)]
    pub report: MetricsReport,
    /// False when the topic has no qrels; `r_t` then equals `relevant_found`.
    pub r_t_known: bool,
    /// `(documents reviewed, relevant found)` after each judgment.
    pub relevant_found_curve: Vec<(usize, usize)>,
}

fn cutoffs(manifest: &RunManifest) -> Vec<usize> {
    if manifest.eval.cutoffs.is_empty() {
        DEFAULT_CUTOFFS.to_vec()
    } else {
        manifest.eval.cutoffs.clone()
    }
}

async fn metrics(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionMetrics>, ApiError> {
    let slot = state.slot(&id)?;
    let data = state.data()?;
    let topic_id = slot.handle().topic_id;
    let log = slot.view.read().unwrap().clone();
    let known = data.qrels.as_ref().filter(|q| q.has_topic(&topic_id));
    let found = log.relevant_flags().filter(|r| *r).count();
    let r_t = known.map_or(found, |q| q.r_t(&topic_id));
    let mut running = 0;
    let curve = log
        .relevant_flags()
        .enumerate()
        .map(|(i, r)| {
            running += usize::from(r);
            (i + 1, running)
        })
        .collect();
    Ok(Json(SessionMetrics {
        session_id: id,
        report: MetricsReport::compute(&topic_id, &log, r_t, &cutoffs(&state.0.manifest)),
        r_t_known: known.is_some(),
        relevant_found_curve: curve,
    }))
}

async fn export(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let tsv = slot.view.read().unwrap().to_tsv();
    let disposition = format!("attachment; filename=\"{}-{id}.runlog.tsv\"", slot.handle().topic_id.replace('"', ""));
    let mut resp = tsv.into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("text/tab-separated-values; charset=utf-8"));
    if let Ok(v) = HeaderValue::from_str(&disposition) {
        headers.insert(header::CONTENT_DISPOSITION, v);
    }
    Ok(resp)
}

async fn close_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionHandle>, ApiError> {
    let slot = state.slot(&id)?;
    blocking(move || {
        let mut live = slot.live.lock().unwrap();
        slot.set_state(SessionState::Closed);
        slot.write_snapshot(&mut live)?;
        Ok(Json(slot.handle()))
    })
    .await
}

async fn health(State(state): State<AppState>) -> Response {
    match &*state.0.phase.read().unwrap() {
        Phase::Ready(_) => Json(json!({ "status": "ok", "sessions": state.0.sessions.read().unwrap().len() })).into_response(),
        Phase::Loading => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
        Phase::Failed(e) => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "failed", "error": e }))).into_response(),
    }
}

async fn require_token(State(state): State<AppState>, req: Request, next: Middleware) -> Response {
    if let Some(token) = &state.0.config.auth_token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    let sessions = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(close_session))
        .route("/sessions/{id}/next", get(next_document))
        .route("/sessions/{id}/judgments", post(judge))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/export", get(export))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let mut app = Router::new().route("/healthz", get(health)).merge(sessions);
    if let Some(dir) = &state.0.config.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.with_state(state)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Binds, announces `listening on <addr>` on stdout, loads the data in the
/// background and serves until SIGINT/SIGTERM, then snapshots every session.
pub async fn serve(manifest: RunManifest, config: ServiceConfig) -> Result<(), ServiceError> {
    let addr = config.bind.clone();
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind { addr: addr.clone(), source })?;
    let local = listener.local_addr().map_err(|source| ServiceError::Bind { addr, source })?;
    println!("listening on {local}");
    let _ = io::stdout().flush();

    let state = AppState::new(manifest, config);
    let loader = state.clone();
    tokio::task::spawn_blocking(move || match loader.load() {
        Ok(()) => eprintln!("data loaded; {} session(s) resumed", loader.handles().len()),
        Err(e) => eprintln!("error[service]: {e}"),
    });
    let app = router(state.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|source| ServiceError::Io {
            path: PathBuf::from("<listener>"),
            source,
        })?;
    tokio::task::spawn_blocking(move || state.persist_all())
        .await
        .map_err(|e| ServiceError::Io {
            path: PathBuf::from("<shutdown>"),
            source: io::Error::other(e),
        })?
}

pub fn serve_blocking(manifest: RunManifest, config: ServiceConfig) -> Result<(), ServiceError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| ServiceError::Io {
            path: PathBuf::from("<runtime>"),
            source,
        })?;
    rt.block_on(serve(manifest, config))
}
