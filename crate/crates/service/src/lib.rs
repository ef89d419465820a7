//! HTTP front end for interactive episodes.
//!
//! | method | path | body / result |
//! |---|---|---|
//! | POST | `/sessions` | run config (JSON) → `{"id"}` |
//! | GET | `/sessions/{id}` | phase, agent state, record id |
//! | GET | `/sessions/{id}/events` | server-sent events, one per episode event |
//! | POST | `/sessions/{id}/feedback` | `{"text"}` → parsed preview |
//! | POST | `/sessions/{id}/confirm` | starts executing the preview |
//! | GET | `/episodes` | store index |
//! | GET | `/episodes/{id}` | stored log line |
//!
//! A session runs the first scenario and first method of its config with
//! trial seed 0. Event frames carry `seq`, `type` and `payload`; a client that
//! reconnects with `Last-Event-ID` (or `?after=`) resumes after that frame.

pub mod session;
pub mod store;

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use remove_core::feedback::{FeedbackError, LanguageModel, LlmClient};
use remove_core::gridworld::Grid;
use remove_core::par;
use remove_core::policy::EnsemblePolicy;
use remove_core::runner::{jittered_start, load_scenarios, Episode, FeedbackMode, Method, RunConfig, RunError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use session::{Frame, SessionHandle, SessionStatus, WorkerSetup};
use store::{LogStore, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("no stored episode {0}")]
    NotFound(String),
    #[error("not allowed while {phase}")]
    WrongState { phase: &'static str },
    #[error("scripted sessions do not take operator feedback")]
    ReadOnly,
    #[error(transparent)]
    Feedback(FeedbackError),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    fn code(&self) -> &'static str {
        match self {
            ServiceError::BadConfig(_) => "bad_config",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::WrongState { .. } => "wrong_state",
            ServiceError::ReadOnly => "read_only",
            ServiceError::Feedback(_) => "feedback",
            ServiceError::Storage(_) => "storage_failure",
            ServiceError::Internal(_) => "internal",
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadConfig(_) => StatusCode::BAD_REQUEST,
            ServiceError::UnknownSession(_) | ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::WrongState { .. } | ServiceError::ReadOnly => StatusCode::CONFLICT,
            ServiceError::Feedback(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Storage(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<RunError> for ServiceError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::WrongState { phase } => ServiceError::WrongState { phase },
            RunError::Feedback(f) => ServiceError::Feedback(f),
            RunError::BadConfig(_)
            | RunError::ConfigMismatch(_)
            | RunError::Policy(_)
            | RunError::Scenario(_)
            | RunError::Grid(_)
            | RunError::Changepoint(_)
            | RunError::Io(_) => ServiceError::BadConfig(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

/// Error body: `{"error": code, "message": text, "detail": feedback error}`.
impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let detail = match &self {
            ServiceError::Feedback(f) => serde_json::to_value(f).ok(),
            _ => None,
        };
        let body = json!({ "error": self.code(), "message": self.to_string(), "detail": detail });
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store_dir: PathBuf,
}

pub struct AppState {
    sessions: RwLock<HashMap<String, SessionHandle>>,
    policies: Mutex<HashMap<PathBuf, Arc<EnsemblePolicy>>>,
    store: Arc<Mutex<LogStore>>,
}

impl AppState {
    pub fn new(config: &ServiceConfig) -> Result<Arc<AppState>, ServiceError> {
        Ok(Arc::new(AppState {
            sessions: RwLock::new(HashMap::new()),
            policies: Mutex::new(HashMap::new()),
            store: Arc::new(Mutex::new(LogStore::open(&config.store_dir)?)),
        }))
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ServiceError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    fn policy(&self, path: &Path) -> Result<Arc<EnsemblePolicy>, ServiceError> {
        if let Some(p) = self.policies.lock().unwrap().get(path) {
            return Ok(p.clone());
        }
        let p = Arc::new(
            EnsemblePolicy::load(path).map_err(|e| ServiceError::BadConfig(format!("policy {}: {e}", path.display())))?,
        );
        self.policies.lock().unwrap().insert(path.to_path_buf(), p.clone());
        Ok(p)
    }

    /// Builds the episode and starts its worker; must run inside a runtime.
    pub fn create_session(self: &Arc<Self>, config: RunConfig) -> Result<String, ServiceError> {
        config.validate()?;
        if !matches!(config.feedback, FeedbackMode::Operator | FeedbackMode::Scripted) {
            return Err(ServiceError::BadConfig(
                "sessions take operator or scripted feedback; add an [llm] block for model fallback".into(),
            ));
        }
        let method = config.methods[0];
        if method == Method::PerceivedPlannerBaseline {
            return Err(ServiceError::BadConfig("the planner baseline has no interactive session".into()));
        }
        let path = config.policy.as_deref().ok_or_else(|| ServiceError::BadConfig("no policy file given".into()))?;
        let policy = self.policy(path)?;
        let scenario = load_scenarios(&config.scenarios[..1])?.remove(0);
        let grid = Grid::build(&scenario).map_err(RunError::from)?;
        let seed = par::derive_seed(config.seed, 0);
        let grid = grid.with_endpoints(jittered_start(&grid, seed), grid.goal()).map_err(RunError::from)?;
        let ep = Episode::new(grid, policy, config.episode_config(method), scenario.id(), seed)?;
        let model = config.llm.clone().map(|c| Arc::new(LlmClient::new(c)) as Arc<dyn LanguageModel>);
        let id = format!("{:016x}", rand::random::<u64>());
        let handle = session::spawn(
            ep,
            WorkerSetup {
                id: id.clone(),
                scenario,
                feedback: config.feedback,
                step_delay: Duration::from_millis(config.step_delay_ms),
                template: Arc::new(config.prompt.clone()),
                model,
                store: self.store.clone(),
            },
        );
        self.sessions.write().unwrap().insert(id.clone(), handle);
        Ok(id)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(session_status))
        .route("/sessions/:id/events", get(stream_events))
        .route("/sessions/:id/feedback", post(submit_feedback))
        .route("/sessions/:id/confirm", post(confirm_feedback))
        .route("/episodes", get(list_episodes))
        .route("/episodes/:id", get(fetch_episode))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> Result<(), Box<dyn std::error::Error>> {
    let state = AppState::new(&config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Serialize)]
struct Created {
    id: String,
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<Created>, ServiceError> {
    let config: RunConfig = serde_json::from_slice(&body).map_err(|e| ServiceError::BadConfig(e.to_string()))?;
    Ok(Json(Created { id: app.create_session(config)? }))
}

async fn session_status(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionStatus>, ServiceError> {
    Ok(Json(app.session(&id)?.shared.status()))
}

#[derive(Deserialize)]
struct StreamQuery {
    after: Option<u64>,
}

fn sse_event(f: &Frame) -> Event {
    Event::default()
        .id(f.seq.to_string())
        .event(f.event.type_name())
        .data(serde_json::to_string(f).expect("frame serialises"))
}

async fn stream_events(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<StreamQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let shared = app.session(&id)?.shared;
    let last = headers.get("last-event-id").and_then(|v| v.to_str().ok()?.trim().parse::<u64>().ok()).or(q.after);
    let next = last.map_or(0, |s| s + 1);
    let rx = shared.subscribe();
    let stream = stream::unfold((shared, rx, next, false), |(shared, mut rx, next, done)| async move {
        if done {
            return None;
        }
        loop {
            rx.borrow_and_update();
            let (frames, ended) = shared.frames_from(next);
            if !frames.is_empty() {
                let next = next + frames.len() as u64;
                let events: Vec<_> = frames.iter().map(|f| Ok(sse_event(f))).collect();
                return Some((stream::iter(events), (shared, rx, next, ended)));
            }
            if ended || rx.changed().await.is_err() {
                return None;
            }
        }
    });
    use futures::StreamExt;
    Ok(Sse::new(stream.flatten()).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
struct FeedbackBody {
    text: String,
}

async fn submit_feedback(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<session::Preview>, ServiceError> {
    let session = app.session(&id)?;
    let body: FeedbackBody = serde_json::from_slice(&body)
        .map_err(|e| ServiceError::BadConfig(format!("feedback body must be {{\"text\": ...}}: {e}")))?;
    Ok(Json(session.feedback(body.text).await?))
}

async fn confirm_feedback(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<serde_json::Value>, ServiceError> {
    app.session(&id)?.confirm().await?;
    Ok(Json(json!({ "status": "executing" })))
}

async fn list_episodes(State(app): State<Arc<AppState>>) -> Json<Vec<store::IndexEntry>> {
    Json(app.store.lock().unwrap().entries().to_vec())
}

async fn fetch_episode(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let not_found = || ServiceError::NotFound(id.clone());
    let n: u64 = id.parse().map_err(|_| not_found())?;
    let store = app.store.clone();
    let line = tokio::task::spawn_blocking(move || store.lock().unwrap().fetch(n))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??
        .ok_or_else(not_found)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], line).into_response())
}
