//! Local HTTP/JSON API over the core.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | POST | `/traces` | trace document; `?session=ID` replaces that session |
//! | GET | `/sessions/{id}/graph` | |
//! | GET | `/sessions/{id}/timeline` | `?scenario=` name or JSON |
//! | GET | `/scenarios` | |
//! | POST | `/sessions/{id}/simulate` | scenario spec or transform pipeline |
//! | GET | `/sessions/{id}/breakdown` | `?scenario=` name or JSON |
//!
//! Errors are `{"error": Name, "message": ...}` with 404 for unknown
//! sessions, 422 for scenario preconditions the trace does not meet and 400
//! for everything else.

use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kernelsim_core::breakdown::{compute_breakdown, BreakdownReport};
use kernelsim_core::graph::BuildOptions;
use kernelsim_core::scenarios::registry;
use kernelsim_core::sim::SimulationResult;
use kernelsim_core::Workload;
use lru::LruCache;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::commands::{timeline, CliError, GraphStats, Request};

pub const DEFAULT_CAPACITY: usize = 16;
const BODY_LIMIT: usize = 512 << 20;

/// A parsed trace, its graph and its baseline schedule.
pub struct Session {
    pub workload: Workload,
    pub baseline: SimulationResult,
    pub baseline_breakdown: BreakdownReport,
}

impl Session {
    pub fn new(workload: Workload) -> Result<Self, kernelsim_core::Error> {
        let baseline = workload.baseline()?;
        Ok(Session {
            baseline_breakdown: compute_breakdown(&baseline, &workload.graph),
            workload,
            baseline,
        })
    }
}

/// Least-recently-used session map.
pub struct SessionStore {
    sessions: Mutex<LruCache<String, Arc<Session>>>,
    next: AtomicU64,
}

impl SessionStore {
    pub fn new(capacity: usize) -> Self {
        SessionStore {
            sessions: Mutex::new(LruCache::new(NonZeroUsize::new(capacity.max(1)).unwrap())),
            next: AtomicU64::new(1),
        }
    }

    /// Stores `session` under `id`, replacing whatever was there, or under a
    /// fresh id.
    pub fn insert(&self, id: Option<String>, session: Session) -> String {
        let id = id.unwrap_or_else(|| format!("s{}", self.next.fetch_add(1, Ordering::Relaxed)));
        self.sessions.lock().unwrap().put(id.clone(), Arc::new(session));
        id
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loads every `*.json` trace in `dir` as a session named after the file.
    pub fn preload(&self, dir: &Path, options: BuildOptions) -> Result<Vec<String>, CliError> {
        let io = |source| CliError::Io {
            path: dir.to_owned(),
            source,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let mut ids = Vec::new();
        for p in paths {
            let w = crate::commands::load_workload(&p, options.strict)?;
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            self.insert(Some(id.clone()), Session::new(w)?);
            ids.push(id);
        }
        Ok(ids)
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub name: String,
    pub message: String,
}

impl ApiError {
    fn unknown_session(id: &str) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            name: "UnknownSession".into(),
            message: format!("no session {id:?}"),
        }
    }
}

impl From<kernelsim_core::Error> for ApiError {
    fn from(e: kernelsim_core::Error) -> Self {
        let status = if e.is_precondition() {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            StatusCode::BAD_REQUEST
        };
        ApiError {
            status,
            name: e.name().into(),
            message: e.to_string(),
        }
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Core(e) => e.into(),
            e => ApiError {
                status: StatusCode::BAD_REQUEST,
                name: e.name().into(),
                message: e.to_string(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.name, "message": self.message}))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

#[derive(Clone)]
struct AppState {
    store: Arc<SessionStore>,
    options: BuildOptions,
}

impl AppState {
    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.store.get(id).ok_or_else(|| ApiError::unknown_session(id))
    }
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        name: "Internal".into(),
        message: e.to_string(),
    })?
}

#[derive(Deserialize)]
struct UploadQuery {
    session: Option<String>,
}

async fn upload(State(s): State<AppState>, Query(q): Query<UploadQuery>, body: String) -> ApiResult {
    blocking(move || {
        let w = Workload::from_json(&body, s.options)?;
        let stats = GraphStats::of(&w);
        let id = s.store.insert(q.session, Session::new(w)?);
        Ok((StatusCode::CREATED, Json(json!({"session_id": id, "stats": stats}))).into_response())
    })
    .await
}

async fn graph(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let session = s.session(&id)?;
    blocking(move || Ok(Json(session.workload.graph.to_document()).into_response())).await
}

#[derive(Deserialize)]
struct ScenarioQuery {
    scenario: Option<String>,
}

impl ScenarioQuery {
    fn request(&self) -> Result<Option<Request>, ApiError> {
        Ok(match self.scenario.as_deref().filter(|s| !s.trim().is_empty()) {
            Some(text) => Some(Request::parse(text)?),
            None => None,
        })
    }
}

async fn timeline_handler(State(s): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<ScenarioQuery>) -> ApiResult {
    let session = s.session(&id)?;
    let request = q.request()?;
    blocking(move || {
        let doc = timeline(&session.workload, &session.baseline, request.as_ref())?;
        Ok(Json(doc).into_response())
    })
    .await
}

async fn scenarios() -> Json<Value> {
    Json(json!({ "scenarios": registry() }))
}

async fn simulate(State(s): State<AppState>, UrlPath(id): UrlPath<String>, body: String) -> ApiResult {
    let session = s.session(&id)?;
    let value: Value = serde_json::from_str(&body).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        name: "MalformedRequest".into(),
        message: e.to_string(),
    })?;
    let request = Request::from_value(value)?;
    blocking(move || {
        let report = request.run(&session.workload, &session.baseline)?;
        Ok(Json(report).into_response())
    })
    .await
}

async fn breakdown(State(s): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<ScenarioQuery>) -> ApiResult {
    let session = s.session(&id)?;
    let request = q.request()?;
    blocking(move || {
        let report = match request {
            None => session.baseline_breakdown.clone(),
            Some(r) => r.run(&session.workload, &session.baseline)?.breakdown,
        };
        Ok(Json(report).into_response())
    })
    .await
}

fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(o) = origin.to_str() else { return false };
    let host = o.split_once("://").map_or("", |(_, rest)| rest);
    let host = host.rsplit_once(':').map_or(host, |(h, port)| {
        if port.chars().all(|c| c.is_ascii_digit()) {
            h
        } else {
            host
        }
    });
    matches!(host, "localhost" | "127.0.0.1" | "[::1]")
}

pub fn router(store: Arc<SessionStore>, options: BuildOptions) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|o, _| is_local_origin(o)))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/traces", post(upload))
        .route("/scenarios", get(scenarios))
        .route("/sessions/{id}/graph", get(graph))
        .route("/sessions/{id}/timeline", get(timeline_handler))
        .route("/sessions/{id}/simulate", post(simulate))
        .route("/sessions/{id}/breakdown", get(breakdown))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(cors)
        .with_state(AppState { store, options })
}

pub async fn serve(addr: SocketAddr, store: Arc<SessionStore>, options: BuildOptions) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Serve(format!("bind {addr}: {e}")))?;
    log::info!("listening on http://{}", listener.local_addr().map_err(|e| CliError::Serve(e.to_string()))?);
    axum::serve(listener, router(store, options))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Serve(e.to_string()))
}

/// Preloads `trace_dir` (if any) and serves until interrupted.
pub fn cmd_serve(port: u16, trace_dir: Option<&Path>, capacity: usize, options: BuildOptions) -> Result<(), CliError> {
    let store = Arc::new(SessionStore::new(capacity));
    if let Some(dir) = trace_dir {
        let ids = store.preload(dir, options)?;
        log::info!("preloaded sessions {ids:?}");
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Serve(e.to_string()))?;
    runtime.block_on(serve(SocketAddr::from(([127, 0, 0, 1], port)), store, options))
}
