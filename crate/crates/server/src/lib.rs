//! HTTP API over the evaluation engine, plus an optional BM25 retrieval
//! backend under `/retrieval`.

pub mod config;

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kisbench_core::domain::{validate_plan, EvaluationPlan, Violation};
use kisbench_core::evalserver::{Engine, EngineError};
use kisbench_core::retrieval::{to_submission, Index, RetrievalError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::services::{ServeDir, ServeFile};

pub use config::{ConfigError, RetrievalConfig, ServerConfig, CONFIG_ENV};

pub const SESSION_HEADER: &str = "x-session-token";
pub const ADMIN_HEADER: &str = "x-admin-token";
const DEFAULT_K: usize = 20;
const MAX_K: usize = 1000;

pub struct AppState {
    pub engine: Engine,
    pub admin_token: String,
    pub index: Option<Index>,
}

#[derive(Debug)]
pub enum ApiError {
    Engine(EngineError),
    BadRequest(String),
    Forbidden,
    NotFound(String),
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError::Engine(e)
    }
}

fn error_body(status: StatusCode, code: &str, message: String, violations: Option<&[Violation]>) -> Response {
    let mut body = json!({ "error": code, "message": message });
    if let Some(v) = violations {
        body["violations"] = json!(v.iter().map(|v| json!({"path": v.path, "message": v.message})).collect::<Vec<_>>());
    }
    (status, Json(body)).into_response()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use StatusCode as S;
        match self {
            ApiError::BadRequest(m) => error_body(S::BAD_REQUEST, "BadRequest", m, None),
            ApiError::Forbidden => error_body(S::UNAUTHORIZED, "Unauthorized", "admin token required".into(), None),
            ApiError::NotFound(m) => error_body(S::NOT_FOUND, "NotFound", m, None),
            ApiError::Engine(e) => {
                let message = e.to_string();
                match &e {
                    EngineError::Unauthorized => error_body(S::UNAUTHORIZED, "Unauthorized", message, None),
                    EngineError::TaskClosed => error_body(S::CONFLICT, "TaskClosed", message, None),
                    EngineError::DeadlineExceeded => error_body(S::GONE, "DeadlineExceeded", message, None),
                    EngineError::CapacityExceeded => error_body(S::SERVICE_UNAVAILABLE, "CapacityExceeded", message, None),
                    EngineError::NoBackends => error_body(S::SERVICE_UNAVAILABLE, "NoBackends", message, None),
                    EngineError::NotFound(_) => error_body(S::NOT_FOUND, "NotFound", message, None),
                    EngineError::InvalidPlan(v) => error_body(S::BAD_REQUEST, "InvalidPlan", message, Some(v)),
                    EngineError::CorruptLog { .. } | EngineError::Io(_) => {
                        log::error!("{message}");
                        error_body(S::INTERNAL_SERVER_ERROR, "Internal", message, None)
                    }
                }
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid JSON body: {e}")))
}

fn session_token(headers: &HeaderMap) -> ApiResult<&str> {
    headers
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|t| !t.is_empty())
        .ok_or(ApiError::Engine(EngineError::Unauthorized))
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let given = headers
        .get(ADMIN_HEADER)
        .and_then(|v| v.to_str().ok())
        .or_else(|| {
            headers
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
        });
    match given {
        Some(t) if constant_time_eq(t.as_bytes(), state.admin_token.as_bytes()) => Ok(()),
        _ => Err(ApiError::Forbidden),
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SessionRequest {
    participant_id: Option<String>,
    evaluation_id: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SessionQuery {
    participant_id: Option<String>,
    #[serde(rename = "PROLIFIC_PID")]
    prolific_pid: Option<String>,
    evaluation_id: Option<String>,
}

async fn open_session(
    State(st): State<Arc<AppState>>,
    Query(q): Query<SessionQuery>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: SessionRequest = if body.iter().all(u8::is_ascii_whitespace) {
        SessionRequest::default()
    } else {
        parse_json(&body)?
    };
    let pid = req
        .participant_id
        .or(q.participant_id)
        .or(q.prolific_pid)
        .filter(|p| !p.trim().is_empty())
        .ok_or_else(|| ApiError::BadRequest("participantId is required".into()))?;
    let eval = req.evaluation_id.or(q.evaluation_id);
    Ok(Json(st.engine.open_session(&pid, eval.as_deref())?))
}

async fn current_task(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.engine.current_task(session_token(&headers)?)?))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SubmitRequest {
    video_id: String,
    time_ms: i64,
    #[serde(default)]
    query_terms: Option<String>,
}

async fn submit(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<impl IntoResponse> {
    let token = session_token(&headers)?;
    let req: SubmitRequest = parse_json(&body)?;
    if req.video_id.trim().is_empty() {
        return Err(ApiError::BadRequest("videoId must not be empty".into()));
    }
    Ok(Json(st.engine.submit(token, req.video_id.trim(), req.time_ms, req.query_terms)?))
}

async fn list_evaluations(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    require_admin(&st, &headers)?;
    Ok(Json(json!({ "evaluations": st.engine.evaluation_ids() })))
}

async fn create_evaluation(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    require_admin(&st, &headers)?;
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::BadRequest("body is not UTF-8".into()))?;
    let plan = EvaluationPlan::from_json(text).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    validate_plan(&plan).map_err(EngineError::InvalidPlan)?;
    let id = st.engine.create_evaluation(plan)?;
    Ok((StatusCode::CREATED, Json(json!({ "evaluationId": id }))))
}

async fn evaluation_log(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    require_admin(&st, &headers)?;
    let body = st.engine.export_log_jsonl(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn evaluation_report(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    require_admin(&st, &headers)?;
    let report = st.engine.report(&id)?;
    Ok(match q.format.as_deref().unwrap_or("json") {
        "json" => Json(report).into_response(),
        "csv" => ([(header::CONTENT_TYPE, "text/csv")], report.to_csv()).into_response(),
        "markdown" | "md" => ([(header::CONTENT_TYPE, "text/markdown")], report.to_markdown()).into_response(),
        other => return Err(ApiError::BadRequest(format!("unknown report format {other}"))),
    })
}

#[derive(Debug, Deserialize)]
struct SearchRequest {
    query: String,
    #[serde(default)]
    k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SearchHit {
    pub rank: usize,
    pub segment_id: String,
    pub video_id: String,
    pub start_ms: i64,
    pub end_ms: i64,
    pub score: f64,
    pub caption: String,
    /// Time to submit for this hit (segment midpoint).
    pub submit_time_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<SearchHit>,
}

fn index(st: &AppState) -> ApiResult<&Index> {
    st.index
        .as_ref()
        .ok_or_else(|| ApiError::NotFound("retrieval is not enabled on this server".into()))
}

async fn search(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: SearchRequest = parse_json(&body)?;
    let k = req.k.unwrap_or(DEFAULT_K).min(MAX_K);
    let hits = match index(&st)?.query(&req.query, k) {
        Ok(h) => h,
        Err(RetrievalError::EmptyQuery) => Vec::new(),
        Err(e) => return Err(ApiError::BadRequest(e.to_string())),
    };
    let hits = hits
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let (video_id, submit_time_ms) = to_submission(h);
            SearchHit {
                rank: i + 1,
                segment_id: h.segment_id.clone(),
                video_id,
                start_ms: h.doc.segment.start_ms,
                end_ms: h.doc.segment.end_ms,
                score: h.score,
                caption: h.doc.caption.clone(),
                submit_time_ms,
            }
        })
        .collect();
    Ok(Json(SearchResponse { hits }))
}

async fn segment(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let doc = index(&st)?
        .segment(&id)
        .ok_or_else(|| ApiError::NotFound(format!("segment {id}")))?;
    Ok(Json(doc.clone()))
}

async fn health() -> impl IntoResponse {
    Json(json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError::NotFound("no such route".into())
}

pub fn router(state: Arc<AppState>, media_dir: Option<&std::path::Path>, app_dir: Option<&std::path::Path>) -> Router {
    let api = Router::new()
        .route("/session", post(open_session))
        .route("/task/current", get(current_task))
        .route("/submit", post(submit))
        .route("/admin/evaluations", get(list_evaluations).post(create_evaluation))
        .route("/admin/evaluations/{id}/log", get(evaluation_log))
        .route("/admin/evaluations/{id}/report", get(evaluation_report));
    let retrieval = Router::new()
        .route("/search", post(search))
        .route("/segment/{id}", get(segment));
    let mut app = Router::new()
        .nest("/api/v1", api)
        .nest("/retrieval", retrieval)
        .route("/healthz", get(health));
    if let Some(dir) = media_dir {
        app = app.nest_service("/media", ServeDir::new(dir));
    }
    if let Some(dir) = app_dir {
        app = app.nest_service(
            "/app",
            ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html"))),
        );
    }
    app.fallback(not_found).with_state(state)
}

/// Builds engine, index and router from a config. The clock is injected so
/// simulations can drive deadlines.
pub fn build_app(
    cfg: &ServerConfig,
    clock: Arc<dyn kisbench_core::clock::Clock>,
) -> Result<(Arc<AppState>, Router), ConfigError> {
    let state = Arc::new(AppState {
        engine: cfg.build_engine(clock)?,
        admin_token: cfg.admin_token.clone(),
        index: cfg.build_index()?,
    });
    let app = router(Arc::clone(&state), cfg.media_dir.as_deref(), cfg.app_dir.as_deref());
    Ok((state, app))
}

/// Serves `app` until `shutdown` resolves. With a positive `sweep_interval_ms`
/// overdue tasks are closed in the background.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    app: Router,
    sweep_interval_ms: u64,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = (sweep_interval_ms > 0).then(|| {
        let state = Arc::clone(&state);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_millis(sweep_interval_ms));
            loop {
                tick.tick().await;
                if let Err(e) = state.engine.sweep_expired() {
                    log::error!("deadline sweep failed: {e}");
                }
            }
        })
    });
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    if let Some(s) = sweeper {
        s.abort();
    }
    result
}
