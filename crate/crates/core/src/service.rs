//! HTTP front door. Handlers are thin: decode JSON, run engine work on the
//! blocking pool, encode the result or an error body.
//!
//! Every response carries `x-request-id` (echoed from the request when the
//! client sent one). Error bodies are `{"error": {code, message, stage?},
//! "request_id"}`.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Query, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, EngineConfig};
use crate::eval::{self, aggregate, apply_ratings, render_table, BankQuestion, EvalRecord};
use crate::pipeline::{Engine, PipelineError, Session};
use crate::tmk::{validate, ElementKind, ValidationReport};
use crate::trace::{derive_trace, explain_trace_with, to_outline, Selectors, TraceError, DEFAULT_STEP_BOUND};

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone)]
pub struct RequestId(pub String);

/// Shared service state: one immutable engine, per-session locks and the
/// latest evaluation run.
pub struct AppState {
    engine: Arc<Engine>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    last_eval: Mutex<Option<Vec<EvalRecord>>>,
}

impl AppState {
    pub fn new(engine: Engine) -> Arc<Self> {
        Arc::new(Self { engine: Arc::new(engine), sessions: Mutex::new(HashMap::new()), last_eval: Mutex::new(None) })
    }

    fn session(&self, id: &str) -> Arc<Mutex<Session>> {
        let mut sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        sessions
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(Session::with_bound(id, self.engine.settings().session_bound))))
            .clone()
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("model failed validation:\n{0}")]
    InvalidModel(ValidationReport),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::InvalidModel(_) => "INVALID_MODEL",
            ServiceError::PortInUse(_) => "PORT_IN_USE",
            ServiceError::Config(e) => e.code(),
            ServiceError::Io(_) => "IO_ERROR",
        }
    }
}

/// Error response body.
struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    stage: Option<String>,
    request_id: String,
}

impl ApiError {
    fn new(rid: &RequestId, status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.into(), message: message.into(), stage: None, request_id: rid.0.clone() }
    }

    fn pipeline(rid: &RequestId, e: &PipelineError) -> Self {
        let mut err = Self::new(rid, status_for(e.code()), e.code(), e.to_string());
        err.stage = Some(e.stage().to_string());
        err
    }

    fn trace(rid: &RequestId, e: &TraceError) -> Self {
        let status = match e {
            TraceError::UnknownTask(_) => StatusCode::NOT_FOUND,
            _ => status_for(e.code()),
        };
        Self::new(rid, status, e.code(), e.to_string())
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "PROVIDER_UNAVAILABLE" | "PROVIDER_ERROR" | "MALFORMED_RESPONSE" | "EMBEDDER_UNAVAILABLE" => StatusCode::BAD_GATEWAY,
        "TEMPLATE_ERROR" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(stage) = self.stage {
            error["stage"] = Value::String(stage);
        }
        tracing::warn!(request_id = %self.request_id, code = %self.code, "request failed");
        (self.status, Json(json!({ "error": error, "request_id": self.request_id }))).into_response()
    }
}

async fn request_id(mut req: Request, next: Next) -> Response {
    let id = req
        .headers()
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|v| !v.is_empty() && v.len() <= 128)
        .map(str::to_string)
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    req.extensions_mut().insert(RequestId(id.clone()));
    let mut resp = next.run(req).await;
    tracing::info!(request_id = %id, %method, %path, status = resp.status().as_u16(), "handled");
    if let Ok(v) = HeaderValue::from_str(&id) {
        resp.headers_mut().insert(REQUEST_ID_HEADER, v);
    }
    resp
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/model", get(model_summary))
        .route("/ask", post(ask))
        .route("/trace", post(trace))
        .route("/eval/run", post(eval_run))
        .route("/eval/report", get(eval_report))
        .layer(middleware::from_fn(request_id))
        .with_state(state)
}

fn summary(engine: &Engine) -> Value {
    let model = engine.model();
    let counts: BTreeMap<&str, usize> = ElementKind::ALL.iter().map(|k| (k.as_str(), model.count(*k))).collect();
    json!({
        "agent_name": model.agent_name,
        "version": model.version,
        "counts": counts,
        "top_level_task": model.top_level_task().map(|t| json!({ "id": t.id, "name": t.name })),
    })
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "model": summary(&state.engine) }))
}

async fn model_summary(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(summary(&state.engine))
}

async fn blocking<T: Send + 'static>(
    rid: &RequestId,
    f: impl FnOnce() -> T + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(rid, StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
}

async fn ask(
    State(state): State<Arc<AppState>>,
    Extension(rid): Extension<RequestId>,
    Json(body): Json<AskRequest>,
) -> Result<Response, ApiError> {
    if body.k == Some(0) {
        return Err(ApiError::new(&rid, StatusCode::BAD_REQUEST, "INVALID_INPUT", "k must be at least 1"));
    }
    let engine = state.engine.clone();
    let session = body.session_id.as_deref().map(|id| state.session(id));
    let result = blocking(&rid, move || match session {
        // Holding the session lock for the whole exchange serializes
        // questions within one conversation.
        Some(s) => {
            let mut guard = s.lock().unwrap_or_else(|e| e.into_inner());
            engine.ask(&body.question, &mut guard, body.k)
        }
        None => engine.ask(&body.question, &mut Session::ephemeral(), body.k),
    })
    .await?;
    match result {
        Ok(r) => Ok(Json(r).into_response()),
        Err(e) => Err(ApiError::pipeline(&rid, &e)),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRequest {
    pub task_id: String,
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    #[serde(default)]
    pub selectors: Selectors,
    #[serde(default)]
    pub step_bound: Option<usize>,
    /// When present, the trace is also explained.
    #[serde(default)]
    pub question: Option<String>,
}

#[derive(Debug, Serialize)]
struct TraceResponse {
    trace: crate::trace::DerivationalTrace,
    outline: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
}

async fn trace(
    State(state): State<Arc<AppState>>,
    Extension(rid): Extension<RequestId>,
    Json(body): Json<TraceRequest>,
) -> Result<Response, ApiError> {
    let engine = state.engine.clone();
    let result = blocking(&rid, move || -> Result<TraceResponse, TraceError> {
        let model = engine.model();
        let bound = body.step_bound.unwrap_or(DEFAULT_STEP_BOUND);
        let trace = derive_trace(model, &body.task_id, &body.bindings, &body.selectors, bound)?;
        let explanation = match &body.question {
            Some(q) => Some(explain_trace_with(model, &trace, q, engine.provider())?),
            None => None,
        };
        Ok(TraceResponse { outline: to_outline(model, &trace), trace, explanation })
    })
    .await?;
    result.map(|r| Json(r).into_response()).map_err(|e| ApiError::trace(&rid, &e))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRunRequest {
    /// Line-delimited bank; the bundled bank when absent.
    pub bank: Option<String>,
    /// Line-delimited ratings to attach after the run.
    pub ratings: Option<String>,
    /// Attach the bundled published ratings.
    pub bundled_ratings: bool,
}

async fn eval_run(
    State(state): State<Arc<AppState>>,
    Extension(rid): Extension<RequestId>,
    body: Option<Json<EvalRunRequest>>,
) -> Result<Response, ApiError> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let bad = |e: eval::EvalError| ApiError::new(&rid, StatusCode::BAD_REQUEST, e.code(), e.to_string());
    let bank: Vec<BankQuestion> = match &body.bank {
        Some(text) => eval::load_bank(text).map_err(bad)?,
        None => eval::bundled_bank(),
    };
    let ratings = match (&body.ratings, body.bundled_ratings) {
        (Some(text), _) => Some(eval::load_ratings(text).map_err(bad)?),
        (None, true) => Some(eval::load_ratings(crate::fixtures::PUBLISHED_RATINGS_JSONL).map_err(bad)?),
        (None, false) => None,
    };
    let engine = state.engine.clone();
    let mut records = blocking(&rid, move || eval::run_bank(&bank, &engine)).await?;
    if let Some(r) = &ratings {
        apply_ratings(&mut records, r).map_err(bad)?;
    }
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    let report = aggregate(&records).ok();
    let out = json!({ "records": records.len(), "failures": failures, "rated": report.is_some(), "report": report });
    *state.last_eval.lock().unwrap_or_else(|e| e.into_inner()) = Some(records);
    Ok(Json(out).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct ReportQuery {
    #[serde(default)]
    pub format: Option<String>,
}

async fn eval_report(
    State(state): State<Arc<AppState>>,
    Extension(rid): Extension<RequestId>,
    Query(q): Query<ReportQuery>,
) -> Result<Response, ApiError> {
    let guard = state.last_eval.lock().unwrap_or_else(|e| e.into_inner());
    let records = guard
        .as_ref()
        .ok_or_else(|| ApiError::new(&rid, StatusCode::NOT_FOUND, "NO_EVAL_RUN", "no evaluation has run yet"))?;
    let report =
        aggregate(records).map_err(|e| ApiError::new(&rid, StatusCode::CONFLICT, e.code(), e.to_string()))?;
    Ok(match q.format.as_deref() {
        Some("text") => render_table(&report).into_response(),
        _ => Json(json!({ "report": report, "records": records })).into_response(),
    })
}

/// Validates the configured model and builds the engine. Fails with the
/// full validation report when the model is invalid.
pub fn prepare(config: &EngineConfig) -> Result<Engine, ServiceError> {
    let model = config.load_model()?;
    let report = validate(&model);
    if !report.ok {
        return Err(ServiceError::InvalidModel(report));
    }
    Ok(config.build_engine(model)?)
}

pub async fn bind(host: &str, port: u16) -> Result<tokio::net::TcpListener, ServiceError> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("{host}:{port}: {e}")))?;
    tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServiceError::PortInUse(port),
        _ => ServiceError::Io(e),
    })
}

/// Runs until ctrl-c.
pub async fn serve(config: &EngineConfig, host: &str) -> Result<(), ServiceError> {
    let engine = prepare(config)?;
    let listener = bind(host, config.port).await?;
    tracing::info!(addr = %listener.local_addr()?, agent = %engine.model().agent_name, "listening");
    axum::serve(listener, router(AppState::new(engine)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
