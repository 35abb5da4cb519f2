//! JSON-over-HTTP review service.
//!
//! All state lives in one [`Engine`] behind a mutex, so requests touching
//! the same document are serialized and the event log has a single writer.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineError, ErrorKind};
use crate::model::Category;
use crate::store::{DocRecord, ReviewTask, TaskStatus};
use crate::sustain::{comparison, scenario_report, ScenarioParams};

pub const REVIEWER_HEADER: &str = "x-reviewer-id";
const ANONYMOUS: &str = "anonymous";

pub type SharedEngine = Arc<Mutex<Engine>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            code: code.into(),
            message: message.into(),
            status: status.as_u16(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let (status, code) = match e.kind() {
            ErrorKind::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            ErrorKind::Conflict => (StatusCode::CONFLICT, "conflict"),
            ErrorKind::Invalid => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ErrorKind::Internal => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// A document with its review task, if it has one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentView {
    #[serde(flatten)]
    pub record: DocRecord,
    pub review: Option<ReviewTask>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct ConfirmBody {
    pub review_seconds: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    status: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ScenarioQuery {
    scenario: Option<String>,
}

fn lock(state: &SharedEngine) -> MutexGuard<'_, Engine> {
    state
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn reviewer(headers: &HeaderMap) -> String {
    headers
        .get(REVIEWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .unwrap_or(ANONYMOUS)
        .to_string()
}

fn body_json<T: for<'de> Deserialize<'de> + Default>(
    body: &Bytes,
    allow_empty: bool,
) -> Result<T, ApiError> {
    if allow_empty && body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn queue(
    State(state): State<SharedEngine>,
    Query(q): Query<QueueQuery>,
) -> Result<Response, ApiError> {
    let status = match q.status.as_deref() {
        None | Some("") => None,
        Some(s) => Some(s.parse::<TaskStatus>().map_err(ApiError::bad_request)?),
    };
    Ok(Json(lock(&state).store().queue(status)).into_response())
}

async fn document(
    State(state): State<SharedEngine>,
    Path(id): Path<String>,
) -> ApiResult<DocumentView> {
    let engine = lock(&state);
    let record = engine
        .store()
        .doc(&id)
        .cloned()
        .ok_or_else(|| ApiError::from(EngineError::NotFound(id.clone())))?;
    Ok(Json(DocumentView {
        review: engine.store().task(&id),
        record,
    }))
}

async fn correct(
    State(state): State<SharedEngine>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    #[derive(Deserialize, Default)]
    struct Raw {
        field: Option<String>,
        value: Option<serde_json::Value>,
    }
    let raw: Raw = body_json(&body, false)?;
    let field = raw
        .field
        .ok_or_else(|| ApiError::bad_request("missing field"))?;
    let value = match raw.value {
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Null) | None => return Err(ApiError::bad_request("missing value")),
        Some(other) => other.to_string(),
    };
    let who = reviewer(&headers);
    let correction = lock(&state).correct(&id, &field, &value, &who)?;
    Ok(Json(correction).into_response())
}

async fn confirm(
    State(state): State<SharedEngine>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<ReviewTask> {
    let b: ConfirmBody = body_json(&body, true)?;
    let who = reviewer(&headers);
    Ok(Json(lock(&state).confirm(&id, &who, b.review_seconds)?))
}

async fn stats(State(state): State<SharedEngine>) -> Response {
    Json(lock(&state).stats()).into_response()
}

async fn prompt_versions(
    State(state): State<SharedEngine>,
    Path(category): Path<String>,
) -> Result<Response, ApiError> {
    let category: Category = category
        .parse()
        .map_err(|e: crate::model::ModelError| ApiError::bad_request(e.to_string()))?;
    Ok(Json(lock(&state).store().prompts.versions(&category)).into_response())
}

async fn sustainability(Query(q): Query<ScenarioQuery>) -> Result<Response, ApiError> {
    match q.scenario.as_deref() {
        None | Some("") => {
            let c = comparison().map_err(|e| ApiError::bad_request(e.to_string()))?;
            Ok(Json(c).into_response())
        }
        Some(name) => {
            let params =
                ScenarioParams::named(name).map_err(|e| ApiError::bad_request(e.to_string()))?;
            let report =
                scenario_report(&params).map_err(|e| ApiError::bad_request(e.to_string()))?;
            Ok(Json(report).into_response())
        }
    }
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(state: SharedEngine) -> Router {
    Router::new()
        .route("/queue", get(queue))
        .route("/documents/{id}", get(document))
        .route("/documents/{id}/corrections", post(correct))
        .route("/documents/{id}/confirm", post(confirm))
        .route("/stats", get(stats))
        .route("/prompts/{category}/versions", get(prompt_versions))
        .route("/sustainability/report", get(sustainability))
        .fallback(not_found)
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(engine: Engine, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(Mutex::new(engine)))).await
}
