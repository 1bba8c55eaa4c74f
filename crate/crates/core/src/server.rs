//! HTTP API over a [`JobStore`], used by the review interface.
//!
//! | method | path | body / result |
//! |---|---|---|
//! | GET | `/api/jobs` | job summaries |
//! | POST | `/api/jobs` | [`CreateJob`] → job |
//! | GET | `/api/jobs/{id}` | job |
//! | POST | `/api/jobs/{id}/pages/{n}/advance` | new page state |
//! | POST | `/api/jobs/{id}/pages/{n}/retry` | new page state |
//! | GET | `/api/jobs/{id}/pages/{n}` | page view with tile URLs |
//! | PUT | `/api/jobs/{id}/pages/{n}/entries` | full entry array → new page state |
//! | POST | `/api/jobs/{id}/pages/{n}/approve` | new page state |
//! | GET | `/api/jobs/{id}/export?format=csv\|tei` | export file |
//! | GET | `/api/jobs/{id}/report` | corpus report |
//! | GET | `/api/jobs/{id}/tiles/{name}` | tile PNG |
//!
//! Errors are `{"code", "message", "violations"?}` with 404 for unknown
//! ids, 409 for illegal transitions and 422 for invalid input.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::gateway::PriceTable;
use crate::jobs::{ExportFormat, JobConfig, JobError, JobStore, PageState, PageView, Runtime, ScanInput};

pub struct AppState {
    pub store: JobStore,
    pub runtime: Runtime,
    pub prices: Option<PriceTable>,
}

/// Body of `POST /api/jobs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateJob {
    #[serde(default)]
    pub job_id: Option<String>,
    #[serde(default)]
    pub config: JobConfig,
    pub pages: Vec<UploadedPage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UploadedPage {
    pub file_name: String,
    pub data_base64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageStateReply {
    pub page: u32,
    #[serde(flatten)]
    pub state: PageState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageReply {
    #[serde(flatten)]
    pub view: PageView,
    pub tile_urls: Vec<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    violations: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.into(), message: message.into(), violations: None }
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        let status = match &e {
            JobError::UnknownJob(_) | JobError::UnknownPage { .. } | JobError::UnknownTile(_) | JobError::NoReports => {
                StatusCode::NOT_FOUND
            }
            JobError::IllegalTransition { .. }
            | JobError::RetryLimit { .. }
            | JobError::JobExists(_)
            | JobError::NothingToExport => StatusCode::CONFLICT,
            JobError::Validation(_) | JobError::InvalidConfig(_) | JobError::UnreadableScan { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let violations = match &e {
            JobError::Validation(v) => Some(serde_json::to_value(v).expect("violations serialise")),
            _ => None,
        };
        Self { status, code: e.code().into(), message: e.to_string(), violations }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"code": self.code, "message": self.message});
        if let Some(v) = self.violations {
            body["violations"] = v;
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

async fn blocking<T: Send + 'static>(
    state: &Arc<AppState>,
    f: impl FnOnce(&AppState) -> Result<T, JobError> + Send + 'static,
) -> ApiResult<T> {
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn page_number(job: &str, raw: &str) -> ApiResult<u32> {
    raw.parse().map_err(|_| ApiError::from(JobError::UnknownPage { job: job.into(), page: 0 }))
}

async fn list_jobs(State(state): Shared) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&state, |s| s.store.list()).await?))
}

async fn create_job(
    State(state): Shared,
    body: Result<Json<CreateJob>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let mut scans = Vec::with_capacity(req.pages.len());
    for p in req.pages {
        let bytes = base64::engine::general_purpose::STANDARD.decode(p.data_base64.trim()).map_err(|e| {
            ApiError::from(JobError::UnreadableScan { file: p.file_name.clone(), message: e.to_string() })
        })?;
        scans.push(ScanInput { file_name: p.file_name, bytes });
    }
    let job = blocking(&state, move |s| s.store.create_job(req.job_id.as_deref(), scans, req.config)).await?;
    Ok((StatusCode::CREATED, Json(job)))
}

async fn get_job(State(state): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&state, move |s| s.store.load(&id)).await?))
}

async fn advance(State(state): Shared, Path((id, n)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let page = page_number(&id, &n)?;
    let st = blocking(&state, move |s| s.store.advance(&id, page, &s.runtime)).await?;
    Ok(Json(PageStateReply { page, state: st }))
}

async fn retry(State(state): Shared, Path((id, n)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let page = page_number(&id, &n)?;
    let st = blocking(&state, move |s| s.store.retry(&id, page, &s.runtime)).await?;
    Ok(Json(PageStateReply { page, state: st }))
}

async fn get_page(State(state): Shared, Path((id, n)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let page = page_number(&id, &n)?;
    let job = id.clone();
    let view = blocking(&state, move |s| s.store.page_view(&id, page)).await?;
    let tile_urls = view.tiles.iter().map(|t| format!("/api/jobs/{job}/tiles/{t}")).collect();
    Ok(Json(PageReply { view, tile_urls }))
}

async fn put_entries(
    State(state): Shared,
    Path((id, n)): Path<(String, String)>,
    body: Result<Json<Value>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let page = page_number(&id, &n)?;
    let Json(body) = body?;
    let st = blocking(&state, move |s| s.store.save_corrections(&id, page, &body)).await?;
    Ok(Json(PageStateReply { page, state: st }))
}

async fn approve(State(state): Shared, Path((id, n)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let page = page_number(&id, &n)?;
    let st = blocking(&state, move |s| s.store.approve(&id, page)).await?;
    Ok(Json(PageStateReply { page, state: st }))
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(State(state): Shared, Path(id): Path<String>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let format: ExportFormat = q
        .format
        .as_deref()
        .unwrap_or("csv")
        .parse()
        .map_err(|m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_format", m))?;
    let (path, bytes) = blocking(&state, move |s| {
        let path = s.store.export(&id, format)?;
        let bytes = std::fs::read(&path)?;
        Ok((path, bytes))
    })
    .await?;
    let (mime, name) = match format {
        ExportFormat::Csv => ("text/csv; charset=utf-8", path.file_name()),
        ExportFormat::Tei => ("application/xml; charset=utf-8", path.file_name()),
    };
    let disposition = format!("attachment; filename=\"{}\"", name.and_then(|n| n.to_str()).unwrap_or("export"));
    Ok(([(header::CONTENT_TYPE, mime.to_string()), (header::CONTENT_DISPOSITION, disposition)], bytes).into_response())
}

async fn report(State(state): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&state, move |s| s.store.report(&id, s.prices.as_ref())).await?))
}

async fn tile(State(state): Shared, Path((id, name)): Path<(String, String)>) -> ApiResult<Response> {
    let bytes = blocking(&state, move |s| Ok(std::fs::read(s.store.tile_path(&id, &name)?)?)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/jobs", get(list_jobs).post(create_job))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/pages/{n}", get(get_page))
        .route("/api/jobs/{id}/pages/{n}/advance", post(advance))
        .route("/api/jobs/{id}/pages/{n}/retry", post(retry))
        .route("/api/jobs/{id}/pages/{n}/entries", put(put_entries))
        .route("/api/jobs/{id}/pages/{n}/approve", post(approve))
        .route("/api/jobs/{id}/export", get(export))
        .route("/api/jobs/{id}/report", get(report))
        .route("/api/jobs/{id}/tiles/{name}", get(tile))
        .fallback(not_found)
        .with_state(state)
}

/// Serves the API until Ctrl-C.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
