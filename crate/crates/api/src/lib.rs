//! HTTP API over a [`Platform`]: dataset catalog and bundles, submission
//! upload and status, run logs, leaderboards and code downloads.
//!
//! All reads are public. Uploading a submission requires the submission
//! token; registering a dataset requires the admin token. Errors are JSON
//! bodies `{"code": ..., "message": ...}` with stable codes.

pub mod error;

use std::future::Future;
use std::str::FromStr;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rboard_core::digest::sha256_hex;
use rboard_core::{NewDataset, Platform, Task};
use serde::Deserialize;

pub use error::{ApiError, ErrorBody};

/// Response header carrying the SHA-256 of a downloaded archive.
pub const CHECKSUM_HEADER: &str = "x-content-sha256";
/// Response header carrying the unpaginated length of a list.
pub const TOTAL_COUNT_HEADER: &str = "x-total-count";
pub const DEFAULT_PAGE_LIMIT: usize = 100;
/// Multipart overhead allowed on top of the archive cap.
const BODY_SLACK: usize = 1024 * 1024;

/// Bearer tokens. A `None` admin token disables dataset registration.
#[derive(Debug, Clone)]
pub struct Tokens {
    pub submit: String,
    pub admin: Option<String>,
}

#[derive(Clone)]
struct AppState {
    platform: Arc<Platform>,
    tokens: Arc<Tokens>,
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(platform: Arc<Platform>, tokens: Tokens) -> Router {
    let body_limit = usize::try_from(platform.config().archive_cap)
        .unwrap_or(usize::MAX)
        .saturating_add(BODY_SLACK);
    let state = AppState {
        platform,
        tokens: Arc::new(tokens),
    };
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/datasets", get(list_datasets).post(register_dataset))
        .route("/api/v1/datasets/{id}", get(get_dataset))
        .route("/api/v1/datasets/{id}/bundle", get(dataset_bundle))
        .route("/api/v1/datasets/{id}/preprocessing", get(dataset_preprocessing))
        .route("/api/v1/submissions", post(create_submission).get(list_submissions))
        .route("/api/v1/submissions/{id}", get(get_submission))
        .route("/api/v1/submissions/{id}/code", get(submission_code))
        .route("/api/v1/runs/{id}", get(get_run))
        .route("/api/v1/runs/{id}/logs", get(run_logs))
        .route("/api/v1/leaderboard/{task}", get(leaderboard))
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Runs blocking platform work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        tracing::error!(error = %e, "blocking task panicked");
        ApiError::internal()
    })?
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    value.strip_prefix("Bearer ").map(|t| t.trim().to_string())
}

fn check_token(presented: Option<&str>, expected: &str) -> ApiResult<()> {
    match presented {
        Some(t) if constant_time_eq(t.as_bytes(), expected.as_bytes()) => Ok(()),
        _ => Err(ApiError::unauthorized()),
    }
}

fn parse_task(raw: &str) -> ApiResult<Task> {
    Task::from_str(raw).map_err(|_| {
        ApiError::new(StatusCode::BAD_REQUEST, "unknown_task", format!("unknown task `{raw}` (expected ctr or topn)"))
    })
}

#[derive(Debug, Deserialize)]
struct ListParams {
    task: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

impl ListParams {
    fn task(&self) -> ApiResult<Option<Task>> {
        self.task.as_deref().map(parse_task).transpose()
    }

    fn page<T: serde::Serialize>(&self, items: Vec<T>) -> Response {
        let total = items.len();
        let offset = self.offset.unwrap_or(0);
        let limit = self.limit.unwrap_or(DEFAULT_PAGE_LIMIT);
        let page: Vec<T> = items.into_iter().skip(offset).take(limit).collect();
        let mut response = Json(page).into_response();
        response
            .headers_mut()
            .insert(TOTAL_COUNT_HEADER, HeaderValue::from(total));
        response
    }
}

fn query(params: Result<Query<ListParams>, QueryRejection>) -> ApiResult<ListParams> {
    params
        .map(|Query(p)| p)
        .map_err(|e| ApiError::bad_request(format!("invalid query: {}", e.body_text())))
}

fn multipart(m: Result<Multipart, MultipartRejection>) -> ApiResult<Multipart> {
    m.map_err(|e| ApiError::bad_request(format!("expected multipart form data: {}", e.body_text())))
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "archive_too_large", "request body exceeds the upload limit")
    } else {
        ApiError::bad_request(format!("malformed multipart body: {}", e.body_text()))
    }
}

fn zip_response(bytes: Vec<u8>, filename: &str, checksum: Option<String>) -> Response {
    let checksum = checksum.unwrap_or_else(|| sha256_hex(&bytes));
    let disposition = format!("attachment; filename=\"{filename}\"");
    let mut response = bytes.into_response();
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/zip"));
    if let Ok(v) = HeaderValue::from_str(&disposition) {
        headers.insert(header::CONTENT_DISPOSITION, v);
    }
    if let Ok(v) = HeaderValue::from_str(&checksum) {
        headers.insert(CHECKSUM_HEADER, v);
    }
    response
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_datasets(
    State(s): State<AppState>,
    params: Result<Query<ListParams>, QueryRejection>,
) -> ApiResult<Response> {
    let params = query(params)?;
    let task = params.task()?;
    let items = blocking(move || Ok(s.platform.list_datasets(task)?)).await?;
    Ok(params.page(items))
}

async fn get_dataset(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let d = blocking(move || Ok(s.platform.get_dataset(&id)?)).await?;
    Ok(Json(d).into_response())
}

async fn dataset_bundle(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let name = format!("{id}-bundle.zip");
    let bytes = blocking(move || Ok(s.platform.public_bundle_archive(&id)?)).await?;
    Ok(zip_response(bytes, &name, None))
}

async fn dataset_preprocessing(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let name = format!("{id}-preprocessing.zip");
    let bytes = blocking(move || Ok(s.platform.export_preprocessing_code(&id)?)).await?;
    Ok(zip_response(bytes, &name, None))
}

/// Multipart fields: `descriptor` (JSON registration request), `raw`
/// (CSV bytes), optional `token`.
async fn register_dataset(
    State(s): State<AppState>,
    headers: HeaderMap,
    form: Result<Multipart, MultipartRejection>,
) -> ApiResult<Response> {
    let mut form = multipart(form)?;
    let mut token = bearer(&headers);
    let (mut descriptor, mut raw) = (None, None);
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        match field.name().unwrap_or_default() {
            "descriptor" => descriptor = Some(field.bytes().await.map_err(multipart_error)?),
            "raw" => raw = Some(field.bytes().await.map_err(multipart_error)?),
            "token" => token = Some(field.text().await.map_err(multipart_error)?.trim().to_string()),
            _ => {}
        }
    }
    let admin = s.tokens.admin.as_deref().ok_or_else(|| {
        ApiError::new(StatusCode::FORBIDDEN, "registration_disabled", "dataset registration is disabled")
    })?;
    check_token(token.as_deref(), admin)?;
    let descriptor = descriptor.ok_or_else(|| ApiError::bad_request("missing `descriptor` field"))?;
    let raw = raw.ok_or_else(|| ApiError::bad_request("missing `raw` field"))?;
    let new: NewDataset = serde_json::from_slice(&descriptor)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", format!("invalid descriptor: {e}")))?;
    let created = blocking(move || Ok(s.platform.register_dataset(new, &raw)?)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

/// Multipart fields: `archive` (zip), `task`, `author`, and `token` unless
/// an `Authorization: Bearer` header is sent.
async fn create_submission(
    State(s): State<AppState>,
    headers: HeaderMap,
    form: Result<Multipart, MultipartRejection>,
) -> ApiResult<Response> {
    let mut token = bearer(&headers);
    let mut form = match multipart(form) {
        Ok(f) => f,
        Err(e) => {
            check_token(token.as_deref(), &s.tokens.submit)?;
            return Err(e);
        }
    };
    let (mut archive, mut task, mut author) = (None, None, None);
    let mut read_error = None;
    loop {
        match form.next_field().await {
            Ok(Some(field)) => match field.name().unwrap_or_default() {
                "archive" => match field.bytes().await {
                    Ok(b) => archive = Some(b),
                    Err(e) => {
                        read_error = Some(multipart_error(e));
                        break;
                    }
                },
                "task" => task = field.text().await.ok(),
                "author" => author = field.text().await.ok(),
                "token" => token = field.text().await.ok().map(|t| t.trim().to_string()),
                _ => {}
            },
            Ok(None) => break,
            Err(e) => {
                read_error = Some(multipart_error(e));
                break;
            }
        }
    }
    // Unauthenticated callers learn nothing about their payload.
    check_token(token.as_deref(), &s.tokens.submit)?;
    if let Some(e) = read_error {
        return Err(e);
    }
    let task = parse_task(task.as_deref().ok_or_else(|| ApiError::bad_request("missing `task` field"))?.trim())?;
    let author = author.ok_or_else(|| ApiError::bad_request("missing `author` field"))?;
    let archive = archive.ok_or_else(|| {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed_archive", "missing `archive` field")
    })?;
    let receipt = blocking(move || Ok(s.platform.submit(&archive, task, &author)?)).await?;
    Ok((StatusCode::CREATED, Json(receipt)).into_response())
}

async fn list_submissions(
    State(s): State<AppState>,
    params: Result<Query<ListParams>, QueryRejection>,
) -> ApiResult<Response> {
    let params = query(params)?;
    let task = params.task()?;
    let items = blocking(move || Ok(s.platform.list_submissions(task)?)).await?;
    Ok(params.page(items))
}

async fn get_submission(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let view = blocking(move || Ok(s.platform.get_submission(&id)?)).await?;
    Ok(Json(view).into_response())
}

async fn submission_code(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let name = format!("{id}.zip");
    let (bytes, checksum) = blocking(move || Ok(s.platform.fetch_code_archive(&id)?)).await?;
    Ok(zip_response(bytes, &name, Some(checksum)))
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let view = blocking(move || Ok(s.platform.get_run(&id)?)).await?;
    Ok(Json(view).into_response())
}

async fn run_logs(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = blocking(move || Ok(s.platform.run_logs(&id)?)).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

async fn leaderboard(State(s): State<AppState>, Path(task): Path<String>) -> ApiResult<Response> {
    let task = Task::from_str(&task)
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "unknown_task", format!("unknown task `{task}`")))?;
    let entries = blocking(move || Ok(s.platform.leaderboard(task)?)).await?;
    Ok(Json(entries).into_response())
}
