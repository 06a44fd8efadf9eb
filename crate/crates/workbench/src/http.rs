//! `/v1` HTTP API over a [`Service`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ppm_core::eval::SortKey;
use ppm_core::prelude::TrainingRequest;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::orchestrator::JobFilter;
use crate::service::{ExplanationRequest, PredictRequest, ResultsQuery, Service, SplitRequest};
use crate::Error;

const MAX_UPLOAD: usize = 512 * 1024 * 1024;

/// Body of every non-success response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

pub fn status_of(e: &Error) -> StatusCode {
    use ppm_core::Error as P;
    match e {
        Error::NotFound { .. } | Error::Pipeline(P::UnknownTrace(_)) => StatusCode::NOT_FOUND,
        Error::Conflict(_) => StatusCode::CONFLICT,
        Error::Storage(_) | Error::Panic(_) => StatusCode::INTERNAL_SERVER_ERROR,
        Error::Pipeline(_) | Error::Xes(_) | Error::Invalid(_) => StatusCode::BAD_REQUEST,
    }
}

struct Failure(StatusCode, ApiError);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let detail = match &e {
            Error::Xes(crate::xes::XesError::Malformed { line, column, .. }) => {
                Some(serde_json::json!({ "line": line, "column": column }))
            }
            Error::NotFound { kind, key } => Some(serde_json::json!({ "kind": kind, "key": key })),
            _ => None,
        };
        Failure(status_of(&e), ApiError { code: e.code().to_string(), message: e.to_string(), detail })
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type Reply<T> = Result<T, Failure>;

fn rejected(message: String) -> Failure {
    Failure(StatusCode::BAD_REQUEST, ApiError { code: "validation_error".into(), message, detail: None })
}

/// JSON body whose rejection is an [`ApiError`].
struct Body<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = Failure;

    async fn from_request(req: Request, state: &S) -> Result<Self, Failure> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(r) => Err(rejected(r.body_text())),
        }
    }
}

/// Query string whose rejection is an [`ApiError`].
struct Params<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = Failure;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Failure> {
        match Query::<T>::from_request_parts(parts, state).await {
            Ok(Query(v)) => Ok(Params(v)),
            Err(r) => Err(rejected(r.body_text())),
        }
    }
}

fn error_reply(status: StatusCode, code: &str, message: &str) -> Failure {
    Failure(status, ApiError { code: code.into(), message: message.into(), detail: None })
}

/// Runs blocking service work off the async executor.
async fn blocking<T, F>(svc: &Arc<Service>, f: F) -> Reply<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> crate::Result<T> + Send + 'static,
{
    let svc = svc.clone();
    match tokio::task::spawn_blocking(move || f(&svc)).await {
        Ok(r) => r.map_err(Failure::from),
        Err(e) => Err(Failure::from(Error::Panic(e.to_string()))),
    }
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/logs", post(upload_log).get(list_logs))
        .route("/v1/logs/{id}/stats", get(log_stats))
        .route("/v1/splits", post(create_split).get(list_splits))
        .route("/v1/jobs", post(submit_jobs).get(list_jobs))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/results", get(results))
        .route("/v1/results/comparison", get(comparison))
        .route("/v1/results/export.csv", get(export_csv))
        .route("/v1/explanations", post(explain))
        .route("/v1/models/{fingerprint}/predict", post(predict))
        .route("/v1/cache/stats", get(cache_stats))
        .fallback(|| async { error_reply(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .method_not_allowed_fallback(|| async {
            error_reply(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
        })
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(svc)
}

/// Binds and serves until `shutdown` resolves.
pub async fn serve(
    svc: Arc<Service>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).with_graceful_shutdown(shutdown).await
}

async fn health(State(svc): State<Arc<Service>>) -> Json<serde_json::Value> {
    let pool = svc.pool_status();
    Json(serde_json::json!({ "status": "ok", "pool": pool }))
}

#[derive(Debug, Deserialize)]
struct UploadQuery {
    name: Option<String>,
}

async fn upload_log(State(svc): State<Arc<Service>>, Params(q): Params<UploadQuery>, body: Bytes) -> Reply<impl IntoResponse> {
    let record = blocking(&svc, move |s| s.upload_log(&body, q.name.as_deref())).await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn list_logs(State(svc): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "items": svc.logs() }))
}

async fn log_stats(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(svc.log(&id)?.stats))
}

async fn create_split(State(svc): State<Arc<Service>>, Body(req): Body<SplitRequest>) -> Reply<impl IntoResponse> {
    let record = blocking(&svc, move |s| s.create_split(&req)).await?;
    Ok((StatusCode::CREATED, Json(record)))
}

#[derive(Debug, Deserialize)]
struct SplitQuery {
    log_id: Option<String>,
}

async fn list_splits(State(svc): State<Arc<Service>>, Params(q): Params<SplitQuery>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "items": svc.splits(q.log_id.as_deref()) }))
}

async fn submit_jobs(State(svc): State<Arc<Service>>, Body(req): Body<TrainingRequest>) -> Reply<impl IntoResponse> {
    let jobs = blocking(&svc, move |s| s.submit(&req)).await?;
    let ids: Vec<&str> = jobs.iter().map(|j| j.id.as_str()).collect();
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "job_ids": ids, "jobs": jobs }))))
}

async fn list_jobs(State(svc): State<Arc<Service>>, Params(filter): Params<JobFilter>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "items": svc.jobs(&filter) }))
}

async fn get_job(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(svc.job(&id)?))
}

async fn results(State(svc): State<Arc<Service>>, Params(q): Params<ResultsQuery>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| Ok(s.results(&q))).await?))
}

#[derive(Debug, Default, Deserialize)]
struct ComparisonQuery {
    /// Comma-separated job ids; all reports when absent.
    ids: Option<String>,
    sort: Option<String>,
    desc: Option<bool>,
    radar_prefix: Option<usize>,
}

pub fn split_ids(ids: Option<&str>) -> Vec<String> {
    ids.unwrap_or("").split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

async fn comparison(State(svc): State<Arc<Service>>, Params(q): Params<ComparisonQuery>) -> Reply<impl IntoResponse> {
    let ids = split_ids(q.ids.as_deref());
    let sort = q.sort.map(|field| SortKey { field, descending: q.desc.unwrap_or(true) });
    let view = blocking(&svc, move |s| s.comparison(&ids, sort.as_ref(), q.radar_prefix)).await?;
    Ok(Json(view))
}

async fn export_csv(State(svc): State<Arc<Service>>, Params(q): Params<ComparisonQuery>) -> Reply<impl IntoResponse> {
    let ids = split_ids(q.ids.as_deref());
    let body = blocking(&svc, move |s| s.export_csv(&ids)).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body))
}

async fn explain(State(svc): State<Arc<Service>>, Body(req): Body<ExplanationRequest>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.explain(&req)).await?))
}

async fn predict(
    State(svc): State<Arc<Service>>,
    Path(fingerprint): Path<String>,
    Body(req): Body<PredictRequest>,
) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.predict(&fingerprint, &req)).await?))
}

async fn cache_stats(State(svc): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "cache": svc.cache_stats(), "pool": svc.pool_status() }))
}
