//! HTTP routes. Bodies are JSON; errors are `{code, message}` with a
//! matching status, plus `Retry-After` on 429.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, PathRejection, QueryRejection};
use axum::extract::{ConnectInfo, DefaultBodyLimit, FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::ServiceError;
use crate::service::{ProcessRequest, Service};

pub type AppState = Arc<Service>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut resp = (status, Json(self.body())).into_response();
        if let ServiceError::RateLimited { retry_after_secs } = self {
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(retry_after_secs));
        }
        resp
    }
}

fn bad_body(e: BytesRejection) -> ServiceError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ServiceError::PayloadTooLarge
    } else {
        ServiceError::InvalidRequest(e.body_text())
    }
}

fn bad_path(e: PathRejection) -> ServiceError {
    ServiceError::InvalidRequest(e.body_text())
}

/// The caller's address: the socket peer, or the first `X-Forwarded-For`
/// entry when the config trusts a proxy.
pub struct ClientAddr(pub String);

impl FromRequestParts<AppState> for ClientAddr {
    type Rejection = std::convert::Infallible;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        if state.config().server.trust_forwarded_for {
            let forwarded = parts
                .headers
                .get("x-forwarded-for")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.split(',').next())
                .map(str::trim)
                .filter(|v| !v.is_empty());
            if let Some(addr) = forwarded {
                return Ok(ClientAddr(addr.to_string()));
            }
        }
        let peer = parts.extensions.get::<ConnectInfo<SocketAddr>>().map(|c| c.0.ip().to_string());
        Ok(ClientAddr(peer.unwrap_or_else(|| "unknown".into())))
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct UploadParams {
    pub format: Option<String>,
    pub filename: Option<String>,
}

async fn upload(
    State(svc): State<AppState>,
    ClientAddr(addr): ClientAddr,
    params: Result<Query<UploadParams>, QueryRejection>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ServiceError> {
    let Query(params) = params.map_err(|e| ServiceError::InvalidRequest(e.body_text()))?;
    let body = body.map_err(bad_body)?;
    let resp = tokio::task::spawn_blocking(move || {
        svc.upload(&body, params.format.as_deref(), params.filename.as_deref(), &addr)
    })
    .await
    .map_err(ServiceError::internal)??;
    Ok((StatusCode::CREATED, Json(resp)).into_response())
}

async fn preview(State(svc): State<AppState>, id: Result<Path<String>, PathRejection>) -> Result<Response, ServiceError> {
    let Path(id) = id.map_err(bad_path)?;
    Ok(Json(svc.preview(&id)?).into_response())
}

async fn delete_conversation(
    State(svc): State<AppState>,
    ids: Result<Path<(String, String)>, PathRejection>,
) -> Result<Response, ServiceError> {
    let Path((id, cid)) = ids.map_err(bad_path)?;
    Ok(Json(svc.delete_conversation(&id, &cid)?).into_response())
}

async fn process(
    State(svc): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ServiceError> {
    let Path(id) = id.map_err(bad_path)?;
    let body = body.map_err(bad_body)?;
    let request = if body.iter().all(u8::is_ascii_whitespace) {
        ProcessRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::InvalidRequest(e.to_string()))?
    };
    let (status, _job) = svc.process(&id, request)?;
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn status(State(svc): State<AppState>, id: Result<Path<String>, PathRejection>) -> Result<Response, ServiceError> {
    let Path(id) = id.map_err(bad_path)?;
    Ok(Json(svc.status(&id)?).into_response())
}

async fn report(State(svc): State<AppState>, id: Result<Path<String>, PathRejection>) -> Result<Response, ServiceError> {
    let Path(id) = id.map_err(bad_path)?;
    Ok(Json(svc.report(&id)?).into_response())
}

async fn aggregate(State(svc): State<AppState>) -> Result<Response, ServiceError> {
    let report = tokio::task::spawn_blocking(move || svc.aggregate())
        .await
        .map_err(ServiceError::internal)??;
    Ok(([(header::CONTENT_TYPE, "application/json")], report.to_json()).into_response())
}

async fn not_found() -> ServiceError {
    ServiceError::NotFound
}

pub fn router(svc: AppState) -> Router {
    let limit = svc.config().server.max_upload_bytes;
    Router::new()
        .route("/sessions", post(upload))
        .route("/sessions/{id}/preview", get(preview))
        .route("/sessions/{id}/conversations/{cid}", delete(delete_conversation))
        .route("/sessions/{id}/process", post(process))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/report", get(report))
        .route("/aggregate", get(aggregate))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(svc)
}
