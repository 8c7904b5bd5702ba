//! HTTP+JSON surface. Every error body is `{"code": .., "message": ..}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::service::{ServiceError, SurveyService};

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorBody { code: self.code(), message: self.to_string() })).into_response()
    }
}

type Shared = Arc<SurveyService>;

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/sessions", post(start_session))
        .route("/sessions/{id}/next", get(next_task))
        .route("/sessions/{id}/ratings", post(submit_rating))
        .route("/admin/progress", get(admin_progress))
        .fallback(|| async {
            (StatusCode::NOT_FOUND, Json(ErrorBody { code: "not_found", message: "no such endpoint".into() }))
        })
        .with_state(service)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

// Handlers touch only in-memory state and a small synchronous append, so
// they run inline rather than on the blocking pool.

async fn start_session(State(svc): State<Shared>, body: Bytes) -> Result<Response, ServiceError> {
    let session = svc.start_session(parse(&body)?)?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn next_task(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.next_task(&id)?).into_response())
}

async fn submit_rating(State(svc): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Response, ServiceError> {
    Ok(Json(svc.submit(&id, parse(&body)?)?).into_response())
}

async fn admin_progress(State(svc): State<Shared>, headers: HeaderMap) -> Result<Response, ServiceError> {
    let bearer = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    svc.check_admin(bearer)?;
    Ok(Json(svc.progress()).into_response())
}

/// Serves until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, service: Shared) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "survey service listening");
    axum::serve(listener, router(service)).await
}
