use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::{NextRule, ServiceError, SessionManager, SessionSummary, SubmitAck};

type AppState = Arc<SessionManager>;

#[derive(Debug, Deserialize)]
pub struct StartRequest {
    pub expert_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct SubmitRequest {
    pub rule_id: String,
    pub rating: u8,
    #[serde(default)]
    pub elapsed_ms: u64,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidRating(_) | ServiceError::EmptyExpert => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::OutOfOrder { .. } | ServiceError::Revision(_) | ServiceError::Complete => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

/// Builds the API router; `static_dir`, when given, is served at `/`.
pub fn router(manager: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(start))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/assessments", post(submit))
        .route("/export", get(export))
        .with_state(manager);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(listener: TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

async fn start(State(m): State<AppState>, Json(req): Json<StartRequest>) -> Result<(StatusCode, Json<SessionSummary>), ServiceError> {
    let s = m.start_session(&req.expert_id, req.seed)?;
    let status = if s.resumed { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(s)))
}

async fn next(State(m): State<AppState>, Path(id): Path<String>) -> Result<Json<NextRule>, ServiceError> {
    Ok(Json(m.next_rule(&id)?))
}

async fn submit(
    State(m): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SubmitRequest>,
) -> Result<Json<SubmitAck>, ServiceError> {
    Ok(Json(m.submit_assessment(&id, &req.rule_id, req.rating, req.elapsed_ms)?))
}

async fn export(State(m): State<AppState>) -> Json<Vec<eaml::elicitation::ExpertAssessment>> {
    Json(m.export())
}
