//! HTTP JSON service over the referee: submissions, status, leaderboard,
//! score history and admin-triggered evaluation runs.

mod error;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use edgeref_core::ir::graph_from_value;
use edgeref_core::metrics::Track;
use edgeref_core::referee::{
    LeaderboardEntry, Referee, RunReport, ScoreHistory, Status, SubmissionView,
};

pub use error::{ApiError, ErrorCode, Unauthorized};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";

#[derive(Clone)]
pub struct AppState {
    pub referee: Arc<Referee>,
    /// Shared secret for `/admin`; with `None` every admin call is refused.
    pub admin_token: Option<String>,
}

impl AppState {
    pub fn new(referee: Arc<Referee>, admin_token: Option<String>) -> Self {
        Self {
            referee,
            admin_token,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub team: String,
    pub track: u8,
    pub graph: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub id: String,
    pub status: Status,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    #[serde(default)]
    pub track: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStarted {
    pub run_id: String,
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    track: Option<String>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/submissions", post(submit))
        .route("/api/v1/submissions/{id}", get(submission_status))
        .route("/api/v1/leaderboard/{track}", get(leaderboard))
        .route("/api/v1/teams/{team}/history", get(history))
        .route("/api/v1/admin/runs", post(start_run))
        .route("/api/v1/admin/runs/{run_id}", get(run_status))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker task failed: {e}")))?
}

fn parse_track(s: &str) -> Option<Track> {
    s.parse().ok()
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn submit(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let request: SubmitRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))?;
    let track = Track::try_from(request.track).map_err(ApiError::bad_request)?;
    let graph = graph_from_value(request.graph).map_err(edgeref_core::referee::RefereeError::from)?;
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::bad_request("idempotency key must be visible ASCII"))?
                .to_string(),
        ),
        None => None,
    };
    let referee = state.referee.clone();
    let outcome = blocking(move || {
        Ok(referee.submit(&request.team, track, &graph, key.as_deref())?)
    })
    .await?;
    let s = outcome.submission;
    let location = format!("/api/v1/submissions/{}", s.id);
    let body = SubmitResponse {
        id: s.id,
        status: s.status,
    };
    Ok((StatusCode::CREATED, [(header::LOCATION, location)], Json(body)).into_response())
}

async fn submission_status(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SubmissionView>, ApiError> {
    Ok(Json(state.referee.status(&id)?))
}

async fn leaderboard(
    State(state): State<AppState>,
    Path(track): Path<String>,
) -> Result<Json<Vec<LeaderboardEntry>>, ApiError> {
    let track = parse_track(&track).ok_or_else(|| ApiError::not_found(format!("unknown track `{track}`")))?;
    Ok(Json(state.referee.leaderboard(track)))
}

async fn history(
    State(state): State<AppState>,
    Path(team): Path<String>,
    Query(query): Query<HistoryQuery>,
) -> Result<Json<ScoreHistory>, ApiError> {
    let raw = query
        .track
        .ok_or_else(|| ApiError::bad_request("query parameter `track` is required"))?;
    let track = parse_track(&raw).ok_or_else(|| ApiError::bad_request(format!("unknown track `{raw}`")))?;
    Ok(Json(state.referee.score_history(&team, track)?))
}

fn authorized(state: &AppState, headers: &HeaderMap) -> bool {
    let Some(expected) = state.admin_token.as_deref() else {
        return false;
    };
    let presented = headers
        .get(ADMIN_TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .or_else(|| {
            headers
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
        });
    presented.is_some_and(|p| {
        // compare every byte so timing does not reveal the matching prefix
        p.len() == expected.len()
            && p.bytes().zip(expected.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
    })
}

async fn start_run(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    if !authorized(&state, &headers) {
        return Unauthorized.into_response();
    }
    let request: RunRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RunRequest::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return ApiError::bad_request(format!("malformed request body: {e}")).into_response(),
        }
    };
    let track = match request.track.map(Track::try_from).transpose() {
        Ok(t) => t,
        Err(e) => return ApiError::bad_request(e).into_response(),
    };
    let referee = state.referee.clone();
    let report = match blocking(move || Ok(referee.begin_run(track)?)).await {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let referee = state.referee.clone();
    let run_id = report.run_id.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = referee.execute_run(&run_id) {
            tracing::error!("run {run_id} failed: {e}");
        }
    });
    (
        StatusCode::ACCEPTED,
        Json(RunStarted {
            run_id: report.run_id,
        }),
    )
        .into_response()
}

async fn run_status(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(run_id): Path<String>,
) -> Response {
    if !authorized(&state, &headers) {
        return Unauthorized.into_response();
    }
    match state.referee.run_report(&run_id) {
        Ok(report) => Json::<RunReport>(report).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}
