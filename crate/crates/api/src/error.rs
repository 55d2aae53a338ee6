use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use edgeref_core::referee::RefereeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// JSON error body: `{code, message, detail?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            detail: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl From<RefereeError> for ApiError {
    fn from(e: RefereeError) -> Self {
        let message = e.to_string();
        match e {
            RefereeError::Graph(ir) => Self {
                code: ErrorCode::BadRequest,
                message,
                detail: serde_json::to_value(&ir).ok(),
            },
            RefereeError::InvalidRequest(_) => Self::bad_request(message),
            RefereeError::NotFound(_) => Self::not_found(message),
            RefereeError::StateConflict { .. }
            | RefereeError::IdempotencyConflict(_)
            | RefereeError::QuotaExceeded { .. }
            | RefereeError::ReevaluationFailed { .. }
            | RefereeError::NoBundle(_) => Self::new(ErrorCode::Conflict, message),
            RefereeError::Bundle(_) | RefereeError::Device(_) | RefereeError::Storage(_) => {
                tracing::error!("{message}");
                Self::internal(message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

/// Missing or wrong admin token; outside the four error codes.
pub struct Unauthorized;

impl IntoResponse for Unauthorized {
    fn into_response(self) -> Response {
        let body = serde_json::json!({
            "code": "unauthorized",
            "message": "missing or invalid admin token",
        });
        (StatusCode::UNAUTHORIZED, Json(body)).into_response()
    }
}
