use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use medsyn_core::orchestrator::OrchestratorError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown record `{0}`")]
    UnknownRecord(String),
    #[error("case `{0}` cannot be used here")]
    InvalidCase(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("session is not open (status {0})")]
    SessionNotOpen(&'static str),
    #[error("an assistant reply is already in flight for this session")]
    Busy,
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("assistant backend failed: {0}")]
    Backend(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownRecord(_) => "unknown_record",
            ServiceError::InvalidCase(_) => "invalid_case",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::SessionNotOpen(_) => "session_not_open",
            ServiceError::Busy => "busy",
            ServiceError::EmptyField(_) => "empty_field",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Backend(_) => "backend_error",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownRecord(_) | ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidCase(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::EmptyField(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::SessionNotOpen(_) | ServiceError::Busy => StatusCode::CONFLICT,
            ServiceError::Backend(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<OrchestratorError> for ServiceError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::EmptyField(f) => ServiceError::EmptyField(f),
            OrchestratorError::InvalidTransition { state, .. } => ServiceError::SessionNotOpen(state),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (self.status(), Json(json!({ "error": self.code(), "message": self.to_string() }))).into_response()
    }
}
