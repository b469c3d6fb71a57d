use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use nelaudit_core::api::ErrorBody;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no session {0:?}")]
    UnknownSession(String),
    #[error("index {index} is outside the batch of {len} triples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("triples not in this batch: {}", .0.join(", "))]
    UnknownTriple(Vec<String>),
    #[error("batch corpus hash {batch} does not match the loaded corpus {loaded}")]
    BatchMismatch { batch: String, loaded: String },
    #[error("judgments corpus hash {found} does not match the session's {expected}")]
    HashMismatch { found: String, expected: String },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    InvalidJudgment(String),
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownSession(_) => "UnknownSession",
            Self::IndexOutOfRange { .. } => "IndexOutOfRange",
            Self::UnknownTriple(_) => "UnknownTriple",
            Self::BatchMismatch { .. } => "BatchMismatch",
            Self::HashMismatch { .. } => "HashMismatch",
            Self::Parse(_) => "ParseError",
            Self::InvalidJudgment(_) => "InvalidJudgment",
            Self::Storage(_) => "StorageError",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::UnknownSession(_) | Self::IndexOutOfRange { .. } => StatusCode::NOT_FOUND,
            Self::UnknownTriple(_) | Self::InvalidJudgment(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::BatchMismatch { .. } | Self::HashMismatch { .. } => StatusCode::CONFLICT,
            Self::Parse(_) => StatusCode::BAD_REQUEST,
            Self::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = ErrorBody {
            error_code: self.code().to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}
