//! JSON error bodies with stable machine codes.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use rboard_core::platform::{ErrorClass, PlatformError};
use rboard_core::preprocessing::PreprocessError;
use rboard_core::registry::RegistryError;
use rboard_core::runner::RunnerError;
use rboard_core::submission::SubmissionError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid token")
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn internal() -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", "internal error")
    }
}

fn code_of(e: &PlatformError) -> &'static str {
    match e {
        PlatformError::Registry(r) => match r {
            RegistryError::InvalidId(_) => "invalid_dataset_id",
            RegistryError::DuplicateId(_) => "duplicate_id",
            RegistryError::NotFound(_) => "not_found",
            RegistryError::SchemaViolation { .. } => "schema_violation",
            RegistryError::EmptyDataset => "empty_dataset",
            RegistryError::InvalidConfig(_) => "invalid_config",
            RegistryError::Preprocess(_) => "unsplittable_dataset",
            _ => "internal_error",
        },
        PlatformError::Submission(s) | PlatformError::Runner(RunnerError::Submission(s)) => match s {
            SubmissionError::MissingEntryFile => "missing_entry_file",
            SubmissionError::ArchiveTooLarge { .. } => "archive_too_large",
            SubmissionError::MalformedArchive(_) => "malformed_archive",
            SubmissionError::InvalidAuthor => "invalid_author",
            SubmissionError::NotFound(_) => "not_found",
            SubmissionError::InvalidState { .. } => "invalid_state",
            SubmissionError::NoDatasetsForTask(_) => "no_datasets_for_task",
        },
        PlatformError::Runner(RunnerError::NotFound(_)) => "not_found",
        PlatformError::Runner(RunnerError::InvalidTransition { .. }) => "invalid_state",
        PlatformError::Preprocess(PreprocessError::Io(_)) if e.class() == ErrorClass::NotFound => "not_found",
        _ => "internal_error",
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let status = match e.class() {
            ErrorClass::Invalid => StatusCode::BAD_REQUEST,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::TooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let code = code_of(&e);
        if status == StatusCode::INTERNAL_SERVER_ERROR || code == "internal_error" {
            // Details may name server paths; keep them in the server log.
            tracing::error!(error = %e, "request failed");
            return ApiError::internal();
        }
        if code == "not_found" {
            return ApiError::not_found("resource not found");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
