use serde::Serialize;
use thiserror::Error;

use wrapped_core::ingest::IngestError;

use crate::session::{Failure, SessionState};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("upload limit reached; retry in {retry_after_secs} s")]
    RateLimited { retry_after_secs: u64 },
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("archive contains no conversations")]
    EmptyArchive,
    #[error("unknown or expired session")]
    UnknownSession,
    #[error("session is {}{}", state.as_str(), failure.as_ref().map(|f| format!(": {}", f.message)).unwrap_or_default())]
    WrongState { state: SessionState, failure: Option<Failure> },
    #[error("unknown conversation {0}")]
    UnknownConversation(String),
    #[error("an archive with identical usage statistics was already submitted")]
    DuplicateSubmission,
    #[error("no completed sessions and no offline report")]
    NoData,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("upload exceeds the size limit")]
    PayloadTooLarge,
    #[error("no such route")]
    NotFound,
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::RateLimited { .. } => "rate_limited",
            ServiceError::MalformedArchive(_) => "malformed_archive",
            ServiceError::UnsupportedFormat(_) => "unsupported_format",
            ServiceError::EmptyArchive => "empty_archive",
            ServiceError::UnknownSession => "unknown_session",
            ServiceError::WrongState { .. } => "wrong_state",
            ServiceError::UnknownConversation(_) => "unknown_conversation",
            ServiceError::DuplicateSubmission => "duplicate_submission",
            ServiceError::NoData => "no_data",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::PayloadTooLarge => "payload_too_large",
            ServiceError::NotFound => "not_found",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::RateLimited { .. } => 429,
            ServiceError::MalformedArchive(_) | ServiceError::UnsupportedFormat(_) | ServiceError::EmptyArchive => 422,
            ServiceError::UnknownSession | ServiceError::UnknownConversation(_) | ServiceError::NoData => 404,
            ServiceError::WrongState { .. } | ServiceError::DuplicateSubmission => 409,
            ServiceError::InvalidRequest(_) => 400,
            ServiceError::PayloadTooLarge => 413,
            ServiceError::NotFound => 404,
            ServiceError::Internal(_) => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (state, reason_code) = match self {
            ServiceError::WrongState { state, failure } => (Some(*state), failure.as_ref().map(|f| f.code.clone())),
            _ => (None, None),
        };
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            retry_after_secs: match self {
                ServiceError::RateLimited { retry_after_secs } => Some(*retry_after_secs),
                _ => None,
            },
            state,
            reason_code,
        }
    }

    pub(crate) fn internal(e: impl std::fmt::Display) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

impl From<IngestError> for ServiceError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::MalformedArchive(m) => ServiceError::MalformedArchive(m),
            IngestError::UnsupportedFormat(m) => ServiceError::UnsupportedFormat(m),
            IngestError::EmptyArchive => ServiceError::EmptyArchive,
            IngestError::InvalidConfig(m) => ServiceError::Internal(m),
        }
    }
}

/// JSON error body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after_secs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<SessionState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason_code: Option<String>,
}
