use std::fmt;

use thiserror::Error;

use crate::nn::NnError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the broker, the datastore, the wire layer and the
/// task handlers built on top of them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("queue `{0}` already exists")]
    QueueExists(String),
    #[error("no such queue `{0}`")]
    NoSuchQueue(String),
    #[error("unknown lease {0}")]
    UnknownLease(u64),
    #[error("no such key `{0}`")]
    NoSuchKey(String),
    #[error("version conflict on `{key}`: attempted {attempted}, current {current:?}")]
    VersionConflict {
        key: String,
        attempted: u64,
        current: Option<u64>,
    },
    #[error("timed out")]
    Timeout,
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("job initialization failed: {0}")]
    JobInitFailed(String),
    #[error("task failed: {0}")]
    TaskFailed(String),
    #[error("corpus too short: {len} characters, need more than {needed}")]
    CorpusTooShort { len: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("experiment stalled: {0}")]
    ExperimentStalled(String),
    #[error("malformed events: {0}")]
    MalformedEvents(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io: {0}")]
    Io(String),
}

/// Stable error codes used in `{"err": "<code>"}` wire responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    QueueExists,
    NoSuchQueue,
    UnknownLease,
    NoSuchKey,
    VersionConflict,
    Timeout,
    MalformedEnvelope,
    BadRequest,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::QueueExists => "QueueExists",
            ErrorCode::NoSuchQueue => "NoSuchQueue",
            ErrorCode::UnknownLease => "UnknownLease",
            ErrorCode::NoSuchKey => "NoSuchKey",
            ErrorCode::VersionConflict => "VersionConflict",
            ErrorCode::Timeout => "Timeout",
            ErrorCode::MalformedEnvelope => "MalformedEnvelope",
            ErrorCode::BadRequest => "BadRequest",
            ErrorCode::Internal => "Internal",
        }
    }

    pub fn parse(s: &str) -> Option<ErrorCode> {
        Some(match s {
            "QueueExists" => ErrorCode::QueueExists,
            "NoSuchQueue" => ErrorCode::NoSuchQueue,
            "UnknownLease" => ErrorCode::UnknownLease,
            "NoSuchKey" => ErrorCode::NoSuchKey,
            "VersionConflict" => ErrorCode::VersionConflict,
            "Timeout" => ErrorCode::Timeout,
            "MalformedEnvelope" => ErrorCode::MalformedEnvelope,
            "BadRequest" => ErrorCode::BadRequest,
            "Internal" => ErrorCode::Internal,
            _ => return None,
        })
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Error {
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::QueueExists(_) => ErrorCode::QueueExists,
            Error::NoSuchQueue(_) => ErrorCode::NoSuchQueue,
            Error::UnknownLease(_) => ErrorCode::UnknownLease,
            Error::NoSuchKey(_) => ErrorCode::NoSuchKey,
            Error::VersionConflict { .. } => ErrorCode::VersionConflict,
            Error::Timeout => ErrorCode::Timeout,
            Error::MalformedEnvelope(_) => ErrorCode::MalformedEnvelope,
            Error::Protocol(_) => ErrorCode::BadRequest,
            _ => ErrorCode::Internal,
        }
    }

    /// True for failures of the transport rather than of the operation.
    pub fn is_connection(&self) -> bool {
        matches!(self, Error::ConnectionLost(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
