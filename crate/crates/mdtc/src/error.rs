//! Error type shared by every module, with a stable exit-code mapping for the CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Bad command line, config file, or input document.
    #[error("usage error: {0}")]
    Usage(String),

    /// An enumeration or subset-search budget was exceeded.
    #[error("resource limit: {0}")]
    ResourceLimit(String),

    /// Non-finite loss or other numeric failure.
    #[error("numeric error: {0}")]
    NumericError(String),

    /// Conditioning event has zero probability under the exact law.
    #[error("zero-support conditioning: {0}")]
    ZeroSupport(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed container, CSV, or JSON payload.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Exit codes are a stable contract: 0 success, 2 usage, 3 resource-limit,
    /// 4 numeric-error. Everything else maps to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Usage(_) | Error::Format(_) => 2,
            Error::ZeroSupport(_) => 2,
            Error::ResourceLimit(_) => 3,
            Error::NumericError(_) => 4,
            Error::Io(_) => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
