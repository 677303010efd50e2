use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (length mismatch, bad config, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// The inputs are well-formed but the quantity is undefined for them.
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

/// Failures talking to a language-model provider. None of these are silently recovered.
#[derive(Debug, Error)]
pub enum LmError {
    #[error("transport error (retryable): {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("request timed out: {0}")]
    Timeout(String),
}
