use thiserror::Error;

/// Errors raised by the AFC library.
#[derive(Debug, Error)]
pub enum AfcError {
    /// A precondition on an argument was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A sampled quantity is too coarse for the requested operation.
    #[error("insufficient resolution: {0}")]
    Resolution(String),

    /// Physically or geometrically inconsistent configuration.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// An iterative method failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Validation of an experiment description found one or more problems.
    #[error("invalid experiment configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AfcError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        AfcError::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        AfcError::Configuration(msg.into())
    }
}

impl From<csv::Error> for AfcError {
    fn from(e: csv::Error) -> Self {
        AfcError::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for AfcError {
    fn from(e: serde_json::Error) -> Self {
        AfcError::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for AfcError {
    fn from(e: toml::de::Error) -> Self {
        AfcError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AfcError>;
