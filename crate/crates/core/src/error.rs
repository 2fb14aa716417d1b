use thiserror::Error;

/// Errors raised by the engine. Variants map onto the service's HTTP status
/// codes: contract violations are 400, missing ids 404, conflicts 409.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("record {0} has already been reviewed")]
    AlreadyReviewed(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("inconsistent evidence: {0}")]
    InconsistentEvidence(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
