use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: String, got: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no admissible substitution candidate")]
    NoCandidate,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
