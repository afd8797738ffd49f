use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("config syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("run diverged: {0}")]
    Diverged(String),
    #[error("bad model file: {0}")]
    ModelFile(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] shiftlab_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
