use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed model: {0}")]
    InvalidModel(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("resource cap exceeded: {what} ({limit})")]
    CapExceeded { what: String, limit: u64 },
    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at update {update}: loss is {loss}")]
    Divergence { update: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn cap(what: impl Into<String>, limit: u64) -> Self {
        Error::CapExceeded { what: what.into(), limit }
    }
}
