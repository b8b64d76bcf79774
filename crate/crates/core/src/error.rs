use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("insufficient history: need at least {needed} days, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("data error for {symbol} on {date}: {message}")]
    Data {
        symbol: String,
        date: String,
        message: String,
    },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("non-finite loss during gradient check")]
    NonFiniteLoss,

    #[error("corrupt checkpoint {path}: {message}")]
    CorruptCheckpoint { path: PathBuf, message: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("config fingerprint mismatch: checkpoint {checkpoint}, config {config}")]
    FingerprintMismatch { checkpoint: String, config: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code for machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "E_PARSE",
            Error::InsufficientHistory { .. } => "E_HISTORY",
            Error::Data { .. } => "E_DATA",
            Error::Spec(_) => "E_SPEC",
            Error::Config(_) => "E_CONFIG",
            Error::Shape(_) => "E_SHAPE",
            Error::Diverged { .. } => "E_DIVERGED",
            Error::NonFiniteLoss => "E_NONFINITE",
            Error::CorruptCheckpoint { .. } => "E_CORRUPT",
            Error::CheckpointVersion { .. } => "E_VERSION",
            Error::FingerprintMismatch { .. } => "E_FINGERPRINT",
            Error::Io(_) => "E_IO",
            Error::Csv(_) => "E_CSV",
            Error::Json(_) => "E_JSON",
        }
    }
}
