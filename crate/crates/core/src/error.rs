use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    #[error("non-finite gradient in layer {layer}, parameter {index}: {value}")]
    NonFiniteGradient { layer: usize, index: usize, value: f64 },

    #[error("tape is stale: recorded for parameter version {recorded}, network is at {current}")]
    StaleTape { recorded: u64, current: u64 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("architecture outside the search space: {0}")]
    OutOfSpace(String),

    #[error("no successful trial recorded")]
    NoResult,

    #[error("training diverged at step {step}, epoch {epoch}: loss {loss}")]
    Diverged { step: usize, epoch: usize, loss: f64 },

    #[error("zero normalization divisor for measurement {0}")]
    ZeroDivisor(usize),

    #[error("dataset already normalized with a different specification")]
    AlreadyNormalized,

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("length mismatch in {path}: {reason}")]
    LengthMismatch { path: PathBuf, reason: String },

    #[error("NaN entry at row {row}, column {col}")]
    NanEntry { row: usize, col: usize },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("too few subjects: need at least {needed}, found {found}")]
    TooFewSubjects { needed: usize, found: usize },

    #[error("statistical test undefined: {0}")]
    Undefined(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv parse error at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
