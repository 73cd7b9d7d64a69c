use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("cannot sample from a zero-norm vector")]
    ZeroNorm,

    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),

    #[error("estimator `{kind}` cannot run on the supplied accessors: {reason}")]
    MissingCapability { kind: String, reason: String },

    #[error("estimation plan too large ({0} samples); tighten tolerances or reduce scale")]
    PlanTooLarge(u128),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("history error: {0}")]
    History(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("config parse error (line {line}): {message}")]
    ConfigParse { line: usize, message: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
