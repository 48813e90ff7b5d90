use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("rank deficient: requested {requested}, available {available}")]
    RankDeficient { requested: usize, available: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("class {class} has {available} samples, episode needs {needed}")]
    ClassTooSmall {
        class: u32,
        needed: usize,
        available: usize,
    },
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),
    #[error("bad feature file: {0}")]
    Format(String),
    #[error("truncated feature file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable tag used in the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput => "empty_input",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::NotSymmetric(_) => "not_symmetric",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ClassTooSmall { .. } => "class_too_small",
            Error::InvalidPipeline(_) => "invalid_pipeline",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}
