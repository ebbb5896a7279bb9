use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("row {row} has no observed cell")]
    EmptyRow { row: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (|a[{row},{col}] - a[{col},{row}]| = {diff:e})")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("zero variance in column {0}; a correlation-based target needs a positive diagonal")]
    ZeroVariance(usize),

    #[error("{what} needs at least {needed} replicates, found {found}")]
    TooFewReplicates {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("factorization failed after eigenvalue repair")]
    Factorization,

    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
