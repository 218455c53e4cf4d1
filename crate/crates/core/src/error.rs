use thiserror::Error;

/// Errors raised anywhere in the estimation / centrality / inference stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),

    #[error("non-increasing timestamps at row {row}: {previous:?} then {current:?}")]
    NonIncreasingTimestamps {
        row: usize,
        previous: String,
        current: String,
    },

    #[error("missing value at row {row}, column {column:?}")]
    MissingValue { row: usize, column: String },

    #[error("nonpositive level {value} at row {row}, column {column:?}")]
    NonPositiveLevel {
        row: usize,
        column: String,
        value: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("ill-conditioned design matrix (condition number {condition:.3e} exceeds cap {cap:.3e})")]
    IllConditioned { condition: f64, cap: f64 },

    #[error("stationarity violated: spectral radius {radius} is not below 1 - {margin}")]
    NotStationary { radius: f64, margin: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite matrix entry")]
    NonFinite,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),
}

/// Coarse classification used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Parse { .. }
            | Error::InvalidInput(_)
            | Error::DuplicateLabel(_)
            | Error::NonIncreasingTimestamps { .. }
            | Error::MissingValue { .. }
            | Error::NonPositiveLevel { .. }
            | Error::DimensionMismatch(_) => ErrorClass::Input,
            Error::IllConditioned { .. }
            | Error::NotStationary { .. }
            | Error::Singular(_)
            | Error::NonFinite
            | Error::Numerical(_)
            | Error::Degenerate(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
