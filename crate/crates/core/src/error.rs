use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("parse error at data row {row}, column `{column}`: cannot read {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("input contains no data rows")]
    EmptyInput,

    #[error("dataset too small: {rows} rows, need at least {min}")]
    TooSmall { rows: usize, min: usize },

    #[error("shape mismatch: expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("group `{0}` is empty; metrics are undefined")]
    EmptyGroup(String),

    #[error("metric undefined: {rate} has a zero denominator in the {group} group")]
    UndefinedMetric { rate: &'static str, group: String },

    #[error("only {found} positive training rows, need {needed}")]
    InsufficientPositives { needed: usize, found: usize },

    #[error("ledger consistency error: {0}")]
    LedgerConsistency(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("external predictor failed: {0}")]
    External(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
