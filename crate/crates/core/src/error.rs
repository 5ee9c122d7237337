use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid universe: {0}")]
    InvalidUniverse(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid penalty parameters: {0}")]
    InvalidPenalty(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("non-spin entry {value} at position {index}")]
    NotASpin { index: usize, value: i32 },

    #[error("slack encoding requires positive total return")]
    NonPositiveTotalReturn,

    #[error("return target exceeds total available return (target {target}, total {total})")]
    ReturnTargetExceedsTotal { target: f64, total: f64 },

    #[error("return mode `{0}` is not supported by this encoding")]
    UnsupportedReturnMode(&'static str),

    #[error("lambda2 estimation needs n ≥ 2 (got n = {0})")]
    Lambda2NeedsTwoAssets(usize),

    #[error("instance infeasible")]
    Infeasible,

    #[error("enumeration guard exceeded: {count} candidates > limit {limit}")]
    EnumerationGuard { count: u128, limit: u128 },

    #[error("nonpositive price {value} for symbol `{symbol}` at period `{period}`")]
    NonPositivePrice {
        symbol: String,
        period: String,
        value: f64,
    },

    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("missing value for symbol `{symbol}` at period `{period}`")]
    MissingValue { symbol: String, period: String },

    #[error("unparseable value `{value}` for symbol `{symbol}` at period `{period}`")]
    BadNumber {
        symbol: String,
        period: String,
        value: String,
    },

    #[error("duplicate symbol `{0}`")]
    DuplicateSymbol(String),

    #[error("too few periods: found {found}, need at least {required}")]
    TooFewPeriods { found: usize, required: usize },

    #[error("missing field `{0}`")]
    MissingField(&'static str),

    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },

    #[error("malformed QUBO file at line {line}: {reason}")]
    QuboFormat { line: usize, reason: String },

    #[error("unknown report format `{0}`")]
    UnknownFormat(String),

    #[error("empty report")]
    EmptyReport,

    #[error("run with seed {seed} failed: {source}")]
    SolverRun {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
