//! Error and result types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by ingestion, matching, estimation, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A required column is absent from an input file.
    #[error("schema error: missing column \"{0}\"")]
    Schema(String),

    /// A cell could not be parsed as a number.
    #[error("parse error at row {row}, column \"{column}\": {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Input data violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Invalid configuration (flags, thresholds, spec fields).
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric routine failed (singular matrix, overflow, non-finite value).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The matching solver could not produce a valid result.
    #[error("solver error: {0}")]
    Solver(String),

    /// Estimation is impossible on the given sample.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A transform was evaluated outside its domain.
    #[error("domain error in pair {pair_index}: {message}")]
    Domain { pair_index: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for input/configuration problems,
    /// 2 for numeric or solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Solver(_) => 2,
            _ => 1,
        }
    }

    /// Short machine-readable tag for JSON error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Solver(_) => "solver",
            Error::Estimation(_) => "estimation",
            Error::Domain { .. } => "domain",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
