use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation, portfolio and backtest routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file; `row` and `column` are 1-based, header is row 1.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: need at least {required} observations, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate asset {asset}: variance {variance} is not positive")]
    DegenerateAsset { asset: usize, variance: f64 },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("empty universe: no asset is fully available over the window")]
    EmptyUniverse,

    #[error("missing observation for asset {asset} at date index {date}")]
    MissingObservation { asset: usize, date: usize },

    #[error("covariance matrix is singular or indefinite (pivot {pivot:e} below floor {floor:e}); use a cleaned estimator")]
    Singular { pivot: f64, floor: f64 },

    #[error("bootstrap replica {replica} kept producing zero-variance rows after {attempts} attempts")]
    DegenerateBootstrap { replica: usize, attempts: usize },

    #[error("solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
}

impl Error {
    /// True for failures of the numerical routines themselves, as opposed to
    /// bad input data or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NoConvergence { .. }
                | Error::DegenerateBootstrap { .. }
                | Error::DegenerateAsset { .. }
                | Error::NonFinite
        )
    }

    /// Copy of this error; I/O sources are carried over by kind and message.
    pub fn replicate(&self) -> Error {
        match self {
            Error::Io { path, source } => Error::Io {
                path: path.clone(),
                source: std::io::Error::new(source.kind(), source.to_string()),
            },
            Error::Parse { row, column, message } => Error::Parse {
                row: *row,
                column: *column,
                message: message.clone(),
            },
            Error::InvalidInput(m) => Error::InvalidInput(m.clone()),
            Error::InsufficientData { required, actual } => Error::InsufficientData {
                required: *required,
                actual: *actual,
            },
            Error::DimensionMismatch { expected, actual } => Error::DimensionMismatch {
                expected: *expected,
                actual: *actual,
            },
            Error::DegenerateAsset { asset, variance } => Error::DegenerateAsset {
                asset: *asset,
                variance: *variance,
            },
            Error::NonFinite => Error::NonFinite,
            Error::EmptyUniverse => Error::EmptyUniverse,
            Error::MissingObservation { asset, date } => Error::MissingObservation {
                asset: *asset,
                date: *date,
            },
            Error::Singular { pivot, floor } => Error::Singular {
                pivot: *pivot,
                floor: *floor,
            },
            Error::DegenerateBootstrap { replica, attempts } => Error::DegenerateBootstrap {
                replica: *replica,
                attempts: *attempts,
            },
            Error::NoConvergence { iterations } => Error::NoConvergence {
                iterations: *iterations,
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
