use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the selection pipeline.
///
/// Variants split into input-validation failures (bad files, bad flags,
/// contract violations by the caller) and computational failures (a
/// factorization or fit that did not work out on valid input). The CLI
/// maps these onto exit codes 2 and 1 respectively.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing response column {0}")]
    MissingResponse(String),
    #[error("non-binary response: value {value} at row {row}")]
    NonBinaryResponse { row: usize, value: String },
    #[error("non-numeric cell at row {row}, column {column}: {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("constant column {0}")]
    ConstantColumn(String),
    #[error("degenerate response: all observations are {0}")]
    DegenerateResponse(u8),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index out of range: {index} (p = {p})")]
    IndexOutOfRange { index: usize, p: usize },
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("separation detected: coefficient norm diverged to {norm:.3e}")]
    Separation { norm: f64 },
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl Error {
    /// True for errors caused by the caller's input rather than by the
    /// numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::MissingResponse(_)
                | Error::NonBinaryResponse { .. }
                | Error::NonNumeric { .. }
                | Error::ConstantColumn(_)
                | Error::DegenerateResponse(_)
                | Error::Invalid(_)
                | Error::Dimension(_)
                | Error::IndexOutOfRange { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
