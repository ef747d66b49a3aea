use std::path::PathBuf;

use crate::numerics::{Spectrum, Vector};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("singular matrix: pivot {pivot:e} at column {column}")]
    Singular { pivot: f64, column: usize },

    #[error("eigenvalue iteration did not converge after {sweeps} sweeps")]
    EigNoConvergence {
        sweeps: usize,
        partial: Box<Spectrum>,
    },

    #[error("newton iteration did not converge after {iterations} iterations (best residual {best_residual:e})")]
    NewtonNoConvergence {
        iterations: usize,
        best_residual: f64,
        best: Box<Vector>,
    },

    #[error("numeric overflow at {location}")]
    NumericOverflow { location: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("checkpoint load failed: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn overflow(location: impl Into<String>) -> Self {
        Error::NumericOverflow {
            location: location.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers themselves (overflow, singular
    /// systems, iterations that failed to converge) rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::EigNoConvergence { .. }
                | Error::NewtonNoConvergence { .. }
                | Error::NumericOverflow { .. }
        )
    }
}
