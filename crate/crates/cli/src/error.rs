use std::path::PathBuf;

use crate::config::ConfigError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),

    #[error("check failed: {0}")]
    Check(String),

    #[error(transparent)]
    Core(#[from] ernn::Error),

    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl CliError {
    pub(crate) fn output(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Output {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Numeric and convergence failures exit with 3; everything traceable to
    /// the configuration, the input data or the output location exits with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => EXIT_CHECK_FAILED,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Config(_) | CliError::Core(_) | CliError::Output { .. } => EXIT_CONFIG,
        }
    }
}
