//! Errors of the command-line driver and their exit codes.

use hypgl::solver::Status;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config {path}: {source}")]
    Config { path: String, source: toml::de::Error },

    #[error(transparent)]
    Core(#[from] hypgl::Error),

    /// Outputs were written, but the minimizer stopped early.
    #[error("minimizer stopped with status {status:?} after {iterations} iterations")]
    NotConverged { status: Status, iterations: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 0 ok, 1 I/O, 2 usage, 3 numerical failure, 4 model guard, 5 dimension mismatch.
    pub fn exit_code(&self) -> u8 {
        use hypgl::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Core(e) => match e {
                E::InvalidInput(_) => 2,
                E::ModelGuard(_) => 4,
                E::DimensionMismatch { .. } => 5,
                E::Numerical(_) | E::NotConverged { .. } | E::Mesh(_) | E::Internal(_) => 3,
                E::Io(_) | E::Json(_) => 1,
            },
            CliError::NotConverged { .. } => 3,
            CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => 1,
        }
    }
}
