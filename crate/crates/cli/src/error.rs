use heston_core::HestonError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("input format: {0}")]
    Format(String),

    #[error("{0}")]
    Domain(#[from] HestonError),

    #[error("calibration stopped at the iteration limit")]
    NotConverged,

    #[error("gradient check failed")]
    CheckFailed,

    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn format(msg: impl Into<String>) -> Self {
        CliError::Format(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed => 1,
            CliError::Usage(_) => 2,
            CliError::Format(_) | CliError::Io { .. } => 3,
            CliError::Domain(_) => 4,
            CliError::NotConverged => 5,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
