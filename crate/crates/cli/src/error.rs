use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] nib_core::Error),

    #[error("{0}")]
    NotConverged(String),

    #[error("comparison failed: {0}")]
    ComparisonFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        use nib_core::Error as E;
        let code = match self {
            CliError::Io { .. } | CliError::Json { .. } | CliError::Input(_) => 1,
            CliError::NotConverged(_) => 2,
            CliError::ComparisonFailed(_) => 4,
            CliError::Core(e) => match e {
                E::LoopBoundNotFulfilled { .. } => 3,
                E::PercolationNotConverged(_) | E::Diverged { .. } | E::ImaginarySign { .. } | E::Singular => 2,
                _ => 1,
            },
        };
        ExitCode::from(code)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
