use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pose_cvae::Error),

    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("InvalidConfig: {0}")]
    Config(String),

    #[error("Checkpoint: {0}")]
    Checkpoint(String),

    #[error("Usage: {0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.name(),
            CliError::Io { .. } => "Io",
            CliError::Config(_) => "InvalidConfig",
            CliError::Checkpoint(_) => "Checkpoint",
            CliError::Usage(_) => "Usage",
        }
    }

    /// 1 for usage errors, 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}
