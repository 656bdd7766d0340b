use std::path::PathBuf;

use craeg::trace_io::EmbeddingFileError;
use craeg::CraegError;
use thiserror::Error;

/// Everything a command can fail with; each class maps to its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Embedding {
        path: PathBuf,
        #[source]
        source: EmbeddingFileError,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Library(CraegError),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    /// 2 is left to clap for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Embedding { .. } | CliError::Input(_) => 5,
            CliError::Library(e) => match e {
                CraegError::InvalidConfig(_) => 3,
                CraegError::Infeasible(_) => 6,
                _ => 5,
            },
            CliError::Output(_) => 7,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<CraegError> for CliError {
    fn from(e: CraegError) -> Self {
        CliError::Library(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
