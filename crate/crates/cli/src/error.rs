use std::path::{Path, PathBuf};

use fggm::{ErrorClass, FggmError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: FggmError,
    },
}

impl CliError {
    /// 2 validation, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core { source, .. } => match source.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Io => 4,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, FggmError> {
    fn context(self, what: impl Into<String>) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}
