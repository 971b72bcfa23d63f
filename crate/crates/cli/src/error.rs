use std::path::{Path, PathBuf};

/// Failures surfaced to the command line, one variant per exit code class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 usage, 2 data or validation, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn data_in(path: &Path, msg: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {msg}", path.display()))
    }
}

impl From<lvd_core::Error> for CliError {
    fn from(e: lvd_core::Error) -> Self {
        match e {
            lvd_core::Error::Numerical(_) => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
