use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Geometric preconditions violated (degenerate wall, coincident points).
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// A numeric or dimensional argument is out of contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An internal interface contract was broken (e.g. index misalignment
    /// between uploaded legacy maps and the global map).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Scenario configuration failed to parse or validate. `path` is the
    /// offending field path, not a filesystem path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Vision error-table training had no usable samples.
    #[error("vision training failed: {0}")]
    Training(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
