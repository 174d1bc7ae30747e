use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model definition error: {0}")]
    Model(String),

    #[error("enumeration refused: {branches} branches exceed the cap of {cap}")]
    EnumerationCap { branches: u128, cap: u64 },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("too many active users: {active} > {max}")]
    TooManyUsers { active: usize, max: usize },

    #[error("schema mismatch in {path}: {detail}")]
    Schema { path: PathBuf, detail: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Short machine-readable tag, used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Model(_) => "model",
            Error::EnumerationCap { .. } => "enumeration_cap",
            Error::Diverged(_) => "diverged",
            Error::TooManyUsers { .. } => "too_many_users",
            Error::Schema { .. } => "schema",
            Error::MissingFile(_) => "missing_file",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
        }
    }
}
