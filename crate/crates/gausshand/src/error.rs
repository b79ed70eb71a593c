use std::path::{Path, PathBuf};

use gausshand_core::Error as CoreError;

/// Failures surfaced by the loaders and the command-line driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    /// A core invariant violated by the contents of a file.
    #[error("{}: {source}", path.display())]
    Invalid { path: PathBuf, source: CoreError },
    #[error("{}: {location}: {message}", path.display())]
    Parse {
        path: PathBuf,
        /// `line L, column C, field F` for text formats, a byte offset or
        /// header field for binary ones.
        location: String,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unknown subcommand `{0}`")]
    UnknownSubcommand(String),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Machine-readable class printed as `error[Class]`.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Core(e) | Error::Invalid { source: e, .. } => e.class(),
            Error::Parse { .. } => "ParseError",
            Error::Io { .. } => "IoError",
            Error::UnknownSubcommand(_) => "UnknownSubcommand",
            Error::Usage(_) => "UsageError",
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn invalid(path: &Path) -> impl FnOnce(CoreError) -> Error + '_ {
        move |source| Error::Invalid {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Parse {
            path: path.to_path_buf(),
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
