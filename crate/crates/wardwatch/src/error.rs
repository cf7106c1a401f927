use std::path::PathBuf;

/// Errors raised by file IO, parsing and the command line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] wardwatch_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A malformed row or header in a CSV file; `line` is 1-based and counts
    /// the header.
    #[error("{}, line {line}: {message}", path.display())]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status: 1 for usage and configuration problems, 2 for
    /// problems with the data itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Io { .. } => 1,
            Error::Core(wardwatch_core::Error::Config(_)) => 1,
            Error::Json { .. } | Error::Csv { .. } | Error::Core(_) => 2,
        }
    }
}
