use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A TSV row that could not be parsed. Lines are 1-based and count the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A binary file whose layout does not match what was expected.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
            Error::Parse { .. }
            | Error::Format { .. }
            | Error::Validation(_)
            | Error::Dimension(_)
            | Error::Usage(_) => 2,
        }
    }
}

pub(crate) fn check_len(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension(format!(
            "{what}: expected length {expected}, got {actual}"
        )));
    }
    Ok(())
}
