use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The logging policy put (numerically) zero mass on an action that was
    /// actually observed, so no density ratio exists.
    #[error(
        "positivity violation: logging mass {mass:e} on observed action at trajectory {trajectory}, step {step}"
    )]
    PositivityViolation {
        trajectory: usize,
        step: usize,
        mass: f64,
    },

    #[error("numeric failure: {message} (smallest eigenvalue estimate {min_eigenvalue:e})")]
    Numeric { message: String, min_eigenvalue: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
