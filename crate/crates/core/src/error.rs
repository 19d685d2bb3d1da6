use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A density or helper was called outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid parameters, priors or run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A latent path violates the segment structure.
    #[error("invalid latent path: {0}")]
    InvalidPath(String),

    #[error("all forward weights vanished at t = {t}; the duration cap is too small for the data")]
    Underflow { t: usize },

    #[error("empty active set in beam forward pass at t = {t}")]
    EmptyActiveSet { t: usize },

    #[error("no valid predecessor while sampling backwards at t = {t}")]
    NoPredecessor { t: usize },

    #[error("sweep {sweep} failed: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: line {line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Config(_) | Error::Parse { .. } => 2,
            Error::Io { .. } => 4,
            Error::InvalidPath(_)
            | Error::Underflow { .. }
            | Error::EmptyActiveSet { .. }
            | Error::NoPredecessor { .. }
            | Error::Sweep { .. } => 3,
        }
    }
}
