use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("singularity error: {0}")]
    Singular(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("parse error in {path}, line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("factorization error: {0}")]
    Factorization(String),

    #[error("blow-up on path {path} at step {step}: {state}")]
    BlowUp {
        path: usize,
        step: usize,
        state: String,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for computation failures, 2 for
    /// input and I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Singular(_)
            | Error::Degenerate(_)
            | Error::Factorization(_)
            | Error::BlowUp { .. }
            | Error::Precondition(_) => 1,
            Error::Alignment(_)
            | Error::Coverage(_)
            | Error::Parse { .. }
            | Error::Config(_)
            | Error::Io { .. }
            | Error::Serialization(_) => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
