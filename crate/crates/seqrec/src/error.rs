//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by ingestion, model building, solving and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty corpus: all sequences were removed by filtering")]
    EmptyCorpus,

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("no test cases to score")]
    NoTestCases,

    #[error("unencountered state: no transition row for {0}")]
    UnencounteredState(String),

    #[error("bad artifact {path}: {msg}")]
    BadArtifact { path: PathBuf, msg: String },

    #[error("solver did not stabilize within the iteration budget")]
    NonConvergence,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
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

    /// Process exit code for the CLI: 1 usage, 2 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
