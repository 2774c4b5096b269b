use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("class {0} is not part of the model")]
    UnknownClass(String),

    #[error("non-finite value for {0}")]
    NonFinite(&'static str),

    #[error("no convergence after {iterations} iterations (final rss {rss:e})")]
    NoConvergence { iterations: usize, rss: f64 },

    #[error("spectral hole minimum sits on the {0} boundary of the scan window")]
    MinimumOnBoundary(Boundary),

    #[error("all fits failed: {0}")]
    AllFitsFailed(String),

    #[error("spectral hole not resolved: {0}")]
    Unresolved(String),

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage {0} produced no output")]
    EmptyStage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Lower,
    Upper,
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Boundary::Lower => f.write_str("lower"),
            Boundary::Upper => f.write_str("upper"),
        }
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end:
    /// 1 validation, 2 convergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. } | Error::AllFitsFailed(_) | Error::Unresolved(_) => 2,
            Error::Io { .. } => 3,
            _ => 1,
        }
    }
}
