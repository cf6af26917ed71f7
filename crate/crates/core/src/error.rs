use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's preconditions (shapes, ranges, config).
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    /// A dataset sample is invalid.
    #[error("data error in sample `{sample}`: {detail}")]
    Data { sample: String, detail: String },

    /// A file did not parse.
    #[error("parse error in {what} at byte offset {offset}: {detail}")]
    Parse {
        what: &'static str,
        offset: usize,
        detail: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A non-finite value showed up where it must not.
    #[error("non-finite value at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    /// The samples handed to a density estimator have no spread.
    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for I/O and file-format failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
