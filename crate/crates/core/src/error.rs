use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, widths or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A tape was replayed after the parameters it recorded were updated.
    #[error("stale tape: parameters changed since the forward pass (recorded version {recorded}, current {current})")]
    StaleTape { recorded: u64, current: u64 },

    #[error("optimizer fault: {0}")]
    OptimizerFault(String),

    /// Non-finite loss during training.
    #[error("divergence fault at step {step}: {what}")]
    Divergence { step: u64, what: String },

    #[error("buffer is empty")]
    BufferEmpty,

    #[error("demonstration collection failed: {0}")]
    Collection(String),

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("nothing to plot: {0}")]
    EmptyPlot(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::OptimizerFault(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}
