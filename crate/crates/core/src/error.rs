use std::io;

use thiserror::Error;

/// Errors surfaced by the simulator, the networks, and the experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("genome length mismatch: expected {expected}, got {actual}")]
    GenomeLength { expected: usize, actual: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("missing grid coverage: {0}")]
    MissingCoverage(String),

    #[error("episode already finished after {0} steps")]
    EpisodeFinished(u32),

    #[error("evaluation failed at generation {generation}: {message}")]
    Evaluation { generation: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptCheckpoint(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
