use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty input")]
    EmptyInput,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("label {0} out of range")]
    Label(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite values in representations at round {round}")]
    NonFinite { round: usize },

    #[error("embedding training diverged (loss is NaN) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("model file format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("model file: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
