use thiserror::Error;

use crate::numerics::NumericsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),

    #[error("action {action} out of range for agent {agent} (|A| = {n_actions})")]
    ActionOutOfRange {
        agent: usize,
        action: usize,
        n_actions: usize,
    },

    #[error("step called on a finished episode")]
    EpisodeDone,

    #[error("invalid dataset composition: {0}")]
    InvalidComposition(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {msg} (last good record: {last_good})")]
    Parse {
        line: usize,
        msg: String,
        last_good: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Training produced non-finite values, either caught by a loss check or
    /// inside a forward pass.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence(_) | Error::Numerics(NumericsError::NonFinite(_)))
    }
}
