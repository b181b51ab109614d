use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the scheduler, the synthetic environment and the
/// persistence layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid run, policy or environment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A reward input (loss, reward, gradient statistic) is outside its domain,
    /// usually NaN or infinite.
    #[error("reward domain error: {0}")]
    RewardDomain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    /// Training produced a non-finite loss or gradient.
    #[error("divergence at turn {turn}, arm {arm}: {detail}")]
    Divergence {
        turn: u64,
        arm: usize,
        detail: String,
    },

    #[error("infeasible suite geometry: {0}")]
    Construction(String),

    #[error("checkpoint decode error: {0}")]
    Checkpoint(String),

    #[error("trace format error: {0}")]
    TraceFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
