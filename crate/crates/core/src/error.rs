//! Error type shared across the library.

use thiserror::Error;

/// Convenience alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid stream: {0}")]
    InvalidStream(String),

    #[error("event index {index} out of range for stream of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("history is not time-ordered before the query event")]
    UnorderedHistory,

    #[error("simulation exceeded the event cap of {cap}")]
    EventBudget { cap: usize },

    #[error("intensity is zero at t={t}; log-density undefined")]
    DegenerateIntensity { t: f64 },

    #[error("anomaly is not finite at t={t}")]
    NonFiniteScore { t: f64 },

    #[error("pre- and post-change regimes must share alpha, beta and kernel")]
    KernelMismatch,

    #[error("training diverged at epoch {epoch} (loss {loss}); try a smaller learning_rate")]
    Divergence { epoch: usize, loss: f64 },

    #[error("online update diverged at t={t} (loss {loss}); try a smaller eta")]
    OnlineDivergence { t: f64, loss: f64 },

    #[error("infeasible calibration target: {0}")]
    InfeasibleTarget(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::OnlineDivergence { .. } | Error::DegenerateIntensity { .. } | Error::NonFiniteScore { .. }
        )
    }
}
