use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no exact oracle for {0}")]
    UnsupportedOracle(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("proposal density is zero at a sampled failure point (params {params:?})")]
    DominationViolation { params: Vec<f64> },

    #[error("degenerate Markov chain at level {level}: acceptance rate {acceptance:.4} below 1%")]
    DegenerateChain { level: usize, acceptance: f64 },

    #[error("subset simulation did not reach the failure region within {max_levels} levels")]
    LevelLimit { max_levels: usize },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("conditioning impractical: rejection acceptance {acceptance:.3e} below 1e-4, estimate directly")]
    ImpracticalConditioning { acceptance: f64 },

    #[error("unreliable binning: empty bins carry {share:.3} of the failure mass (limit 0.2)")]
    UnreliableBinning { share: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
