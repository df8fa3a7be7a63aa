use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("environment step {step} failed: {reason}")]
    EnvStep { step: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("all weights are zero")]
    ZeroWeights,

    /// The behavior policy gives zero probability to an action it supposedly generated.
    #[error("behavior policy has zero probability on the observed action (trajectory {trajectory}, step {step})")]
    InvalidDataset { trajectory: usize, step: usize },

    /// Expected score magnitude is zero, so the policy gradient is identically zero.
    #[error("score mass Z is zero: the policy gradient vanishes")]
    ZeroScoreMass,

    #[error("linear system is singular")]
    Singular,

    #[error("kernel row (state {state}, action {action}) sums to {sum}")]
    KernelNotNormalized { state: usize, action: usize, sum: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dataset format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
