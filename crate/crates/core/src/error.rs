use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate candidate set for user {user}")]
    DegenerateCandidates { user: usize },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("ambiguous argmax: relevance entries are not pairwise distinct")]
    AmbiguousArgmax,

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("invalid candidate list for user {user}: {reason}")]
    InvalidCandidates { user: usize, reason: String },

    #[error("degenerate labels: interaction log contains a single class")]
    DegenerateLabels,

    #[error("infeasible market: {0}")]
    Infeasible(String),

    #[error("non-finite value produced by `{op}` on the gradient tape")]
    NonFiniteGradient { op: &'static str },

    #[error("round {round} diverged: {reason}")]
    Diverged { round: usize, reason: String },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("load failed: {0}")]
    Load(String),
}
