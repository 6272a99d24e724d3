use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("action {action} out of range for {count} actions")]
    ActionOutOfRange { action: usize, count: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("trace is stale: net changed since forward")]
    StaleTrace,
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("fisher factors not initialized")]
    FactorsUninitialized,
    #[error("missing expert dataset while lambda_expert > 0")]
    MissingExpert,
    #[error("expert dataset is for `{found}`, expected `{expected}`")]
    EnvMismatch { expected: String, found: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}
