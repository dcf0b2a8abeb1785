use thiserror::Error;

/// Errors produced by the frofa library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: u32 },

    #[error("not a feature cache: bad magic")]
    BadMagic,

    #[error("unsupported cache version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("npy parse error: {0}")]
    NpyFormat(String),

    #[error("unsupported dtype {found}, expected {expected}")]
    UnsupportedDtype { found: String, expected: String },

    #[error("rank mismatch: expected rank {expected}, found shape {found:?}")]
    RankMismatch { expected: usize, found: Vec<u64> },

    #[error("class {class} has {available} examples, fewer than k={k}")]
    NotEnoughExamples { class: u32, available: usize, k: usize },

    #[error("invalid augmentation: {0}")]
    InvalidAugmentation(String),

    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),

    #[error("spatial augmentation requires a square token grid, got N={0}")]
    NonSquareGrid(usize),

    #[error("head count {h} does not divide channel count {c}")]
    HeadCount { h: usize, c: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("singular system: X^T X is not positive definite at lambda = 0")]
    SingularSystem,

    #[error("non-finite loss at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f32 },

    #[error("jpeg codec failure: {0}")]
    Codec(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
