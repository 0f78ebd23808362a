use thiserror::Error;

/// Errors shared across the pipeline crates.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown corpus layout `{0}`")]
    UnknownLayout(String),
    #[error("not enough frames: need {needed}, have {have}")]
    InsufficientFrames { needed: usize, have: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
