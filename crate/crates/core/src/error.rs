use std::io;

use thiserror::Error;

use crate::nnet::NnetError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("world generation failed after {attempts} attempts: {reason}")]
    WorldGeneration { attempts: usize, reason: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("stage order violation: {0}")]
    StageOrder(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Numeric(#[from] NnetError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
