use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bone {index}: {reason}")]
    InvalidBone { index: usize, reason: String },

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("invalid deformation gradient for particle {particle}: {reason}")]
    InvalidDeformation { particle: usize, reason: String },

    #[error("particle {particle} at {position:?} is outside the simulation grid")]
    OutOfBounds { particle: usize, position: [f64; 3] },

    #[error("frame index {index} out of range (sequence has {frames} frames)")]
    FrameOutOfRange { index: usize, frames: usize },

    #[error("part {part} has no members")]
    EmptyPart { part: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("adjoint tape needs {needed} bytes, limit is {limit}")]
    TapeOverflow { needed: usize, limit: usize },

    #[error("phase {phase} diverged at iteration {iter}: loss = {loss}")]
    Diverged { phase: usize, iter: usize, loss: f64 },

    #[error("adjoint gradient off by {max_relative_error:e} relative (tolerance {tolerance:e})")]
    GradientMismatch { max_relative_error: f64, tolerance: f64 },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }
}
