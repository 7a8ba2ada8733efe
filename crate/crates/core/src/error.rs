use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation is not orthonormal (‖RᵀR − I‖∞ = {0:e})")]
    NonOrthonormalRotation(f64),
    #[error("quaternion is not normalized (‖q‖ = {0})")]
    UnnormalizedQuaternion(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate scene scale: all camera translations are (near) zero")]
    DegenerateScale,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-positive depth {depth} at pixel ({u}, {v})")]
    NonPositiveDepth { u: usize, v: usize, depth: f64 },
    #[error("scene has no renderable Gaussians")]
    EmptyScene,
    #[error("Huber threshold must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least two views are required, got {0}")]
    TooFewViews(usize),
    #[error("at least one target view is required")]
    TooFewTargets,
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("geometry expert needs ground-truth poses for the noisy oracle or posed protocol")]
    MissingOracle,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("image too small for the metric: {0}")]
    TooSmall(String),
    #[error("error list is empty")]
    EmptyErrorList,
    #[error("invalid sample count k = {k} for {n} points")]
    BadK { k: usize, n: usize },
    #[error("insufficient frames: {0}")]
    InsufficientFrames(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors that originate in the filesystem rather than the inputs' content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
