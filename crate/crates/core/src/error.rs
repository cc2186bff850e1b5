//! Error type shared by every module in the crate.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, CoreError>;

/// Everything that can go wrong in the numeric core.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A tensor element fell outside the valid intensity range [0, 1].
    OutOfRange { value: f64, index: usize },
    /// A dimension was zero, negative or not divisible as required.
    BadShape(String),
    /// Two tensors that must share a shape do not.
    ShapeMismatch { expected: String, got: String },
    /// A vector dimension (embedding, conditioning width) does not match.
    DimMismatch { expected: usize, got: usize },
    /// A value that must be finite is NaN or infinite.
    NonFinite(String),
    /// A malicious prompt references a parent that is not a normal prompt.
    BadParent(String),
    /// An NSFW direction is not unit-norm or has the wrong dimension.
    BadDirection(String),
    /// A prompt's parent is missing from the prompt set or target cache.
    MissingParent(String),
    /// Attract-mode latent protection was requested without a target image.
    MissingTarget,
    /// An operation that needs at least one element got none.
    EmptyInput,
    /// Image smaller than the metric window.
    TooSmall { dim: usize, min: usize },
    /// The training loss became NaN/inf at the given step.
    NonFiniteLoss { step: u32 },
    /// Image shape is incompatible with the generator or editor layout.
    IncompatibleShapes(String),
    /// A configuration value violates its documented invariant.
    BadConfig(String),
    /// A target cache was built for a different image.
    CacheMismatch,
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::OutOfRange { value, index } => {
                write!(f, "element {index} is {value}, outside [0, 1]")
            }
            CoreError::BadShape(msg) => write!(f, "bad shape: {msg}"),
            CoreError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            CoreError::DimMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            CoreError::NonFinite(what) => write!(f, "non-finite value in {what}"),
            CoreError::BadParent(id) => write!(f, "bad parent prompt: {id}"),
            CoreError::BadDirection(msg) => write!(f, "bad direction: {msg}"),
            CoreError::MissingParent(id) => write!(f, "missing parent prompt: {id}"),
            CoreError::MissingTarget => write!(f, "attract mode requires a target image"),
            CoreError::EmptyInput => write!(f, "empty input"),
            CoreError::TooSmall { dim, min } => {
                write!(f, "image dimension {dim} smaller than required {min}")
            }
            CoreError::NonFiniteLoss { step } => {
                write!(f, "training loss became non-finite at step {step}")
            }
            CoreError::IncompatibleShapes(msg) => write!(f, "incompatible shapes: {msg}"),
            CoreError::BadConfig(msg) => write!(f, "bad config: {msg}"),
            CoreError::CacheMismatch => {
                write!(f, "target cache was built for a different image")
            }
        }
    }
}

impl core::error::Error for CoreError {}
