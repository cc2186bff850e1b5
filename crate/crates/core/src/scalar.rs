//! Scalar abstraction: the shipped pipelines run in `f32`, gradient-check
//! oracles instantiate the same code in `f64`.

use core::fmt::{Debug, Display};
use num_traits::Float;

/// Floating-point element type of every tensor in the crate.
pub trait Scalar: Float + Debug + Display + Send + Sync + 'static {
    /// Lossy conversion from an `f64` constant.
    fn c(v: f64) -> Self;
    /// Widen to `f64` (exact for `f32` and `f64`).
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn c(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn c(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
