//! Scalar abstraction for the math core.
//!
//! `Matrix`, `Tape`, and the attention/orthogonality layers are generic over
//! `Scalar` so the same kernels run at f32 or f64. Everything downstream of
//! the math core (diffusion, training, evaluation, file formats) is pinned
//! to f64 via the aliases at the crate root.

use std::fmt::{Debug, Display};

/// Floating-point element type usable by the math core.
pub trait Scalar:
    num_traits::Float + num_traits::FloatConst + Debug + Display + Default + Copy + Send + Sync + 'static
{
    /// Lossy conversion from f64, used for constants inside generic code.
    fn from_f64(x: f64) -> Self;
    /// Widening conversion to f64, used for logging and serialization.
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
