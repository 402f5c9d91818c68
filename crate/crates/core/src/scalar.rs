//! Scalar abstraction for the numeric core.
//!
//! Everything under [`crate::tensor`], [`crate::autodiff`] and [`crate::theory`]
//! is generic over [`Real`]; the rest of the crate works with the `f64`
//! aliases exported from the crate root.

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point scalar usable by the numeric core: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    /// Shorthand for lossy conversion from `f64` constants.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in target scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}
