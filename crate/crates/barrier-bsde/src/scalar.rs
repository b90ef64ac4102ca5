//! Scalar abstraction for the numeric kernels.

use std::fmt;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real: Float + FromPrimitive + fmt::Debug + fmt::Display + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into `R`. Panics only on non-representable
/// input, which cannot happen for finite constants.
#[inline]
pub fn r64<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("finite f64 constant")
}

/// Converts `R` to `f64` (exact for f32/f64).
#[inline]
pub fn to_f64<R: Real>(x: R) -> f64 {
    x.to_f64().expect("scalar converts to f64")
}
