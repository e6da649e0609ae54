//! Floating-point scalar abstraction for the math layer.
//!
//! Geometry, clustering, and network code are generic over [`Real`] so they
//! can run at f32 or f64. The pipeline binds everything to [`crate::Scalar`]
//! (f64): checkpoint and dataset files store 64-bit floats, and the gradient
//! checks only hold at f64 precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar: f32 or f64.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + 'static
{
    /// Conversion from an f64 literal, for constants inside generic code.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wrap an angle into (−π, π].
pub fn wrap_angle<S: Real>(a: S) -> S {
    let two_pi = S::PI() + S::PI();
    let mut a = a % two_pi;
    if a <= -S::PI() {
        a = a + two_pi;
    }
    if a > S::PI() {
        a = a - two_pi;
    }
    a
}
