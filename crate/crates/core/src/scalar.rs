//! Floating point abstraction shared by every numeric type in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the simulation and calculus are written against (`f32` or `f64`).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into the scalar type.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Converts a count.
    fn count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    /// Slack used when comparing grid times.
    fn time_tolerance(scale: Self) -> Self {
        Self::epsilon() * Self::lit(256.0) * scale.max(Self::one())
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
