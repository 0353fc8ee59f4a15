//! Floating-point scalar abstraction.
//!
//! All simulation math is generic over [`Scalar`], so the same engine runs in
//! `f32` or `f64`. The crate-root type aliases pin `f64`, which is what the
//! stated tolerances are calibrated for.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real scalar type of the simulator: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Accepted deviation of `Σ|amplitude|²` from 1 for states crossing
    /// module boundaries.
    const NORM_TOL: Self;

    /// Probabilities below this are treated as an impossible branch
    /// (post-selection failure, annihilating operator application).
    const BRANCH_TOL: Self;
}

impl Scalar for f64 {
    const NORM_TOL: f64 = 1e-9;
    const BRANCH_TOL: f64 = 1e-15;
}

impl Scalar for f32 {
    const NORM_TOL: f32 = 1e-4;
    const BRANCH_TOL: f32 = 1e-12;
}

/// Shorthand for lifting an `f64` literal into the working scalar type.
#[inline]
pub(crate) fn real<T: Scalar>(value: f64) -> T {
    T::from_f64(value).expect("f64 literal representable in scalar type")
}
