//! Scalar abstraction so the math core can run at `f32` for training and
//! `f64` for finite-difference verification.

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point element type for arrays, losses, and layers.
pub trait Scalar:
    Float
    + FromPrimitive
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lossless-enough literal injection into a generic scalar.
pub fn cast<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("f64 literal convertible to scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cast_round_trips_simple_values() {
        assert_eq!(cast::<f32>(0.5), 0.5f32);
        assert_eq!(cast::<f64>(-3.0), -3.0f64);
    }
}
