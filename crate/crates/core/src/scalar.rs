//! Scalar abstraction shared by the numerical modules.
//!
//! Everything downstream of basis construction (projection, the samplers,
//! the diagnostics) is written against [`Scalar`], so the same code runs in
//! `f64` and `f32`. Basis construction itself always happens in `f64` and is
//! cast afterwards; see [`crate::basis::OrthoBasis::cast`].

use std::fmt::Debug;
use std::str::FromStr;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the sampler and diagnostics.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + FromStr + Debug {
    /// Converts an `f64` literal or intermediate into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn half<T: Scalar>() -> T {
        T::lit(1.0) / T::from_count(2)
    }

    #[test]
    fn literal_round_trip() {
        assert_eq!(half::<f64>(), 0.5);
        assert_eq!(half::<f32>(), 0.5f32);
        assert_eq!(f32::lit(0.25).as_f64(), 0.25);
    }
}
