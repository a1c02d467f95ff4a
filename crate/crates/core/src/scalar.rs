//! Scalar abstraction shared by every numerical module.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the crate: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + std::str::FromStr {
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable in every Real")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Real for f32 {}
impl Real for f64 {}
