//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar the library is generic over (`f32` or `f64`).
///
/// Everything numeric is written against this trait; the crate root exposes
/// `f64` aliases for the common case.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Lossy conversion to `f64`, used for reporting.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Unit roundoff of the scalar type.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }

    fn infinity() -> Self;

    fn nan() -> Self;

    fn is_finite_val(self) -> bool;
}

impl Real for f64 {
    fn infinity() -> Self {
        f64::INFINITY
    }

    fn nan() -> Self {
        f64::NAN
    }

    fn is_finite_val(self) -> bool {
        self.is_finite()
    }
}

impl Real for f32 {
    fn infinity() -> Self {
        f32::INFINITY
    }

    fn nan() -> Self {
        f32::NAN
    }

    fn is_finite_val(self) -> bool {
        self.is_finite()
    }
}
