//! Floating-point scalar abstraction: all numeric code is generic over
//! [`Scalar`], instantiated as `f32` or `f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type for every numeric routine in this crate.
///
/// `RealField` supplies the transcendental and ordering operations,
/// `FromPrimitive`/`ToPrimitive` the lossless-enough conversions used for
/// literals and serialization.
pub trait Scalar: RealField + FromPrimitive + ToPrimitive + Copy {
    /// Converts an `f64` literal into `Self`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal converts to scalar")
    }

    /// Converts `Self` into `f64` for reporting and serialization.
    fn to_f64_s(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl<T> Scalar for T where T: RealField + FromPrimitive + ToPrimitive + Copy {}
