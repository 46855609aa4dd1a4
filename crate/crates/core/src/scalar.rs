//! Scalar abstraction shared by all the numeric code.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point type the linear-system algebra is generic over.
///
/// Implemented for `f32` and `f64`. Everything that needs eigenvalues, SVDs or
/// matrix exponentials goes through `nalgebra`, so the bound is its
/// [`RealField`] plus lossless-enough conversions from `f64` literals.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Default + Send + Sync + 'static
{
    /// Machine epsilon of the type, as `f64`.
    const EPS: f64;

    /// Converts an `f64` constant into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn eps() -> Self {
        Self::lit(Self::EPS)
    }
}

/// Modulus of a complex number without requiring `num_traits::Float`.
#[inline]
pub fn cabs<T: Scalar>(z: num_complex::Complex<T>) -> T {
    z.re.hypot(z.im)
}

/// Argument of a complex number in radians, in `(-pi, pi]`.
#[inline]
pub fn carg<T: Scalar>(z: num_complex::Complex<T>) -> T {
    z.im.atan2(z.re)
}

impl Scalar for f64 {
    const EPS: f64 = f64::EPSILON;
}

impl Scalar for f32 {
    const EPS: f64 = f32::EPSILON as f64;
}
