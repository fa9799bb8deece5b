//! Floating-point abstraction shared by every numerical module.
//!
//! All physics, optimization and network code is written against [`Scalar`]
//! so the same code runs in `f32` (cheaper training) or `f64` (reference and
//! tests). Random draws are always taken in `f64` and then converted, which
//! keeps sampled trajectories identical across precisions up to rounding.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Real scalar usable by the simulator and the neural core.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Short type name, recorded in run manifests.
    const NAME: &'static str;

    /// Converts an `f64` literal or sample into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        // Every f64 has an f32/f64 image (possibly rounded or infinite).
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

/// Shorthand for [`Scalar::lit`].
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::lit(x)
}

/// `10 log10(x)`.
#[inline]
pub fn to_db<T: Scalar>(x: T) -> T {
    lit::<T>(10.0) * x.log10()
}

/// Inverse of [`to_db`].
#[inline]
pub fn from_db<T: Scalar>(db: T) -> T {
    lit::<T>(10.0).powf(db / lit(10.0))
}

/// dBm to watts.
#[inline]
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Watts to dBm. Zero power maps to negative infinity.
#[inline]
pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn db_round_trip() {
        for &x in &[1e-13, 3.2e-3, 1.0, 6.3] {
            let y: f64 = from_db(to_db(x));
            assert!((y - x).abs() <= 1e-12 * x);
        }
        assert!((dbm_to_watts(38.0) - 6.309_573_444_801_933).abs() < 1e-12);
        assert!((watts_to_dbm(dbm_to_watts(-114.0)) + 114.0).abs() < 1e-9);
    }

    #[test]
    fn f32_literals() {
        let x: f32 = lit(0.25);
        assert_eq!(x, 0.25f32);
        assert_eq!(<f32 as Scalar>::NAME, "f32");
    }
}
