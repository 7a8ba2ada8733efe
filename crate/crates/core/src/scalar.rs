//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the geometry, renderer and losses are generic over.
///
/// Implemented for `f32` (fast forward rendering) and `f64` (optimization and
/// finite-difference checks).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Tolerance on `‖RᵀR − I‖∞` for a matrix to count as a rotation.
    const ORTHO_TOL: f64;
    /// Tolerance on `|‖q‖ − 1|` for a quaternion to count as normalized.
    const QUAT_TOL: f64;

    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn to_f(self) -> f64 {
        self.to_f64().expect("finite cast to f64")
    }

    #[inline]
    fn half() -> Self {
        Self::c(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::c(2.0)
    }
}

impl Real for f32 {
    const ORTHO_TOL: f64 = 1e-5;
    const QUAT_TOL: f64 = 1e-5;
}

impl Real for f64 {
    const ORTHO_TOL: f64 = 1e-9;
    const QUAT_TOL: f64 = 1e-9;
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
