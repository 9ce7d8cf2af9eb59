//! Scalar abstraction shared by the numeric kernels.
//!
//! Force laws, gains, filters and observers are written once against [`Real`]
//! and instantiated for `f32` and `f64`. Geometry and the closed-loop world
//! run in `f64`; see the aliases at the crate root.

use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;

/// Floating point scalar usable by every generic kernel in the crate.
pub trait Real: Float + FromPrimitive + nalgebra::Scalar + Debug + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in target float")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Logistic sigmoid in its hyperbolic tangent form, `(tanh(x/2) + 1) / 2`.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    ((x * half).tanh() + T::one()) * half
}

/// `1 / (1 + e^-x)`, kept only to cross-check [`sigmoid`].
#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Smooth sign with a linear band of half-width `eps` around zero.
#[inline]
pub(crate) fn soft_sign<T: Real>(x: T, eps: T) -> T {
    x / x.abs().max(eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        assert_eq!(sigmoid(0.0_f64), 0.5);
        assert!(sigmoid(40.0_f64) > 1.0 - 1e-15);
        assert!(sigmoid(-40.0_f64) < 1e-15);
        assert!((sigmoid(2.56_f64) - 0.9282).abs() < 1e-4);
        assert!((sigmoid(2.56_f32) - 0.9282).abs() < 1e-4);
    }

    #[test]
    fn soft_sign_is_linear_near_zero() {
        assert_eq!(soft_sign(0.0005_f64, 0.001), 0.5);
        assert_eq!(soft_sign(-2.0_f64, 0.001), -1.0);
        assert_eq!(soft_sign(0.0_f64, 0.001), 0.0);
    }
}
