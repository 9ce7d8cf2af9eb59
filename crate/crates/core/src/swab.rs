//! Elastic swab model.
//!
//! Transverse stiffness follows an affine inverse-cubic law in the distance
//! `L` between the grasp and the load, `1/ν = m·L³ + b`. Axial loads combine a
//! stiff, buckling-limited wall response with Coulomb friction.

use crate::scalar::{soft_sign, Real};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwabError {
    #[error("length {length} m outside stiffness domain [{min}, {max}] m")]
    InvalidLength { length: f64, min: f64, max: f64 },
    #[error("need at least two distinct lengths to fit the stiffness law")]
    InsufficientData,
    #[error("stiffness samples must be positive and finite")]
    NonPositiveStiffness,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwabBeam<T: Real> {
    /// Grasp-to-tip length (m).
    pub l_max: T,
    /// Shaft thickness change (m); the cubic law is not used below it.
    pub breakpoint: T,
    /// Cubic coefficient of the compliance law (m⁻³·N⁻¹·m).
    pub m_coef: T,
    /// Affine compliance offset (N⁻¹·m).
    pub b_coef: T,
    /// Fraction of tip travel attributed to the contact point.
    pub zeta: T,
}

impl<T: Real> Default for SwabBeam<T> {
    fn default() -> Self {
        Self {
            l_max: T::lit(0.146),
            breakpoint: T::lit(0.080),
            m_coef: T::lit(43.89),
            b_coef: T::lit(-0.0193),
            zeta: T::lit(0.5),
        }
    }
}

impl<T: Real> SwabBeam<T> {
    /// Length at which the compliance law reaches zero.
    pub fn compliance_root(&self) -> T {
        if self.b_coef >= T::zero() {
            return T::zero();
        }
        (-self.b_coef / self.m_coef).cbrt()
    }

    /// Smallest admissible grasp-to-load length.
    pub fn min_length(&self) -> T {
        self.breakpoint.max(self.compliance_root())
    }

    pub fn validate(&self) -> bool {
        self.l_max > self.breakpoint && self.breakpoint > T::zero() && self.m_coef > T::zero()
    }

    /// Transverse stiffness `ν(L)` in N/m.
    pub fn stiffness(&self, length: T) -> Result<T, SwabError> {
        let lo = self.min_length();
        let compliance = self.m_coef * length.powi(3) + self.b_coef;
        if !(length >= lo && length <= self.l_max) || compliance <= T::zero() {
            return Err(SwabError::InvalidLength {
                length: length.to_f64().unwrap_or(f64::NAN),
                min: lo.to_f64().unwrap_or(f64::NAN),
                max: self.l_max.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(compliance.recip())
    }

    /// Stiffness with the length clamped into the domain. The flag is set
    /// when clamping happened.
    pub fn stiffness_clamped(&self, length: T) -> (T, bool) {
        let lo = self.min_length();
        let clamped = length.max(lo).min(self.l_max);
        let nu = (self.m_coef * clamped.powi(3) + self.b_coef).recip();
        (nu, clamped != length)
    }

    /// Grasp-to-contact length once the tip has travelled `tip_travel` into the cavity.
    pub fn contact_length(&self, tip_travel: T) -> T {
        self.l_max - self.zeta * tip_travel.max(T::zero())
    }
}

/// Restoring force of a linear elastic deflection, `F = -ν·Δx`.
#[inline]
pub fn restoring_force<T: Real>(nu: T, dx: T) -> T {
    -nu * dx
}

/// Least-squares fit of `1/ν` against `L³`, returning `(m, b)`.
pub fn fit_stiffness_law<T: Real>(pairs: &[(T, T)]) -> Result<(T, T), SwabError> {
    if pairs
        .iter()
        .any(|&(l, nu)| !(nu > T::zero()) || !l.is_finite() || !nu.is_finite())
    {
        return Err(SwabError::NonPositiveStiffness);
    }
    let n = T::from_usize(pairs.len()).ok_or(SwabError::InsufficientData)?;
    let xs: Vec<T> = pairs.iter().map(|&(l, _)| l.powi(3)).collect();
    let ys: Vec<T> = pairs.iter().map(|&(_, nu)| nu.recip()).collect();
    let mean = |v: &[T]| v.iter().fold(T::zero(), |a, &b| a + b) / n;
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx = xs.iter().fold(T::zero(), |a, &x| a + (x - mx) * (x - mx));
    let sxy = xs
        .iter()
        .zip(&ys)
        .fold(T::zero(), |a, (&x, &y)| a + (x - mx) * (y - my));
    let distinct = pairs.iter().any(|&(l, _)| l != pairs[0].0);
    if pairs.len() < 2 || !distinct || sxx <= T::zero() {
        return Err(SwabError::InsufficientData);
    }
    let m = sxy / sxx;
    Ok((m, my - m * mx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxialContactModel<T: Real> {
    /// N/m before buckling.
    pub wall_stiffness: T,
    /// Axial force at which the shaft buckles (N).
    pub buckle_force: T,
    /// Coulomb coefficient between shaft and tissue.
    pub friction_coef: T,
    /// Sliding speed below which friction is scaled down linearly (m/s).
    pub stick_speed: T,
}

impl<T: Real> Default for AxialContactModel<T> {
    fn default() -> Self {
        Self {
            wall_stiffness: T::lit(1000.0),
            buckle_force: T::lit(1.0),
            friction_coef: T::lit(0.3),
            stick_speed: T::lit(1e-4),
        }
    }
}

impl<T: Real> AxialContactModel<T> {
    /// Wall term alone: spring response saturating at the buckling load.
    pub fn wall_force(&self, penetration: T) -> T {
        (self.wall_stiffness * penetration.max(T::zero())).min(self.buckle_force)
    }

    /// Axial force along the shaft, positive in compression.
    ///
    /// Friction opposes the axial sliding velocity: moving forward
    /// compresses the shaft, withdrawing puts it in tension.
    pub fn axial_force(&self, penetration: T, transverse_normal: T, tip_velocity_axial: T) -> T {
        let friction = self.friction_coef
            * transverse_normal.abs()
            * soft_sign(tip_velocity_axial, self.stick_speed);
        self.wall_force(penetration) + friction
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn stiffness_reference_points() {
        let beam = SwabBeam::<f64>::default();
        // 1 / (43.89·0.146³ − 0.0193)
        let expected = 1.0 / (43.89 * 0.146_f64.powi(3) - 0.0193);
        assert_relative_eq!(beam.stiffness(0.146).unwrap(), expected, epsilon = 1e-12);
        assert!((beam.stiffness(0.146).unwrap() - 8.53).abs() < 0.01);
        assert!((beam.stiffness(0.1376).unwrap() - 10.5).abs() < 0.1);
        assert!(matches!(
            beam.stiffness(0.0761),
            Err(SwabError::InvalidLength { .. })
        ));
        assert!(beam.stiffness(0.147).is_err());
    }

    #[test]
    fn stiffness_f32_matches_f64() {
        let b32 = SwabBeam::<f32>::default();
        let b64 = SwabBeam::<f64>::default();
        assert!(
            (f64::from(b32.stiffness(0.12).unwrap()) - b64.stiffness(0.12).unwrap()).abs() < 1e-3
        );
    }

    #[test]
    fn clamped_stiffness_reports_clamping() {
        let beam = SwabBeam::<f64>::default();
        let (nu, clamped) = beam.stiffness_clamped(0.05);
        assert!(clamped);
        assert_relative_eq!(nu, beam.stiffness(0.08).unwrap());
        assert!(!beam.stiffness_clamped(0.1).1);
    }

    #[test]
    fn restoring_force_examples() {
        assert_eq!(restoring_force(10.5, 0.0), 0.0);
        assert_relative_eq!(restoring_force(10.5, 0.01), -0.105);
        assert_relative_eq!(restoring_force(10.5, -0.01), 0.105);
    }

    fn synthetic_pairs(m: f64, b: f64) -> Vec<(f64, f64)> {
        (0..51)
            .map(|i| 0.095 + 0.001 * f64::from(i))
            .map(|l| (l, 1.0 / (m * l * l * l + b)))
            .collect()
    }

    #[test]
    fn fit_recovers_exact_law() {
        let (m, b) = fit_stiffness_law(&synthetic_pairs(43.89, -0.0193)).unwrap();
        assert!((m - 43.89).abs() < 1e-9);
        assert!((b + 0.0193).abs() < 1e-9);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        assert_eq!(
            fit_stiffness_law(&[(0.1, 10.0)]),
            Err(SwabError::InsufficientData)
        );
        assert_eq!(
            fit_stiffness_law(&[(0.1, 10.0), (0.1, 11.0)]),
            Err(SwabError::InsufficientData)
        );
        assert_eq!(
            fit_stiffness_law(&[(0.1, 10.0), (0.12, -1.0)]),
            Err(SwabError::NonPositiveStiffness)
        );
    }

    #[test]
    fn fit_tolerates_one_percent_noise() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut worst: f64 = 0.0;
        for seed in 0..100 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<_> = synthetic_pairs(43.89, -0.0193)
                .into_iter()
                .map(|(l, nu)| (l, nu * (1.0 + noise.sample(&mut rng))))
                .collect();
            let (m, b) = fit_stiffness_law(&pairs).unwrap();
            worst = worst
                .max(((m - 43.89) / 43.89).abs())
                .max(((b + 0.0193) / 0.0193).abs());
        }
        assert!(worst < 0.05, "worst relative error {worst}");
    }

    #[test]
    fn axial_force_examples() {
        let model = AxialContactModel::<f64>::default();
        assert_eq!(model.axial_force(0.0, 0.0, 0.0), 0.0);
        assert_eq!(model.axial_force(0.5, 0.0, 0.0), 1.0);
        assert_relative_eq!(model.axial_force(0.0005, 0.0, 0.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(model.axial_force(0.0, 0.1, 0.01), 0.03, epsilon = 1e-12);
        assert_relative_eq!(model.axial_force(0.0, 0.1, -0.01), -0.03, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn stiffness_strictly_decreasing(a in 0.08_f64..0.146, b in 0.08_f64..0.146) {
            prop_assume!((a - b).abs() > 1e-9);
            let beam = SwabBeam::<f64>::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(beam.stiffness(lo).unwrap() > beam.stiffness(hi).unwrap());
        }

        #[test]
        fn restoring_force_is_linear(nu in 0.1_f64..100.0, dx in -0.05_f64..0.05, a in -3.0_f64..3.0) {
            prop_assert!((restoring_force(nu, a * dx) - a * restoring_force(nu, dx)).abs() < 1e-12);
            prop_assert!((restoring_force(nu, -dx) + restoring_force(nu, dx)).abs() < 1e-15);
        }

        #[test]
        fn wall_term_monotone_and_bounded(p1 in 0.0_f64..0.01, p2 in 0.0_f64..0.01) {
            let model = AxialContactModel::<f64>::default();
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(model.wall_force(lo) <= model.wall_force(hi));
            prop_assert!(model.wall_force(hi) <= model.buckle_force);
        }
    }
}
