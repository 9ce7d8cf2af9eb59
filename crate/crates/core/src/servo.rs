//! Pre-contact visual servoing: simulated fiducial measurements, rigid
//! registration, pose filtering, and the adaptive-gain PBVS law with
//! band-pass force repulsion.

use crate::scalar::Real;
use crate::sim::geometry::{Pose6, Twist6};
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Blend weight toward each new measurement.
pub const BLEND: f64 = 0.3;
/// Estimates older than this are not used.
pub const MAX_AGE: f64 = 1.0;
pub const CONVERGED_TRANSLATION: f64 = 0.002;
pub const CONVERGED_ANGLE_DEG: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServoError {
    #[error("pose unavailable: {0} usable markers")]
    EstimationUnavailable(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose6,
    pub valid: bool,
    pub age: f64,
}

impl PoseEstimate {
    pub fn invalid() -> Self {
        Self {
            pose: Pose6::identity(),
            valid: false,
            age: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoGains {
    pub lambda0: f64,
    pub lambda0_slope: f64,
    pub lambda_inf: f64,
    pub lambda_vs: [f64; 3],
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for ServoGains {
    fn default() -> Self {
        Self {
            lambda0: 2.5,
            lambda0_slope: 30.0,
            lambda_inf: 0.5,
            lambda_vs: [0.2, 0.2, 0.9],
            alpha1: 0.75,
            alpha2: 0.6,
        }
    }
}

impl ServoGains {
    pub fn validate(&self) -> bool {
        self.lambda0 > self.lambda_inf
            && self.lambda_inf > 0.0
            && self.alpha1 > 0.0
            && self.alpha2 > 0.0
            && self.alpha1 != self.alpha2
    }

    pub fn gain(&self, error_norm: f64) -> f64 {
        adaptive_gain(
            error_norm,
            self.lambda0,
            self.lambda0_slope,
            self.lambda_inf,
        )
    }
}

/// λ(e) = (λ0 − λ∞)·exp(−λ0'·e/(λ0 − λ∞)) + λ∞.
pub fn adaptive_gain<T: Real>(e: T, lambda0: T, slope: T, lambda_inf: T) -> T {
    let span = lambda0 - lambda_inf;
    span * (-(slope / span) * e).exp() + lambda_inf
}

/// One explicit-Euler step of a first-order low-pass filter.
pub fn lowpass<T: Real>(state: T, input: T, rate: T, dt: T) -> T {
    state + dt * rate * (input - state)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BandpassState {
    pub f1: Vector3<f64>,
    pub f2: Vector3<f64>,
}

/// Advances both low-pass accumulators and returns Λ_vs·(f1 − f2).
pub fn bandpass_step(
    state: &BandpassState,
    f: &Vector3<f64>,
    gains: &ServoGains,
    dt: f64,
) -> (BandpassState, Vector3<f64>) {
    let f1 = state.f1.zip_map(f, |s, x| lowpass(s, x, gains.alpha1, dt));
    let f2 = state.f2.zip_map(f, |s, x| lowpass(s, x, gains.alpha2, dt));
    let repel = (f1 - f2).component_mul(&Vector3::from(gains.lambda_vs));
    (BandpassState { f1, f2 }, repel)
}

/// Noisy marker observations with independent dropout.
pub fn measure_fiducials<R: Rng + ?Sized>(
    true_points: &[Vector3<f64>],
    noise_sigma: f64,
    dropout_prob: f64,
    rng: &mut R,
) -> Vec<(usize, Vector3<f64>)> {
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let mut out = Vec::with_capacity(true_points.len());
    for (i, p) in true_points.iter().enumerate() {
        if rng.random::<f64>() < dropout_prob {
            continue;
        }
        let offset = Vector3::from_fn(|_, _| noise.sample(rng));
        out.push((i, p + offset));
    }
    out
}

/// Least-squares rigid transform `T` with `measured ≈ T·reference`.
pub fn register_pose(
    measured: &[(usize, Vector3<f64>)],
    reference: &[Vector3<f64>],
) -> Result<Pose6, ServoError> {
    let pairs: Vec<_> = measured
        .iter()
        .filter(|(i, _)| *i < reference.len())
        .map(|(i, p)| (reference[*i], *p))
        .collect();
    if pairs.len() < 3 {
        return Err(ServoError::EstimationUnavailable(pairs.len()));
    }
    let n = pairs.len() as f64;
    let ref_mean = pairs.iter().map(|(r, _)| r).sum::<Vector3<f64>>() / n;
    let meas_mean = pairs.iter().map(|(_, m)| m).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (r, m) in &pairs {
        cov += (m - meas_mean) * (r - ref_mean).transpose();
    }
    let ref_spread = pairs
        .iter()
        .map(|(r, _)| (r - ref_mean).norm_squared())
        .sum::<f64>();
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v"));
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if sv[1] <= 1e-9 * ref_spread.max(f64::MIN_POSITIVE) {
        return Err(ServoError::EstimationUnavailable(pairs.len()));
    }
    let d = (u * v_t).determinant().signum();
    let rot = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
    Ok(Pose6::new(meas_mean - q * ref_mean, q))
}

/// Blends a new measurement into the estimate, or coasts without one. The
/// estimate is held in the world frame, so coasting leaves it unchanged.
pub fn filter_pose(prev: &PoseEstimate, meas: Option<&Pose6>, dt: f64) -> PoseEstimate {
    match meas {
        Some(m) if !prev.valid => PoseEstimate {
            pose: *m,
            valid: true,
            age: 0.0,
        },
        Some(m) => PoseEstimate {
            pose: prev.pose.interpolate(m, BLEND),
            valid: true,
            age: 0.0,
        },
        None => {
            let age = prev.age + dt;
            PoseEstimate {
                pose: prev.pose,
                valid: prev.valid && age <= MAX_AGE,
                age,
            }
        }
    }
}

/// Pose error (translation, rotation vector) of `current` relative to `target`.
pub fn pose_error(current: &Pose6, target: &Pose6) -> (Vector3<f64>, Vector3<f64>) {
    (
        current.position - target.position,
        (current.orientation * target.orientation.inverse()).scaled_axis(),
    )
}

pub fn is_converged(current: &Pose6, target: &Pose6) -> bool {
    let (t, r) = pose_error(current, target);
    t.norm() < CONVERGED_TRANSLATION && r.norm() < CONVERGED_ANGLE_DEG.to_radians()
}

/// PBVS velocity command for the tip (world frame). `target` is the
/// approach pose relative to the estimated nostril; `repel` is in the tool
/// frame with compression positive along z.
pub fn servo_step(
    est: &PoseEstimate,
    tip: &Pose6,
    target: &Pose6,
    repel: &Vector3<f64>,
    gains: &ServoGains,
) -> Twist6 {
    if !est.valid {
        return Twist6::zero();
    }
    let goal = est.pose.compose(target);
    let (et, er) = pose_error(tip, &goal);
    let norm = (et.norm_squared() + er.norm_squared()).sqrt();
    let lambda = gains.gain(norm);
    let push = tip.orientation * Vector3::new(repel.x, repel.y, -repel.z);
    Twist6::new(-et * lambda + push, -er * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::HeadFixture;
    use crate::sim::rng::rng_stream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference() -> Vec<Vector3<f64>> {
        HeadFixture::default().fiducials.to_vec()
    }

    #[test]
    fn gain_values() {
        let g = ServoGains::default();
        assert_eq!(g.gain(0.0), 2.5);
        assert_relative_eq!(g.gain(1e3), 0.5, epsilon = 1e-12);
        let h = 1e-6;
        let slope = (g.gain(h) - g.gain(-h)) / (2.0 * h);
        assert!((slope + 30.0).abs() < 1e-3, "{slope}");
        assert_relative_eq!(adaptive_gain(0.0f32, 2.5, 30.0, 0.5), 2.5f32);
    }

    #[test]
    fn bandpass_step_response() {
        let g = ServoGains::default();
        let dt = 1e-4;
        let mut s = BandpassState::default();
        let (mut peak, mut peak_t, mut t) = (0.0, 0.0, 0.0);
        let unit = Vector3::new(1.0, 0.0, 0.0);
        while t < 20.0 {
            s = bandpass_step(&s, &unit, &g, dt).0;
            t += dt;
            let d = s.f1.x - s.f2.x;
            if d > peak {
                peak = d;
                peak_t = t;
            }
        }
        assert!((peak_t - 1.488).abs() < 0.02, "{peak_t}");
        let closed_form = 0.8f64.powi(4) - 0.8f64.powi(5);
        assert!((peak - closed_form).abs() < 1e-4, "{peak}");
        assert!((s.f1 - s.f2).norm() < 1e-3);
    }

    #[test]
    fn bandpass_silent_without_force() {
        let g = ServoGains::default();
        let mut s = BandpassState::default();
        for _ in 0..500 {
            let (n, r) = bandpass_step(&s, &Vector3::zeros(), &g, 0.01);
            assert_eq!(r, Vector3::zeros());
            s = n;
        }
    }

    #[test]
    fn noiseless_measurements_are_exact() {
        let mut rng = rng_stream(1, "vision");
        let m = measure_fiducials(&reference(), 0.0, 0.0, &mut rng);
        assert_eq!(m.len(), 5);
        assert!(m.iter().all(|(i, p)| *p == reference()[*i]));
    }

    #[test]
    fn dropout_count_is_binomial() {
        let mut rng = rng_stream(2, "vision");
        let keep = 0.3;
        let draws = 20_000;
        let mut hist = [0usize; 6];
        for _ in 0..draws {
            hist[measure_fiducials(&reference(), 0.0, 1.0 - keep, &mut rng).len()] += 1;
        }
        for (k, &count) in hist.iter().enumerate() {
            let expected =
                binomial(5, k) as f64 * keep.powi(k as i32) * (1.0 - keep).powi(5 - k as i32);
            assert!(
                (count as f64 / draws as f64 - expected).abs() < 0.015,
                "k={k}"
            );
        }
    }

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn noise_rms_matches_chi_moment() {
        let mut rng = rng_stream(3, "vision");
        let sigma = 0.001;
        let mut sq = 0.0;
        let mut n = 0.0;
        for _ in 0..2000 {
            for (i, p) in measure_fiducials(&reference(), sigma, 0.0, &mut rng) {
                sq += (p - reference()[i]).norm_squared();
                n += 1.0;
            }
        }
        let rms = (sq / n).sqrt();
        assert!((rms / (sigma * 3f64.sqrt()) - 1.0).abs() < 0.1);
    }

    #[test]
    fn registration_identity_and_exact() {
        let r = reference();
        let same: Vec<_> = r.iter().copied().enumerate().collect();
        let id = register_pose(&same, &r).unwrap();
        assert!(id.position.norm() < 1e-12 && id.orientation.angle() < 1e-7);

        let truth = Pose6::new(
            Vector3::new(0.1, -0.2, 0.3),
            UnitQuaternion::from_euler_angles(0.3, -0.5, 1.1),
        );
        let moved: Vec<_> = r
            .iter()
            .map(|p| truth.transform_point(p))
            .enumerate()
            .collect();
        let est = register_pose(&moved, &r).unwrap();
        let (dt, dr) = est.distance_to(&truth);
        assert!(dt < 1e-10 && dr < 1e-7, "{dt} {dr}");
    }

    #[test]
    fn registration_needs_three_markers() {
        let r = reference();
        let two = vec![(0, r[0]), (3, r[3])];
        assert_eq!(
            register_pose(&two, &r),
            Err(ServoError::EstimationUnavailable(2))
        );
        let collinear = [Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0];
        let m: Vec<_> = collinear.iter().copied().enumerate().collect();
        assert!(register_pose(&m, &collinear).is_err());
    }

    #[test]
    fn filter_blends_and_coasts() {
        let a = Pose6::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let b = Pose6::from_translation(Vector3::new(0.2, 0.0, 0.0));
        let mut est = filter_pose(&PoseEstimate::invalid(), Some(&a), 0.01);
        assert_eq!(est.pose, a);
        assert_eq!(filter_pose(&est, Some(&a), 0.01).pose, a);
        for k in 1..=10 {
            est = filter_pose(&est, Some(&b), 0.033);
            let gap = (b.position - est.pose.position).norm();
            assert_relative_eq!(gap, 0.1 * 0.7f64.powi(k), epsilon = 1e-12);
        }
        let mut coast = est;
        for _ in 0..120 {
            coast = filter_pose(&coast, None, 0.01);
        }
        assert_eq!(coast.pose, est.pose);
        assert!(!coast.valid);
    }

    #[test]
    fn servo_examples() {
        let g = ServoGains::default();
        let est = PoseEstimate {
            pose: Pose6::identity(),
            valid: true,
            age: 0.0,
        };
        let target = Pose6::identity();
        assert_eq!(
            servo_step(&est, &target, &target, &Vector3::zeros(), &g),
            Twist6::zero()
        );
        let tip = Pose6::from_translation(Vector3::new(0.01, 0.0, 0.0));
        let tw = servo_step(&est, &tip, &target, &Vector3::zeros(), &g);
        assert_relative_eq!(
            tw.linear,
            Vector3::new(-g.gain(0.01) * 0.01, 0.0, 0.0),
            epsilon = 1e-15
        );
        assert_eq!(tw.angular, Vector3::zeros());
        let stale = PoseEstimate {
            valid: false,
            ..est
        };
        assert_eq!(
            servo_step(&stale, &tip, &target, &Vector3::zeros(), &g),
            Twist6::zero()
        );
    }

    #[test]
    fn servo_converges_from_standoff() {
        let g = ServoGains::default();
        let est = PoseEstimate {
            pose: Pose6::identity(),
            valid: true,
            age: 0.0,
        };
        let target = Pose6::identity();
        let mut tip = Pose6::new(
            Vector3::new(-0.06, 0.02, 0.01),
            UnitQuaternion::from_euler_angles(0.2, -0.1, 0.3),
        );
        let dt = 0.01;
        let mut t = 0.0;
        while !is_converged(&tip, &est.pose.compose(&target)) {
            let tw = servo_step(&est, &tip, &target, &Vector3::zeros(), &g);
            tip = crate::sim::geometry::integrate_world(&tip, &tw, dt);
            t += dt;
            assert!(t < 15.0);
        }
    }

    proptest! {
        #[test]
        fn gain_decreasing_and_bounded(a in 0.0_f64..2.0, b in 0.0_f64..2.0) {
            let g = ServoGains::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            prop_assert!(g.gain(hi) < g.gain(lo));
            prop_assert!(g.gain(hi) > 0.5 && g.gain(lo) <= 2.5);
        }

        #[test]
        fn registration_equivariant(x in -0.5_f64..0.5, y in -0.5_f64..0.5, z in -0.5_f64..0.5,
                                    r in -3.0_f64..3.0, p in -1.5_f64..1.5, w in -3.0_f64..3.0) {
            let r0 = reference();
            let base = Pose6::new(Vector3::new(0.02, 0.01, -0.03), UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3));
            let extra = Pose6::new(Vector3::new(x, y, z), UnitQuaternion::from_euler_angles(r, p, w));
            let pts: Vec<_> = r0.iter().map(|q| base.transform_point(q)).enumerate().collect();
            let moved: Vec<_> = pts.iter().map(|(i, q)| (*i, extra.transform_point(q))).collect();
            let a = register_pose(&pts, &r0).unwrap();
            let b = register_pose(&moved, &r0).unwrap();
            let (dt, dr) = b.distance_to(&extra.compose(&a));
            prop_assert!(dt < 1e-10 && dr < 1e-7);
        }
    }
}
