//! Contact-phase compliant velocity control: force low-pass, gain schedules
//! derived from critical damping, and the twist law that mixes pose error
//! with projected force feedback.

use crate::scalar::Real;
use crate::sim::geometry::{ForceSample, Pose6, Twist6};
use crate::swab::SwabBeam;
use nalgebra::{Complex, Matrix2, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Force-to-twist projection, rows (vx, vy, vz, wx, wy, wz).
pub const W: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, -1.0],
    [0.0, 1.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0],
];

pub const PRESET_NAMES: [&str; 6] = ["D1.0", "D1.5", "D2.0", "S1.0", "S1.5", "S2.0"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown controller preset '{0}'")]
pub struct UnknownController(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GainKind {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub kind: GainKind,
    pub multiplier: f64,
    pub k_gain: [f64; 6],
    pub alpha: f64,
    pub axial_gain: f64,
    pub nu_tip: f64,
    pub target_force_collect: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: GainKind::Dynamic,
            multiplier: 2.0,
            k_gain: [5.0, 5.0, 5.0, 2.0, 2.0, 2.0],
            alpha: 0.5,
            axial_gain: 0.051,
            nu_tip: 11.5,
            target_force_collect: 0.4,
        }
    }
}

impl ControllerConfig {
    pub fn preset(name: &str) -> Result<Self, UnknownController> {
        let name = name.trim();
        let (kind, rest) = match name.chars().next().map(|c| c.to_ascii_uppercase()) {
            Some('S') => (GainKind::Static, &name[1..]),
            Some('D') => (GainKind::Dynamic, &name[1..]),
            _ => return Err(UnknownController(name.to_string())),
        };
        let multiplier = match rest {
            "1.0" | "1" => 1.0,
            "1.5" => 1.5,
            "2.0" | "2" => 2.0,
            _ => return Err(UnknownController(name.to_string())),
        };
        Ok(Self {
            kind,
            multiplier,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> bool {
        self.multiplier > 0.0 && self.alpha > 0.0 && self.axial_gain > 0.0 && self.nu_tip > 0.0
    }

    /// Preset-style label such as "D1.5".
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ControllerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.kind {
            GainKind::Static => 'S',
            GainKind::Dynamic => 'D',
        };
        write!(f, "{c}{:.1}", self.multiplier)
    }
}

impl FromStr for ControllerConfig {
    type Err = UnknownController;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::preset(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FilteredForce {
    pub f: Vector3<f64>,
}

pub fn filter_step(ff: &FilteredForce, sample: &ForceSample, alpha: f64, dt: f64) -> FilteredForce {
    FilteredForce {
        f: ff.f + (sample.f - ff.f) * (dt * alpha),
    }
}

/// Gain at which the single-axis loop has a repeated real eigenvalue.
pub fn critical_gain<T: Real>(k: T, alpha: T, nu: T) -> T {
    let two = T::lit(2.0);
    (((alpha + k) / two).powi(2) - k * alpha) / (nu * alpha)
}

/// Transverse force gain for the scheduled controller at the given tip
/// displacement along the track.
pub fn transverse_gain(cfg: &ControllerConfig, swab: &SwabBeam<f64>, tip_displacement: f64) -> f64 {
    let k = cfg.k_gain[0];
    let nu = match cfg.kind {
        GainKind::Static => cfg.nu_tip,
        GainKind::Dynamic => {
            let (nu, clamped) =
                swab.stiffness_clamped(swab.contact_length(tip_displacement.max(0.0)));
            if clamped {
                log::warn!("contact length for displacement {tip_displacement:.4} m outside the stiffness domain");
            }
            nu
        }
    };
    cfg.multiplier * critical_gain(k, cfg.alpha, nu)
}

/// Twist command for the grasp frame. Pose errors are world-frame; the
/// force term is built in the tool frame from W·Λ·(f − f̄) and rotated out.
pub fn control_step(
    target: &Pose6,
    current: &Pose6,
    ff: &FilteredForce,
    target_f: &Vector3<f64>,
    k_gain: &[f64; 6],
    lambda: &Vector3<f64>,
) -> Twist6 {
    let et = target.position - current.position;
    let er = (target.orientation * current.orientation.inverse()).scaled_axis();
    let g = (ff.f - target_f).component_mul(lambda);
    let mut tool = [0.0; 6];
    for (row, out) in W.iter().zip(tool.iter_mut()) {
        *out = row[0] * g.x + row[1] * g.y + row[2] * g.z;
    }
    let q = current.orientation;
    let linear = et.component_mul(&Vector3::new(k_gain[0], k_gain[1], k_gain[2]))
        + q * Vector3::new(tool[0], tool[1], tool[2]);
    let angular = er.component_mul(&Vector3::new(k_gain[3], k_gain[4], k_gain[5]))
        + q * Vector3::new(tool[3], tool[4], tool[5]);
    Twist6::new(linear, angular)
}

/// Linearised single-axis contact loop ẋ = −k·x − λ·f, ḟ = −α·f + α·ν·x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleAxisLoop {
    pub k: f64,
    pub alpha: f64,
    pub nu: f64,
    pub lambda: f64,
}

impl SingleAxisLoop {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(-self.k, -self.lambda, self.alpha * self.nu, -self.alpha)
    }

    /// Discriminant of the characteristic polynomial.
    pub fn discriminant(&self) -> f64 {
        (self.k - self.alpha).powi(2) - 4.0 * self.lambda * self.alpha * self.nu
    }

    pub fn eigenvalues(&self) -> [Complex<f64>; 2] {
        let m = self.matrix();
        let tr = m.trace();
        let det = m.determinant();
        let disc = Complex::new(tr * tr - 4.0 * det, 0.0).sqrt();
        [
            (Complex::new(tr, 0.0) + disc) / 2.0,
            (Complex::new(tr, 0.0) - disc) / 2.0,
        ]
    }

    /// Response to the wall stepping by `step` (m) with the loop at rest:
    /// samples of (x, f) every `dt` for `duration` seconds.
    pub fn wall_step(&self, step: f64, dt: f64, duration: f64) -> Vec<(f64, f64)> {
        let n = (duration / dt).round() as usize;
        let (mut x, mut f) = (0.0, 0.0);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let force = self.nu * (x - step);
            f += dt * self.alpha * (force - f);
            x += dt * (-self.k * x - self.lambda * f);
            out.push((x, f));
        }
        out
    }
}

/// Peak excursion beyond the final value, relative to the final value.
pub fn overshoot(series: &[f64]) -> f64 {
    let last = *series.last().expect("nonempty series");
    if last == 0.0 {
        return 0.0;
    }
    series.iter().map(|v| v / last - 1.0).fold(0.0, f64::max)
}

/// Collection phase: dwell with a sinusoidal spin about the swab axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectSpec {
    pub duration: f64,
    pub rotation_amplitude: f64,
    pub frequency: f64,
}

impl Default for CollectSpec {
    fn default() -> Self {
        Self {
            duration: 15.0,
            rotation_amplitude: 45f64.to_radians(),
            frequency: 0.5,
        }
    }
}

impl CollectSpec {
    pub fn spin_angle(&self, t: f64) -> f64 {
        self.rotation_amplitude * (std::f64::consts::TAU * self.frequency * t).sin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    #[test]
    fn filter_examples() {
        let ff = FilteredForce {
            f: Vector3::new(0.2, -0.1, 0.3),
        };
        assert_eq!(
            filter_step(&ff, &ForceSample::new(ff.f, 0.0), 0.5, 0.01),
            ff
        );
        let step = filter_step(
            &FilteredForce::default(),
            &ForceSample::new(Vector3::x(), 0.0),
            0.5,
            0.01,
        );
        assert_relative_eq!(step.f, Vector3::new(0.005, 0.0, 0.0), epsilon = 1e-15);

        let mut ff = FilteredForce::default();
        let mut t = 0.0;
        while t < 2.0 - 1e-9 {
            ff = filter_step(&ff, &ForceSample::new(Vector3::x(), t), 0.5, 0.01);
            t += 0.01;
        }
        let before = ff.f.x;
        let after = filter_step(&ff, &ForceSample::new(Vector3::x(), t), 0.5, 0.01)
            .f
            .x;
        let target = 1.0 - (-1.0f64).exp();
        assert!(
            (before - target).abs() < 0.005 || (after - target).abs() < 0.005,
            "{before} {after}"
        );
    }

    #[test]
    fn critical_gain_values() {
        assert!((critical_gain(5.0f64, 0.5, 11.5) - 0.880).abs() < 1e-3);
        assert!((critical_gain(5.0f64, 0.5, 10.5) - 0.9643).abs() < 1e-3);
        assert_eq!(critical_gain(0.5f64, 0.5, 10.0), 0.0);
        assert!((critical_gain(5.0f32, 0.5, 11.5) - 0.880).abs() < 1e-3);
        for (k, a, nu) in [(5.0, 0.5, 8.53), (2.0, 0.3, 41.8), (7.0, 1.5, 3.0)] {
            let closed = (k - a) * (k - a) / (4.0 * a * nu);
            assert_relative_eq!(critical_gain(k, a, nu), closed, max_relative = 1e-12);
        }
    }

    #[test]
    fn presets_and_gains() {
        let swab = SwabBeam::default();
        let s1 = ControllerConfig::preset("S1.0").unwrap();
        assert!((transverse_gain(&s1, &swab, 0.0) - 0.880).abs() < 1e-3);
        assert!((transverse_gain(&s1, &swab, 0.09) - 0.880).abs() < 1e-3);
        let d1 = ControllerConfig::preset("d1.0").unwrap();
        assert!((transverse_gain(&d1, &swab, 0.0) - 1.187).abs() < 2e-3);
        assert!((transverse_gain(&d1, &swab, 0.093) - 0.242).abs() < 2e-3);
        assert!(ControllerConfig::preset("X1.0").is_err());
        assert!(ControllerConfig::preset("S3.0").is_err());
        for name in PRESET_NAMES {
            assert_eq!(ControllerConfig::preset(name).unwrap().label(), name);
        }
    }

    #[test]
    fn gain_ordering_at_nasopharynx() {
        let swab = SwabBeam::default();
        let g = |n: &str| transverse_gain(&ControllerConfig::preset(n).unwrap(), &swab, 0.093);
        assert!(g("D2.0") < g("S1.0") && g("S1.0") < g("S1.5") && g("S1.5") < g("S2.0"));
        assert!(g("D1.0") < g("D1.5") && g("D1.5") < g("D2.0"));
    }

    #[test]
    fn balanced_state_commands_nothing() {
        let p = Pose6::new(
            Vector3::new(0.1, 0.2, 0.3),
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
        );
        let ff = FilteredForce {
            f: Vector3::new(0.0, 0.0, 0.4),
        };
        let tw = control_step(
            &p,
            &p,
            &ff,
            &Vector3::new(0.0, 0.0, 0.4),
            &[5.0, 5.0, 5.0, 2.0, 2.0, 2.0],
            &Vector3::new(0.9, 0.9, 0.051),
        );
        assert!(tw.norm() < 1e-15);
    }

    #[test]
    fn force_feedback_is_compliant() {
        let p = Pose6::identity();
        let k = [5.0, 5.0, 5.0, 2.0, 2.0, 2.0];
        let lam = Vector3::new(1.0, 1.0, 0.05);
        let push = FilteredForce {
            f: Vector3::new(0.2, 0.0, 0.0),
        };
        let tw = control_step(&p, &p, &push, &Vector3::zeros(), &k, &lam);
        assert_relative_eq!(tw.linear, Vector3::new(0.2, 0.0, 0.0));
        assert_relative_eq!(tw.angular, Vector3::new(0.0, -0.2, 0.0));
        let compress = FilteredForce {
            f: Vector3::new(0.0, 0.0, 1.0),
        };
        let tw = control_step(&p, &p, &compress, &Vector3::zeros(), &k, &lam);
        assert!(tw.linear.z < 0.0);
    }

    #[test]
    fn critical_loop_has_repeated_root() {
        for k in [2.0, 5.0] {
            for alpha in [0.3, 0.5, 1.0] {
                for nu in [8.53, 10.5, 41.8] {
                    let lc = critical_gain(k, alpha, nu);
                    let l = SingleAxisLoop {
                        k,
                        alpha,
                        nu,
                        lambda: lc,
                    };
                    assert!(l.discriminant().abs() < 1e-9);
                    let below = SingleAxisLoop {
                        lambda: 0.5 * lc,
                        ..l
                    };
                    let above = SingleAxisLoop {
                        lambda: 2.0 * lc,
                        ..l
                    };
                    assert!(below.eigenvalues().iter().all(|e| e.im == 0.0));
                    assert!(above.eigenvalues().iter().all(|e| e.im.abs() > 0.0));
                }
            }
        }
    }

    #[test]
    fn wall_step_overshoot_by_regime() {
        let lc = critical_gain(5.0, 0.5, 11.5);
        let base = SingleAxisLoop {
            k: 5.0,
            alpha: 0.5,
            nu: 11.5,
            lambda: lc,
        };
        let x: Vec<f64> = base
            .wall_step(0.01, 1e-3, 20.0)
            .iter()
            .map(|s| s.0)
            .collect();
        assert!(overshoot(&x) < 1e-9);
        let high = SingleAxisLoop {
            lambda: 2.0 * lc,
            ..base
        };
        let x: Vec<f64> = high
            .wall_step(0.01, 1e-3, 20.0)
            .iter()
            .map(|s| s.0)
            .collect();
        assert!(overshoot(&x) > 0.015);
    }

    #[test]
    fn collect_spin_profile() {
        let c = CollectSpec::default();
        assert_eq!(c.spin_angle(0.0), 0.0);
        assert_relative_eq!(c.spin_angle(0.5), 45f64.to_radians(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn loop_always_stable(lambda in 1e-4_f64..50.0, nu in 1.0_f64..60.0, k in 0.5_f64..10.0) {
            let l = SingleAxisLoop { k, alpha: 0.5, nu, lambda };
            prop_assert!(l.eigenvalues().iter().all(|e| e.re < 0.0));
        }

        #[test]
        fn dynamic_gain_decreases_with_depth(a in 0.0_f64..0.13, b in 0.0_f64..0.13) {
            prop_assume!((a - b).abs() > 1e-6);
            let swab = SwabBeam::default();
            let d = ControllerConfig::preset("D1.0").unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(transverse_gain(&d, &swab, hi) < transverse_gain(&d, &swab, lo));
        }

        #[test]
        fn filtered_force_bounded(fs in proptest::collection::vec(-3.0_f64..3.0, 1..200)) {
            let mut ff = FilteredForce::default();
            let mut peak: f64 = 0.0;
            for (i, v) in fs.iter().enumerate() {
                let s = ForceSample::new(Vector3::new(*v, -v / 2.0, v / 3.0), i as f64);
                peak = peak.max(s.f.norm());
                ff = filter_step(&ff, &s, 0.5, 0.01);
                prop_assert!(ff.f.norm() <= peak + 1e-12);
            }
        }
    }
}
