//! Stochastic head motion: an Ornstein-Uhlenbeck process with a positional
//! attractor generates neck-angle targets; the head follows them through a
//! first-order tracking law.

use crate::phantom::neck_fk;
use crate::scalar::Real;
use crate::sim::geometry::Pose6;
use crate::sim::rng::SimRng;
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Resting pitch of the head (rad).
pub const PITCH_SETPOINT: f64 = 0.4;
/// Head tracking gain (1/s).
pub const TRACKING_GAIN: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown motion preset '{0}'")]
pub struct UnknownPreset(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OUParams<T: Real> {
    pub sigma: T,
    pub psi: T,
    pub mu: T,
    pub setpoint: T,
}

impl<T: Real> OUParams<T> {
    pub fn new(sigma: T, psi: T, mu: T, setpoint: T) -> Self {
        Self {
            sigma,
            psi,
            mu,
            setpoint,
        }
    }

    pub fn validate(&self) -> bool {
        self.sigma >= T::zero() && self.psi > T::zero() && self.mu > T::zero()
    }

    /// Stationary variance of the angle, σ²/μ.
    pub fn stationary_variance(&self) -> T {
        self.sigma * self.sigma / self.mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MotionPreset {
    None,
    Light,
    Medium,
    Heavy,
}

impl MotionPreset {
    pub const ALL: [MotionPreset; 4] = [
        MotionPreset::None,
        MotionPreset::Light,
        MotionPreset::Medium,
        MotionPreset::Heavy,
    ];

    /// (σ, ψ, μ) of the preset.
    pub fn constants(self) -> (f64, f64, f64) {
        match self {
            MotionPreset::None => (0.0, 1.0, 1.0),
            MotionPreset::Light => (0.5, 1.0, 1.0),
            MotionPreset::Medium => (0.7, 1.0, 0.5),
            MotionPreset::Heavy => (1.2, 0.75, 0.5),
        }
    }
}

impl fmt::Display for MotionPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionPreset::None => "None",
            MotionPreset::Light => "Light",
            MotionPreset::Medium => "Medium",
            MotionPreset::Heavy => "Heavy",
        })
    }
}

impl FromStr for MotionPreset {
    type Err = UnknownPreset;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(MotionPreset::None),
            "light" => Ok(MotionPreset::Light),
            "medium" => Ok(MotionPreset::Medium),
            "heavy" => Ok(MotionPreset::Heavy),
            _ => Err(UnknownPreset(s.to_string())),
        }
    }
}

/// OU parameters for pitch, yaw and roll.
pub fn motion_preset(preset: MotionPreset) -> [OUParams<f64>; 3] {
    let (sigma, psi, mu) = preset.constants();
    [PITCH_SETPOINT, 0.0, 0.0].map(|setpoint| OUParams::new(sigma, psi, mu, setpoint))
}

/// Looks up a preset by name, ignoring case.
pub fn motion_preset_by_name(name: &str) -> Result<[OUParams<f64>; 3], UnknownPreset> {
    Ok(motion_preset(name.parse()?))
}

/// One Euler-Maruyama step of the attracted OU process.
pub fn ou_step<T: Real, R: Rng + ?Sized>(
    theta: T,
    v: T,
    p: &OUParams<T>,
    dt: T,
    rng: &mut R,
) -> (T, T) {
    let noise = if p.sigma == T::zero() {
        T::zero()
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (T::lit(2.0) * p.psi).sqrt() * p.sigma * dt.sqrt() * T::lit(z)
    };
    let v_next = v + dt * (-p.mu * (theta - p.setpoint) - p.psi * v) + noise;
    (theta + dt * v_next, v_next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeckState {
    /// Head angles (α, β, γ).
    pub angles: Vector3<f64>,
    /// Velocities of the OU targets.
    pub velocities: Vector3<f64>,
    /// OU process state: the angles the head is steering toward.
    pub targets: Vector3<f64>,
}

impl NeckState {
    pub fn at_rest(params: &[OUParams<f64>; 3]) -> Self {
        let set = Vector3::new(params[0].setpoint, params[1].setpoint, params[2].setpoint);
        Self {
            angles: set,
            velocities: Vector3::zeros(),
            targets: set,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.angles
            .iter()
            .chain(self.velocities.iter())
            .chain(self.targets.iter())
            .all(|x| x.is_finite())
    }
}

/// First-order lag of the head angles toward their targets.
pub fn track_head(state: &NeckState, k: f64, dt: f64) -> NeckState {
    let mut next = *state;
    next.angles += (state.targets - state.angles) * (k * dt);
    next.angles = next.angles.map(|a| a.clamp(-FRAC_PI_2, FRAC_PI_2));
    next
}

/// Head motion generator owning its noise stream.
#[derive(Debug, Clone)]
pub struct HeadMotion {
    pub params: [OUParams<f64>; 3],
    pub gain: f64,
    /// Fraction of the OU excursion from the setpoint that the head follows.
    pub excursion: f64,
    pub state: NeckState,
    rng: SimRng,
}

impl HeadMotion {
    pub fn new(params: [OUParams<f64>; 3], rng: SimRng) -> Self {
        Self {
            state: NeckState::at_rest(&params),
            params,
            gain: TRACKING_GAIN,
            excursion: 1.0,
            rng,
        }
    }

    pub fn step(&mut self, dt: f64) {
        for i in 0..3 {
            let (theta, v) = ou_step(
                self.state.targets[i],
                self.state.velocities[i],
                &self.params[i],
                dt,
                &mut self.rng,
            );
            if theta.abs() >= FRAC_PI_2 {
                self.state.targets[i] = theta.clamp(-FRAC_PI_2, FRAC_PI_2);
                self.state.velocities[i] = 0.0;
            } else {
                self.state.targets[i] = theta;
                self.state.velocities[i] = v;
            }
        }
        let set = Vector3::new(
            self.params[0].setpoint,
            self.params[1].setpoint,
            self.params[2].setpoint,
        );
        let steered = NeckState {
            targets: set + (self.state.targets - set) * self.excursion,
            ..self.state
        };
        self.state.angles = track_head(&steered, self.gain, dt).angles;
    }

    pub fn head_pose(&self) -> Pose6 {
        let a = self.state.angles;
        neck_fk(a.x, a.y, a.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng::rng_stream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn presets_by_name() {
        let heavy = motion_preset_by_name("Heavy").unwrap()[0];
        assert_eq!((heavy.sigma, heavy.psi, heavy.mu), (1.2, 0.75, 0.5));
        assert_eq!(motion_preset_by_name("None").unwrap()[1].sigma, 0.0);
        assert_eq!(
            motion_preset_by_name("light").unwrap(),
            motion_preset(MotionPreset::Light)
        );
        assert!(motion_preset_by_name("wild").is_err());
        assert_eq!(motion_preset(MotionPreset::Light)[0].setpoint, 0.4);
        assert!(MotionPreset::ALL
            .iter()
            .all(|p| motion_preset(*p).iter().all(OUParams::validate)));
    }

    #[test]
    fn equilibrium_is_fixed() {
        let p = OUParams::new(0.0, 1.0, 1.0, 0.4);
        let mut rng = rng_stream(1, "head");
        assert_eq!(ou_step(0.4, 0.0, &p, 0.01, &mut rng), (0.4, 0.0));
        let p32 = OUParams::<f32>::new(0.0, 1.0, 1.0, 0.4);
        assert_eq!(ou_step(0.4f32, 0.0, &p32, 0.01, &mut rng), (0.4, 0.0));
    }

    #[test]
    fn noiseless_process_decays() {
        let p = OUParams::new(0.0, 1.0, 0.5, 0.4);
        let mut rng = rng_stream(1, "head");
        let (mut th, mut v) = (1.2, 0.3);
        let energy = |th: f64, v: f64| ((th - 0.4).powi(2) + v * v).sqrt();
        let mut last = energy(th, v);
        for _window in 0..6 {
            for _ in 0..500 {
                (th, v) = ou_step(th, v, &p, 0.01, &mut rng);
            }
            let now = energy(th, v);
            assert!(now < last);
            last = now;
        }
        assert!(last < 0.1);
    }

    #[test]
    fn tracking_step_response() {
        let mut s = NeckState {
            angles: Vector3::zeros(),
            velocities: Vector3::zeros(),
            targets: Vector3::new(0.2, 0.0, 0.0),
        };
        assert_eq!(
            track_head(
                &NeckState {
                    targets: s.angles,
                    ..s
                },
                0.5,
                0.01
            )
            .angles,
            s.angles
        );
        let dt = 1e-4;
        for _ in 0..20_000 {
            s = track_head(&s, 0.5, dt);
        }
        assert_relative_eq!(0.2 - s.angles.x, 0.2 * (-1.0f64).exp(), epsilon = 1e-5);
    }

    #[test]
    fn tracking_change_scales_with_dt() {
        let s = NeckState {
            angles: Vector3::zeros(),
            velocities: Vector3::zeros(),
            targets: Vector3::new(0.3, -0.2, 0.1),
        };
        let a = track_head(&s, 0.5, 1e-3).angles;
        let b = track_head(&s, 0.5, 2e-3).angles;
        assert_relative_eq!(b, a * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn head_stays_within_physiological_range() {
        let mut head = HeadMotion::new(motion_preset(MotionPreset::Heavy), rng_stream(3, "head"));
        for _ in 0..20_000 {
            head.step(0.01);
            assert!(head.state.angles.iter().all(|a| a.abs() <= FRAC_PI_2));
            assert!(head.state.targets.iter().all(|a| a.abs() <= FRAC_PI_2));
        }
    }

    #[test]
    fn still_head_never_moves() {
        let mut head = HeadMotion::new(motion_preset(MotionPreset::None), rng_stream(3, "head"));
        let start = head.head_pose();
        for _ in 0..1000 {
            head.step(0.01);
        }
        assert_eq!(head.head_pose(), start);
    }

    proptest! {
        #[test]
        fn tracking_moves_toward_target(a in -1.5_f64..1.5, t in -1.5_f64..1.5) {
            let s = NeckState { angles: Vector3::new(a, 0.0, 0.0), velocities: Vector3::zeros(), targets: Vector3::new(t, 0.0, 0.0) };
            let n = track_head(&s, 0.5, 0.01);
            prop_assert!((n.angles.x - t).abs() <= (a - t).abs());
        }
    }
}
