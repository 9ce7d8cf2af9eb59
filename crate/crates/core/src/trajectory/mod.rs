//! Three-part insertion trajectory: a straight entry at a fixed incline, an
//! in-place rotation about the tip toward a point on the nasopharynx, and a
//! long straight push toward that point. Waypoints are tip poses in the
//! nostril frame; the tool z axis is the swab axis.

mod energy;
mod optimize;

pub use energy::{segment_energy, strain_energy, ENERGY_SAMPLES, ENERGY_SEGMENTS};
pub use optimize::{minimize, optimize_trajectory, Minimum, NelderMead, OptimizeError};

use crate::phantom::NasalCorridor;
use crate::scalar::{sigmoid, Real};
use crate::sim::geometry::Pose6;
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Incline of the entry segment above the transverse plane.
pub const ENTRY_PITCH_DEG: f64 = 30.0;
pub const CHI_MAX: f64 = 0.04;
/// Length of the final push.
pub const PUSH_LENGTH: f64 = 0.150;
pub const PART_DURATIONS: [f64; 3] = [3.0, 2.0, 15.0];
pub const WAYPOINTS_PER_PART: usize = 200;
/// Fraction of each part spent accelerating (and again decelerating).
pub const RAMP_FRACTION: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("entry travel {0} m outside [0, {CHI_MAX}]")]
    ChiOutOfRange(f64),
    #[error("target ({e1}, {e2}) outside the nasopharynx ellipse")]
    OutsideEllipse { e1: f64, e2: f64 },
    #[error("target lies behind the swab tip")]
    Unreachable,
}

/// Semi-axes of the admissible target region on the nasopharynx plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub a: f64,
    pub b: f64,
}

impl Default for Ellipse {
    fn default() -> Self {
        Self { a: 0.010, b: 0.006 }
    }
}

impl Ellipse {
    pub fn contains(&self, e1: f64, e2: f64) -> bool {
        (e1 / self.a).powi(2) + (e2 / self.b).powi(2) <= 1.0 + 1e-12
    }

    /// Radial projection onto the closed ellipse.
    pub fn project(&self, e1: f64, e2: f64) -> (f64, f64) {
        let r = ((e1 / self.a).powi(2) + (e2 / self.b).powi(2)).sqrt();
        if r <= 1.0 {
            (e1, e2)
        } else {
            (e1 / r, e2 / r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajParams {
    pub chi: f64,
    pub e1: f64,
    pub e2: f64,
}

impl TrajParams {
    pub fn validate(&self, ellipse: &Ellipse) -> Result<(), TrajectoryError> {
        if !(0.0..=CHI_MAX).contains(&self.chi) {
            return Err(TrajectoryError::ChiOutOfRange(self.chi));
        }
        if !ellipse.contains(self.e1, self.e2) {
            return Err(TrajectoryError::OutsideEllipse {
                e1: self.e1,
                e2: self.e2,
            });
        }
        Ok(())
    }

    /// Parameters whose part-two rotation is `dpitch` (positive tips the swab
    /// down) and `dyaw` (negative turns toward the septum), in radians.
    pub fn from_rotation(chi: f64, dpitch: f64, dyaw: f64, corridor: &NasalCorridor) -> Self {
        let elevation = ENTRY_PITCH_DEG.to_radians() - dpitch;
        let azimuth = -dyaw;
        let medial = corridor.side.medial_sign();
        let dir = Vector3::new(
            elevation.cos() * azimuth.cos(),
            medial * elevation.cos() * azimuth.sin(),
            elevation.sin(),
        );
        let start = entry_direction() * chi;
        let (centre, normal, e1, e2) = corridor.np_frame();
        let t = (centre - start).dot(&normal) / dir.dot(&normal);
        let hit = start + dir * t - centre;
        Self {
            chi,
            e1: hit.dot(&e1),
            e2: hit.dot(&e2),
        }
    }

    /// Rotation applied in part two as (pitch, yaw), same conventions as
    /// [`TrajParams::from_rotation`].
    pub fn rotation(&self, corridor: &NasalCorridor) -> Result<(f64, f64), TrajectoryError> {
        let dir = push_direction(self, corridor)?;
        let elevation = dir.z.asin();
        let azimuth = (dir.y * corridor.side.medial_sign()).atan2(dir.x);
        Ok((ENTRY_PITCH_DEG.to_radians() - elevation, -azimuth))
    }
}

impl Default for TrajParams {
    fn default() -> Self {
        Self {
            chi: 0.0173,
            e1: 0.0,
            e2: 0.0,
        }
    }
}

pub fn entry_direction() -> Vector3<f64> {
    let p = ENTRY_PITCH_DEG.to_radians();
    Vector3::new(p.cos(), 0.0, p.sin())
}

/// Orientation with z along `dir` and x toward the nostril-frame vertical.
pub fn axis_orientation(dir: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = dir.normalize();
    let up = if z.z.abs() > 0.99 {
        -Vector3::x()
    } else {
        Vector3::z()
    };
    let x = (up - z * up.dot(&z)).normalize();
    let y = z.cross(&x);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Matrix3::from_columns(
        &[x, y, z],
    )))
}

fn push_direction(
    p: &TrajParams,
    corridor: &NasalCorridor,
) -> Result<Vector3<f64>, TrajectoryError> {
    let (centre, _, e1, e2) = corridor.np_frame();
    let goal = centre + e1 * p.e1 + e2 * p.e2;
    let delta = goal - entry_direction() * p.chi;
    if delta.dot(&entry_direction()) <= 0.0 {
        return Err(TrajectoryError::Unreachable);
    }
    Ok(delta.normalize())
}

/// Progress in [0, 1] of a trapezoidal speed profile at normalized time `u`.
pub fn ramp_progress(u: f64) -> f64 {
    let r = RAMP_FRACTION;
    let v = 1.0 / (1.0 - r);
    let u = u.clamp(0.0, 1.0);
    if u < r {
        0.5 * v * u * u / r
    } else if u <= 1.0 - r {
        0.5 * v * r + v * (u - r)
    } else {
        let w = 1.0 - u;
        1.0 - 0.5 * v * w * w / r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointTrack {
    pub times: Vec<f64>,
    pub waypoints: Vec<Pose6>,
    /// End time of each part.
    pub part_boundaries: [f64; 3],
    pub total_duration: f64,
    /// Tip path length up to each waypoint.
    pub path_length: Vec<f64>,
}

pub fn build_waypoints(
    p: &TrajParams,
    corridor: &NasalCorridor,
    ellipse: &Ellipse,
) -> Result<WaypointTrack, TrajectoryError> {
    p.validate(ellipse)?;
    let d0 = entry_direction();
    let d1 = push_direction(p, corridor)?;
    let (q0, q1) = (axis_orientation(&d0), axis_orientation(&d1));
    let corner = d0 * p.chi;

    let mut times = vec![0.0];
    let mut waypoints = vec![Pose6::new(Vector3::zeros(), q0)];
    let mut boundaries = [0.0; 3];
    let mut t0 = 0.0;
    for (part, &duration) in PART_DURATIONS.iter().enumerate() {
        for k in 1..=WAYPOINTS_PER_PART {
            let u = k as f64 / WAYPOINTS_PER_PART as f64;
            let s = ramp_progress(u);
            let pose = match part {
                0 => Pose6::new(d0 * (p.chi * s), q0),
                1 => Pose6::new(corner, q0.slerp(&q1, s)),
                _ => Pose6::new(corner + d1 * (PUSH_LENGTH * s), q1),
            };
            times.push(t0 + duration * u);
            waypoints.push(pose);
        }
        t0 += duration;
        boundaries[part] = t0;
    }
    let mut path_length = Vec::with_capacity(waypoints.len());
    let mut acc = 0.0;
    path_length.push(0.0);
    for w in waypoints.windows(2) {
        acc += (w[1].position - w[0].position).norm();
        path_length.push(acc);
    }
    Ok(WaypointTrack {
        times,
        waypoints,
        part_boundaries: boundaries,
        total_duration: t0,
        path_length,
    })
}

impl WaypointTrack {
    /// Pose at progress `l`, clamped to the track.
    pub fn target_at(&self, l: f64) -> Pose6 {
        let l = l.clamp(0.0, self.total_duration);
        let i = self
            .times
            .partition_point(|&t| t <= l)
            .clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let u = (l - t0) / (t1 - t0);
        if u <= 0.0 {
            return self.waypoints[i - 1];
        }
        if u >= 1.0 {
            return self.waypoints[i];
        }
        self.waypoints[i - 1].interpolate(&self.waypoints[i], u)
    }

    /// Index of the last waypoint at or before `l`.
    pub fn index_at(&self, l: f64) -> usize {
        self.times
            .partition_point(|&t| t <= l)
            .saturating_sub(1)
            .min(self.times.len() - 1)
    }

    /// Projects a tip position onto the tip path, searching `window`
    /// segments either side of `hint`. Returns (path length, segment index).
    pub fn project_path(&self, p: &Vector3<f64>, hint: usize, window: usize) -> (f64, usize) {
        let last = self.waypoints.len() - 2;
        let lo = hint.saturating_sub(window);
        let hi = (hint + window).min(last);
        let mut best = (0.0, lo);
        let mut best_d2 = f64::INFINITY;
        for i in lo..=hi {
            let a = self.waypoints[i].position;
            let seg = self.waypoints[i + 1].position - a;
            let len2 = seg.norm_squared();
            let t = if len2 > 0.0 {
                ((p - a).dot(&seg) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d2 = (p - (a + seg * t)).norm_squared();
            if d2 < best_d2 - 1e-18 {
                best_d2 = d2;
                best = (self.path_length[i] + t * len2.sqrt(), i);
            }
        }
        best
    }
}

/// Slowdown law dl/dt = 1 − σ(s·(f_z − f̄)).
pub fn slowdown_rate<T: Real>(f_z: T, slope: T, intercept: T) -> T {
    T::one() - sigmoid(slope * (f_z - intercept))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowdownParams {
    pub slope: f64,
    pub intercept: f64,
}

impl Default for SlowdownParams {
    fn default() -> Self {
        Self {
            slope: 60.0,
            intercept: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackCursor {
    pub l: f64,
    pub finished: bool,
}

pub fn advance_cursor(
    c: &TrackCursor,
    f_z: f64,
    dt: f64,
    duration: f64,
    params: &SlowdownParams,
) -> TrackCursor {
    let l = (c.l + dt * slowdown_rate(f_z, params.slope, params.intercept)).min(duration);
    TrackCursor {
        l,
        finished: l >= duration,
    }
}
