//! Simulated patient: nasal corridor, head fixture and neck kinematics.
//!
//! Corridor geometry lives in the nostril frame: x points into the head along
//! the insertion axis, z up, y completes the right-handed frame. The corridor
//! is a piecewise-linear centerline with a radius profile interpolated
//! linearly in arclength.

use crate::sim::geometry::{Pose6, Twist6};
use crate::swab::{AxialContactModel, SwabBeam};
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Neck joint to head centre (m).
pub const NECK_LINK: f64 = 0.1214;
/// Number of shaft segments used in contact queries.
pub const SWAB_SAMPLES: usize = 20;
/// Depth of tissue modelled past the nasopharynx wall (m).
const NP_OVERRUN: f64 = 0.006;

/// Local obstruction around arclength `s`: the passage narrows by the
/// fraction `depth` of its radius and its centre is pushed `lift` along the
/// local upward normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub s: f64,
    pub depth: f64,
    pub lift: f64,
    pub half_width: f64,
}

/// Ridges of the stock corridors: a shallow one mid-cavity, a tight one on
/// the approach to the nasopharynx and a long constriction just before it.
pub const RIDGES: [Ridge; 3] = [
    Ridge { s: 0.045, depth: 0.25, lift: 0.0, half_width: 0.003 },
    Ridge { s: 0.068, depth: 0.93, lift: 0.0, half_width: 0.004 },
    Ridge { s: 0.082, depth: 0.85, lift: 0.0, half_width: 0.007 },
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("corridor needs at least two centerline points and one radius per point")]
    BadShape,
    #[error("corridor radii must be positive")]
    NonPositiveRadius,
    #[error("nasopharynx depth {np_depth} beyond centerline length {length}")]
    DepthBeyondCenterline { np_depth: f64, length: f64 },
    #[error("unknown {what} '{value}'")]
    Unknown { what: &'static str, value: String },
    #[error("cannot read corridor file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhantomId {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Sign of the nostril-frame y axis pointing at the septum.
    pub fn medial_sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    /// Depth of the nasopharynx along the corridor for the stock phantoms.
    pub fn np_depth(self) -> f64 {
        match self {
            Side::Left => 0.0931,
            Side::Right => 0.0942,
        }
    }
}

impl fmt::Display for PhantomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomId::A => "A",
            PhantomId::B => "B",
        })
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "Left",
            Side::Right => "Right",
        })
    }
}

impl FromStr for PhantomId {
    type Err = PhantomError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(PhantomId::A),
            "B" => Ok(PhantomId::B),
            _ => Err(PhantomError::Unknown {
                what: "phantom",
                value: s.to_string(),
            }),
        }
    }
}

impl FromStr for Side {
    type Err = PhantomError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l" | "left" => Ok(Side::Left),
            "r" | "right" => Ok(Side::Right),
            _ => Err(PhantomError::Unknown {
                what: "side",
                value: s.to_string(),
            }),
        }
    }
}

/// Closest point on the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arclength coordinate; negative in front of the nostril.
    pub s: f64,
    pub foot: Vector3<f64>,
    pub segment: usize,
}

/// Penetration of one point into the corridor wall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallContact {
    /// Depth along the wall normal (m).
    pub penetration: f64,
    /// Unit direction of the force the wall applies.
    pub direction: Vector3<f64>,
    pub s: f64,
}

/// Plain-data form used in corridor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorSpec {
    pub centerline: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
    pub np_depth: f64,
    pub phantom: PhantomId,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NasalCorridor {
    pub centerline: Vec<Vector3<f64>>,
    pub radius_profile: Vec<f64>,
    pub np_depth: f64,
    pub phantom_id: PhantomId,
    pub side: Side,
    arclength: Vec<f64>,
}

impl NasalCorridor {
    pub fn new(
        centerline: Vec<Vector3<f64>>,
        radius_profile: Vec<f64>,
        np_depth: f64,
        phantom_id: PhantomId,
        side: Side,
    ) -> Result<Self, PhantomError> {
        if centerline.len() < 2 || radius_profile.len() != centerline.len() {
            return Err(PhantomError::BadShape);
        }
        if radius_profile.iter().any(|&r| !(r > 0.0)) {
            return Err(PhantomError::NonPositiveRadius);
        }
        let mut arclength = Vec::with_capacity(centerline.len());
        let mut acc = 0.0;
        arclength.push(0.0);
        for w in centerline.windows(2) {
            acc += (w[1] - w[0]).norm();
            arclength.push(acc);
        }
        if np_depth > acc || np_depth <= 0.0 {
            return Err(PhantomError::DepthBeyondCenterline {
                np_depth,
                length: acc,
            });
        }
        Ok(Self {
            centerline,
            radius_profile,
            np_depth,
            phantom_id,
            side,
            arclength,
        })
    }

    pub fn from_spec(spec: &CorridorSpec) -> Result<Self, PhantomError> {
        Self::new(
            spec.centerline.iter().map(|p| Vector3::from(*p)).collect(),
            spec.radii.clone(),
            spec.np_depth,
            spec.phantom,
            spec.side,
        )
    }

    pub fn to_spec(&self) -> CorridorSpec {
        CorridorSpec {
            centerline: self.centerline.iter().map(|p| [p.x, p.y, p.z]).collect(),
            radii: self.radius_profile.clone(),
            np_depth: self.np_depth,
            phantom: self.phantom_id,
            side: self.side,
        }
    }

    /// Reads a corridor from a TOML file (see README for the schema).
    pub fn load(path: &std::path::Path) -> Result<Self, PhantomError> {
        let text = std::fs::read_to_string(path).map_err(|e| PhantomError::Io(e.to_string()))?;
        let spec: CorridorSpec =
            toml::from_str(&text).map_err(|e| PhantomError::Io(e.to_string()))?;
        Self::from_spec(&spec)
    }

    /// Stock geometry: a 30° entry incline, a central passage bowing slightly
    /// upward, and a descent onto the nasopharynx. Phantom B narrows the
    /// passage everywhere.
    pub fn preset(phantom: PhantomId, side: Side) -> Self {
        Self::smooth(phantom, side)
            .with_ridges(&RIDGES)
            .expect("stock ridges fit the corridor")
    }

    /// Stock geometry without ridges.
    pub fn smooth(phantom: PhantomId, side: Side) -> Self {
        let np_depth = side.np_depth();
        let entry_len = 0.0173;
        let entry = Vector3::new(30f64.to_radians().cos(), 0.0, 30f64.to_radians().sin());
        let (pitch, yaw) = (4.4f64.to_radians(), 3.9f64.to_radians());
        let chord = Vector3::new(
            pitch.cos() * yaw.cos(),
            pitch.cos() * yaw.sin(),
            pitch.sin(),
        );
        let bow = 0.0012;
        let up = (Vector3::z() - chord * chord.z).normalize();
        let half = (np_depth - entry_len) / 2.0;
        let half_chord = (half * half - bow * bow).sqrt();

        let p1 = entry * entry_len;
        let p2 = p1 + chord * half_chord + up * bow;
        let np = p1 + chord * (2.0 * half_chord);
        let p4 = np + (np - p2).normalize() * NP_OVERRUN;
        let mirror = |p: Vector3<f64>| Vector3::new(p.x, p.y * side.medial_sign(), p.z);
        let centerline = [Vector3::zeros(), p1, p2, np, p4]
            .into_iter()
            .map(mirror)
            .collect();
        let radii = match phantom {
            PhantomId::A => vec![0.0090, 0.0060, 0.0045, 0.0050, 0.0050],
            PhantomId::B => vec![0.0090, 0.0045, 0.0030, 0.0040, 0.0040],
        };
        Self::new(centerline, radii, np_depth, phantom, side).expect("stock corridor is valid")
    }

    /// Adds turbinate-like ridges: each is a local narrowing by the fraction
    /// `depth` of the radius, spread over `half_width` either side of `s`.
    pub fn with_ridges(&self, ridges: &[Ridge]) -> Result<Self, PhantomError> {
        let mut knots: Vec<(f64, Vector3<f64>, f64)> = self
            .arclength
            .iter()
            .zip(&self.centerline)
            .zip(&self.radius_profile)
            .map(|((&s, &p), &r)| (s, p, r))
            .collect();
        for ridge in ridges {
            if !(0.0..1.0).contains(&ridge.depth) || ridge.half_width <= 0.0 {
                return Err(PhantomError::BadShape);
            }
            let seg = self.segment_at(ridge.s);
            let t = self.tangent(seg);
            let up = (Vector3::z() - t * t.z).normalize();
            for (s, dip, lift) in [
                (ridge.s - ridge.half_width, 0.0, 0.0),
                (ridge.s, ridge.depth, ridge.lift),
                (ridge.s + ridge.half_width, 0.0, 0.0),
            ] {
                if s <= 0.0 || s >= self.np_depth || self.segment_at(s) != seg {
                    return Err(PhantomError::BadShape);
                }
                let r = self.radius_at(s).0;
                knots.push((s, self.point_at(s) + up * lift, r * (1.0 - dip)));
            }
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        knots.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-9);
        let mut out = Self::new(
            knots.iter().map(|k| k.1).collect(),
            knots.iter().map(|k| k.2).collect(),
            self.np_depth,
            self.phantom_id,
            self.side,
        )?;
        // keep the nasopharynx at the same place in space
        let np = self.point_at(self.np_depth);
        out.np_depth = out.project(&np).s;
        Ok(out)
    }

    pub fn length(&self) -> f64 {
        *self.arclength.last().expect("nonempty")
    }

    pub fn vertex_arclengths(&self) -> &[f64] {
        &self.arclength
    }

    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        let last = self.centerline.len() - 2;
        let mut best = Projection {
            s: 0.0,
            foot: self.centerline[0],
            segment: 0,
        };
        let mut best_d2 = f64::INFINITY;
        for (i, w) in self.centerline.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len2 = seg.norm_squared();
            let mut t = (p - w[0]).dot(&seg) / len2;
            if i > 0 {
                t = t.max(0.0);
            }
            if i < last {
                t = t.min(1.0);
            }
            let foot = w[0] + seg * t;
            let d2 = (p - foot).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = Projection {
                    s: self.arclength[i] + t * len2.sqrt(),
                    foot,
                    segment: i,
                };
            }
        }
        best
    }

    /// Point on the centerline at arclength `s` (clamped to its ends).
    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        let i = self.segment_at(s);
        let len = self.arclength[i + 1] - self.arclength[i];
        let t = ((s - self.arclength[i]) / len).clamp(0.0, 1.0);
        self.centerline[i].lerp(&self.centerline[i + 1], t)
    }

    pub fn tangent(&self, segment: usize) -> Vector3<f64> {
        (self.centerline[segment + 1] - self.centerline[segment]).normalize()
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.centerline.len() - 1;
        self.arclength
            .partition_point(|&a| a <= s)
            .saturating_sub(1)
            .min(n - 1)
    }

    /// Channel radius and its arclength derivative.
    pub fn radius_at(&self, s: f64) -> (f64, f64) {
        let last = self.arclength.len() - 1;
        if s <= 0.0 {
            return (self.radius_profile[0], 0.0);
        }
        if s >= self.arclength[last] {
            return (self.radius_profile[last], 0.0);
        }
        let i = self.segment_at(s);
        let len = self.arclength[i + 1] - self.arclength[i];
        let slope = (self.radius_profile[i + 1] - self.radius_profile[i]) / len;
        (
            self.radius_profile[i] + slope * (s - self.arclength[i]),
            slope,
        )
    }

    /// Wall contact of a point given in the nostril frame. Points in front
    /// of the nostril are in free space.
    pub fn wall_contact(&self, p: &Vector3<f64>) -> Option<WallContact> {
        let proj = self.project(p);
        if proj.s < 0.0 {
            return None;
        }
        let radial = p - proj.foot;
        let r = radial.norm();
        let (radius, slope) = self.radius_at(proj.s);
        if r <= radius || r == 0.0 {
            return None;
        }
        let scale = (1.0 + slope * slope).sqrt();
        let outward = (radial / r - self.tangent(proj.segment) * slope) / scale;
        Some(WallContact {
            penetration: (r - radius) / scale,
            direction: -outward,
            s: proj.s,
        })
    }

    /// Depth of a tip that has landed on the face around the nostril opening
    /// rather than inside it: the tip is past the nostril plane but nearer to
    /// that plane than to the channel wall.
    pub fn face_penetration(&self, tip: &Vector3<f64>) -> f64 {
        let proj = self.project(tip);
        if proj.s <= 0.0 {
            return 0.0;
        }
        let over = (tip - proj.foot).norm() - self.radius_at(proj.s).0;
        if over > proj.s {
            proj.s
        } else {
            0.0
        }
    }

    /// Frame of the nasopharynx plane: origin at the wall centre, normal
    /// along the final centerline segment, first in-plane axis toward the
    /// septum, second roughly upward.
    pub fn np_frame(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let centre = self.point_at(self.np_depth);
        let normal = self.tangent(self.segment_at(self.np_depth - 1e-9));
        let medial = Vector3::y() * self.side.medial_sign();
        let e1 = (medial - normal * medial.dot(&normal)).normalize();
        let e2 = normal.cross(&e1);
        let e2 = if e2.z < 0.0 { -e2 } else { e2 };
        (centre, normal, e1, e2)
    }
}

/// Head fixture carrying the fiducials and the two nostrils, in the head
/// frame (x anterior, y to the patient's left, z up, origin at head centre).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadFixture {
    pub fiducials: [Vector3<f64>; 5],
    pub nostril_pose_left: Pose6,
    pub nostril_pose_right: Pose6,
}

impl Default for HeadFixture {
    fn default() -> Self {
        // Nostril frame x points posteriorly: a half turn about the vertical.
        let facing = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
        Self {
            fiducials: [
                Vector3::new(0.100, 0.050, 0.040),
                Vector3::new(0.100, -0.050, 0.040),
                Vector3::new(0.095, 0.060, -0.070),
                Vector3::new(0.095, -0.060, -0.070),
                Vector3::new(0.110, 0.000, 0.075),
            ],
            nostril_pose_left: Pose6::new(Vector3::new(0.085, 0.012, -0.045), facing),
            nostril_pose_right: Pose6::new(Vector3::new(0.085, -0.012, -0.045), facing),
        }
    }
}

impl HeadFixture {
    pub fn nostril(&self, side: Side) -> &Pose6 {
        match side {
            Side::Left => &self.nostril_pose_left,
            Side::Right => &self.nostril_pose_right,
        }
    }
}

/// Head orientation for neck angles, composed intrinsically as
/// pitch (α, positive tips the face upward), yaw (β, about the vertical),
/// roll (γ, about the anterior axis).
pub fn neck_rotation(alpha: f64, beta: f64, gamma: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&-Vector3::y_axis(), alpha)
        * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), beta)
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), gamma)
}

/// Head-centre pose in the world, which is anchored at the spherical neck
/// joint.
pub fn neck_fk(alpha: f64, beta: f64, gamma: f64) -> Pose6 {
    let rot = neck_rotation(alpha, beta, gamma);
    Pose6::new(rot * Vector3::new(0.0, 0.0, NECK_LINK), rot)
}

pub fn fiducials_world(fixture: &HeadFixture, head_pose: &Pose6) -> [Vector3<f64>; 5] {
    fixture.fiducials.map(|p| head_pose.transform_point(&p))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactResult {
    /// Loadcell reading in the end-effector frame. Transverse components are
    /// the restoring force on the shaft; the axial component is positive in
    /// compression.
    pub force_ee: Vector3<f64>,
    /// Grasp-to-contact distance of the dominant transverse contact.
    pub contact_arclength: Option<f64>,
    pub tip_depth: f64,
    pub at_wall: bool,
    /// Sum of transverse contact magnitudes, the Coulomb normal load.
    pub normal_load: f64,
}

/// Contact forces on a swab held at `grasp` (world frame), with the corridor
/// placed at `nostril` (world frame). `tip_velocity` is the tip's velocity
/// relative to the tissue, in the nostril frame.
pub fn contact_forces(
    corridor: &NasalCorridor,
    nostril: &Pose6,
    grasp: &Pose6,
    swab: &SwabBeam<f64>,
    axial: &AxialContactModel<f64>,
    tip_velocity: &Twist6,
    attached: bool,
) -> ContactResult {
    let local = nostril.inverse().compose(grasp);
    let axis = local.z_axis();
    let tip = local.position + axis * swab.l_max;
    let tip_s = corridor.project(&tip).s;
    let tip_depth = tip_s.clamp(-0.05, corridor.length());
    if !attached {
        return ContactResult {
            tip_depth,
            ..Default::default()
        };
    }
    let (nu, _) = swab.stiffness_clamped(swab.contact_length(tip_depth));

    let step = swab.l_max / SWAB_SAMPLES as f64;
    let mut total = Vector3::zeros();
    let mut normal_load = 0.0;
    let mut dominant: Option<(f64, f64)> = None;
    let mut cluster: Option<(f64, Vector3<f64>, f64)> = None;
    let mut close =
        |c: Option<(f64, Vector3<f64>, f64)>, total: &mut Vector3<f64>, load: &mut f64| {
            if let Some((pen, dir, from_tip)) = c {
                let magnitude = nu * pen;
                *total += dir * magnitude;
                *load += magnitude;
                if dominant.is_none_or(|(m, _)| magnitude > m) {
                    dominant = Some((magnitude, swab.l_max - from_tip));
                }
            }
        };
    for i in 0..=SWAB_SAMPLES {
        let from_tip = step * i as f64;
        let point = tip - axis * from_tip;
        match corridor.wall_contact(&point) {
            Some(c) => {
                if cluster.is_none_or(|(pen, _, _)| c.penetration > pen) {
                    cluster = Some((c.penetration, c.direction, from_tip));
                }
            }
            None => close(cluster.take(), &mut total, &mut normal_load),
        }
    }
    close(cluster.take(), &mut total, &mut normal_load);

    // a tip caught on a narrowing wall loads the shaft axially by the part
    // of its overlap that lies along the shaft
    let tip_catch = corridor
        .wall_contact(&tip)
        .map_or(0.0, |c| c.penetration * (-c.direction.dot(&axis)).max(0.0));
    let wall_pen = (tip_s - corridor.np_depth)
        .max(0.0)
        .max(corridor.face_penetration(&tip))
        .max(tip_catch);
    let axial_load = axial.axial_force(wall_pen, normal_load, tip_velocity.linear.dot(&axis));
    let on_shaft = local.orientation.inverse() * total;
    ContactResult {
        force_ee: Vector3::new(on_shaft.x, on_shaft.y, -on_shaft.z + axial_load),
        contact_arclength: dominant.map(|(_, l)| l),
        tip_depth,
        at_wall: tip_s > corridor.np_depth,
        normal_load,
    }
}
