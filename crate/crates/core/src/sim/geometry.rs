//! Rigid poses, twists and force samples.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Position plus unit-quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose6 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6 {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_translation(position: Vector3<f64>) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            position: iso.translation.vector,
            orientation: iso.rotation,
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose6) -> Pose6 {
        Pose6 {
            position: self.position + self.orientation * other.position,
            orientation: self.orientation * other.orientation,
        }
    }

    pub fn inverse(&self) -> Pose6 {
        let inv = self.orientation.inverse();
        Pose6 {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * p
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (p - self.position)
    }

    pub fn transform_point3(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.transform_point(&p.coords))
    }

    /// Local z axis expressed in the parent frame.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    /// Translation distance and geodesic angle to `other`.
    pub fn distance_to(&self, other: &Pose6) -> (f64, f64) {
        (
            (self.position - other.position).norm(),
            self.orientation.angle_to(&other.orientation),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && (self.orientation.coords.norm() - 1.0).abs() <= 1e-9
    }

    /// Linear interpolation of position, spherical interpolation of orientation.
    pub fn interpolate(&self, other: &Pose6, u: f64) -> Pose6 {
        Pose6 {
            position: self.position + (other.position - self.position) * u,
            orientation: if self.orientation == other.orientation {
                self.orientation
            } else {
                self.orientation.slerp(&other.orientation, u)
            },
        }
        .renormalized()
    }

    /// Renormalises the quaternion after integration.
    pub fn renormalized(mut self) -> Pose6 {
        self.orientation = UnitQuaternion::new_normalize(self.orientation.into_inner());
        self
    }
}

/// Spatial velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist6 {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist6 {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn is_finite(&self) -> bool {
        self.linear
            .iter()
            .chain(self.angular.iter())
            .all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        (self.linear.norm_squared() + self.angular.norm_squared()).sqrt()
    }
}

/// Largest force magnitude a sample may carry before it is treated as a fault.
pub const FORCE_SANITY_LIMIT: f64 = 50.0;

/// Loadcell reading in the end-effector frame: x, y transverse, z axial.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceSample {
    pub f: Vector3<f64>,
    pub t: f64,
}

impl ForceSample {
    pub fn new(f: Vector3<f64>, t: f64) -> Self {
        Self { f, t }
    }

    pub fn is_valid(&self) -> bool {
        self.t.is_finite()
            && self.f.iter().all(|v| v.is_finite())
            && self.f.norm() < FORCE_SANITY_LIMIT
    }

    pub fn transverse(&self) -> f64 {
        self.f.x.hypot(self.f.y)
    }
}

/// Integrates a pose by a twist whose components are expressed in the pose's
/// own (body) frame.
pub fn integrate_body(pose: &Pose6, twist: &Twist6, dt: f64) -> Pose6 {
    let dq = UnitQuaternion::from_scaled_axis(twist.angular * dt);
    Pose6 {
        position: pose.position + pose.orientation * (twist.linear * dt),
        orientation: pose.orientation * dq,
    }
    .renormalized()
}

/// Integrates a pose by a twist expressed in the parent (world) frame.
pub fn integrate_world(pose: &Pose6, twist: &Twist6, dt: f64) -> Pose6 {
    let dq = UnitQuaternion::from_scaled_axis(twist.angular * dt);
    Pose6 {
        position: pose.position + twist.linear * dt,
        orientation: dq * pose.orientation,
    }
    .renormalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn compose_then_inverse_is_identity() {
        let a = Pose6::new(
            Vector3::new(0.1, -0.2, 0.3),
            UnitQuaternion::from_euler_angles(0.1, 0.4, -0.7),
        );
        let id = a.compose(&a.inverse());
        assert!(id.position.norm() < 1e-15);
        assert!(id.orientation.angle() < 1e-12);
    }

    #[test]
    fn body_integration_moves_along_local_axes() {
        let p = Pose6::new(
            Vector3::zeros(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
        );
        let moved = integrate_body(
            &p,
            &Twist6::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()),
            0.5,
        );
        assert!((moved.position - Vector3::new(0.0, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn force_sample_rejects_out_of_range() {
        assert!(ForceSample::new(Vector3::new(0.1, 0.0, 0.2), 0.0).is_valid());
        assert!(!ForceSample::new(Vector3::new(f64::NAN, 0.0, 0.0), 0.0).is_valid());
        assert!(!ForceSample::new(Vector3::new(60.0, 0.0, 0.0), 0.0).is_valid());
    }
}
