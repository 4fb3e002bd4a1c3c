//! Rigid-body poses, frame conventions, camera projection and the
//! visibility-wedge predicate.
//!
//! Frames: the world frame is local ENU (x east, y north, z up). The
//! vehicle frame is x forward, y left, z up; a camera frame is z forward,
//! x right, y down. A [`Pose`] maps vehicle coordinates into world
//! coordinates. Euler angles follow the intrinsic Z-Y-X (yaw, pitch,
//! roll) order.

mod camera;
mod so3;
mod wedge;

pub use camera::{CameraModel, Distortion, ProjectionError};
pub use so3::{log_so3, rodrigues, skew};
pub use wedge::{in_wedge, VisibilityWedge};

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use thiserror::Error;

use std::f64::consts::{PI, TAU};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rotation matrix is not orthonormal with determinant +1 (deviation {deviation:.3e})")]
    NotARotation { deviation: f64 },
    #[error("wedge range must be positive, got {0}")]
    NonPositiveRange(f64),
    #[error("detection probability must lie in [0, 1], got {0}")]
    BadDetectionProbability(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("focal lengths must be positive")]
    BadFocalLength,
    #[error("at most 5 distortion coefficients (k1, k2, p1, p2, k3) are supported, got {0}")]
    TooManyDistortionCoefficients(usize),
}

/// Wrap an angle to the half-open interval (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Tolerance for the orthonormality check in [`Pose::from_parts`].
pub const ROTATION_TOL: f64 = 1e-9;

/// A rigid transform mapping vehicle coordinates to world (ENU)
/// coordinates: `x_world = R x_vehicle + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Build a pose from a rotation matrix and translation, validating
    /// orthonormality (`R Rᵀ = I` and `det R = +1` within [`ROTATION_TOL`]).
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        let deviation = (rotation * rotation.transpose() - Matrix3::identity()).norm();
        let det = rotation.determinant();
        if deviation > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotARotation {
                deviation: deviation.max((det - 1.0).abs()),
            });
        }
        Ok(Pose {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub(crate) fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    /// Pose from ENU position and yaw/pitch/roll (intrinsic Z-Y-X).
    pub fn from_enu_ypr(e: f64, n: f64, u: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        Pose {
            rotation: Rotation3::from_euler_angles(roll, pitch, yaw),
            translation: Vector3::new(e, n, u),
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        *self.rotation.matrix()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// (yaw, pitch, roll) of the vehicle in the world frame.
    pub fn ypr(&self) -> (f64, f64, f64) {
        let (roll, pitch, yaw) = self.rotation.euler_angles();
        (yaw, pitch, roll)
    }

    /// State vector ordering `[e, n, u, yaw, pitch, roll]`.
    pub fn to_state(&self) -> [f64; 6] {
        let (yaw, pitch, roll) = self.ypr();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            yaw,
            pitch,
            roll,
        ]
    }

    pub fn from_state(s: &[f64; 6]) -> Self {
        Pose::from_enu_ypr(s[0], s[1], s[2], s[3], s[4], s[5])
    }

    /// Homogeneous 4×4 matrix representation.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Frame composition: `(self ∘ other)` maps through `other` first,
    /// then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// Map a point from the vehicle frame into the world frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Map a world point into the vehicle frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    /// Project the rotation back onto SO(3). Composition chains drift at
    /// the rounding level; callers doing very long chains renormalize
    /// periodically.
    pub fn orthonormalize(&mut self) {
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&self.rotation);
        self.rotation = q.to_rotation_matrix();
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_roundtrip() {
        let p = Pose::identity();
        assert_eq!(p.translation(), Vector3::zeros());
        assert_eq!(p.rotation(), Matrix3::identity());
    }

    #[test]
    fn euler_roundtrip_within_tolerance() {
        let cases = [
            (0.3, -0.2, 0.1),
            (3.0, 1.2, -2.9),
            (-3.1, -1.4, 3.1),
            (0.0, 0.0, 0.0),
        ];
        for (yaw, pitch, roll) in cases {
            let p = Pose::from_enu_ypr(1.0, 2.0, 3.0, yaw, pitch, roll);
            let (y2, p2, r2) = p.ypr();
            let q = Pose::from_enu_ypr(1.0, 2.0, 3.0, y2, p2, r2);
            assert_relative_eq!(p.rotation(), q.rotation(), epsilon = 1e-9);
        }
    }

    #[test]
    fn from_parts_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::from_parts(m, Vector3::zeros()).is_err());
        let refl = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::from_parts(refl, Vector3::zeros()).is_err());
    }

    #[test]
    fn compose_matches_matrix_product() {
        let a = Pose::from_enu_ypr(1.0, -2.0, 0.5, 0.7, 0.1, -0.3);
        let b = Pose::from_enu_ypr(-4.0, 2.5, 1.5, -1.2, 0.4, 0.9);
        let c = a.compose(&b);
        assert_relative_eq!(c.to_matrix(), a.to_matrix() * b.to_matrix(), epsilon = 1e-12);
    }

    #[test]
    fn wrap_angle_half_open() {
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    proptest! {
        #[test]
        fn inverse_composes_to_identity(
            e in -100.0..100.0f64, n in -100.0..100.0f64, u in -10.0..10.0f64,
            yaw in -3.1..3.1f64, pitch in -1.4..1.4f64, roll in -3.1..3.1f64,
        ) {
            let p = Pose::from_enu_ypr(e, n, u, yaw, pitch, roll);
            let id = p.compose(&p.inverse());
            prop_assert!((id.translation()).norm() < 1e-9);
            prop_assert!((id.rotation() - Matrix3::identity()).norm() < 1e-9);
        }

        #[test]
        fn transform_point_roundtrip(
            e in -50.0..50.0f64, n in -50.0..50.0f64,
            yaw in -3.1..3.1f64,
            px in -100.0..100.0f64, py in -100.0..100.0f64, pz in -100.0..100.0f64,
        ) {
            let p = Pose::from_enu_ypr(e, n, 0.0, yaw, 0.0, 0.0);
            let x = Vector3::new(px, py, pz);
            let back = p.inverse_transform_point(&p.transform_point(&x));
            prop_assert!((back - x).norm() < 1e-9);
        }
    }
}
