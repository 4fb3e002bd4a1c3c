//! Pinhole camera with Brown radial/tangential distortion.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GeometryError, Pose};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProjectionError {
    /// The point has non-positive depth in the camera frame.
    #[error("point is behind the camera")]
    BehindCamera,
}

/// Brown distortion coefficients: three radial, two tangential.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Distortion {
    /// Coefficients in the conventional `[k1, k2, p1, p2, k3]` order;
    /// missing trailing entries are zero.
    pub fn from_coeffs(coeffs: &[f64]) -> Result<Self, GeometryError> {
        if coeffs.len() > 5 {
            return Err(GeometryError::TooManyDistortionCoefficients(coeffs.len()));
        }
        let get = |i: usize| coeffs.get(i).copied().unwrap_or(0.0);
        Ok(Distortion {
            k1: get(0),
            k2: get(1),
            p1: get(2),
            p2: get(3),
            k3: get(4),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.k3 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }
}

/// Calibrated camera: intrinsics in pixels, Brown distortion in
/// normalized units, and the mounting pose of the camera in the vehicle
/// frame (the lever arm).
///
/// Camera frame: z forward, x right, y down. Normalized coordinates are
/// `(x/z, y/z)` before distortion; [`CameraModel::project`] returns the
/// distorted normalized coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: Distortion,
    extrinsic: Pose,
    extrinsic_inv: Pose,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        distortion: Distortion,
        extrinsic: Pose,
    ) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::BadFocalLength);
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            distortion,
            extrinsic,
            extrinsic_inv: extrinsic.inverse(),
        })
    }

    /// Mounting pose of the camera in the vehicle frame.
    pub fn extrinsic(&self) -> &Pose {
        &self.extrinsic
    }

    /// Rotation taking camera axes (x right, y down, z forward) to
    /// vehicle axes (x forward, y left, z up).
    pub fn forward_mount() -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
    }

    /// Forward-looking camera mounted at `offset` in the vehicle frame.
    pub fn forward_facing(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        distortion: Distortion,
        offset: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let extrinsic = Pose::from_parts(Self::forward_mount(), offset).expect("constant mount");
        Self::new(fx, fy, cx, cy, distortion, extrinsic)
    }

    /// World point in the camera frame for a given vehicle pose.
    pub fn to_camera_frame(&self, vehicle_pose: &Pose, world_point: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsic_inv
            .transform_point(&vehicle_pose.inverse_transform_point(world_point))
    }

    /// Project a world point to the distorted normalized image
    /// coordinate, together with its camera-frame depth.
    pub fn project_with_depth(
        &self,
        vehicle_pose: &Pose,
        world_point: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, f64), ProjectionError> {
        let pc = self.to_camera_frame(vehicle_pose, world_point);
        if pc.z <= 0.0 {
            return Err(ProjectionError::BehindCamera);
        }
        let n = Vector2::new(pc.x / pc.z, pc.y / pc.z);
        Ok((self.distort(&n), pc.z))
    }

    /// Distorted normalized image coordinate of a world point.
    pub fn project(
        &self,
        vehicle_pose: &Pose,
        world_point: &Vector3<f64>,
    ) -> Result<Vector2<f64>, ProjectionError> {
        self.project_with_depth(vehicle_pose, world_point).map(|(n, _)| n)
    }

    /// Apply the Brown model to an undistorted normalized coordinate.
    pub fn distort(&self, n: &Vector2<f64>) -> Vector2<f64> {
        let d = &self.distortion;
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
        Vector2::new(
            x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x),
            y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y,
        )
    }

    /// Invert [`CameraModel::distort`] by Newton iteration.
    pub fn undistort(&self, distorted: &Vector2<f64>) -> Vector2<f64> {
        if self.distortion.is_zero() {
            return *distorted;
        }
        let mut p = *distorted;
        for _ in 0..20 {
            let f = self.distort(&p) - distorted;
            if f.norm() < 1e-12 {
                break;
            }
            let j = self.distort_jacobian(&p);
            match j.try_inverse() {
                Some(ji) => p -= ji * f,
                None => break,
            }
        }
        p
    }

    fn distort_jacobian(&self, n: &Vector2<f64>) -> Matrix2<f64> {
        let d = &self.distortion;
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
        let dradial_dr2 = d.k1 + r2 * (2.0 * d.k2 + 3.0 * d.k3 * r2);
        let dxx = radial + x * dradial_dr2 * 2.0 * x + 2.0 * d.p1 * y + 6.0 * d.p2 * x;
        let dxy = x * dradial_dr2 * 2.0 * y + 2.0 * d.p1 * x + 2.0 * d.p2 * y;
        let dyx = y * dradial_dr2 * 2.0 * x + 2.0 * d.p1 * x + 2.0 * d.p2 * y;
        let dyy = radial + y * dradial_dr2 * 2.0 * y + 6.0 * d.p1 * y + 2.0 * d.p2 * x;
        Matrix2::new(dxx, dxy, dyx, dyy)
    }

    /// Pixel coordinate of a distorted normalized coordinate.
    pub fn to_pixel(&self, n: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * n.x + self.cx, self.fy * n.y + self.cy)
    }

    /// Distorted normalized coordinate of a pixel.
    pub fn pixel_to_normalized(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    /// Unit bearing vector (camera frame) for a distorted normalized
    /// coordinate; undistorts first.
    pub fn bearing(&self, distorted: &Vector2<f64>) -> Vector3<f64> {
        let u = self.undistort(distorted);
        Vector3::new(u.x, u.y, 1.0).normalize()
    }
}
