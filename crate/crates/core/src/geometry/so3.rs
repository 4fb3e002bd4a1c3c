//! Closed-form exponential and logarithm on SO(3).

use nalgebra::{Matrix3, Vector3};

use std::f64::consts::PI;

/// Cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

const SMALL_ANGLE: f64 = 1e-8;

/// Rotation matrix `exp([w]×)` via the Rodrigues formula, with a
/// second-order Taylor branch below [`SMALL_ANGLE`] radians.
pub fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        Matrix3::identity() + k + 0.5 * (k * k)
    } else {
        let theta = theta2.sqrt();
        Matrix3::identity() + (theta.sin() / theta) * k + ((1.0 - theta.cos()) / theta2) * (k * k)
    }
}

/// Rotation vector `w` with `exp([w]×) = R`. The returned angle lies in
/// [0, π].
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    // vee(R − Rᵀ) = 2 sinθ · axis
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < SMALL_ANGLE {
        return 0.5 * vee;
    }
    if theta < PI - 1e-6 {
        return (theta / (2.0 * theta.sin())) * vee;
    }
    // Near π: sinθ ≈ 0, recover the axis from R + I = 2(aaᵀ + cosθ·(I − aaᵀ))
    // using the column with the largest diagonal entry.
    let b = (r + Matrix3::identity()) * 0.5;
    let mut col = 0;
    for i in 1..3 {
        if b[(i, i)] > b[(col, col)] {
            col = i;
        }
    }
    let mut axis = b.column(col).into_owned();
    axis /= b[(col, col)].max(f64::EPSILON).sqrt();
    let axis = axis.normalize();
    // vee still carries the sign of the axis when sinθ > 0.
    let axis = if axis.dot(&vee) < 0.0 { -axis } else { axis };
    theta * axis
}
