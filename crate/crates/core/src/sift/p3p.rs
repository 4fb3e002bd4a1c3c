//! Perspective-three-point solver, Grunert's closed form.
//!
//! The three distance equations
//!
//! ```text
//! s2² + s3² − 2 s2 s3 cosα = a²
//! s1² + s3² − 2 s1 s3 cosβ = b²
//! s1² + s2² − 2 s1 s2 cosγ = c²
//! ```
//!
//! reduce, with `u = s2/s1` and `v = s3/s1`, to a quartic in `v`. The
//! quartic coefficients are assembled by polynomial arithmetic from the
//! three factor polynomials rather than transcribed in expanded form.
//! Roots come from the companion-matrix eigenvalues with a Newton
//! polish; roots with |imaginary part| < 1e-9 are accepted as real.

use nalgebra::{DMatrix, Matrix3, Vector3};

/// Camera-from-world solutions `(R, t)` with `x_cam = R x_world + t`.
pub fn solve_p3p(
    bearings: &[Vector3<f64>; 3],
    points: &[Vector3<f64>; 3],
) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    let f: Vec<Vector3<f64>> = bearings.iter().map(|b| b.normalize()).collect();
    let a2 = (points[1] - points[2]).norm_squared();
    let b2 = (points[0] - points[2]).norm_squared();
    let c2 = (points[0] - points[1]).norm_squared();
    if a2 < 1e-12 || b2 < 1e-12 || c2 < 1e-12 {
        return Vec::new();
    }
    let cos_alpha = f[1].dot(&f[2]);
    let cos_beta = f[0].dot(&f[2]);
    let cos_gamma = f[0].dot(&f[1]);

    let k = (a2 - c2) / b2;
    // u = N(v) / D(v); substituting into the third ratio equation gives
    // P(v) = N² − 2 cosγ N D + Q D² = 0.
    let n_poly = [k + 1.0, -2.0 * k * cos_beta, k - 1.0]; // ascending powers
    let d_poly = [2.0 * cos_gamma, -2.0 * cos_alpha];
    let q_poly = [1.0 - c2 / b2, 2.0 * (c2 / b2) * cos_beta, -c2 / b2];

    let nn = poly_mul(&n_poly, &n_poly);
    let nd = poly_mul(&n_poly, &d_poly);
    let dd = poly_mul(&d_poly, &d_poly);
    let qdd = poly_mul(&q_poly, &dd);
    let mut quartic = [0.0f64; 5];
    for (i, q) in quartic.iter_mut().enumerate() {
        let mut v = 0.0;
        if i < nn.len() {
            v += nn[i];
        }
        if i < nd.len() {
            v -= 2.0 * cos_gamma * nd[i];
        }
        if i < qdd.len() {
            v += qdd[i];
        }
        *q = v;
    }

    let mut solutions = Vec::new();
    for v in real_roots(&quartic) {
        if !(v > 1e-9) {
            continue;
        }
        let denom = d_poly[0] + d_poly[1] * v;
        if denom.abs() < 1e-12 {
            continue;
        }
        let u = (n_poly[0] + n_poly[1] * v + n_poly[2] * v * v) / denom;
        if !(u > 1e-9) {
            continue;
        }
        let s1_sq = b2 / (1.0 + v * v - 2.0 * v * cos_beta);
        if !(s1_sq > 1e-12) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        let s2 = u * s1;
        let s3 = v * s1;
        let (s1, s2, s3) = refine_distances(s1, s2, s3, a2, b2, c2, cos_alpha, cos_beta, cos_gamma);
        // Guard against spurious quartic roots.
        let r3 = s1 * s1 + s2 * s2 - 2.0 * s1 * s2 * cos_gamma - c2;
        if r3.abs() > 1e-6 * c2.max(1.0) {
            continue;
        }
        let cam_points = [f[0] * s1, f[1] * s2, f[2] * s3];
        if let Some(rt) = absolute_orientation(points, &cam_points) {
            solutions.push(rt);
        }
    }
    solutions
}

/// Newton refinement of the camera-point distances on the three
/// law-of-cosines residuals.
#[allow(clippy::too_many_arguments)]
fn refine_distances(
    mut s1: f64,
    mut s2: f64,
    mut s3: f64,
    a2: f64,
    b2: f64,
    c2: f64,
    cos_alpha: f64,
    cos_beta: f64,
    cos_gamma: f64,
) -> (f64, f64, f64) {
    for _ in 0..5 {
        let r = Vector3::new(
            s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * cos_alpha - a2,
            s1 * s1 + s3 * s3 - 2.0 * s1 * s3 * cos_beta - b2,
            s1 * s1 + s2 * s2 - 2.0 * s1 * s2 * cos_gamma - c2,
        );
        if r.norm() < 1e-14 * (a2 + b2 + c2) {
            break;
        }
        let j = Matrix3::new(
            0.0,
            2.0 * s2 - 2.0 * s3 * cos_alpha,
            2.0 * s3 - 2.0 * s2 * cos_alpha,
            2.0 * s1 - 2.0 * s3 * cos_beta,
            0.0,
            2.0 * s3 - 2.0 * s1 * cos_beta,
            2.0 * s1 - 2.0 * s2 * cos_gamma,
            2.0 * s2 - 2.0 * s1 * cos_gamma,
            0.0,
        );
        let Some(delta) = j.lu().solve(&r) else { break };
        s1 -= delta[0];
        s2 -= delta[1];
        s3 -= delta[2];
    }
    (s1, s2, s3)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Real roots of a polynomial given in ascending-power coefficients,
/// via companion-matrix eigenvalues plus Newton refinement.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    // Trim near-zero leading (highest-power) coefficients.
    let mut degree = coeffs.len() - 1;
    while degree > 0 && coeffs[degree].abs() < 1e-14 * scale {
        degree -= 1;
    }
    if degree == 0 {
        return Vec::new();
    }
    if degree == 1 {
        return vec![-coeffs[0] / coeffs[1]];
    }
    let lead = coeffs[degree];
    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -coeffs[i] / lead;
    }
    let eigen = companion.complex_eigenvalues();
    let mut out = Vec::new();
    for ev in eigen.iter() {
        if ev.im.abs() >= 1e-9 * ev.re.abs().max(1.0) {
            continue;
        }
        let mut x = ev.re;
        for _ in 0..3 {
            let (p, dp) = eval_poly(coeffs, x);
            if dp.abs() > 1e-300 {
                x -= p / dp;
            }
        }
        out.push(x);
    }
    out
}

fn eval_poly(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &c in coeffs.iter().rev() {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

/// Kabsch alignment: the rigid `(R, t)` with `dst_i = R src_i + t`,
/// exact for three non-collinear points.
fn absolute_orientation(
    src: &[Vector3<f64>; 3],
    dst: &[Vector3<f64>; 3],
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let ms = (src[0] + src[1] + src[2]) / 3.0;
    let md = (dst[0] + dst[1] + dst[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (dst[i] - md) * (src[i] - ms).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let mut d = Matrix3::identity();
    d[(2, 2)] = (u * vt).determinant().signum();
    let r = u * d * vt;
    Some((r, md - r * ms))
}
