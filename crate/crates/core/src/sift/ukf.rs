//! Unscented Kalman filter over the 6-DoF state
//! `[e, n, u, yaw, pitch, roll]`.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::geometry::wrap_angle;

#[derive(Debug, Error)]
pub enum UkfError {
    #[error("covariance is not symmetric positive definite")]
    NotSpd,
    #[error("too few correspondences for an update")]
    TooFewMeasurements,
}

const STATE_DIM: usize = 6;
const SIGMA_COUNT: usize = 2 * STATE_DIM + 1;
const YAW: usize = 3;

/// Scaled unscented transform parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        UtParams { alpha: 0.1, beta: 2.0, kappa: 0.0 }
    }
}

impl UtParams {
    fn lambda(&self) -> f64 {
        self.alpha * self.alpha * (STATE_DIM as f64 + self.kappa) - STATE_DIM as f64
    }

    fn weights(&self) -> ([f64; SIGMA_COUNT], [f64; SIGMA_COUNT]) {
        let lambda = self.lambda();
        let c = STATE_DIM as f64 + lambda;
        let mut wm = [1.0 / (2.0 * c); SIGMA_COUNT];
        let mut wc = wm;
        wm[0] = lambda / c;
        wc[0] = lambda / c + (1.0 - self.alpha * self.alpha + self.beta);
        (wm, wc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UkfState {
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
}

impl UkfState {
    pub fn new(mean: Vector6<f64>, covariance: Matrix6<f64>) -> Result<Self, UkfError> {
        if (covariance - covariance.transpose()).norm() > 1e-9 {
            return Err(UkfError::NotSpd);
        }
        let eig = covariance.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&e| e <= 0.0) {
            return Err(UkfError::NotSpd);
        }
        Ok(UkfState { mean, covariance })
    }

    /// Symmetrize and floor the eigenvalues; keeps the covariance usable
    /// after long update chains.
    pub fn condition(&mut self) {
        let sym = (self.covariance + self.covariance.transpose()) * 0.5;
        let mut eig = sym.symmetric_eigen();
        for e in eig.eigenvalues.iter_mut() {
            *e = e.max(1e-12);
        }
        self.covariance = eig.recompose();
    }
}

/// Sigma points of the state: the mean plus symmetric deviations along
/// the columns of `chol((n+λ)·P)`.
pub fn sigma_points(state: &UkfState, params: &UtParams) -> Result<[Vector6<f64>; SIGMA_COUNT], UkfError> {
    let c = STATE_DIM as f64 + params.lambda();
    let scaled = state.covariance * c;
    let chol = scaled.cholesky().ok_or(UkfError::NotSpd)?;
    let l = chol.l();
    let mut pts = [state.mean; SIGMA_COUNT];
    for i in 0..STATE_DIM {
        let col = l.column(i);
        pts[1 + i] += col;
        pts[1 + STATE_DIM + i] -= col;
    }
    Ok(pts)
}

/// Mean of transformed sigma states with a sine/cosine mean for the yaw
/// component.
fn state_mean(points: &[Vector6<f64>; SIGMA_COUNT], wm: &[f64; SIGMA_COUNT]) -> Vector6<f64> {
    let mut mean = Vector6::zeros();
    let (mut s, mut c) = (0.0, 0.0);
    for (p, &w) in points.iter().zip(wm) {
        mean += w * p;
        s += w * p[YAW].sin();
        c += w * p[YAW].cos();
    }
    mean[YAW] = s.atan2(c);
    mean
}

fn state_residual(p: &Vector6<f64>, mean: &Vector6<f64>) -> Vector6<f64> {
    let mut d = p - mean;
    d[YAW] = wrap_angle(d[YAW]);
    d
}

/// Unscented time update through an arbitrary transition function, with
/// additive process noise.
pub fn unscented_predict(
    state: &UkfState,
    params: &UtParams,
    q_additive: &Matrix6<f64>,
    f: impl Fn(&Vector6<f64>) -> Vector6<f64>,
) -> Result<UkfState, UkfError> {
    let (wm, wc) = params.weights();
    let pts = sigma_points(state, params)?;
    let mapped: Vec<Vector6<f64>> = pts.iter().map(&f).collect();
    let mapped: [Vector6<f64>; SIGMA_COUNT] = mapped.try_into().unwrap();
    let mean = state_mean(&mapped, &wm);
    let mut cov = *q_additive;
    for (p, &w) in mapped.iter().zip(&wc) {
        let d = state_residual(p, &mean);
        cov += w * d * d.transpose();
    }
    let mut out = UkfState { mean, covariance: cov };
    out.condition();
    Ok(out)
}

/// Outcome of a measurement update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// Normalized innovation squared exceeded the χ² gate; the state was
    /// left untouched.
    GatedOut,
}

/// Unscented measurement update with an arbitrary measurement function.
/// `h` may return `None` for a sigma point it cannot evaluate (e.g. a
/// landmark behind the camera), which skips the update entirely.
///
/// The innovation is gated at the `gate_quantile` χ² bound of the
/// measurement dimension.
pub fn unscented_update(
    state: &UkfState,
    params: &UtParams,
    z: &DVector<f64>,
    noise_var: f64,
    gate_quantile: f64,
    h: impl Fn(&Vector6<f64>) -> Option<DVector<f64>>,
) -> Result<(UkfState, UpdateOutcome), UkfError> {
    let m = z.len();
    if m == 0 {
        return Err(UkfError::TooFewMeasurements);
    }
    let (wm, wc) = params.weights();
    let pts = sigma_points(state, params)?;
    let mut mapped = Vec::with_capacity(SIGMA_COUNT);
    for p in &pts {
        match h(p) {
            Some(v) if v.len() == m => mapped.push(v),
            _ => return Ok((state.clone(), UpdateOutcome::GatedOut)),
        }
    }
    let mut z_mean = DVector::zeros(m);
    for (v, &w) in mapped.iter().zip(&wm) {
        z_mean += w * v;
    }
    let mut s = DMatrix::<f64>::identity(m, m) * noise_var;
    let mut cross = nalgebra::OMatrix::<f64, nalgebra::Const<6>, nalgebra::Dyn>::zeros(m);
    for ((v, p), &w) in mapped.iter().zip(&pts).zip(&wc) {
        let dz = v - &z_mean;
        let dx = state_residual(p, &state.mean);
        s += w * &dz * dz.transpose();
        cross += w * dx * dz.transpose();
    }
    let s_chol = s.clone().cholesky().ok_or(UkfError::NotSpd)?;
    let innovation = z - &z_mean;
    // Normalized innovation squared against the χ² gate.
    let nis = innovation.dot(&s_chol.solve(&innovation));
    let gate = ChiSquared::new(m as f64).expect("valid dof").inverse_cdf(gate_quantile);
    if nis > gate {
        return Ok((state.clone(), UpdateOutcome::GatedOut));
    }
    let gain = s_chol.solve(&cross.transpose()).transpose();
    let mut mean = state.mean + &gain * innovation;
    mean[YAW] = wrap_angle(mean[YAW]);
    let covariance = state.covariance - &gain * s * gain.transpose();
    let mut out = UkfState { mean, covariance };
    out.condition();
    Ok((out, UpdateOutcome::Applied))
}
