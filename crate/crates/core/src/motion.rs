//! Process model: odometry-driven pose propagation with Gaussian motion
//! noise, the on-road mixture component, and the synthetic odometry
//! generator with a slowly varying angular-rate bias.
//!
//! The pose update left-multiplies the pose matrix by the increment
//! built from the measured rates:
//!
//! ```text
//! M(x_t) = Δ · M(x_{t-1}),   Δ = [ exp([Δt·ω + qω]×)   Δt·v + qv ]
//!                                [        0                 1    ]
//! ```
//!
//! with `qω ~ N(0, Δt·Qω)` and `qv ~ N(0, Δt·Qv)`. The odometry
//! simulator recovers `(v, ω)` from consecutive ground-truth poses via
//! the matrix logarithm of exactly this increment, so noise-free
//! dead reckoning reproduces the input trajectory.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::geometry::{log_so3, rodrigues, wrap_angle, Pose};

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("odometry dt must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("non-finite odometry component")]
    NonFinite,
    #[error("covariance must be symmetric positive semidefinite")]
    NotPsd,
    #[error("mixture weight must lie in [0, 1], got {0}")]
    BadMixtureWeight(f64),
    #[error("at least two timestamped poses are required")]
    TooFewPoses,
    #[error("timestamps must be strictly increasing (index {0})")]
    NonIncreasingTimestamps(usize),
    #[error("simulation variances must be nonnegative and decay in [0, 1)")]
    BadSimConfig,
    #[error("road polyline must be non-empty")]
    EmptyRoad,
}

/// One odometry sample: body rates over an interval of `dt` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryReading {
    /// Translational rate (m/s), x/y/z components.
    pub v: Vector3<f64>,
    /// Angular rate (rad/s), x/y/z components. (File storage orders the
    /// components z, y, x; see [`crate::io`].)
    pub omega: Vector3<f64>,
    /// Interval length in seconds, > 0.
    pub dt: f64,
}

impl OdometryReading {
    pub fn new(v: Vector3<f64>, omega: Vector3<f64>, dt: f64) -> Result<Self, MotionError> {
        if !(dt > 0.0) {
            return Err(MotionError::NonPositiveDt(dt));
        }
        if !v.iter().chain(omega.iter()).all(|x| x.is_finite()) {
            return Err(MotionError::NonFinite);
        }
        Ok(OdometryReading { v, omega, dt })
    }
}

/// Process-noise configuration: continuous-time covariances (scaled by
/// `Δt` when sampled) and the on-road mixture weight α.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionNoiseConfig {
    q_v: Matrix3<f64>,
    q_omega: Matrix3<f64>,
    sqrt_q_v: Matrix3<f64>,
    sqrt_q_omega: Matrix3<f64>,
    pub alpha_road: f64,
}

impl MotionNoiseConfig {
    pub fn new(q_v: Matrix3<f64>, q_omega: Matrix3<f64>, alpha_road: f64) -> Result<Self, MotionError> {
        if !(0.0..=1.0).contains(&alpha_road) {
            return Err(MotionError::BadMixtureWeight(alpha_road));
        }
        Ok(MotionNoiseConfig {
            q_v,
            q_omega,
            sqrt_q_v: psd_sqrt(&q_v)?,
            sqrt_q_omega: psd_sqrt(&q_omega)?,
            alpha_road,
        })
    }

    pub fn zero() -> Self {
        Self::new(Matrix3::zeros(), Matrix3::zeros(), 0.0).unwrap()
    }

    /// Isotropic noise with the given per-axis variances.
    pub fn isotropic(var_v: f64, var_omega: f64, alpha_road: f64) -> Result<Self, MotionError> {
        Self::new(
            Matrix3::identity() * var_v,
            Matrix3::identity() * var_omega,
            alpha_road,
        )
    }

    pub fn q_v(&self) -> &Matrix3<f64> {
        &self.q_v
    }

    pub fn q_omega(&self) -> &Matrix3<f64> {
        &self.q_omega
    }

    fn sample(&self, sqrt: &Matrix3<f64>, dt: f64, rng: &mut impl Rng) -> Vector3<f64> {
        let z = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        sqrt * z * dt.sqrt()
    }
}

/// Symmetric PSD square root via eigendecomposition; tolerates singular
/// covariances (e.g. noise restricted to one axis).
fn psd_sqrt(m: &Matrix3<f64>) -> Result<Matrix3<f64>, MotionError> {
    if (m - m.transpose()).norm() > 1e-9 || !m.iter().all(|x| x.is_finite()) {
        return Err(MotionError::NotPsd);
    }
    let eig = m.symmetric_eigen();
    let mut d = Matrix3::zeros();
    for i in 0..3 {
        let ev = eig.eigenvalues[i];
        if ev < -1e-12 {
            return Err(MotionError::NotPsd);
        }
        d[(i, i)] = ev.max(0.0).sqrt();
    }
    Ok(eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Apply the pose increment built from a rotation vector `w` and a
/// translation `d`: rotation and translation of the previous pose are
/// both left-multiplied by `exp([w]×)`.
pub fn apply_increment(pose: &Pose, w: &Vector3<f64>, d: &Vector3<f64>) -> Pose {
    let rot = Rotation3::from_matrix_unchecked(rodrigues(w));
    let prev = Rotation3::from_matrix_unchecked(pose.rotation());
    Pose::from_rotation(rot * prev, rot * pose.translation() + d)
}

/// Noise-free propagation through one odometry sample.
pub fn propagate_deterministic(pose: &Pose, odo: &OdometryReading) -> Pose {
    apply_increment(pose, &(odo.omega * odo.dt), &(odo.v * odo.dt))
}

/// Propagate one odometry sample with sampled motion noise.
pub fn propagate(pose: &Pose, odo: &OdometryReading, noise: &MotionNoiseConfig, rng: &mut impl Rng) -> Pose {
    let q_w = noise.sample(&noise.sqrt_q_omega, odo.dt, rng);
    let q_v = noise.sample(&noise.sqrt_q_v, odo.dt, rng);
    apply_increment(pose, &(odo.omega * odo.dt + q_w), &(odo.v * odo.dt + q_v))
}

/// Nearest pose on the road polyline (3-D position distance), with the
/// orientation interpolated between the segment endpoints.
pub fn project_to_road(pose: &Pose, road: &[Pose]) -> Pose {
    assert!(!road.is_empty(), "road polyline must be non-empty");
    if road.len() == 1 {
        return road[0];
    }
    let p = pose.translation();
    let mut best = (f64::INFINITY, 0usize, 0.0f64);
    for i in 0..road.len() - 1 {
        let a = road[i].translation();
        let b = road[i + 1].translation();
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let foot = a + ab * t;
        let d2 = (p - foot).norm_squared();
        if d2 < best.0 {
            best = (d2, i, t);
        }
    }
    let (_, i, t) = best;
    let a = road[i].translation();
    let b = road[i + 1].translation();
    let position = a + (b - a) * t;
    let (ya, pa, ra) = road[i].ypr();
    let (yb, pb, rb) = road[i + 1].ypr();
    let lerp_angle = |x: f64, y: f64| x + t * wrap_angle(y - x);
    Pose::from_enu_ypr(
        position.x,
        position.y,
        position.z,
        lerp_angle(ya, yb),
        lerp_angle(pa, pb),
        lerp_angle(ra, rb),
    )
}

/// Mixture process model: with probability `alpha_road` the propagated
/// pose is projected onto the road polyline.
pub fn propagate_mixture(
    pose: &Pose,
    odo: &OdometryReading,
    noise: &MotionNoiseConfig,
    road: &[Pose],
    rng: &mut impl Rng,
) -> Pose {
    let moved = propagate(pose, odo, noise, rng);
    // With α = 0 no uniform variate is consumed, so the draw sequence
    // matches plain `propagate` exactly.
    if noise.alpha_road > 0.0 && rng.random::<f64>() < noise.alpha_road {
        project_to_road(&moved, road)
    } else {
        moved
    }
}

/// Synthetic odometry noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OdometrySimConfig {
    /// AR(1) bias decay γ in `b_t = (1−γ)·b_{t−1} + q_b`.
    pub bias_decay: f64,
    /// Variance of the bias drive `q_b`, (rad/s)².
    pub bias_drive_var: f64,
    /// White-noise variance added to each angular-rate component, (rad/s)².
    pub omega_noise_var: f64,
    /// White-noise variance added to each velocity component, (m/s)².
    pub v_noise_var: f64,
}

impl Default for OdometrySimConfig {
    fn default() -> Self {
        OdometrySimConfig {
            bias_decay: 1e-5,
            bias_drive_var: 9e-10,
            omega_noise_var: 2.5e-5,
            v_noise_var: 4e-4,
        }
    }
}

impl OdometrySimConfig {
    pub fn noiseless() -> Self {
        OdometrySimConfig {
            bias_decay: 0.0,
            bias_drive_var: 0.0,
            omega_noise_var: 0.0,
            v_noise_var: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let ok = self.bias_drive_var >= 0.0
            && self.omega_noise_var >= 0.0
            && self.v_noise_var >= 0.0
            && (0.0..1.0).contains(&self.bias_decay);
        if ok {
            Ok(())
        } else {
            Err(MotionError::BadSimConfig)
        }
    }

    /// Stationary variance of each bias component,
    /// `σ² = drive_var / (1 − (1−γ)²)`.
    pub fn bias_stationary_var(&self) -> f64 {
        let rho = 1.0 - self.bias_decay;
        self.bias_drive_var / (1.0 - rho * rho)
    }
}

/// First-order autoregressive bias on the angular-rate components,
/// `b_t = (1−γ)·b_{t−1} + q_b` with independent per-axis drives.
#[derive(Debug, Clone)]
pub struct BiasProcess {
    state: Vector3<f64>,
    decay: f64,
    drive_std: f64,
}

impl BiasProcess {
    pub fn new(decay: f64, drive_var: f64) -> Self {
        BiasProcess {
            state: Vector3::zeros(),
            decay,
            drive_std: drive_var.sqrt(),
        }
    }

    /// Start the chain at its stationary distribution; with a decay of 0
    /// (no stationary law) or zero drive the start stays at zero.
    pub fn with_stationary_start(decay: f64, drive_var: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::new(decay, drive_var);
        if decay > 0.0 && drive_var > 0.0 {
            let rho = 1.0 - decay;
            let std = (drive_var / (1.0 - rho * rho)).sqrt();
            p.state = Vector3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ) * std;
        }
        p
    }

    pub fn step(&mut self, rng: &mut impl Rng) -> Vector3<f64> {
        let drive = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ) * self.drive_std;
        self.state = self.state * (1.0 - self.decay) + drive;
        self.state
    }
}

/// Generate odometry readings from consecutive ground-truth poses by
/// inverting the propagation increment, then adding white noise plus
/// the AR(1) bias (angular rates only). The bias chain starts at its
/// stationary distribution, so each sequence carries a persistent
/// rate offset.
pub fn simulate_odometry(
    true_poses: &[(Pose, f64)],
    cfg: &OdometrySimConfig,
    rng: &mut impl Rng,
) -> Result<Vec<OdometryReading>, MotionError> {
    cfg.validate()?;
    if true_poses.len() < 2 {
        return Err(MotionError::TooFewPoses);
    }
    let mut bias = BiasProcess::with_stationary_start(cfg.bias_decay, cfg.bias_drive_var, rng);
    let omega_std = cfg.omega_noise_var.sqrt();
    let v_std = cfg.v_noise_var.sqrt();
    let mut out = Vec::with_capacity(true_poses.len() - 1);
    for i in 1..true_poses.len() {
        let (prev, t_prev) = &true_poses[i - 1];
        let (curr, t_curr) = &true_poses[i];
        let dt = t_curr - t_prev;
        if !(dt > 0.0) {
            return Err(MotionError::NonIncreasingTimestamps(i));
        }
        // Δ = M_t · M_{t-1}⁻¹
        let r_delta = curr.rotation() * prev.rotation().transpose();
        let d = curr.translation() - r_delta * prev.translation();
        let w = log_so3(&r_delta);
        let b = bias.step(rng);
        let gauss3 = |rng: &mut dyn rand::RngCore, std: f64| {
            Vector3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ) * std
        };
        let omega = w / dt + b + gauss3(rng, omega_std);
        let v = d / dt + gauss3(rng, v_std);
        out.push(OdometryReading { v, omega, dt });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn odo(v: [f64; 3], w: [f64; 3], dt: f64) -> OdometryReading {
        OdometryReading::new(Vector3::from(v), Vector3::from(w), dt).unwrap()
    }

    #[test]
    fn zero_input_is_identity() {
        let pose = Pose::from_enu_ypr(3.0, -1.0, 2.0, 0.7, 0.1, -0.2);
        let out = propagate_deterministic(&pose, &odo([0.0; 3], [0.0; 3], 0.5));
        assert_relative_eq!(out.to_matrix(), pose.to_matrix(), epsilon = 1e-15);
    }

    #[test]
    fn pure_translation_advances_along_x() {
        let out = propagate_deterministic(&Pose::identity(), &odo([1.0, 0.0, 0.0], [0.0; 3], 2.0));
        assert_relative_eq!(out.translation(), Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(out.rotation(), Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn yaw_rate_matches_rodrigues_oracle() {
        let out = propagate_deterministic(&Pose::identity(), &odo([0.0; 3], [0.0, 0.0, FRAC_PI_2], 1.0));
        let oracle = Rotation3::from_scaled_axis(Vector3::new(0.0, 0.0, FRAC_PI_2));
        assert_relative_eq!(out.rotation(), *oracle.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn composition_is_exact() {
        // Two increments equal the single combined increment Δ'·Δ.
        let start = Pose::from_enu_ypr(1.0, 2.0, 0.0, 0.3, 0.0, 0.0);
        let o1 = odo([1.0, 0.5, 0.0], [0.0, 0.02, 0.3], 0.7);
        let o2 = odo([-0.4, 1.0, 0.2], [0.1, 0.0, -0.2], 1.3);
        let stepped = propagate_deterministic(&propagate_deterministic(&start, &o1), &o2);
        let d1 = (rodrigues(&(o1.omega * o1.dt)), o1.v * o1.dt);
        let d2 = (rodrigues(&(o2.omega * o2.dt)), o2.v * o2.dt);
        let combined_r = d2.0 * d1.0;
        let combined_d = d2.0 * d1.1 + d2.1;
        let direct = Pose::from_parts(combined_r * start.rotation(), combined_r * start.translation() + combined_d);
        assert_relative_eq!(
            stepped.to_matrix(),
            direct.unwrap().to_matrix(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rotation_stays_orthonormal_over_many_steps() {
        let mut pose = Pose::identity();
        let o = odo([1.0, 0.0, 0.0], [0.01, -0.02, 0.3], 0.1);
        for _ in 0..100_000 {
            pose = propagate_deterministic(&pose, &o);
        }
        let r = pose.rotation();
        assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-9);
    }

    #[test]
    fn road_projection_basics() {
        let road: Vec<Pose> = (0..11)
            .map(|i| Pose::from_enu_ypr(i as f64 * 10.0, 0.0, 0.0, 0.0, 0.0, 0.0))
            .collect();
        // Perpendicular foot.
        let p = project_to_road(&Pose::from_enu_ypr(5.0, 3.0, 0.0, 1.0, 0.0, 0.0), &road);
        assert_relative_eq!(p.translation(), Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
        // A pose already on a vertex stays put.
        let v = project_to_road(&Pose::from_enu_ypr(30.0, 0.0, 0.0, 0.2, 0.0, 0.0), &road);
        assert_relative_eq!(v.translation(), Vector3::new(30.0, 0.0, 0.0), epsilon = 1e-12);
        // Idempotence.
        let pp = project_to_road(&p, &road);
        assert_relative_eq!(p.translation(), pp.translation(), epsilon = 1e-12);
    }

    #[test]
    fn road_projection_matches_dense_sampling_oracle() {
        let road: Vec<Pose> = (0..30)
            .map(|i| {
                let s = i as f64 / 29.0 * 2.0 * PI;
                Pose::from_enu_ypr(40.0 * s.cos(), 25.0 * s.sin(), 0.5 * s.sin(), s + FRAC_PI_2, 0.0, 0.0)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Dense-sampling oracle: evaluate 1e5 points along the polyline.
        let mut samples = Vec::new();
        for i in 0..road.len() - 1 {
            let a = road[i].translation();
            let b = road[i + 1].translation();
            for k in 0..=3448 {
                let t = k as f64 / 3448.0;
                samples.push(a + (b - a) * t);
            }
        }
        let step = samples
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0f64, f64::max);
        for _ in 0..200 {
            let q = Pose::from_enu_ypr(
                rand::Rng::random_range(&mut rng, -60.0..60.0),
                rand::Rng::random_range(&mut rng, -40.0..40.0),
                rand::Rng::random_range(&mut rng, -2.0..2.0),
                0.0,
                0.0,
                0.0,
            );
            let ours = project_to_road(&q, &road).translation();
            let best = samples
                .iter()
                .min_by(|a, b| {
                    (*a - q.translation())
                        .norm()
                        .partial_cmp(&(*b - q.translation()).norm())
                        .unwrap()
                })
                .unwrap();
            assert!(
                (ours - best).norm() <= step + 1e-9,
                "projection {ours:?} vs oracle {best:?}"
            );
        }
    }

    #[test]
    fn mixture_weight_zero_matches_propagate_exactly() {
        let road = vec![Pose::identity(), Pose::from_enu_ypr(100.0, 0.0, 0.0, 0.0, 0.0, 0.0)];
        let noise = MotionNoiseConfig::isotropic(1e-3, 1e-5, 0.0).unwrap();
        let o = odo([2.0, 0.0, 0.0], [0.0, 0.0, 0.1], 0.5);
        let pose = Pose::from_enu_ypr(5.0, 2.0, 0.0, 0.1, 0.0, 0.0);
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let a = propagate_mixture(&pose, &o, &noise, &road, &mut r1);
            let b = propagate(&pose, &o, &noise, &mut r2);
            assert_eq!(a.translation(), b.translation());
        }
    }

    #[test]
    fn mixture_weight_one_always_lands_on_road() {
        let road: Vec<Pose> = (0..5)
            .map(|i| Pose::from_enu_ypr(i as f64 * 25.0, 0.0, 0.0, 0.0, 0.0, 0.0))
            .collect();
        let noise = MotionNoiseConfig::isotropic(1e-2, 1e-4, 1.0).unwrap();
        let o = odo([1.0, 0.3, 0.0], [0.0, 0.0, 0.05], 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pose = Pose::from_enu_ypr(10.0, 4.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..50 {
            pose = propagate_mixture(&pose, &o, &noise, &road, &mut rng);
            assert!(pose.translation().y.abs() < 1e-9);
        }
    }

    #[test]
    fn mixture_fraction_concentrates_at_alpha() {
        let road = vec![Pose::identity(), Pose::from_enu_ypr(1000.0, 0.0, 0.0, 0.0, 0.0, 0.0)];
        let alpha = 0.05;
        let noise = MotionNoiseConfig::isotropic(1e-4, 0.0, alpha).unwrap();
        let o = odo([0.0, 0.0, 1.0], [0.0; 3], 1.0); // drift off-road in z
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 100_000;
        let start = Pose::from_enu_ypr(5.0, 7.0, 0.0, 0.0, 0.0, 0.0);
        let mut on_road = 0usize;
        for _ in 0..n {
            let p = propagate_mixture(&start, &o, &noise, &road, &mut rng);
            if p.translation().y.abs() < 1e-9 && p.translation().z.abs() < 1e-9 {
                on_road += 1;
            }
        }
        let frac = on_road as f64 / n as f64;
        let sigma = (alpha * (1.0 - alpha) / n as f64).sqrt();
        assert!((frac - alpha).abs() < 3.0 * sigma + 1e-12, "frac {frac}");
    }

    #[test]
    fn default_sim_config_carries_reference_constants() {
        let cfg = OdometrySimConfig::default();
        assert_eq!(cfg.bias_decay, 1e-5);
        assert_eq!(cfg.bias_drive_var, 9e-10);
        assert_eq!(cfg.omega_noise_var, 2.5e-5);
        assert_eq!(cfg.v_noise_var, 4e-4);
    }

    fn figure_eight(n: usize) -> Vec<(Pose, f64)> {
        (0..n)
            .map(|i| {
                let s = i as f64 * 0.02;
                let pose = Pose::from_enu_ypr(
                    30.0 * s.sin(),
                    15.0 * (2.0 * s).sin(),
                    1.5 + 0.2 * s.cos(),
                    0.8 * s.sin(),
                    0.05 * (3.0 * s).sin(),
                    0.02 * s.cos(),
                );
                (pose, i as f64 * 0.1)
            })
            .collect()
    }

    #[test]
    fn zero_noise_dead_reckoning_reproduces_trajectory() {
        let truth = figure_eight(1001);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let readings = simulate_odometry(&truth, &OdometrySimConfig::noiseless(), &mut rng).unwrap();
        assert_eq!(readings.len(), truth.len() - 1);
        let mut pose = truth[0].0;
        for (reading, (expected, _)) in readings.iter().zip(truth.iter().skip(1)) {
            pose = propagate_deterministic(&pose, reading);
            assert!((pose.translation() - expected.translation()).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_timestamps() {
        let mut truth = figure_eight(5);
        truth[3].1 = truth[2].1;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            simulate_odometry(&truth, &OdometrySimConfig::noiseless(), &mut rng),
            Err(MotionError::NonIncreasingTimestamps(3))
        ));
    }

    #[test]
    fn bias_reaches_analytic_stationary_variance() {
        let cfg = OdometrySimConfig::default();
        let analytic = cfg.bias_stationary_var();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut bias = BiasProcess::new(cfg.bias_decay, cfg.bias_drive_var);
        // Burn in past the ~1/γ correlation time, then accumulate.
        for _ in 0..400_000 {
            bias.step(&mut rng);
        }
        let n = 10_000_000usize;
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for _ in 0..n {
            let b = bias.step(&mut rng);
            for k in 0..3 {
                sum += b[k];
                sumsq += b[k] * b[k];
            }
        }
        let m = sum / (3 * n) as f64;
        let var = sumsq / (3 * n) as f64 - m * m;
        let rel = (var - analytic).abs() / analytic;
        assert!(rel < 0.10, "empirical {var:.3e} vs analytic {analytic:.3e} (rel {rel:.3})");
    }

    #[test]
    fn psd_validation() {
        let asym = Matrix3::new(1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(MotionNoiseConfig::new(asym, Matrix3::zeros(), 0.0).is_err());
        let neg = Matrix3::from_diagonal(&Vector3::new(1.0, -0.5, 1.0));
        assert!(MotionNoiseConfig::new(neg, Matrix3::zeros(), 0.0).is_err());
        // Singular PSD is fine.
        let sing = Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0));
        assert!(MotionNoiseConfig::new(sing, Matrix3::zeros(), 0.0).is_ok());
    }

    use nalgebra::Matrix3;
}
