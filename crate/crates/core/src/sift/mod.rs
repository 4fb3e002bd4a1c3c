//! Reference localizer: nearest-neighbour descriptor matching with
//! Lowe's ratio test, 3-point RANSAC pose hypotheses, and an unscented
//! Kalman filter over the pose state.

mod p3p;
mod ukf;

pub use p3p::{real_roots, solve_p3p};
pub use ukf::{
    sigma_points, unscented_predict, unscented_update, UkfError, UkfState, UpdateOutcome, UtParams,
};

use nalgebra::{DVector, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use rand::Rng;
use thiserror::Error;

use crate::geometry::{CameraModel, Pose};
use crate::map::{Descriptor, MapError, SemanticMap};
use crate::motion::{propagate_deterministic, project_to_road, MotionNoiseConfig, OdometryReading};

#[derive(Debug, Error)]
pub enum SiftError {
    #[error("feature descriptors must share one length, got {0} and {1}")]
    MixedDescriptorLength(usize, usize),
    #[error("non-finite feature coordinate")]
    NonFinite,
    #[error("filter requires a dense-descriptor map")]
    WrongMapKind,
    #[error("camera id {0} not present in the rig")]
    UnknownCamera(u8),
    #[error(transparent)]
    Ukf(#[from] UkfError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// One detected feature: distorted normalized image coordinate plus its
/// descriptor vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub coord: Vector2<f64>,
    pub descriptor: Vec<f64>,
}

/// Features extracted from one camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureSet {
    pub camera_id: u8,
    features: Vec<Feature>,
}

impl SparseFeatureSet {
    pub fn new(camera_id: u8, features: Vec<Feature>) -> Result<Self, SiftError> {
        if let Some(first) = features.first() {
            let len = first.descriptor.len();
            for f in &features {
                if f.descriptor.len() != len {
                    return Err(SiftError::MixedDescriptorLength(len, f.descriptor.len()));
                }
                if !f.coord.iter().all(|v| v.is_finite()) {
                    return Err(SiftError::NonFinite);
                }
            }
        }
        Ok(SparseFeatureSet { camera_id, features })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftFilterConfig {
    /// Detector noise std in normalized units (σ_π).
    pub sigma_pi: f64,
    /// Lowe ratio threshold; a nearest neighbour is kept only when
    /// `d1/d2` falls strictly below it.
    pub lowe_ratio: f64,
    /// RANSAC inlier threshold in pixels, converted to normalized units
    /// through the focal length.
    pub ransac_inlier_px: f64,
    /// The pose is accepted only with strictly more inliers than this.
    pub min_inliers: usize,
    pub ransac_iters: usize,
    /// χ² quantile for innovation gating.
    pub gate_quantile: f64,
    pub ut: UtParams,
    pub motion: MotionNoiseConfig,
}

impl Default for SiftFilterConfig {
    fn default() -> Self {
        SiftFilterConfig {
            sigma_pi: 2.0 / 160.0,
            lowe_ratio: 0.8,
            ransac_inlier_px: 6.0,
            min_inliers: 7,
            ransac_iters: 200,
            gate_quantile: 0.999,
            ut: UtParams::default(),
            motion: MotionNoiseConfig::zero(),
        }
    }
}

impl SiftFilterConfig {
    /// Express a pixel-domain detector std in normalized units for the
    /// given camera.
    pub fn with_pixel_sigma(mut self, sigma_px: f64, camera: &CameraModel) -> Self {
        self.sigma_pi = sigma_px / camera.fx;
        self
    }
}

/// A candidate feature-to-landmark match; indices refer to the feature
/// set and the local-map slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Correspondence {
    pub feature_idx: usize,
    pub local_idx: usize,
}

/// Nearest-neighbour matching in descriptor space (L2) against the
/// local map, filtered by Lowe's ratio criterion. With a single map
/// point the ratio test passes trivially.
pub fn match_features(
    features: &SparseFeatureSet,
    map: &SemanticMap,
    local: &[u32],
    lowe_ratio: f64,
) -> Result<Vec<Correspondence>, SiftError> {
    let descriptors: Vec<&[u8]> = local
        .iter()
        .map(|&mi| match &map.points()[mi as usize].descriptor {
            Descriptor::Dense(d) => Ok(d.as_slice()),
            Descriptor::Semantic(_) => Err(SiftError::WrongMapKind),
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for (fi, f) in features.features.iter().enumerate() {
        let mut best = (f64::INFINITY, usize::MAX);
        let mut second = f64::INFINITY;
        for (li, d) in descriptors.iter().enumerate() {
            let dist = l2_distance(&f.descriptor, d);
            if dist < best.0 {
                second = best.0;
                best = (dist, li);
            } else if dist < second {
                second = dist;
            }
        }
        if best.1 == usize::MAX {
            continue;
        }
        let accept = if second.is_finite() {
            best.0 / second < lowe_ratio
        } else {
            true // single candidate: ratio test passes trivially
        };
        if accept {
            out.push(Correspondence { feature_idx: fi, local_idx: best.1 });
        }
    }
    Ok(out)
}

fn l2_distance(a: &[f64], b: &[u8]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, &y)| {
            let d = x - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct RansacResult {
    /// Recovered vehicle pose of the best hypothesis.
    pub pose: Pose,
    /// Indices into the correspondence slice that scored as inliers.
    pub inliers: Vec<usize>,
}

/// 3-point RANSAC over 2-D/3-D correspondences `(observed normalized
/// coordinate, world point)`. Each minimal sample yields up to four
/// camera poses; every candidate is scored by reprojection error and
/// the best inlier set wins. Returns `None` unless strictly more than
/// `config.min_inliers` correspondences agree.
pub fn ransac_pose(
    correspondences: &[(Vector2<f64>, Vector3<f64>)],
    camera: &CameraModel,
    config: &SiftFilterConfig,
    rng: &mut impl Rng,
) -> Option<RansacResult> {
    if correspondences.len() < 3 {
        return None;
    }
    let threshold = config.ransac_inlier_px / camera.fx;
    let extrinsic_inv = camera.extrinsic().inverse();
    let mut best: Option<(usize, f64, Pose)> = None;
    for _ in 0..config.ransac_iters {
        let sample = rand::seq::index::sample(rng, correspondences.len(), 3);
        let idx: Vec<usize> = sample.into_iter().collect();
        let pts = [
            correspondences[idx[0]].1,
            correspondences[idx[1]].1,
            correspondences[idx[2]].1,
        ];
        if (pts[0] - pts[1]).norm() < 1e-6
            || (pts[0] - pts[2]).norm() < 1e-6
            || (pts[1] - pts[2]).norm() < 1e-6
        {
            continue;
        }
        let bearings = [
            camera.bearing(&correspondences[idx[0]].0),
            camera.bearing(&correspondences[idx[1]].0),
            camera.bearing(&correspondences[idx[2]].0),
        ];
        for (r, t) in solve_p3p(&bearings, &pts) {
            // (R, t) maps world to camera; the vehicle pose follows from
            // the mount.
            let Ok(cam_pose) = Pose::from_parts(r.transpose(), -(r.transpose() * t)) else {
                continue;
            };
            let vehicle = cam_pose.compose(&extrinsic_inv);
            let mut inliers = 0usize;
            let mut err_sum = 0.0;
            for (obs, world) in correspondences {
                if let Ok(proj) = camera.project(&vehicle, world) {
                    let err = (proj - obs).norm();
                    if err < threshold {
                        inliers += 1;
                        err_sum += err;
                    }
                }
            }
            let better = match &best {
                None => true,
                Some((n, e, _)) => inliers > *n || (inliers == *n && err_sum < *e),
            };
            if better {
                best = Some((inliers, err_sum, vehicle));
            }
        }
    }
    let (count, _, pose) = best?;
    if count <= config.min_inliers {
        return None;
    }
    // Re-score the winning pose to collect its inlier set.
    let mut inliers = Vec::with_capacity(count);
    for (i, (obs, world)) in correspondences.iter().enumerate() {
        if let Ok(proj) = camera.project(&pose, world) {
            if (proj - obs).norm() < threshold {
                inliers.push(i);
            }
        }
    }
    Some(RansacResult { pose, inliers })
}

/// UKF measurement update from RANSAC inliers: the measurement stacks
/// the projections of every inlier landmark, with iid σ_π² noise per
/// coordinate. Landmarks that fall behind the camera for any sigma-point
/// pose are dropped before the update.
pub fn measurement_update(
    state: &UkfState,
    inliers: &[(Vector2<f64>, Vector3<f64>)],
    camera: &CameraModel,
    config: &SiftFilterConfig,
) -> Result<(UkfState, UpdateOutcome), SiftError> {
    let pts = sigma_points(state, &config.ut)?;
    let usable: Vec<&(Vector2<f64>, Vector3<f64>)> = inliers
        .iter()
        .filter(|(_, world)| {
            pts.iter().all(|sp| {
                camera
                    .project(&Pose::from_state(&state_array(sp)), world)
                    .is_ok()
            })
        })
        .collect();
    if usable.is_empty() {
        return Ok((state.clone(), UpdateOutcome::GatedOut));
    }
    let mut z = DVector::zeros(2 * usable.len());
    for (k, (obs, _)) in usable.iter().enumerate() {
        z[2 * k] = obs.x;
        z[2 * k + 1] = obs.y;
    }
    let h = |x: &Vector6<f64>| -> Option<DVector<f64>> {
        let pose = Pose::from_state(&state_array(x));
        let mut out = DVector::zeros(2 * usable.len());
        for (k, (_, world)) in usable.iter().enumerate() {
            let proj = camera.project(&pose, world).ok()?;
            out[2 * k] = proj.x;
            out[2 * k + 1] = proj.y;
        }
        Some(out)
    };
    let (next, outcome) = unscented_update(
        state,
        &config.ut,
        &z,
        config.sigma_pi * config.sigma_pi,
        config.gate_quantile,
        h,
    )?;
    Ok((next, outcome))
}

fn state_array(x: &Vector6<f64>) -> [f64; 6] {
    [x[0], x[1], x[2], x[3], x[4], x[5]]
}

/// Process-noise block for the state vector: translation noise plus the
/// angular block permuted from (x, y, z) rates to (yaw, pitch, roll).
/// Small-angle approximation on the rotation side.
pub fn process_noise(motion: &MotionNoiseConfig, dt: f64) -> Matrix6<f64> {
    let mut q = Matrix6::zeros();
    let perm = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qv = motion.q_v() * dt;
    let qw = perm * motion.q_omega() * perm.transpose() * dt;
    q.fixed_view_mut::<3, 3>(0, 0).copy_from(&qv);
    q.fixed_view_mut::<3, 3>(3, 3).copy_from(&qw);
    q
}

/// Diagnostics of one filter step.
#[derive(Debug, Clone, Copy, Default)]
pub struct SiftStepInfo {
    pub n_matches: usize,
    pub n_inliers: usize,
    pub updated: bool,
    pub gated: bool,
}

/// The sparse-feature localization filter.
pub struct SiftFilter {
    map: SemanticMap,
    rig: Vec<CameraModel>,
    config: SiftFilterConfig,
    state: UkfState,
}

impl SiftFilter {
    pub fn new(
        map: SemanticMap,
        rig: Vec<CameraModel>,
        config: SiftFilterConfig,
        state: UkfState,
    ) -> Result<Self, SiftError> {
        if map.kind() != crate::map::DescriptorKind::Dense {
            return Err(SiftError::WrongMapKind);
        }
        Ok(SiftFilter { map, rig, config, state })
    }

    pub fn state(&self) -> &UkfState {
        &self.state
    }

    pub fn pose(&self) -> Pose {
        Pose::from_state(&state_array(&self.state.mean))
    }

    pub fn map(&self) -> &SemanticMap {
        &self.map
    }

    /// One filter cycle: unscented time update through the motion model,
    /// then per feature set a match/RANSAC/measurement-update pass. On a
    /// failed RANSAC the step degrades to dead reckoning.
    pub fn step(
        &mut self,
        odo: &OdometryReading,
        feature_sets: &[SparseFeatureSet],
        rng: &mut impl Rng,
    ) -> Result<SiftStepInfo, SiftError> {
        let q = process_noise(&self.config.motion, odo.dt);
        self.state = unscented_predict(&self.state, &self.config.ut, &q, |x| {
            let pose = propagate_deterministic(&Pose::from_state(&state_array(x)), odo);
            Vector6::from_column_slice(&pose.to_state())
        })?;

        let mut info = SiftStepInfo::default();
        for set in feature_sets {
            let camera = self
                .rig
                .get(set.camera_id as usize)
                .ok_or(SiftError::UnknownCamera(set.camera_id))?;
            if set.is_empty() {
                continue;
            }
            // Local map from the estimate plus the nearest road point, the
            // stand-in for the on-road process component.
            let est_pose = self.pose();
            let road_pose = project_to_road(&est_pose, self.map.road_trajectory());
            let mut local = self.map.potentially_visible_set(&est_pose);
            local.extend(self.map.potentially_visible_set(&road_pose));
            local.sort_unstable();
            local.dedup();
            if local.is_empty() {
                continue;
            }
            let matches = match_features(set, &self.map, &local, self.config.lowe_ratio)?;
            info.n_matches += matches.len();
            if matches.len() < 3 {
                continue;
            }
            let correspondences: Vec<(Vector2<f64>, Vector3<f64>)> = matches
                .iter()
                .map(|c| {
                    (
                        set.features()[c.feature_idx].coord,
                        self.map.points()[local[c.local_idx] as usize].position,
                    )
                })
                .collect();
            let Some(result) = ransac_pose(&correspondences, camera, &self.config, rng) else {
                continue;
            };
            info.n_inliers += result.inliers.len();
            let inlier_pairs: Vec<(Vector2<f64>, Vector3<f64>)> = result
                .inliers
                .iter()
                .map(|&i| correspondences[i])
                .collect();
            let (next, outcome) = measurement_update(&self.state, &inlier_pairs, camera, &self.config)?;
            self.state = next;
            match outcome {
                UpdateOutcome::Applied => info.updated = true,
                UpdateOutcome::GatedOut => info.gated = true,
            }
        }
        Ok(info)
    }
}
