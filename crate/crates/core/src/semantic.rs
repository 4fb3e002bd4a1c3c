//! Bootstrap particle filter over the vehicle pose using densely
//! segmented images.
//!
//! Per particle, the potentially visible map points are projected into
//! the image, giving a unique point-to-pixel assignment. Each assigned
//! pixel contributes the mixture
//!
//! ```text
//! Pr{d | x, M} = p_vis(d)·p_det + p_occ(d)·(1 − p_det),
//! p_det = v(x, U, V)·ρ·(1 − P_o)
//! ```
//!
//! normalized by the marginal class prior, and the image log-likelihood
//! is tempered by the exponent `s / max(n_λ, N_c)` before it multiplies
//! the particle weight.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use thiserror::Error;

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use crate::geometry::{in_wedge, CameraModel, Pose};
use crate::map::{ClassId, Descriptor, MapError, SemanticMap};
use crate::motion::{propagate_mixture, MotionNoiseConfig, OdometryReading};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("segmented image needs width*height labels, got {got} for {width}x{height}")]
    BadImageSize { width: u32, height: u32, got: usize },
    #[error("label {0} out of range for the map's class table")]
    LabelOutOfRange(u8),
    #[error("particle set must contain at least one particle")]
    Empty,
    #[error("camera id {0} not present in the rig")]
    UnknownCamera(u8),
    #[error("filter requires a semantic-descriptor map")]
    WrongMapKind,
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Dense per-pixel class labels from one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedImage {
    pub width: u32,
    pub height: u32,
    pub camera_id: u8,
    labels: Vec<ClassId>,
}

impl SegmentedImage {
    pub fn new(width: u32, height: u32, camera_id: u8, labels: Vec<ClassId>) -> Result<Self, FilterError> {
        if labels.len() != (width as usize) * (height as usize) {
            return Err(FilterError::BadImageSize { width, height, got: labels.len() });
        }
        Ok(SegmentedImage { width, height, camera_id, labels })
    }

    pub fn label(&self, x: u32, y: u32) -> ClassId {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn label_at(&self, pixel_index: u32) -> ClassId {
        self.labels[pixel_index as usize]
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn validate_labels(&self, num_classes: usize) -> Result<(), FilterError> {
        match self.labels.iter().find(|l| l.index() >= num_classes) {
            Some(l) => Err(FilterError::LabelOutOfRange(l.0)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Particle {
    pub pose: Pose,
    pub log_weight: f64,
}

/// Weighted pose hypotheses. Weights are kept in log space and
/// normalized so the linear weights sum to one.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    degenerate_resets: u32,
}

impl ParticleSet {
    pub fn new(mut particles: Vec<Particle>) -> Result<Self, FilterError> {
        if particles.is_empty() {
            return Err(FilterError::Empty);
        }
        normalize_log_weights(&mut particles);
        Ok(ParticleSet { particles, degenerate_resets: 0 })
    }

    /// Equal-weight particles drawn from a Gaussian prior around `mean`
    /// (position std per axis, then yaw/pitch/roll std).
    pub fn from_prior(
        mean: &Pose,
        position_std: Vector3<f64>,
        angle_std: Vector3<f64>,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, FilterError> {
        use rand_distr::{Distribution, StandardNormal};
        if count == 0 {
            return Err(FilterError::Empty);
        }
        let (yaw, pitch, roll) = mean.ypr();
        let t = mean.translation();
        let mut g = || -> f64 { StandardNormal.sample(rng) };
        let particles = (0..count)
            .map(|_| Particle {
                pose: Pose::from_enu_ypr(
                    t.x + g() * position_std.x,
                    t.y + g() * position_std.y,
                    t.z + g() * position_std.z,
                    yaw + g() * angle_std.x,
                    pitch + g() * angle_std.y,
                    roll + g() * angle_std.z,
                ),
                log_weight: 0.0,
            })
            .collect();
        Self::new(particles)
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Times the weights collapsed and were reset to uniform.
    pub fn degenerate_resets(&self) -> u32 {
        self.degenerate_resets
    }

    pub fn normalize(&mut self) {
        if !normalize_log_weights(&mut self.particles) {
            let lw = -(self.particles.len() as f64).ln();
            for p in &mut self.particles {
                p.log_weight = lw;
            }
            self.degenerate_resets += 1;
        }
    }

    /// Effective sample size `1 / Σ wᵢ²` of the normalized weights.
    pub fn effective_sample_size(&self) -> f64 {
        let sum_sq: f64 = self.particles.iter().map(|p| (2.0 * p.log_weight).exp()).sum();
        1.0 / sum_sq
    }

    /// Systematic resampling; afterwards all weights are equal.
    pub fn systematic_resample(&mut self, rng: &mut impl Rng) {
        let n = self.particles.len();
        let offset: f64 = rng.random::<f64>() / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut cumulative = self.particles[0].log_weight.exp();
        let mut idx = 0usize;
        let lw = -(n as f64).ln();
        for k in 0..n {
            let target = offset + k as f64 / n as f64;
            while cumulative < target && idx + 1 < n {
                idx += 1;
                cumulative += self.particles[idx].log_weight.exp();
            }
            out.push(Particle { pose: self.particles[idx].pose, log_weight: lw });
        }
        self.particles = out;
    }

    /// Weighted mean position with per-angle circular means, plus the
    /// 3×3 position covariance.
    pub fn estimate(&self) -> PoseEstimate {
        let mut mean = Vector3::zeros();
        let mut sc = [[0.0f64; 2]; 3];
        for p in &self.particles {
            let w = p.log_weight.exp();
            mean += w * p.pose.translation();
            let (yaw, pitch, roll) = p.pose.ypr();
            for (k, a) in [yaw, pitch, roll].into_iter().enumerate() {
                sc[k][0] += w * a.sin();
                sc[k][1] += w * a.cos();
            }
        }
        let ang: Vec<f64> = sc.iter().map(|[s, c]| s.atan2(*c)).collect();
        let mut cov = Matrix3::zeros();
        for p in &self.particles {
            let w = p.log_weight.exp();
            let d = p.pose.translation() - mean;
            cov += w * d * d.transpose();
        }
        PoseEstimate {
            pose: Pose::from_enu_ypr(mean.x, mean.y, mean.z, ang[0], ang[1], ang[2]),
            position_covariance: cov,
        }
    }

    fn mean_position(&self) -> Vector3<f64> {
        let mut mean = Vector3::zeros();
        for p in &self.particles {
            mean += p.log_weight.exp() * p.pose.translation();
        }
        mean
    }
}

/// Returns false when every weight is −∞ or NaN.
fn normalize_log_weights(particles: &mut [Particle]) -> bool {
    let max = particles
        .iter()
        .map(|p| p.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return false;
    }
    let sum: f64 = particles.iter().map(|p| (p.log_weight - max).exp()).sum();
    let log_sum = max + sum.ln();
    for p in particles {
        p.log_weight -= log_sum;
    }
    true
}

#[derive(Debug, Clone)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub position_covariance: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFilterConfig {
    pub num_particles: usize,
    /// Probability that a wedge-visible point is occluded (`P_o`).
    pub p_occlusion: f64,
    /// Likelihood tempering scale `s`.
    pub scale: f64,
    /// Measurement cutoff `N_c`: more projected points than this add no
    /// further confidence.
    pub cutoff: usize,
    /// Resample when ESS drops below this fraction of the particle count.
    pub resample_threshold: f64,
    /// Floor applied to every class probability at table-build time.
    pub pmf_floor: f64,
    pub motion: MotionNoiseConfig,
}

impl Default for SemanticFilterConfig {
    fn default() -> Self {
        SemanticFilterConfig {
            num_particles: 500,
            p_occlusion: 0.1,
            scale: 3.0,
            cutoff: 400,
            resample_threshold: 0.5,
            pmf_floor: 1e-3,
            motion: MotionNoiseConfig::zero(),
        }
    }
}

/// Detection probability of a map point: `v · ρ · (1 − P_o)`.
pub fn detection_probability(in_wedge: bool, rho: f64, p_occlusion: f64) -> f64 {
    if in_wedge {
        rho * (1.0 - p_occlusion)
    } else {
        0.0
    }
}

/// Tempering exponent `s / max(n_λ, N_c)` applied to the image
/// log-likelihood.
pub fn weight_exponent(n_assigned: usize, scale: f64, cutoff: usize) -> f64 {
    scale / n_assigned.max(cutoff) as f64
}

/// Per-landmark class PMF after flooring every class at `floor` and
/// renormalizing, stored sparsely.
#[derive(Debug, Clone)]
pub struct FlooredPmf {
    entries: Vec<(ClassId, f64)>,
    default_p: f64,
}

impl FlooredPmf {
    fn build(entries: &[(ClassId, f64)], num_classes: usize, floor: f64) -> FlooredPmf {
        let kept: Vec<(ClassId, f64)> = entries
            .iter()
            .map(|&(c, p)| (c, p.max(floor)))
            .collect();
        let explicit: f64 = kept.iter().map(|(_, p)| p).sum();
        let z = explicit + floor * (num_classes - kept.len()) as f64;
        FlooredPmf {
            entries: kept.into_iter().map(|(c, p)| (c, p / z)).collect(),
            default_p: floor / z,
        }
    }

    pub fn prob(&self, class: ClassId) -> f64 {
        self.entries
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, p)| *p)
            .unwrap_or(self.default_p)
    }
}

/// Precomputed per-map likelihood tables: floored landmark PMFs, the
/// floored occluded PMF, and the log of the floored class prior.
#[derive(Debug, Clone)]
pub struct LikelihoodTables {
    pmfs: Vec<FlooredPmf>,
    occluded: Vec<f64>,
    log_prior: Vec<f64>,
}

impl LikelihoodTables {
    pub fn new(map: &SemanticMap, floor: f64) -> Result<Self, FilterError> {
        let n = map.num_classes();
        let mut pmfs = Vec::with_capacity(map.points().len());
        for p in map.points() {
            match &p.descriptor {
                Descriptor::Semantic(d) => pmfs.push(FlooredPmf::build(d.entries(), n, floor)),
                Descriptor::Dense(_) => return Err(FilterError::WrongMapKind),
            }
        }
        Ok(LikelihoodTables {
            pmfs,
            occluded: floor_pmf(map.occluded_pmf(), floor),
            log_prior: floor_pmf(map.class_prior(), floor).iter().map(|p| p.ln()).collect(),
        })
    }

    pub fn pmf(&self, map_index: u32) -> &FlooredPmf {
        &self.pmfs[map_index as usize]
    }

    pub fn occluded(&self) -> &[f64] {
        &self.occluded
    }

    pub fn log_prior(&self, class: ClassId) -> f64 {
        self.log_prior[class.index()]
    }
}

fn floor_pmf(pmf: &[f64], floor: f64) -> Vec<f64> {
    let floored: Vec<f64> = pmf.iter().map(|&p| p.max(floor)).collect();
    let z: f64 = floored.iter().sum();
    floored.into_iter().map(|p| p / z).collect()
}

/// Point-to-pixel assignment of one particle: `pairs` holds
/// `(pixel index, index into the local map slice)`, sorted by pixel so
/// summation order is canonical. Colliding projections keep the nearer
/// point.
#[derive(Debug, Clone, Default)]
pub struct Association {
    pub pairs: Vec<(u32, u32)>,
}

impl Association {
    /// Number of pixels with an assigned map point (`n_λ`).
    pub fn n_assigned(&self) -> usize {
        self.pairs.len()
    }
}

/// Project every local-map point and assign it to the nearest integer
/// pixel inside the image.
pub fn associate(
    pose: &Pose,
    camera: &CameraModel,
    map: &SemanticMap,
    local: &[u32],
    width: u32,
    height: u32,
) -> Association {
    let mut by_pixel: HashMap<u32, (u32, f64)> = HashMap::with_capacity(local.len());
    for (li, &mi) in local.iter().enumerate() {
        let point = &map.points()[mi as usize];
        let Ok((n, depth)) = camera.project_with_depth(pose, &point.position) else {
            continue;
        };
        let px = camera.to_pixel(&n);
        let (x, y) = (px.x.round(), px.y.round());
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            continue;
        }
        let pixel = y as u32 * width + x as u32;
        match by_pixel.entry(pixel) {
            Entry::Occupied(mut slot) => {
                if depth < slot.get().1 {
                    slot.insert((li as u32, depth));
                }
            }
            Entry::Vacant(slot) => {
                slot.insert((li as u32, depth));
            }
        }
    }
    let mut pairs: Vec<(u32, u32)> = by_pixel.into_iter().map(|(px, (li, _))| (px, li)).collect();
    pairs.sort_unstable();
    Association { pairs }
}

/// Log of the class-mixture likelihood of one assigned pixel.
pub fn pixel_log_likelihood(label: ClassId, pmf: &FlooredPmf, detected_prob: f64, occluded: &[f64]) -> f64 {
    (pmf.prob(label) * detected_prob + occluded[label.index()] * (1.0 - detected_prob)).ln()
}

/// Tempered image log-likelihood of one particle: the prior-normalized
/// sum over assigned pixels, scaled by `s / max(n_λ, N_c)`. Returns 0
/// (a neutral update) when nothing is assigned.
pub fn image_log_likelihood(
    image: &SegmentedImage,
    association: &Association,
    particle_position: &Vector3<f64>,
    map: &SemanticMap,
    local: &[u32],
    tables: &LikelihoodTables,
    config: &SemanticFilterConfig,
) -> f64 {
    if association.pairs.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &(pixel, li) in &association.pairs {
        let mi = local[li as usize];
        let point = &map.points()[mi as usize];
        let label = image.label_at(pixel);
        let visible = in_wedge(particle_position, &point.position, &point.wedge);
        let p_det = detection_probability(visible, point.wedge.detection_prob(), config.p_occlusion);
        sum += pixel_log_likelihood(label, tables.pmf(mi), p_det, tables.occluded())
            - tables.log_prior(label);
    }
    sum * weight_exponent(association.n_assigned(), config.scale, config.cutoff)
}

/// Diagnostics of one filter step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    pub ess: f64,
    pub n_assigned_mean: f64,
    pub resampled: bool,
}

/// The semantic localization filter: map, camera rig, configuration and
/// the particle set.
pub struct SemanticFilter {
    map: SemanticMap,
    tables: LikelihoodTables,
    rig: Vec<CameraModel>,
    config: SemanticFilterConfig,
    particles: ParticleSet,
    steps: u64,
}

impl SemanticFilter {
    pub fn new(
        map: SemanticMap,
        rig: Vec<CameraModel>,
        config: SemanticFilterConfig,
        particles: ParticleSet,
    ) -> Result<Self, FilterError> {
        let tables = LikelihoodTables::new(&map, config.pmf_floor)?;
        Ok(SemanticFilter { map, tables, rig, config, particles, steps: 0 })
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    pub fn map(&self) -> &SemanticMap {
        &self.map
    }

    pub fn config(&self) -> &SemanticFilterConfig {
        &self.config
    }

    pub fn estimate(&self) -> PoseEstimate {
        self.particles.estimate()
    }

    /// One filter cycle: motion update (with the on-road mixture), one
    /// measurement update per supplied image, weight normalization and
    /// conditional systematic resampling.
    ///
    /// The potentially visible set is computed once per image from the
    /// particles' mean position; the per-particle assignment stays exact.
    pub fn step(
        &mut self,
        odo: &OdometryReading,
        images: &[SegmentedImage],
        rng: &mut impl Rng,
    ) -> Result<StepInfo, FilterError> {
        let road = self.map.road_trajectory();
        for p in &mut self.particles.particles {
            p.pose = propagate_mixture(&p.pose, odo, &self.config.motion, road, rng);
        }
        self.steps += 1;
        if self.steps % 1000 == 0 {
            for p in &mut self.particles.particles {
                p.pose.orthonormalize();
            }
        }

        let mut info = StepInfo::default();
        for image in images {
            let camera = self
                .rig
                .get(image.camera_id as usize)
                .ok_or(FilterError::UnknownCamera(image.camera_id))?;
            image.validate_labels(self.map.num_classes())?;
            let mean = self.particles.mean_position();
            let mean_pose = Pose::from_enu_ypr(mean.x, mean.y, mean.z, 0.0, 0.0, 0.0);
            let local = self.map.potentially_visible_set(&mean_pose);
            let mut assigned_total = 0usize;
            for p in &mut self.particles.particles {
                let assoc = associate(&p.pose, camera, &self.map, &local, image.width, image.height);
                assigned_total += assoc.n_assigned();
                p.log_weight += image_log_likelihood(
                    image,
                    &assoc,
                    &p.pose.translation(),
                    &self.map,
                    &local,
                    &self.tables,
                    &self.config,
                );
            }
            info.n_assigned_mean +=
                assigned_total as f64 / (self.particles.len() * images.len()) as f64;
            self.particles.normalize();
        }

        info.ess = self.particles.effective_sample_size();
        if info.ess < self.config.resample_threshold * self.particles.len() as f64 {
            self.particles.systematic_resample(rng);
            info.resampled = true;
        }
        Ok(info)
    }
}
