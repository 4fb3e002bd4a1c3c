//! Run a localizer over a dataset, producing one estimate row per
//! odometry step.

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::fs;
use std::path::Path;

use semloc_core::io::{
    read_feature_sequence_file, read_label_sequence_file, read_odometry_file,
    read_trajectory_file, EstimateRow,
};
use semloc_core::map::decode_map;
use semloc_core::motion::MotionNoiseConfig;
use semloc_core::semantic::{ParticleSet, SemanticFilter, SemanticFilterConfig};
use semloc_core::sift::{SiftFilter, SiftFilterConfig, UkfState};

use crate::dataset::{DatasetMeta, FEATURES_FSEQ, LABELS_LSEQ, ODOMETRY_CSV, TRUTH_CSV};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Semantic,
    Sift,
}

impl FilterKind {
    pub fn label(&self) -> &'static str {
        match self {
            FilterKind::Semantic => "semantic",
            FilterKind::Sift => "sift",
        }
    }
}

/// Process-noise and mixture settings shared by both filters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessNoiseParams {
    /// Velocity noise variance, (m/s)² per second.
    pub q_v: f64,
    /// Angular-rate noise variance, (rad/s)² per second.
    pub q_omega: f64,
    /// On-road mixture weight α (particle filter only).
    pub alpha_road: f64,
}

impl Default for ProcessNoiseParams {
    fn default() -> Self {
        // q_omega covers roughly ten seconds of the simulated angular-rate
        // bias when modeled as white noise, so a dead-reckoning stretch
        // stays inside the innovation gate.
        ProcessNoiseParams { q_v: 9e-3, q_omega: 4e-4, alpha_road: 0.02 }
    }
}

impl ProcessNoiseParams {
    pub fn to_config(&self, alpha: f64) -> Result<MotionNoiseConfig, CliError> {
        Ok(MotionNoiseConfig::isotropic(self.q_v, self.q_omega, alpha)?)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticParams {
    pub num_particles: usize,
    pub p_occlusion: f64,
    pub scale: f64,
    pub cutoff: usize,
    pub resample_threshold: f64,
    pub pmf_floor: f64,
    pub noise: ProcessNoiseParams,
}

impl Default for SemanticParams {
    fn default() -> Self {
        SemanticParams {
            num_particles: 500,
            p_occlusion: 0.1,
            scale: 3.0,
            cutoff: 400,
            resample_threshold: 0.5,
            pmf_floor: 1e-3,
            noise: ProcessNoiseParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftParams {
    pub sigma_px: f64,
    pub lowe_ratio: f64,
    pub ransac_inlier_px: f64,
    pub min_inliers: usize,
    pub ransac_iters: usize,
    pub noise: ProcessNoiseParams,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            sigma_px: 2.0,
            lowe_ratio: 0.8,
            ransac_inlier_px: 6.0,
            min_inliers: 7,
            ransac_iters: 200,
            noise: ProcessNoiseParams::default(),
        }
    }
}

/// Initialization prior around the first ground-truth pose.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct InitParams {
    pub position_std: [f64; 3],
    pub angle_std: [f64; 3],
}

impl Default for InitParams {
    fn default() -> Self {
        InitParams { position_std: [0.5, 0.5, 0.1], angle_std: [0.02, 0.005, 0.005] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeOptions {
    pub seed: u64,
    pub semantic: SemanticParams,
    pub sift: SiftParams,
    pub init: InitParams,
    /// Read label frames from PGM files in this directory instead of the
    /// packed sequence (semantic filter only).
    #[serde(skip)]
    pub pgm_labels: Option<std::path::PathBuf>,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        LocalizeOptions {
            seed: 7,
            semantic: SemanticParams::default(),
            sift: SiftParams::default(),
            init: InitParams::default(),
            pgm_labels: None,
        }
    }
}

pub fn run_localization(
    dataset_dir: &Path,
    map_file: &Path,
    kind: FilterKind,
    opts: &LocalizeOptions,
) -> Result<Vec<EstimateRow>, CliError> {
    match kind {
        FilterKind::Semantic => run_semantic(dataset_dir, map_file, opts),
        FilterKind::Sift => run_sift(dataset_dir, map_file, opts),
    }
}

fn estimate_row(t: f64, pose: &semloc_core::geometry::Pose, ess: f64, n_lambda: f64) -> EstimateRow {
    let s = pose.to_state();
    EstimateRow { t, e: s[0], n: s[1], u: s[2], yaw: s[3], pitch: s[4], roll: s[5], ess, n_lambda }
}

/// Label frames from a PGM directory written by `simulate --pgm-dir`:
/// files named `frame_XXXXX_camN.pgm` in frame-major order, timestamps
/// taken from the trajectory.
fn read_pgm_frames(
    dir: &Path,
    truth: &[(semloc_core::geometry::Pose, f64)],
    n_cams: usize,
) -> Result<Vec<semloc_core::io::LabelFrame>, CliError> {
    use semloc_core::io::{read_pgm, LabelFrame};
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    names.sort();
    if names.len() != truth.len() * n_cams {
        return Err(CliError::Dataset(format!(
            "expected {} PGM frames, found {}",
            truth.len() * n_cams,
            names.len()
        )));
    }
    let mut frames = Vec::with_capacity(names.len());
    for (k, path) in names.iter().enumerate() {
        let camera_id = (k % n_cams) as u8;
        let image = read_pgm(std::io::BufReader::new(fs::File::open(path)?), camera_id)?;
        frames.push(LabelFrame { t: truth[k / n_cams].1, image });
    }
    Ok(frames)
}

/// Bootstrap particle filter over the label frames of a dataset.
pub fn run_semantic(
    dataset_dir: &Path,
    map_file: &Path,
    opts: &LocalizeOptions,
) -> Result<Vec<EstimateRow>, CliError> {
    let meta = DatasetMeta::load(dataset_dir)?;
    let map = decode_map(&fs::read(map_file)?)?;
    let rig = meta.world.rig()?;
    let n_cams = rig.len();
    let truth = read_trajectory_file(&dataset_dir.join(TRUTH_CSV))?;
    let odometry = read_odometry_file(&dataset_dir.join(ODOMETRY_CSV))?;
    if truth.is_empty() {
        return Err(CliError::Dataset("empty trajectory".into()));
    }
    let frames = match &opts.pgm_labels {
        Some(dir) => read_pgm_frames(dir, &truth, n_cams)?,
        None => read_label_sequence_file(&dataset_dir.join(LABELS_LSEQ))?,
    };

    let p = &opts.semantic;
    let config = SemanticFilterConfig {
        num_particles: p.num_particles,
        p_occlusion: p.p_occlusion,
        scale: p.scale,
        cutoff: p.cutoff,
        resample_threshold: p.resample_threshold,
        pmf_floor: p.pmf_floor,
        motion: p.noise.to_config(p.noise.alpha_road)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let particles = ParticleSet::from_prior(
        &truth[0].0,
        Vector3::from(opts.init.position_std),
        Vector3::from(opts.init.angle_std),
        p.num_particles,
        &mut rng,
    )?;
    let mut filter = SemanticFilter::new(map, rig, config, particles)?;

    let mut rows = Vec::with_capacity(odometry.len());
    for (i, (t, odo)) in odometry.iter().enumerate() {
        let start = (i + 1) * n_cams;
        let images: Vec<_> = frames
            .get(start..start + n_cams)
            .unwrap_or(&[])
            .iter()
            .map(|f| f.image.clone())
            .collect();
        let info = filter.step(odo, &images, &mut rng)?;
        rows.push(estimate_row(*t, &filter.estimate().pose, info.ess, info.n_assigned_mean));
    }
    Ok(rows)
}

/// UKF over the sparse feature frames of a dataset.
pub fn run_sift(
    dataset_dir: &Path,
    map_file: &Path,
    opts: &LocalizeOptions,
) -> Result<Vec<EstimateRow>, CliError> {
    let meta = DatasetMeta::load(dataset_dir)?;
    let map = decode_map(&fs::read(map_file)?)?;
    let rig = meta.world.rig()?;
    let n_cams = rig.len();
    let truth = read_trajectory_file(&dataset_dir.join(TRUTH_CSV))?;
    let odometry = read_odometry_file(&dataset_dir.join(ODOMETRY_CSV))?;
    let frames = read_feature_sequence_file(&dataset_dir.join(FEATURES_FSEQ))?;
    if truth.is_empty() {
        return Err(CliError::Dataset("empty trajectory".into()));
    }

    let p = &opts.sift;
    let config = SiftFilterConfig {
        sigma_pi: p.sigma_px / rig[0].fx,
        lowe_ratio: p.lowe_ratio,
        ransac_inlier_px: p.ransac_inlier_px,
        min_inliers: p.min_inliers,
        ransac_iters: p.ransac_iters,
        motion: p.noise.to_config(0.0)?,
        ..SiftFilterConfig::default()
    };
    let init_pose = truth[0].0;
    let mut cov = Matrix6::zeros();
    for k in 0..3 {
        cov[(k, k)] = opts.init.position_std[k].powi(2).max(1e-8);
        cov[(k + 3, k + 3)] = opts.init.angle_std[k].powi(2).max(1e-10);
    }
    let state = UkfState::new(Vector6::from_column_slice(&init_pose.to_state()), cov)
        .map_err(semloc_core::sift::SiftError::from)?;
    let mut filter = SiftFilter::new(map, rig, config, state)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut rows = Vec::with_capacity(odometry.len());
    for (i, (t, odo)) in odometry.iter().enumerate() {
        let start = (i + 1) * n_cams;
        let sets: Vec<_> = frames
            .get(start..start + n_cams)
            .unwrap_or(&[])
            .iter()
            .map(|f| f.features.clone())
            .collect();
        let info = filter.step(odo, &sets, &mut rng)?;
        rows.push(estimate_row(*t, &filter.pose(), 0.0, info.n_inliers as f64));
    }
    Ok(rows)
}
