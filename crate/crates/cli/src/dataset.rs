//! Dataset generation: one simulated traversal of a world under one
//! condition, written as the file set the localizers consume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::fs;
use std::path::{Path, PathBuf};

use semloc_core::io::{
    write_feature_sequence_file, write_label_sequence_file, write_landmark_ids_file,
    write_odometry_file, write_pgm, write_trajectory_file, FeatureFrame, LabelFrame,
};
use semloc_core::map::encode_map;
use semloc_core::motion::{simulate_odometry, OdometrySimConfig};
use semloc_core::sim::{generate_world, ConditionModel, Renderer, World, WorldConfig};

use crate::CliError;

pub const META_TOML: &str = "meta.toml";
pub const TRUTH_CSV: &str = "truth.csv";
pub const ODOMETRY_CSV: &str = "odometry.csv";
pub const LABELS_LSEQ: &str = "labels.lseq";
pub const FEATURES_FSEQ: &str = "features.fseq";
pub const LANDMARK_IDS: &str = "features.lmid";
pub const TRUTH_SEMANTIC_MAP: &str = "truth_semantic.smap";
pub const TRUTH_DENSE_MAP: &str = "truth_dense.smap";

/// Per-dataset manifest; everything needed to rebuild the dataset
/// deterministically and to interpret its files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub world: WorldConfig,
    pub condition: ConditionModel,
    pub odometry: OdometrySimConfig,
}

impl DatasetMeta {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(dir.join(META_TOML))?;
        Ok(toml::from_str(&text)?)
    }
}

/// RNG stream ids per purpose; frames and cameras get distinct streams
/// so rendering order never matters.
fn stream_rng(seed: u64, kind: u64, frame: u64, camera: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 48) | (frame << 8) | camera);
    rng
}

const STREAM_ODOMETRY: u64 = 1;
const STREAM_LABELS: u64 = 2;
const STREAM_FEATURES: u64 = 3;

#[derive(Debug, Clone)]
pub struct DatasetSummary {
    pub dir: PathBuf,
    pub frames: usize,
    pub landmarks: usize,
}

/// Simulate one traversal: noisy odometry from the ground truth, then a
/// segmented frame and a sparse feature frame per camera per step,
/// written alongside the truth trajectory, the truth maps and the
/// manifest. With `pgm_dir` set, label frames are additionally exported
/// as one PGM per frame.
pub fn simulate_dataset(
    world: &World,
    condition: &ConditionModel,
    odometry_cfg: &OdometrySimConfig,
    seed: u64,
    dir: &Path,
    pgm_dir: Option<&Path>,
) -> Result<DatasetSummary, CliError> {
    fs::create_dir_all(dir)?;
    let renderer = Renderer::new(world)?;
    let noise = condition.noise_model(&world.config.classes)?;

    let mut odo_rng = stream_rng(seed, STREAM_ODOMETRY, 0, 0);
    let readings = simulate_odometry(&world.trajectory, odometry_cfg, &mut odo_rng)?;
    let timed: Vec<_> = readings
        .iter()
        .zip(world.trajectory.iter().skip(1))
        .map(|(r, (_, t))| (*t, *r))
        .collect();

    let n_cams = world.rig.len();
    let mut label_frames = Vec::with_capacity(world.trajectory.len() * n_cams);
    let mut feature_frames = Vec::with_capacity(world.trajectory.len() * n_cams);
    let mut id_frames = Vec::with_capacity(world.trajectory.len() * n_cams);
    for (i, (pose, t)) in world.trajectory.iter().enumerate() {
        for cam in 0..n_cams {
            let mut rng = stream_rng(seed, STREAM_LABELS, i as u64, cam as u64);
            let image = renderer.render_segmented(pose, cam, &noise, &mut rng)?;
            label_frames.push(LabelFrame { t: *t, image });
            let mut rng = stream_rng(seed, STREAM_FEATURES, i as u64, cam as u64);
            let (features, ids) = renderer.render_sparse(pose, cam, condition, &mut rng)?;
            feature_frames.push(FeatureFrame { t: *t, features });
            id_frames.push(ids);
        }
    }

    write_trajectory_file(&dir.join(TRUTH_CSV), &world.trajectory)?;
    write_odometry_file(&dir.join(ODOMETRY_CSV), &timed)?;
    write_label_sequence_file(&dir.join(LABELS_LSEQ), &label_frames)?;
    write_feature_sequence_file(
        &dir.join(FEATURES_FSEQ),
        &feature_frames,
        semloc_core::map::DENSE_DESCRIPTOR_BYTES,
    )?;
    write_landmark_ids_file(&dir.join(LANDMARK_IDS), &id_frames)?;
    fs::write(dir.join(TRUTH_SEMANTIC_MAP), encode_map(&world.semantic_map))?;
    fs::write(dir.join(TRUTH_DENSE_MAP), encode_map(&world.dense_map))?;
    let meta = DatasetMeta {
        seed,
        world: world.config.clone(),
        condition: condition.clone(),
        odometry: *odometry_cfg,
    };
    fs::write(dir.join(META_TOML), toml::to_string_pretty(&meta)?)?;

    if let Some(pgm) = pgm_dir {
        fs::create_dir_all(pgm)?;
        for (k, frame) in label_frames.iter().enumerate() {
            let name = format!("frame_{:05}_cam{}.pgm", k / n_cams, frame.image.camera_id);
            let file = fs::File::create(pgm.join(name))?;
            write_pgm(std::io::BufWriter::new(file), &frame.image)?;
        }
    }

    Ok(DatasetSummary {
        dir: dir.to_path_buf(),
        frames: label_frames.len(),
        landmarks: world.semantic_map.points().len(),
    })
}

/// Generate the world for a config and simulate a dataset in one call.
pub fn simulate_from_config(
    config: &WorldConfig,
    condition: &ConditionModel,
    odometry_cfg: &OdometrySimConfig,
    seed: u64,
    dir: &Path,
    pgm_dir: Option<&Path>,
) -> Result<DatasetSummary, CliError> {
    let world = generate_world(config)?;
    simulate_dataset(&world, condition, odometry_cfg, seed, dir, pgm_dir)
}
