//! Map building from a mapping dataset: per-landmark class PMFs from
//! 7×7 label patches around the projected points, class priors from
//! the full label set, and mean observed descriptors for the dense
//! variant.

use std::fs;
use std::path::Path;

use semloc_core::geometry::in_wedge;
use semloc_core::io::{read_feature_sequence_file, read_label_sequence_file, read_landmark_ids_file, read_trajectory_file};
use semloc_core::map::{
    build_descriptor, class_prior_from_images, decode_map, occluded_pmf, ClassId, Descriptor,
    MapPoint, SemanticMap, DENSE_DESCRIPTOR_BYTES, PATCH_PIXELS, PATCH_SIDE,
};
use semloc_core::sim::{DYNAMIC_CLASSES, OCCLUDED_BOOST};

use crate::dataset::{
    DatasetMeta, FEATURES_FSEQ, LABELS_LSEQ, LANDMARK_IDS, TRUTH_CSV, TRUTH_DENSE_MAP,
    TRUTH_SEMANTIC_MAP,
};
use crate::CliError;

/// Maps built from one dataset.
pub struct BuiltMaps {
    pub semantic: SemanticMap,
    pub dense: SemanticMap,
    /// Landmarks present in the world but never observed.
    pub dropped_semantic: usize,
    pub dropped_dense: usize,
}

/// Build the semantic and dense map variants from a mapping dataset
/// directory. Landmark positions and visibility wedges come from the
/// world geometry; descriptors and class statistics come from the
/// rendered observations.
pub fn build_maps(dir: &Path) -> Result<BuiltMaps, CliError> {
    let meta = DatasetMeta::load(dir)?;
    let truth_semantic = decode_map(&fs::read(dir.join(TRUTH_SEMANTIC_MAP))?)?;
    let truth_dense = decode_map(&fs::read(dir.join(TRUTH_DENSE_MAP))?)?;
    let trajectory = read_trajectory_file(&dir.join(TRUTH_CSV))?;
    let label_frames = read_label_sequence_file(&dir.join(LABELS_LSEQ))?;
    let feature_frames = read_feature_sequence_file(&dir.join(FEATURES_FSEQ))?;
    let id_frames = read_landmark_ids_file(&dir.join(LANDMARK_IDS))?;
    let rig = meta.world.rig()?;
    let n_cams = rig.len();
    let n_classes = meta.world.classes.len();
    if feature_frames.len() != id_frames.len() {
        return Err(CliError::Dataset("feature and landmark-id frame counts differ".into()));
    }

    // 7×7 patches around each landmark's projection in each frame.
    let mut patches: Vec<Vec<[ClassId; PATCH_PIXELS]>> =
        vec![Vec::new(); truth_semantic.points().len()];
    let half = (PATCH_SIDE / 2) as i64;
    for (k, frame) in label_frames.iter().enumerate() {
        let step = k / n_cams;
        let cam = &rig[frame.image.camera_id as usize];
        let Some((pose, t)) = trajectory.get(step) else {
            return Err(CliError::Dataset("more label frames than trajectory steps".into()));
        };
        if (t - frame.t).abs() > 1e-9 {
            return Err(CliError::Dataset("label frame timestamps do not match the trajectory".into()));
        }
        let observer = pose.translation();
        for (li, point) in truth_semantic.points().iter().enumerate() {
            if !in_wedge(&observer, &point.position, &point.wedge) {
                continue;
            }
            let Ok((n, depth)) = cam.project_with_depth(pose, &point.position) else {
                continue;
            };
            if depth > meta.world.cull_range {
                continue;
            }
            let px = cam.to_pixel(&n);
            let (fx, fy) = (px.x.round(), px.y.round());
            if !(fx >= half as f64
                && fy >= half as f64
                && fx + (half as f64) < frame.image.width as f64
                && fy + (half as f64) < frame.image.height as f64)
            {
                continue;
            }
            let (cx, cy) = (fx as i64, fy as i64);
            let mut patch = [ClassId(0); PATCH_PIXELS];
            let mut idx = 0;
            for y in cy - half..=cy + half {
                for x in cx - half..=cx + half {
                    patch[idx] = frame.image.label(x as u32, y as u32);
                    idx += 1;
                }
            }
            patches[li].push(patch);
        }
    }

    // Class prior over every pixel of the mapping sequence, occluded PMF
    // as its dynamic-boosted adjustment.
    let prior = class_prior_from_images(
        label_frames.iter().map(|f| f.image.labels()),
        n_classes,
    )?;
    let dynamic: Vec<ClassId> = DYNAMIC_CLASSES
        .iter()
        .filter_map(|name| {
            meta.world
                .classes
                .iter()
                .position(|c| c == name)
                .map(|i| ClassId(i as u8))
        })
        .collect();
    let occluded = occluded_pmf(&prior, &dynamic, OCCLUDED_BOOST)?;

    let mut semantic_points = Vec::new();
    let mut dropped_semantic = 0usize;
    for (li, point) in truth_semantic.points().iter().enumerate() {
        if patches[li].is_empty() {
            dropped_semantic += 1;
            continue;
        }
        semantic_points.push(MapPoint {
            position: point.position,
            descriptor: Descriptor::Semantic(build_descriptor(&patches[li], n_classes)?),
            wedge: point.wedge,
        });
    }

    // Dense variant: arithmetic mean of each landmark's observed
    // descriptors, re-quantized to 8 bits.
    let mut sums: Vec<(Vec<f64>, usize)> =
        vec![(vec![0.0; DENSE_DESCRIPTOR_BYTES], 0); truth_dense.points().len()];
    for (frame, ids) in feature_frames.iter().zip(&id_frames) {
        if frame.features.len() != ids.len() {
            return Err(CliError::Dataset("feature/landmark-id count mismatch".into()));
        }
        for (feat, &id) in frame.features.features().iter().zip(ids) {
            if id == u32::MAX {
                continue;
            }
            let slot = sums
                .get_mut(id as usize)
                .ok_or_else(|| CliError::Dataset(format!("landmark id {id} out of range")))?;
            for (acc, v) in slot.0.iter_mut().zip(&feat.descriptor) {
                *acc += v;
            }
            slot.1 += 1;
        }
    }
    let mut dense_points = Vec::new();
    let mut dropped_dense = 0usize;
    for (point, (sum, count)) in truth_dense.points().iter().zip(&sums) {
        if *count == 0 {
            dropped_dense += 1;
            continue;
        }
        let mean: Vec<u8> = sum
            .iter()
            .map(|s| (s / *count as f64).round().clamp(0.0, 255.0) as u8)
            .collect();
        dense_points.push(MapPoint {
            position: point.position,
            descriptor: Descriptor::Dense(mean),
            wedge: point.wedge,
        });
    }

    let road: Vec<_> = trajectory.iter().map(|(p, _)| *p).collect();
    let semantic = SemanticMap::new(
        meta.world.classes.clone(),
        semantic_points,
        prior.clone(),
        occluded.clone(),
        road.clone(),
        meta.world.max_range,
    )?;
    let dense = SemanticMap::new(
        meta.world.classes.clone(),
        dense_points,
        prior,
        occluded,
        road,
        meta.world.max_range,
    )?;
    Ok(BuiltMaps { semantic, dense, dropped_semantic, dropped_dense })
}
