//! The landmark map: 3-D points with a semantic or dense descriptor and
//! a visibility wedge, plus the class statistics and road trajectory the
//! filters consume.

mod codec;

pub use codec::{
    decode_map, encode_map, point_record_bytes, DENSE_DESCRIPTOR_BYTES, POSITION_BYTES,
    SEMANTIC_DESCRIPTOR_BITS, SEMANTIC_DESCRIPTOR_BYTES, WEDGE_BYTES,
};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::collections::HashMap;

use crate::geometry::{in_wedge, Pose, VisibilityWedge};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("class index {index} out of range (table has {count} classes)")]
    ClassOutOfRange { index: usize, count: usize },
    #[error("semantic maps support at most 32 classes, got {0}")]
    TooManyClasses(usize),
    #[error("empty observation list")]
    EmptyObservations,
    #[error("empty image list")]
    EmptyImages,
    #[error("probability vector must sum to 1, sums to {0}")]
    NotNormalized(f64),
    #[error("boost factor must be positive, got {0}")]
    BadBoostFactor(f64),
    #[error("map must contain a non-empty road trajectory")]
    EmptyRoadTrajectory,
    #[error("map mixes descriptor kinds (point {0})")]
    MixedDescriptors(usize),
    #[error("dense descriptors must have {expected} elements, got {got}")]
    BadDescriptorLength { expected: usize, got: usize },
    #[error("non-finite landmark position (point {0})")]
    NonFinitePosition(usize),
    #[error("decode: {0}")]
    Decode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Index into the map's class table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub u8);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Side length of the pixel neighbourhood used to histogram classes
/// around an observed landmark.
pub const PATCH_SIDE: usize = 7;
/// Pixels per observation patch.
pub const PATCH_PIXELS: usize = PATCH_SIDE * PATCH_SIDE;
/// Entries kept in the compact descriptor.
pub const DESCRIPTOR_TOP_K: usize = 3;
/// Largest class table a semantic map can carry (5-bit packed ids).
pub const MAX_SEMANTIC_CLASSES: usize = 32;

/// Compact class PMF of a landmark given that it is visible: up to
/// [`DESCRIPTOR_TOP_K`] `(class, probability)` entries, renormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticDescriptor {
    entries: Vec<(ClassId, f64)>,
}

impl SemanticDescriptor {
    /// Restrict a full per-class histogram to its top-3 bins and
    /// renormalize. Ties broken toward the smaller class index.
    pub fn from_histogram(weights: &[f64]) -> Result<Self, MapError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(MapError::EmptyObservations);
        }
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap().then(a.cmp(&b)));
        let mut entries: Vec<(ClassId, f64)> = order
            .into_iter()
            .take(DESCRIPTOR_TOP_K)
            .filter(|&i| weights[i] > 0.0)
            .map(|i| (ClassId(i as u8), weights[i]))
            .collect();
        let kept: f64 = entries.iter().map(|(_, w)| w).sum();
        for e in &mut entries {
            e.1 /= kept;
        }
        entries.sort_by_key(|(c, _)| *c);
        Ok(SemanticDescriptor { entries })
    }

    pub fn single(class: ClassId) -> Self {
        SemanticDescriptor { entries: vec![(class, 1.0)] }
    }

    /// Entries sorted by class id; probabilities sum to 1.
    pub fn entries(&self) -> &[(ClassId, f64)] {
        &self.entries
    }

    pub fn prob(&self, class: ClassId) -> f64 {
        self.entries
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    /// Most probable class.
    pub fn mode(&self) -> ClassId {
        self.entries
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .expect("descriptor is never empty")
            .0
    }
}

/// Landmark payload: either the compact class PMF or a dense
/// [`DENSE_DESCRIPTOR_BYTES`]-element appearance vector quantized to
/// 8 bits per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Descriptor {
    Semantic(SemanticDescriptor),
    Dense(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DescriptorKind {
    Semantic,
    Dense,
}

/// One landmark: global ENU position, descriptor and visibility wedge.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub position: Vector3<f64>,
    pub descriptor: Descriptor,
    pub wedge: VisibilityWedge,
}

/// The full map handed to a localizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    class_table: Vec<String>,
    points: Vec<MapPoint>,
    class_prior: Vec<f64>,
    occluded_pmf: Vec<f64>,
    road_trajectory: Vec<Pose>,
    max_range: f64,
    kind: DescriptorKind,
    grid: VisibilityGrid,
}

impl SemanticMap {
    pub fn new(
        class_table: Vec<String>,
        points: Vec<MapPoint>,
        class_prior: Vec<f64>,
        occluded_pmf: Vec<f64>,
        road_trajectory: Vec<Pose>,
        max_range: f64,
    ) -> Result<Self, MapError> {
        if road_trajectory.is_empty() {
            return Err(MapError::EmptyRoadTrajectory);
        }
        let n_classes = class_table.len();
        check_normalized(&class_prior, n_classes)?;
        check_normalized(&occluded_pmf, n_classes)?;
        let kind = match points.first().map(|p| &p.descriptor) {
            Some(Descriptor::Dense(_)) => DescriptorKind::Dense,
            _ => DescriptorKind::Semantic,
        };
        for (i, p) in points.iter().enumerate() {
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(MapError::NonFinitePosition(i));
            }
            match (&p.descriptor, kind) {
                (Descriptor::Semantic(d), DescriptorKind::Semantic) => {
                    if n_classes > MAX_SEMANTIC_CLASSES {
                        return Err(MapError::TooManyClasses(n_classes));
                    }
                    for (c, _) in d.entries() {
                        if c.index() >= n_classes {
                            return Err(MapError::ClassOutOfRange { index: c.index(), count: n_classes });
                        }
                    }
                }
                (Descriptor::Dense(d), DescriptorKind::Dense) => {
                    if d.len() != DENSE_DESCRIPTOR_BYTES {
                        return Err(MapError::BadDescriptorLength {
                            expected: DENSE_DESCRIPTOR_BYTES,
                            got: d.len(),
                        });
                    }
                }
                _ => return Err(MapError::MixedDescriptors(i)),
            }
        }
        let grid = VisibilityGrid::build(&points, max_range);
        Ok(SemanticMap {
            class_table,
            points,
            class_prior,
            occluded_pmf,
            road_trajectory,
            max_range,
            kind,
            grid,
        })
    }

    pub fn class_table(&self) -> &[String] {
        &self.class_table
    }

    pub fn num_classes(&self) -> usize {
        self.class_table.len()
    }

    pub fn class_index(&self, name: &str) -> Option<ClassId> {
        self.class_table.iter().position(|c| c == name).map(|i| ClassId(i as u8))
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.points
    }

    pub fn class_prior(&self) -> &[f64] {
        &self.class_prior
    }

    pub fn occluded_pmf(&self) -> &[f64] {
        &self.occluded_pmf
    }

    pub fn road_trajectory(&self) -> &[Pose] {
        &self.road_trajectory
    }

    /// Declared maximum wedge range; the quantization basis for stored
    /// ranges.
    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    pub fn kind(&self) -> DescriptorKind {
        self.kind
    }

    /// Indices of exactly those points whose visibility wedge contains
    /// the query position, ascending. Backed by a uniform grid over
    /// horizontal position; equivalent to a linear scan.
    pub fn potentially_visible_set(&self, query_pose: &Pose) -> Vec<u32> {
        let q = query_pose.translation();
        let mut out = self.grid.candidates(&q, &self.points);
        out.retain(|&i| in_wedge(&q, &self.points[i as usize].position, &self.points[i as usize].wedge));
        out.sort_unstable();
        out
    }

    /// Reference implementation of [`Self::potentially_visible_set`].
    pub fn potentially_visible_set_linear(&self, query_pose: &Pose) -> Vec<u32> {
        let q = query_pose.translation();
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| in_wedge(&q, &p.position, &p.wedge))
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// JSON debug dump of the map (schema in `docs/FORMATS.md`).
    pub fn debug_dump(&self) -> serde_json::Value {
        let points: Vec<serde_json::Value> = self
            .points
            .iter()
            .map(|p| {
                let descriptor = match &p.descriptor {
                    Descriptor::Semantic(d) => serde_json::json!({
                        "kind": "semantic",
                        "pmf": d.entries().iter().map(|(c, w)| {
                            serde_json::json!({"class": self.class_table[c.index()], "p": w})
                        }).collect::<Vec<_>>(),
                    }),
                    Descriptor::Dense(d) => serde_json::json!({
                        "kind": "dense",
                        "len": d.len(),
                    }),
                };
                serde_json::json!({
                    "position": [p.position.x, p.position.y, p.position.z],
                    "wedge": {
                        "gamma_a": p.wedge.gamma_a(),
                        "gamma_b": p.wedge.gamma_b(),
                        "range": p.wedge.range(),
                        "detection_prob": p.wedge.detection_prob(),
                    },
                    "descriptor": descriptor,
                })
            })
            .collect();
        serde_json::json!({
            "classes": self.class_table,
            "class_prior": self.class_prior,
            "occluded_pmf": self.occluded_pmf,
            "max_range": self.max_range,
            "road_trajectory_len": self.road_trajectory.len(),
            "num_points": self.points.len(),
            "points": points,
        })
    }
}

fn check_normalized(pmf: &[f64], n_classes: usize) -> Result<(), MapError> {
    if pmf.len() != n_classes {
        return Err(MapError::ClassOutOfRange { index: pmf.len(), count: n_classes });
    }
    let sum: f64 = pmf.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || pmf.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
        return Err(MapError::NotNormalized(sum));
    }
    Ok(())
}

/// Uniform 2-D grid over horizontal position. Cell size equals the
/// largest wedge range, so a point can only see a query inside its own
/// or one of the eight neighbouring cells.
#[derive(Debug, Clone, PartialEq)]
struct VisibilityGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<u32>>,
}

impl VisibilityGrid {
    fn build(points: &[MapPoint], max_range: f64) -> Self {
        let cell = points
            .iter()
            .map(|p| p.wedge.range())
            .fold(0.0f64, f64::max)
            .max(1e-3)
            .min(max_range.max(1e-3));
        let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = Self::key(cell, p.position.x, p.position.y);
            buckets.entry(key).or_default().push(i as u32);
        }
        VisibilityGrid { cell, buckets }
    }

    fn key(cell: f64, x: f64, y: f64) -> (i64, i64) {
        ((x / cell).floor() as i64, (y / cell).floor() as i64)
    }

    fn candidates(&self, q: &Vector3<f64>, points: &[MapPoint]) -> Vec<u32> {
        let (cx, cy) = Self::key(self.cell, q.x, q.y);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = self.buckets.get(&(cx + dx, cy + dy)) {
                    out.extend_from_slice(b);
                }
            }
        }
        // Points whose range exceeds the cell (clamped by max_range) are
        // impossible by construction, but stay safe:
        debug_assert!(points.iter().all(|p| p.wedge.range() <= self.cell + 1e-9));
        out
    }
}

/// Normalized class histogram over every pixel of every 7×7 observation
/// patch of one landmark, compacted to the top-3 classes.
pub fn build_descriptor(observations: &[[ClassId; PATCH_PIXELS]], num_classes: usize) -> Result<SemanticDescriptor, MapError> {
    if observations.is_empty() {
        return Err(MapError::EmptyObservations);
    }
    let mut counts = vec![0.0f64; num_classes];
    for patch in observations {
        for label in patch {
            if label.index() >= num_classes {
                return Err(MapError::ClassOutOfRange { index: label.index(), count: num_classes });
            }
            counts[label.index()] += 1.0;
        }
    }
    SemanticDescriptor::from_histogram(&counts)
}

/// Relative class frequency over every pixel of every image.
pub fn class_prior_from_images<'a, I>(images: I, num_classes: usize) -> Result<Vec<f64>, MapError>
where
    I: IntoIterator<Item = &'a [ClassId]>,
{
    let mut counts = vec![0u64; num_classes];
    let mut total = 0u64;
    for labels in images {
        for label in labels {
            if label.index() >= num_classes {
                return Err(MapError::ClassOutOfRange { index: label.index(), count: num_classes });
            }
            counts[label.index()] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(MapError::EmptyImages);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Occluded-pixel class PMF: the prior with the dynamic-object classes'
/// mass multiplied by `boost_factor`, renormalized.
pub fn occluded_pmf(prior: &[f64], boost_classes: &[ClassId], boost_factor: f64) -> Result<Vec<f64>, MapError> {
    if !(boost_factor > 0.0) {
        return Err(MapError::BadBoostFactor(boost_factor));
    }
    if boost_classes.is_empty() {
        return Ok(prior.to_vec());
    }
    for c in boost_classes {
        if c.index() >= prior.len() {
            return Err(MapError::ClassOutOfRange { index: c.index(), count: prior.len() });
        }
    }
    let mut out = prior.to_vec();
    for c in boost_classes {
        out[c.index()] *= boost_factor;
    }
    let sum: f64 = out.iter().sum();
    if !(sum > 0.0) {
        return Err(MapError::NotNormalized(sum));
    }
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn patch(class: ClassId) -> [ClassId; PATCH_PIXELS] {
        [class; PATCH_PIXELS]
    }

    #[test]
    fn single_class_patch_is_pure() {
        let d = build_descriptor(&[patch(ClassId(2))], 5).unwrap();
        assert_eq!(d.entries(), &[(ClassId(2), 1.0)]);
        assert_eq!(d.prob(ClassId(2)), 1.0);
        assert_eq!(d.prob(ClassId(0)), 0.0);
    }

    #[test]
    fn symmetric_patches_split_evenly() {
        let d = build_descriptor(&[patch(ClassId(0)), patch(ClassId(3))], 5).unwrap();
        assert_relative_eq!(d.prob(ClassId(0)), 0.5, epsilon = 1e-12);
        assert_relative_eq!(d.prob(ClassId(3)), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn empty_observations_rejected() {
        assert!(matches!(build_descriptor(&[], 5), Err(MapError::EmptyObservations)));
    }

    #[test]
    fn five_class_patches_compact_to_top_three() {
        // Counts: class 0 ×3 patches, 1 ×2, 2 ×2, 3 ×1, 4 ×1 patch.
        let mut obs = Vec::new();
        for (class, n) in [(0u8, 3usize), (1, 2), (2, 2), (3, 1), (4, 1)] {
            for _ in 0..n {
                obs.push(patch(ClassId(class)));
            }
        }
        let d = build_descriptor(&obs, 5).unwrap();
        // Full histogram restricted to the 3 largest bins, renormalized.
        let full = [3.0, 2.0, 2.0, 1.0, 1.0].map(|c| c / 9.0);
        let kept = full[0] + full[1] + full[2];
        assert_eq!(d.entries().len(), 3);
        assert_relative_eq!(d.prob(ClassId(0)), full[0] / kept, epsilon = 1e-12);
        assert_relative_eq!(d.prob(ClassId(1)), full[1] / kept, epsilon = 1e-12);
        assert_relative_eq!(d.prob(ClassId(2)), full[2] / kept, epsilon = 1e-12);
        assert_eq!(d.prob(ClassId(3)), 0.0);
    }

    #[test]
    fn prior_counts_pixels() {
        // 2×2 image: road, road, sky, building over a 3-class table.
        let img = [ClassId(0), ClassId(0), ClassId(1), ClassId(2)];
        let prior = class_prior_from_images([&img[..]], 3).unwrap();
        assert_eq!(prior, vec![0.5, 0.25, 0.25]);
        // Duplicating the image leaves frequencies unchanged.
        let twice = class_prior_from_images([&img[..], &img[..]], 3).unwrap();
        assert_eq!(prior, twice);
    }

    #[test]
    fn prior_rejects_out_of_range_labels() {
        let img = [ClassId(7)];
        assert!(class_prior_from_images([&img[..]], 3).is_err());
    }

    proptest! {
        #[test]
        fn prior_matches_flat_count_oracle(labels in proptest::collection::vec(0u8..6, 1..200)) {
            let img: Vec<ClassId> = labels.iter().map(|&l| ClassId(l)).collect();
            let prior = class_prior_from_images([&img[..]], 6).unwrap();
            let mut counts = [0.0f64; 6];
            for &l in &labels {
                counts[l as usize] += 1.0;
            }
            for c in 0..6 {
                prop_assert!((prior[c] - counts[c] / labels.len() as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn occluded_pmf_boosts_and_renormalizes() {
        let out = occluded_pmf(&[0.5, 0.5], &[ClassId(1)], 2.0).unwrap();
        assert_relative_eq!(out[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(out[1], 2.0 / 3.0, epsilon = 1e-12);
        // Factor 1 is the identity.
        let same = occluded_pmf(&[0.3, 0.7], &[ClassId(0)], 1.0).unwrap();
        assert_eq!(same, vec![0.3, 0.7]);
        // Empty boost set returns the prior unchanged.
        let same = occluded_pmf(&[0.3, 0.7], &[], 4.0).unwrap();
        assert_eq!(same, vec![0.3, 0.7]);
    }

    #[test]
    fn occluded_pmf_preserves_order_and_normalization() {
        // Exhaustive small-vector enumeration over a probability simplex grid.
        let steps = 10;
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let c = steps - a - b;
                let prior = [a as f64 / steps as f64, b as f64 / steps as f64, c as f64 / steps as f64];
                for factor in [1.5, 4.0, 10.0] {
                    let out = occluded_pmf(&prior, &[ClassId(2)], factor).unwrap();
                    let sum: f64 = out.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
                    // Ordering among non-boosted classes is preserved.
                    assert_eq!(prior[0].partial_cmp(&prior[1]), out[0].partial_cmp(&out[1]));
                }
            }
        }
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize) -> SemanticMap {
        let classes = vec!["road".into(), "building".into(), "vegetation".into()];
        let points = (0..n)
            .map(|_| {
                let ga: f64 = rng.random_range(-3.0..3.0);
                let span: f64 = rng.random_range(0.1..6.2);
                MapPoint {
                    position: Vector3::new(
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                        rng.random_range(0.0..10.0),
                    ),
                    descriptor: Descriptor::Semantic(SemanticDescriptor::single(ClassId(
                        rng.random_range(0..3u8),
                    ))),
                    wedge: VisibilityWedge::new(ga, ga + span, rng.random_range(5.0..60.0), 0.9).unwrap(),
                }
            })
            .collect();
        SemanticMap::new(
            classes,
            points,
            vec![0.4, 0.35, 0.25],
            vec![0.5, 0.3, 0.2],
            vec![Pose::identity()],
            200.0,
        )
        .unwrap()
    }

    #[test]
    fn visible_set_single_point() {
        let classes = vec!["road".into()];
        let point = MapPoint {
            position: Vector3::zeros(),
            descriptor: Descriptor::Semantic(SemanticDescriptor::single(ClassId(0))),
            wedge: VisibilityWedge::full_circle(100.0, 1.0).unwrap(),
        };
        let map = SemanticMap::new(classes, vec![point], vec![1.0], vec![1.0], vec![Pose::identity()], 200.0).unwrap();
        let q = Pose::from_enu_ypr(10.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(map.potentially_visible_set(&q), vec![0]);
        let far = Pose::from_enu_ypr(500.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(map.potentially_visible_set(&far).is_empty());
    }

    #[test]
    fn visible_set_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let map = random_map(&mut rng, 10_000);
        for _ in 0..50 {
            let q = Pose::from_enu_ypr(
                rng.random_range(-120.0..120.0),
                rng.random_range(-120.0..120.0),
                1.5,
                0.0,
                0.0,
                0.0,
            );
            assert_eq!(map.potentially_visible_set(&q), map.potentially_visible_set_linear(&q));
        }
    }

    #[test]
    fn map_validates_inputs() {
        let classes = vec!["a".into(), "b".into()];
        let p = MapPoint {
            position: Vector3::zeros(),
            descriptor: Descriptor::Semantic(SemanticDescriptor::single(ClassId(0))),
            wedge: VisibilityWedge::full_circle(10.0, 1.0).unwrap(),
        };
        // Road trajectory must be non-empty.
        assert!(SemanticMap::new(classes.clone(), vec![p.clone()], vec![0.5, 0.5], vec![0.5, 0.5], vec![], 200.0).is_err());
        // Priors must normalize.
        assert!(SemanticMap::new(classes.clone(), vec![p.clone()], vec![0.6, 0.6], vec![0.5, 0.5], vec![Pose::identity()], 200.0).is_err());
        // Mixed descriptor kinds are rejected.
        let dense = MapPoint {
            position: Vector3::new(1.0, 0.0, 0.0),
            descriptor: Descriptor::Dense(vec![0u8; DENSE_DESCRIPTOR_BYTES]),
            wedge: VisibilityWedge::full_circle(10.0, 1.0).unwrap(),
        };
        assert!(SemanticMap::new(classes, vec![p, dense], vec![0.5, 0.5], vec![0.5, 0.5], vec![Pose::identity()], 200.0).is_err());
    }
}
