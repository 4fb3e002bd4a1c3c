//! Synthetic rendering: dense segmented frames (z-buffered landmark
//! splats over a ground plane and sky) and sparse descriptor features.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::geometry::{in_wedge, CameraModel, Pose, VisibilityWedge};
use crate::map::{ClassId, Descriptor};
use crate::semantic::SegmentedImage;
use crate::sift::{Feature, SparseFeatureSet};

use super::{ConditionModel, SimError, World};

/// Row-stochastic class-confusion model with spatially correlated
/// draws: one uniform variate per `blob_px`-sized block drives the
/// inverse-CDF lookup of every pixel in the block.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterNoiseModel {
    rows: Vec<Vec<f64>>,
    blob_px: u32,
}

impl SegmenterNoiseModel {
    pub fn identity(num_classes: usize, blob_px: u32) -> Self {
        let rows = (0..num_classes)
            .map(|i| {
                let mut row = vec![0.0; num_classes];
                row[i] = 1.0;
                row
            })
            .collect();
        SegmenterNoiseModel { rows, blob_px: blob_px.max(1) }
    }

    /// Diagonal `1 − rate`, off-diagonal mass spread uniformly.
    pub fn uniform_error(num_classes: usize, rate: f64, blob_px: u32) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(format!("confusion rate {rate} outside [0, 1]"));
        }
        if num_classes == 0 {
            return Err("confusion matrix needs at least one class".into());
        }
        if num_classes == 1 && rate > 0.0 {
            return Err("cannot confuse a single class".into());
        }
        let mut model = Self::identity(num_classes, blob_px);
        if rate > 0.0 {
            let off = rate / (num_classes - 1) as f64;
            for (i, row) in model.rows.iter_mut().enumerate() {
                for (j, p) in row.iter_mut().enumerate() {
                    *p = if i == j { 1.0 - rate } else { off };
                }
            }
        }
        Ok(model)
    }

    /// Move `prob` mass of class `from` onto class `to`.
    pub fn add_confusion(&mut self, from: usize, to: usize, prob: f64) -> Result<(), String> {
        let n = self.rows.len();
        if from >= n || to >= n {
            return Err("confusion override class out of range".into());
        }
        if !(0.0..=1.0).contains(&prob) {
            return Err(format!("confusion prob {prob} outside [0, 1]"));
        }
        if self.rows[from][from] < prob {
            return Err("override exceeds remaining diagonal mass".into());
        }
        self.rows[from][from] -= prob;
        self.rows[from][to] += prob;
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn blob_px(&self) -> u32 {
        self.blob_px
    }

    /// Corrupt an image: one uniform draw per block, inverse-CDF lookup
    /// per pixel.
    pub fn apply(&self, image: &SegmentedImage, rng: &mut impl Rng) -> SegmentedImage {
        let n = self.rows.len();
        let mut cdf = vec![0.0f64; n * n];
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for (j, p) in row.iter().enumerate() {
                acc += p;
                cdf[i * n + j] = acc;
            }
        }
        let b = self.blob_px as usize;
        let (w, h) = (image.width as usize, image.height as usize);
        let mut labels = image.labels().to_vec();
        for by in 0..h.div_ceil(b) {
            for bx in 0..w.div_ceil(b) {
                let u: f64 = rng.random();
                for y in by * b..((by + 1) * b).min(h) {
                    for x in bx * b..((bx + 1) * b).min(w) {
                        let idx = y * w + x;
                        let row = labels[idx].index();
                        let base = row * n;
                        let mut k = 0;
                        while k + 1 < n && cdf[base + k] <= u {
                            k += 1;
                        }
                        labels[idx] = ClassId(k as u8);
                    }
                }
            }
        }
        SegmentedImage::new(image.width, image.height, image.camera_id, labels).expect("same dims")
    }
}

/// Scene renderer derived from a generated world. Per-pixel camera rays
/// are undistorted once per camera and cached.
pub struct Renderer {
    width: u32,
    height: u32,
    rig: Vec<CameraModel>,
    rays: Vec<Vec<Vector3<f64>>>,
    landmarks: Vec<(Vector3<f64>, ClassId)>,
    wedges: Vec<VisibilityWedge>,
    dense_bases: Vec<Vec<u8>>,
    road: ClassId,
    terrain: ClassId,
    sky: ClassId,
    splat_px_at_10m: f64,
    cull_range: f64,
    clutter_per_frame: f64,
    pixel_noise_px: f64,
    corridor: CorridorGrid,
}

impl Renderer {
    pub fn new(world: &World) -> Result<Self, SimError> {
        let cfg = &world.config;
        let rig = world.rig.clone();
        let (width, height) = (cfg.image_width, cfg.image_height);
        let mut rays = Vec::with_capacity(rig.len());
        for cam in &rig {
            let mut lut = Vec::with_capacity((width * height) as usize);
            for y in 0..height {
                for x in 0..width {
                    let n = cam.pixel_to_normalized(&Vector2::new(x as f64, y as f64));
                    let u = cam.undistort(&n);
                    lut.push(Vector3::new(u.x, u.y, 1.0));
                }
            }
            rays.push(lut);
        }
        let landmarks: Vec<(Vector3<f64>, ClassId)> = world
            .semantic_map
            .points()
            .iter()
            .map(|p| {
                let class = match &p.descriptor {
                    Descriptor::Semantic(d) => d.mode(),
                    Descriptor::Dense(_) => ClassId(0),
                };
                (p.position, class)
            })
            .collect();
        let wedges = world.semantic_map.points().iter().map(|p| p.wedge).collect();
        let dense_bases = world
            .dense_map
            .points()
            .iter()
            .map(|p| match &p.descriptor {
                Descriptor::Dense(d) => d.clone(),
                Descriptor::Semantic(_) => Vec::new(),
            })
            .collect();
        let class = |name: &str| {
            cfg.class_index(name)
                .ok_or_else(|| SimError::BadConfig(format!("class table must contain {name:?}")))
        };
        let route_xy: Vec<Vector2<f64>> = world
            .trajectory
            .iter()
            .map(|(p, _)| {
                let t = p.translation();
                Vector2::new(t.x, t.y)
            })
            .collect();
        Ok(Renderer {
            width,
            height,
            rig,
            rays,
            landmarks,
            wedges,
            dense_bases,
            road: class("road")?,
            terrain: class("terrain")?,
            sky: class("sky")?,
            splat_px_at_10m: cfg.splat_px_at_10m,
            cull_range: cfg.cull_range,
            clutter_per_frame: cfg.clutter_per_frame,
            pixel_noise_px: cfg.feature_pixel_noise_px,
            corridor: CorridorGrid::build(&route_xy, cfg.corridor_half_width),
        })
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn camera(&self, idx: usize) -> Result<&CameraModel, SimError> {
        self.rig.get(idx).ok_or_else(|| SimError::BadConfig(format!("camera {idx} not in rig")))
    }

    /// Noiseless geometric labeling: nearest surface along each pixel
    /// ray, z-buffered over landmark splats, the ground plane and sky.
    pub fn render_clean(&self, pose: &Pose, camera_idx: usize) -> Result<SegmentedImage, SimError> {
        let cam = self.camera(camera_idx)?;
        let n_px = (self.width * self.height) as usize;
        let mut labels = vec![self.sky; n_px];
        let mut depth = vec![f64::INFINITY; n_px];

        // Ground plane and sky.
        let origin = pose.transform_point(&cam.extrinsic().translation());
        let rot = pose.rotation() * cam.extrinsic().rotation();
        for (i, ray) in self.rays[camera_idx].iter().enumerate() {
            let dir = rot * ray;
            if dir.z < -1e-12 {
                let t = -origin.z / dir.z;
                let gx = origin.x + t * dir.x;
                let gy = origin.y + t * dir.y;
                labels[i] = if self.corridor.contains(gx, gy) { self.road } else { self.terrain };
                depth[i] = t;
            }
        }

        // Landmark splats, nearer depth wins.
        for (pos, class) in &self.landmarks {
            let Ok((n, d)) = cam.project_with_depth(pose, pos) else { continue };
            if d > self.cull_range {
                continue;
            }
            let px = cam.to_pixel(&n);
            let half = (self.splat_px_at_10m * 10.0 / d) * 0.5;
            let x0 = ((px.x - half).round().max(0.0)) as i64;
            let x1 = ((px.x + half).round()).min(self.width as f64 - 1.0) as i64;
            let y0 = ((px.y - half).round().max(0.0)) as i64;
            let y1 = ((px.y + half).round()).min(self.height as f64 - 1.0) as i64;
            if x1 < x0 || y1 < y0 || x1 < 0 || y1 < 0 {
                continue;
            }
            for y in y0.max(0)..=y1 {
                for x in x0.max(0)..=x1 {
                    let idx = (y as u32 * self.width + x as u32) as usize;
                    if d < depth[idx] {
                        depth[idx] = d;
                        labels[idx] = *class;
                    }
                }
            }
        }
        SegmentedImage::new(self.width, self.height, camera_idx as u8, labels)
            .map_err(|e| SimError::BadConfig(e.to_string()))
    }

    /// Clean render corrupted by the segmenter noise model.
    pub fn render_segmented(
        &self,
        pose: &Pose,
        camera_idx: usize,
        noise: &SegmenterNoiseModel,
        rng: &mut impl Rng,
    ) -> Result<SegmentedImage, SimError> {
        Ok(noise.apply(&self.render_clean(pose, camera_idx)?, rng))
    }

    /// Sparse features: every wedge-visible landmark survives a
    /// `ρ·(1 − dropout)` Bernoulli draw, projects with detector jitter,
    /// and carries its base descriptor plus condition corruption.
    /// Clutter features with random descriptors are appended. The
    /// second return value maps features to landmark indices
    /// (`u32::MAX` for clutter).
    pub fn render_sparse(
        &self,
        pose: &Pose,
        camera_idx: usize,
        condition: &ConditionModel,
        rng: &mut impl Rng,
    ) -> Result<(SparseFeatureSet, Vec<u32>), SimError> {
        let cam = self.camera(camera_idx)?;
        let sigma_norm = self.pixel_noise_px / cam.fx;
        let observer = pose.translation();
        let mut features = Vec::new();
        let mut ids = Vec::new();
        for (i, (pos, _)) in self.landmarks.iter().enumerate() {
            if !in_wedge(&observer, pos, &self.wedges[i]) {
                continue;
            }
            let p_detect = self.wedges[i].detection_prob() * (1.0 - condition.dropout_prob);
            if rng.random::<f64>() >= p_detect {
                continue;
            }
            let Ok((n, _)) = cam.project_with_depth(pose, pos) else { continue };
            let jitter = Vector2::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ) * sigma_norm;
            let coord = n + jitter;
            let px = cam.to_pixel(&coord);
            if px.x.round() < 0.0
                || px.y.round() < 0.0
                || px.x.round() >= self.width as f64
                || px.y.round() >= self.height as f64
            {
                continue;
            }
            let descriptor = self.dense_bases[i]
                .iter()
                .map(|&b| {
                    let noise: f64 = StandardNormal.sample(rng);
                    b as f64 + noise * condition.descriptor_corruption_std
                })
                .collect();
            features.push(Feature { coord, descriptor });
            ids.push(i as u32);
        }
        if self.clutter_per_frame > 0.0 {
            let count = Poisson::new(self.clutter_per_frame)
                .map_err(|e| SimError::BadConfig(format!("bad clutter rate: {e}")))?
                .sample(rng) as usize;
            for _ in 0..count {
                let px = Vector2::new(
                    rng.random_range(0.0..self.width as f64 - 0.5),
                    rng.random_range(0.0..self.height as f64 - 0.5),
                );
                let coord = cam.pixel_to_normalized(&px);
                let descriptor = (0..self.dense_bases.first().map_or(128, Vec::len))
                    .map(|_| rng.random_range(0.0..=255.0f64).round())
                    .collect();
                features.push(Feature { coord, descriptor });
                ids.push(u32::MAX);
            }
        }
        let set = SparseFeatureSet::new(camera_idx as u8, features)
            .map_err(|e| SimError::BadConfig(e.to_string()))?;
        Ok((set, ids))
    }
}

/// Rasterized road corridor over the route bounding box, 0.5 m cells.
struct CorridorGrid {
    x0: f64,
    y0: f64,
    cols: usize,
    rows: usize,
    cells: Vec<bool>,
}

const CORRIDOR_CELL: f64 = 0.5;

impl CorridorGrid {
    fn build(route: &[Vector2<f64>], half_width: f64) -> CorridorGrid {
        if route.is_empty() {
            return CorridorGrid { x0: 0.0, y0: 0.0, cols: 0, rows: 0, cells: Vec::new() };
        }
        let margin = half_width + 2.0;
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in route {
            min_x = min_x.min(p.x);
            max_x = max_x.max(p.x);
            min_y = min_y.min(p.y);
            max_y = max_y.max(p.y);
        }
        let x0 = min_x - margin;
        let y0 = min_y - margin;
        let cols = ((max_x + margin - x0) / CORRIDOR_CELL).ceil() as usize + 1;
        let rows = ((max_y + margin - y0) / CORRIDOR_CELL).ceil() as usize + 1;
        let mut grid = CorridorGrid { x0, y0, cols, rows, cells: vec![false; cols * rows] };
        let r_cells = (half_width / CORRIDOR_CELL).ceil() as i64;
        let mut mark_disk = |p: &Vector2<f64>| {
            let cx = ((p.x - x0) / CORRIDOR_CELL).round() as i64;
            let cy = ((p.y - y0) / CORRIDOR_CELL).round() as i64;
            for dy in -r_cells..=r_cells {
                for dx in -r_cells..=r_cells {
                    let (gx, gy) = (cx + dx, cy + dy);
                    if gx < 0 || gy < 0 || gx >= cols as i64 || gy >= rows as i64 {
                        continue;
                    }
                    let center = Vector2::new(
                        x0 + gx as f64 * CORRIDOR_CELL,
                        y0 + gy as f64 * CORRIDOR_CELL,
                    );
                    if (center - p).norm() <= half_width {
                        grid.cells[gy as usize * cols + gx as usize] = true;
                    }
                }
            }
        };
        for w in route.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            let steps = (len / (CORRIDOR_CELL * 0.5)).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let p = w[0] + seg * (k as f64 / steps as f64);
                mark_disk(&p);
            }
        }
        if route.len() == 1 {
            mark_disk(&route[0]);
        }
        grid
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        if self.cells.is_empty() {
            return false;
        }
        let gx = ((x - self.x0) / CORRIDOR_CELL).round() as i64;
        let gy = ((y - self.y0) / CORRIDOR_CELL).round() as i64;
        if gx < 0 || gy < 0 || gx >= self.cols as i64 || gy >= self.rows as i64 {
            return false;
        }
        self.cells[gy as usize * self.cols + gx as usize]
    }
}
