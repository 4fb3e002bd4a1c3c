//! Synthetic environment generation: ground-truth trajectories,
//! semantic landmark fields with visibility wedges, and the per-season
//! condition models that corrupt rendered observations.

mod render;

pub use render::{Renderer, SegmenterNoiseModel};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::f64::consts::TAU;

use crate::geometry::{CameraModel, Distortion, GeometryError, Pose, VisibilityWedge};
use crate::map::{
    class_prior_from_images, occluded_pmf, ClassId, Descriptor, MapError, MapPoint,
    SemanticDescriptor, SemanticMap, DENSE_DESCRIPTOR_BYTES,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Cityscapes-style evaluation classes.
pub fn default_class_table() -> Vec<String> {
    [
        "road",
        "sidewalk",
        "building",
        "wall",
        "fence",
        "pole",
        "traffic_light",
        "traffic_sign",
        "vegetation",
        "terrain",
        "sky",
        "pedestrian",
        "rider",
        "car",
        "truck",
        "bus",
        "train",
        "motorcycle",
        "bicycle",
    ]
    .map(str::to_string)
    .to_vec()
}

/// Classes whose prior mass is boosted in the occluded-pixel PMF.
pub const DYNAMIC_CLASSES: [&str; 5] = ["car", "pedestrian", "rider", "truck", "bus"];
/// Boost factor applied to dynamic classes.
pub const OCCLUDED_BOOST: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RouteShape {
    Straight { length: f64 },
    Circle { radius: f64 },
    Waypoints { points: Vec<[f64; 3]>, closed: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouteConfig {
    #[serde(flatten)]
    pub shape: RouteShape,
    pub speed_mps: f64,
    pub rate_hz: f64,
}

impl Default for RouteConfig {
    fn default() -> Self {
        RouteConfig {
            shape: RouteShape::Circle { radius: 60.0 },
            speed_mps: 8.0,
            rate_hz: 10.0,
        }
    }
}

/// One landmark population: a class placed at a lateral band beside the
/// route with some height distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkBand {
    pub class: String,
    /// Expected landmarks per meter of route (Poisson).
    pub density_per_m: f64,
    pub lateral_mean: f64,
    pub lateral_std: f64,
    pub height_mean: f64,
    pub height_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WedgeConfig {
    pub range_min: f64,
    pub range_max: f64,
    pub half_angle_min: f64,
    pub half_angle_max: f64,
    pub detection_prob_min: f64,
    pub detection_prob_max: f64,
    /// Wedges are aimed at the route point this far before the landmark's
    /// anchor, covering the stretch where a forward camera approaches it.
    pub approach_m: f64,
}

impl Default for WedgeConfig {
    fn default() -> Self {
        WedgeConfig {
            range_min: 30.0,
            range_max: 60.0,
            half_angle_min: 0.7,
            half_angle_max: 1.4,
            detection_prob_min: 0.85,
            detection_prob_max: 1.0,
            approach_m: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Brown coefficients `[k1, k2, p1, p2, k3]`, trailing zeros optional.
    pub distortion: Vec<f64>,
    /// Mount position in the vehicle frame (x forward, y left, z up).
    pub offset: [f64; 3],
    /// Mount yaw relative to straight ahead, radians.
    pub mount_yaw: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            fx: 160.0,
            fy: 160.0,
            cx: 96.0,
            cy: 72.0,
            distortion: vec![-0.02],
            offset: [0.0, 0.0, 0.0],
            mount_yaw: 0.0,
        }
    }
}

impl CameraConfig {
    pub fn to_camera_model(&self) -> Result<CameraModel, GeometryError> {
        let dist = Distortion::from_coeffs(&self.distortion)?;
        let mount_rot =
            nalgebra::Rotation3::from_euler_angles(0.0, 0.0, self.mount_yaw).into_inner()
                * CameraModel::forward_mount();
        let extrinsic = Pose::from_parts(mount_rot, Vector3::from(self.offset))?;
        CameraModel::new(self.fx, self.fy, self.cx, self.cy, dist, extrinsic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub route: RouteConfig,
    pub classes: Vec<String>,
    pub bands: Vec<LandmarkBand>,
    pub wedge: WedgeConfig,
    pub cameras: Vec<CameraConfig>,
    pub image_width: u32,
    pub image_height: u32,
    /// Half width of the road corridor used for ground labeling.
    pub corridor_half_width: f64,
    /// Height of the vehicle origin above the ground plane.
    pub vehicle_height: f64,
    /// Landmark splat side length in pixels at 10 m depth.
    pub splat_px_at_10m: f64,
    /// Rendering cull distance for landmarks.
    pub cull_range: f64,
    /// Map quantization basis for wedge ranges.
    pub max_range: f64,
    /// Expected clutter features per rendered frame (Poisson).
    pub clutter_per_frame: f64,
    /// Detector jitter applied to sparse feature coordinates.
    pub feature_pixel_noise_px: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 1,
            route: RouteConfig::default(),
            classes: default_class_table(),
            bands: vec![
                LandmarkBand {
                    class: "building".into(),
                    density_per_m: 0.8,
                    lateral_mean: 9.0,
                    lateral_std: 2.0,
                    height_mean: 5.0,
                    height_std: 2.0,
                },
                LandmarkBand {
                    class: "vegetation".into(),
                    density_per_m: 0.5,
                    lateral_mean: 6.0,
                    lateral_std: 1.5,
                    height_mean: 3.0,
                    height_std: 1.0,
                },
                LandmarkBand {
                    class: "pole".into(),
                    density_per_m: 0.25,
                    lateral_mean: 3.5,
                    lateral_std: 0.5,
                    height_mean: 2.5,
                    height_std: 0.5,
                },
                LandmarkBand {
                    class: "traffic_sign".into(),
                    density_per_m: 0.12,
                    lateral_mean: 3.0,
                    lateral_std: 0.5,
                    height_mean: 2.0,
                    height_std: 0.3,
                },
            ],
            wedge: WedgeConfig::default(),
            cameras: vec![
                CameraConfig { offset: [0.0, 0.5, 0.0], ..CameraConfig::default() },
                CameraConfig { offset: [0.0, -0.5, 0.0], ..CameraConfig::default() },
            ],
            image_width: 192,
            image_height: 144,
            corridor_half_width: 4.0,
            vehicle_height: 1.5,
            splat_px_at_10m: 7.0,
            cull_range: 120.0,
            max_range: 200.0,
            clutter_per_frame: 15.0,
            feature_pixel_noise_px: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn class_index(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().position(|c| c == name).map(|i| ClassId(i as u8))
    }

    pub fn rig(&self) -> Result<Vec<CameraModel>, GeometryError> {
        self.cameras.iter().map(|c| c.to_camera_model()).collect()
    }
}

/// Per-season observation corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionModel {
    pub name: String,
    /// Std of per-element Gaussian noise on sparse descriptors (8-bit units).
    pub descriptor_corruption_std: f64,
    /// Extra probability that a detectable landmark yields no feature.
    pub dropout_prob: f64,
    /// Uniform off-diagonal confusion rate of the segmenter.
    pub confusion_error_rate: f64,
    /// Targeted confusions layered on top of the uniform rate.
    pub confusion_overrides: Vec<ConfusionOverride>,
    /// Side length of the spatially correlated label-noise blocks.
    pub blob_px: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionOverride {
    pub from: String,
    pub to: String,
    pub prob: f64,
}

impl Default for ConditionModel {
    fn default() -> Self {
        ConditionModel {
            name: "clean".into(),
            descriptor_corruption_std: 0.0,
            dropout_prob: 0.0,
            confusion_error_rate: 0.0,
            confusion_overrides: Vec::new(),
            blob_px: 4,
        }
    }
}

impl ConditionModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(SimError::BadConfig(format!(
                "dropout probability {} outside [0, 1]",
                self.dropout_prob
            )));
        }
        if self.descriptor_corruption_std < 0.0 {
            return Err(SimError::BadConfig("descriptor corruption std must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn noise_model(&self, classes: &[String]) -> Result<SegmenterNoiseModel, SimError> {
        self.validate()?;
        let mut model = SegmenterNoiseModel::uniform_error(classes.len(), self.confusion_error_rate, self.blob_px)
            .map_err(SimError::BadConfig)?;
        for o in &self.confusion_overrides {
            let from = classes
                .iter()
                .position(|c| *c == o.from)
                .ok_or_else(|| SimError::BadConfig(format!("unknown class {:?}", o.from)))?;
            let to = classes
                .iter()
                .position(|c| *c == o.to)
                .ok_or_else(|| SimError::BadConfig(format!("unknown class {:?}", o.to)))?;
            model.add_confusion(from, to, o.prob).map_err(SimError::BadConfig)?;
        }
        Ok(model)
    }
}

/// A generated world: truth maps (semantic and dense variants over the
/// same landmarks), the ground-truth trajectory and the camera rig.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub semantic_map: SemanticMap,
    pub dense_map: SemanticMap,
    pub trajectory: Vec<(Pose, f64)>,
    pub rig: Vec<CameraModel>,
}

/// Route sampled at the travel rate: poses with tangent heading.
fn sample_route(cfg: &RouteConfig, vehicle_height: f64) -> Result<Vec<(Pose, f64)>, SimError> {
    if !(cfg.speed_mps > 0.0) || !(cfg.rate_hz > 0.0) {
        return Err(SimError::BadConfig("route speed and rate must be positive".into()));
    }
    let step = cfg.speed_mps / cfg.rate_hz;
    let dt = 1.0 / cfg.rate_hz;
    let positions_at = |s: f64| -> (Vector2<f64>, f64) {
        match &cfg.shape {
            RouteShape::Straight { length: _ } => (Vector2::new(s, 0.0), 0.0),
            RouteShape::Circle { radius } => {
                // Centered on the world origin: counter-clockwise from
                // (r, 0) heading north.
                let phi = s / radius;
                (
                    Vector2::new(radius * phi.cos(), radius * phi.sin()),
                    phi + std::f64::consts::FRAC_PI_2,
                )
            }
            RouteShape::Waypoints { .. } => unreachable!("handled separately"),
        }
    };
    let length = route_length(&cfg.shape)?;
    if !(length > 0.0) {
        return Err(SimError::BadConfig("route length must be positive".into()));
    }
    let n = (length / step).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    match &cfg.shape {
        RouteShape::Waypoints { points, closed } => {
            let mut pts: Vec<Vector3<f64>> = points.iter().map(|p| Vector3::from(*p)).collect();
            if pts.len() < 2 {
                return Err(SimError::BadConfig("waypoint route needs at least two points".into()));
            }
            if *closed {
                pts.push(pts[0]);
            }
            let mut seg = 0usize;
            let mut seg_start = 0.0f64;
            for i in 0..n {
                let s = i as f64 * step;
                while seg + 2 < pts.len() && s > seg_start + (pts[seg + 1] - pts[seg]).norm() {
                    seg_start += (pts[seg + 1] - pts[seg]).norm();
                    seg += 1;
                }
                let dir = pts[seg + 1] - pts[seg];
                let len = dir.norm().max(1e-12);
                let f = ((s - seg_start) / len).clamp(0.0, 1.0);
                let p = pts[seg] + dir * f;
                let yaw = dir.y.atan2(dir.x);
                out.push((
                    Pose::from_enu_ypr(p.x, p.y, p.z + vehicle_height, yaw, 0.0, 0.0),
                    i as f64 * dt,
                ));
            }
        }
        _ => {
            for i in 0..n {
                let s = i as f64 * step;
                let (p, yaw) = positions_at(s);
                out.push((
                    Pose::from_enu_ypr(p.x, p.y, vehicle_height, yaw, 0.0, 0.0),
                    i as f64 * dt,
                ));
            }
        }
    }
    Ok(out)
}

pub fn route_length(shape: &RouteShape) -> Result<f64, SimError> {
    Ok(match shape {
        RouteShape::Straight { length } => *length,
        RouteShape::Circle { radius } => TAU * radius,
        RouteShape::Waypoints { points, closed } => {
            let mut pts: Vec<Vector3<f64>> = points.iter().map(|p| Vector3::from(*p)).collect();
            if pts.len() < 2 {
                return Err(SimError::BadConfig("waypoint route needs at least two points".into()));
            }
            if *closed {
                pts.push(pts[0]);
            }
            pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
        }
    })
}

/// Build the synthetic world for a config: trajectory, landmark field
/// with wedges oriented toward the route, near-pure semantic truth
/// descriptors, random dense base descriptors, and the class prior
/// measured from a clean render pass over the mapping trajectory.
pub fn generate_world(config: &WorldConfig) -> Result<World, SimError> {
    if config.classes.is_empty() || config.classes.len() > 32 {
        return Err(SimError::BadConfig("class table must have 1..=32 entries".into()));
    }
    for required in ["road", "terrain", "sky"] {
        if config.class_index(required).is_none() {
            return Err(SimError::BadConfig(format!("class table must contain {required:?}")));
        }
    }
    if config.cameras.is_empty() {
        return Err(SimError::BadConfig("at least one camera is required".into()));
    }
    let rig = config.rig()?;
    let trajectory = sample_route(&config.route, config.vehicle_height)?;
    let length = route_length(&config.route.shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n_classes = config.classes.len();
    let mut positions = Vec::new();
    let mut classes = Vec::new();
    let mut wedges = Vec::new();
    for band in &config.bands {
        let class = config
            .class_index(&band.class)
            .ok_or_else(|| SimError::BadConfig(format!("unknown landmark class {:?}", band.class)))?;
        if band.density_per_m < 0.0 {
            return Err(SimError::BadConfig("landmark density must be nonnegative".into()));
        }
        let expected = band.density_per_m * length;
        let count = if expected > 0.0 {
            Poisson::new(expected)
                .map_err(|e| SimError::BadConfig(format!("bad density: {e}")))?
                .sample(&mut rng) as usize
        } else {
            0
        };
        let step_m = config.route.speed_mps / config.route.rate_hz;
        for _ in 0..count {
            let s: f64 = rng.random_range(0.0..length);
            let idx_at = |arc: f64| -> usize {
                ((arc / step_m).round() as usize).min(trajectory.len() - 1)
            };
            let anchor = trajectory[idx_at(s)].0;
            let (yaw, _, _) = anchor.ypr();
            let normal = Vector2::new(-yaw.sin(), yaw.cos());
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let gauss = |rng: &mut ChaCha8Rng, mean: f64, std: f64| -> f64 {
                mean + std * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
            };
            let lateral = side * gauss(&mut rng, band.lateral_mean, band.lateral_std).max(1.0);
            let height = gauss(&mut rng, band.height_mean, band.height_std).max(0.3);
            let at = anchor.translation();
            let pos = Vector3::new(at.x + normal.x * lateral, at.y + normal.y * lateral, height);
            // Aim the wedge at the approach stretch of the route, where a
            // forward-facing camera actually observes the landmark.
            let approach = trajectory[idx_at((s - config.wedge.approach_m).max(0.0))]
                .0
                .translation();
            let bearing = (approach.y - pos.y).atan2(approach.x - pos.x);
            let half: f64 = rng.random_range(config.wedge.half_angle_min..=config.wedge.half_angle_max);
            let drawn: f64 = rng.random_range(config.wedge.range_min..=config.wedge.range_max);
            let dist = (Vector2::new(approach.x, approach.y) - Vector2::new(pos.x, pos.y)).norm();
            let range = drawn.max(dist + 10.0).min(config.max_range);
            let rho: f64 =
                rng.random_range(config.wedge.detection_prob_min..=config.wedge.detection_prob_max);
            positions.push(pos);
            classes.push(class);
            wedges.push(VisibilityWedge::new(bearing - half, bearing + half, range, rho)?);
        }
    }

    // Near-pure semantic truth descriptors: 0.9 on the class, the rest on
    // the two following table entries.
    let semantic_points: Vec<MapPoint> = positions
        .iter()
        .zip(&classes)
        .zip(&wedges)
        .map(|((pos, class), wedge)| {
            let mut weights = vec![0.0f64; n_classes];
            weights[class.index()] = 0.90;
            weights[(class.index() + 1) % n_classes] += 0.06;
            weights[(class.index() + 2) % n_classes] += 0.04;
            MapPoint {
                position: *pos,
                descriptor: Descriptor::Semantic(SemanticDescriptor::from_histogram(&weights).unwrap()),
                wedge: *wedge,
            }
        })
        .collect();
    let dense_points: Vec<MapPoint> = positions
        .iter()
        .zip(&wedges)
        .map(|(pos, wedge)| MapPoint {
            position: *pos,
            descriptor: Descriptor::Dense((0..DENSE_DESCRIPTOR_BYTES).map(|_| rng.random()).collect()),
            wedge: *wedge,
        })
        .collect();

    let road: Vec<Pose> = trajectory.iter().map(|(p, _)| *p).collect();
    // Uniform placeholder priors; replaced below by the rendered pass.
    let uniform = vec![1.0 / n_classes as f64; n_classes];
    let mut world = World {
        config: config.clone(),
        semantic_map: SemanticMap::new(
            config.classes.clone(),
            semantic_points,
            uniform.clone(),
            uniform.clone(),
            road.clone(),
            config.max_range,
        )?,
        dense_map: SemanticMap::new(
            config.classes.clone(),
            dense_points,
            uniform.clone(),
            uniform,
            road.clone(),
            config.max_range,
        )?,
        trajectory,
        rig,
    };

    // Class prior from a clean mapping render pass (every 5th frame,
    // camera 0), then the occluded PMF as its dynamic-boosted variant.
    let renderer = Renderer::new(&world)?;
    let mut pass_labels: Vec<Vec<ClassId>> = Vec::new();
    for (pose, _) in world.trajectory.iter().step_by(5) {
        pass_labels.push(renderer.render_clean(pose, 0)?.labels().to_vec());
    }
    let prior = class_prior_from_images(pass_labels.iter().map(|l| l.as_slice()), n_classes)?;
    let dynamic: Vec<ClassId> = DYNAMIC_CLASSES
        .iter()
        .filter_map(|name| config.class_index(name))
        .collect();
    let occluded = occluded_pmf(&prior, &dynamic, OCCLUDED_BOOST)?;
    world.semantic_map = SemanticMap::new(
        config.classes.clone(),
        world.semantic_map.points().to_vec(),
        prior.clone(),
        occluded.clone(),
        road.clone(),
        config.max_range,
    )?;
    world.dense_map = SemanticMap::new(
        config.classes.clone(),
        world.dense_map.points().to_vec(),
        prior,
        occluded,
        road,
        config.max_range,
    )?;
    Ok(world)
}
