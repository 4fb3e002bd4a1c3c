//! Dataset file formats: trajectory/odometry/estimate CSV, packed
//! label-raster sequences, sparse-feature sequences and PGM export.
//! Binary formats are little-endian; full layouts in `docs/FORMATS.md`.

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::geometry::Pose;
use crate::map::ClassId;
use crate::motion::OdometryReading;
use crate::semantic::SegmentedImage;
use crate::sift::{Feature, SparseFeatureSet};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
}

fn format_err<T>(msg: impl Into<String>) -> Result<T, IoError> {
    Err(IoError::Format(msg.into()))
}

// ---- trajectory CSV -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    e: f64,
    n: f64,
    u: f64,
    yaw: f64,
    pitch: f64,
    roll: f64,
}

pub fn write_trajectory_csv<W: Write>(w: W, poses: &[(Pose, f64)]) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    for (pose, t) in poses {
        let s = pose.to_state();
        out.serialize(TrajectoryRow { t: *t, e: s[0], n: s[1], u: s[2], yaw: s[3], pitch: s[4], roll: s[5] })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Vec<(Pose, f64)>, IoError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let row: TrajectoryRow = row?;
        out.push((Pose::from_enu_ypr(row.e, row.n, row.u, row.yaw, row.pitch, row.roll), row.t));
    }
    Ok(out)
}

pub fn write_trajectory_file(path: &Path, poses: &[(Pose, f64)]) -> Result<(), IoError> {
    write_trajectory_csv(BufWriter::new(File::create(path)?), poses)
}

pub fn read_trajectory_file(path: &Path) -> Result<Vec<(Pose, f64)>, IoError> {
    read_trajectory_csv(BufReader::new(File::open(path)?))
}

// ---- odometry CSV ---------------------------------------------------------

// Angular-rate columns follow the state ordering: z, y, x.
#[derive(Debug, Serialize, Deserialize)]
struct OdometryRow {
    t: f64,
    dt: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    wz: f64,
    wy: f64,
    wx: f64,
}

pub fn write_odometry_csv<W: Write>(w: W, readings: &[(f64, OdometryReading)]) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    for (t, r) in readings {
        out.serialize(OdometryRow {
            t: *t,
            dt: r.dt,
            vx: r.v.x,
            vy: r.v.y,
            vz: r.v.z,
            wz: r.omega.z,
            wy: r.omega.y,
            wx: r.omega.x,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_odometry_csv<R: Read>(r: R) -> Result<Vec<(f64, OdometryReading)>, IoError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let row: OdometryRow = row?;
        let reading = OdometryReading::new(
            Vector3::new(row.vx, row.vy, row.vz),
            Vector3::new(row.wx, row.wy, row.wz),
            row.dt,
        )
        .map_err(|e| IoError::Format(e.to_string()))?;
        out.push((row.t, reading));
    }
    Ok(out)
}

pub fn write_odometry_file(path: &Path, readings: &[(f64, OdometryReading)]) -> Result<(), IoError> {
    write_odometry_csv(BufWriter::new(File::create(path)?), readings)
}

pub fn read_odometry_file(path: &Path) -> Result<Vec<(f64, OdometryReading)>, IoError> {
    read_odometry_csv(BufReader::new(File::open(path)?))
}

// ---- estimate CSV ---------------------------------------------------------

/// One per-step filter output row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    pub e: f64,
    pub n: f64,
    pub u: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    /// Effective sample size (particle filter) or 0 for the UKF.
    pub ess: f64,
    /// Assigned pixels (semantic) or RANSAC inliers (sparse).
    pub n_lambda: f64,
}

impl EstimateRow {
    pub fn pose(&self) -> Pose {
        Pose::from_enu_ypr(self.e, self.n, self.u, self.yaw, self.pitch, self.roll)
    }
}

pub fn write_estimates_csv<W: Write>(w: W, rows: &[EstimateRow]) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_estimates_csv<R: Read>(r: R) -> Result<Vec<EstimateRow>, IoError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_estimates_file(path: &Path, rows: &[EstimateRow]) -> Result<(), IoError> {
    write_estimates_csv(BufWriter::new(File::create(path)?), rows)
}

pub fn read_estimates_file(path: &Path) -> Result<Vec<EstimateRow>, IoError> {
    read_estimates_csv(BufReader::new(File::open(path)?))
}

// ---- label sequence -------------------------------------------------------

const LSEQ_MAGIC: &[u8; 4] = b"LSEQ";
const FSEQ_MAGIC: &[u8; 4] = b"FSEQ";
const LMID_MAGIC: &[u8; 4] = b"LMID";
const SEQ_VERSION: u8 = 1;

/// One segmented frame with its timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFrame {
    pub t: f64,
    pub image: SegmentedImage,
}

pub fn write_label_sequence<W: Write>(mut w: W, frames: &[LabelFrame]) -> Result<(), IoError> {
    let (width, height) = match frames.first() {
        Some(f) => (f.image.width, f.image.height),
        None => (0, 0),
    };
    w.write_all(LSEQ_MAGIC)?;
    w.write_u8(SEQ_VERSION)?;
    w.write_u16::<LE>(width as u16)?;
    w.write_u16::<LE>(height as u16)?;
    w.write_u32::<LE>(frames.len() as u32)?;
    for f in frames {
        if f.image.width != width || f.image.height != height {
            return format_err("label frames must share one resolution");
        }
        w.write_f64::<LE>(f.t)?;
        w.write_u8(f.image.camera_id)?;
        let bytes: Vec<u8> = f.image.labels().iter().map(|c| c.0).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_label_sequence<R: Read>(mut r: R) -> Result<Vec<LabelFrame>, IoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LSEQ_MAGIC {
        return format_err("bad label-sequence magic");
    }
    if r.read_u8()? != SEQ_VERSION {
        return format_err("unsupported label-sequence version");
    }
    let width = r.read_u16::<LE>()? as u32;
    let height = r.read_u16::<LE>()? as u32;
    let count = r.read_u32::<LE>()?;
    let mut frames = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let t = r.read_f64::<LE>()?;
        let camera_id = r.read_u8()?;
        let mut bytes = vec![0u8; (width * height) as usize];
        r.read_exact(&mut bytes)?;
        let labels = bytes.into_iter().map(ClassId).collect();
        let image = SegmentedImage::new(width, height, camera_id, labels)
            .map_err(|e| IoError::Format(e.to_string()))?;
        frames.push(LabelFrame { t, image });
    }
    Ok(frames)
}

pub fn write_label_sequence_file(path: &Path, frames: &[LabelFrame]) -> Result<(), IoError> {
    write_label_sequence(BufWriter::new(File::create(path)?), frames)
}

pub fn read_label_sequence_file(path: &Path) -> Result<Vec<LabelFrame>, IoError> {
    read_label_sequence(BufReader::new(File::open(path)?))
}

// ---- PGM ------------------------------------------------------------------

/// Single-channel 8-bit label raster as binary PGM (P5).
pub fn write_pgm<W: Write>(mut w: W, image: &SegmentedImage) -> Result<(), IoError> {
    write!(w, "P5\n{} {}\n255\n", image.width, image.height)?;
    let bytes: Vec<u8> = image.labels().iter().map(|c| c.0).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm<R: Read>(mut r: R, camera_id: u8) -> Result<SegmentedImage, IoError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    // Header: "P5", whitespace-separated width, height, maxval, one byte.
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < data.len() {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&data[start..pos]).map_err(|_| IoError::Format("bad PGM header".into()))?.to_string());
    }
    if fields.len() < 4 || fields[0] != "P5" {
        return format_err("not a binary PGM");
    }
    let width: u32 = fields[1].parse().map_err(|_| IoError::Format("bad PGM width".into()))?;
    let height: u32 = fields[2].parse().map_err(|_| IoError::Format("bad PGM height".into()))?;
    if fields[3] != "255" {
        return format_err("PGM maxval must be 255");
    }
    pos += 1; // single whitespace after maxval
    let need = (width * height) as usize;
    if data.len() < pos + need {
        return format_err("truncated PGM");
    }
    let labels = data[pos..pos + need].iter().map(|&b| ClassId(b)).collect();
    SegmentedImage::new(width, height, camera_id, labels).map_err(|e| IoError::Format(e.to_string()))
}

// ---- feature sequence -----------------------------------------------------

/// One sparse-feature frame with its timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub t: f64,
    pub features: SparseFeatureSet,
}

/// Descriptor elements are stored quantized to 8 bits; coordinates as
/// f32 normalized units.
pub fn write_feature_sequence<W: Write>(mut w: W, frames: &[FeatureFrame], desc_dim: usize) -> Result<(), IoError> {
    w.write_all(FSEQ_MAGIC)?;
    w.write_u8(SEQ_VERSION)?;
    w.write_u16::<LE>(desc_dim as u16)?;
    w.write_u32::<LE>(frames.len() as u32)?;
    for f in frames {
        w.write_f64::<LE>(f.t)?;
        w.write_u8(f.features.camera_id)?;
        w.write_u32::<LE>(f.features.len() as u32)?;
        for feat in f.features.features() {
            if feat.descriptor.len() != desc_dim {
                return format_err("feature descriptor length mismatch");
            }
            w.write_f32::<LE>(feat.coord.x as f32)?;
            w.write_f32::<LE>(feat.coord.y as f32)?;
            for &v in &feat.descriptor {
                w.write_u8(v.round().clamp(0.0, 255.0) as u8)?;
            }
        }
    }
    Ok(())
}

pub fn read_feature_sequence<R: Read>(mut r: R) -> Result<Vec<FeatureFrame>, IoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FSEQ_MAGIC {
        return format_err("bad feature-sequence magic");
    }
    if r.read_u8()? != SEQ_VERSION {
        return format_err("unsupported feature-sequence version");
    }
    let desc_dim = r.read_u16::<LE>()? as usize;
    let count = r.read_u32::<LE>()?;
    let mut frames = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let t = r.read_f64::<LE>()?;
        let camera_id = r.read_u8()?;
        let n = r.read_u32::<LE>()? as usize;
        let mut features = Vec::with_capacity(n);
        for _ in 0..n {
            let x = r.read_f32::<LE>()? as f64;
            let y = r.read_f32::<LE>()? as f64;
            let mut desc = vec![0u8; desc_dim];
            r.read_exact(&mut desc)?;
            features.push(Feature {
                coord: Vector2::new(x, y),
                descriptor: desc.into_iter().map(|b| b as f64).collect(),
            });
        }
        let set = SparseFeatureSet::new(camera_id, features).map_err(|e| IoError::Format(e.to_string()))?;
        frames.push(FeatureFrame { t, features: set });
    }
    Ok(frames)
}

pub fn write_feature_sequence_file(path: &Path, frames: &[FeatureFrame], desc_dim: usize) -> Result<(), IoError> {
    write_feature_sequence(BufWriter::new(File::create(path)?), frames, desc_dim)
}

pub fn read_feature_sequence_file(path: &Path) -> Result<Vec<FeatureFrame>, IoError> {
    read_feature_sequence(BufReader::new(File::open(path)?))
}

/// Map-building sidecar: per frame, one landmark index per feature
/// (`u32::MAX` marks clutter). Never read by the localization path.
pub fn write_landmark_ids<W: Write>(mut w: W, frames: &[Vec<u32>]) -> Result<(), IoError> {
    w.write_all(LMID_MAGIC)?;
    w.write_u8(SEQ_VERSION)?;
    w.write_u32::<LE>(frames.len() as u32)?;
    for ids in frames {
        w.write_u32::<LE>(ids.len() as u32)?;
        for &id in ids {
            w.write_u32::<LE>(id)?;
        }
    }
    Ok(())
}

pub fn read_landmark_ids<R: Read>(mut r: R) -> Result<Vec<Vec<u32>>, IoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LMID_MAGIC {
        return format_err("bad landmark-id magic");
    }
    if r.read_u8()? != SEQ_VERSION {
        return format_err("unsupported landmark-id version");
    }
    let count = r.read_u32::<LE>()?;
    let mut frames = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let n = r.read_u32::<LE>()? as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(r.read_u32::<LE>()?);
        }
        frames.push(ids);
    }
    Ok(frames)
}

pub fn write_landmark_ids_file(path: &Path, frames: &[Vec<u32>]) -> Result<(), IoError> {
    write_landmark_ids(BufWriter::new(File::create(path)?), frames)
}

pub fn read_landmark_ids_file(path: &Path) -> Result<Vec<Vec<u32>>, IoError> {
    read_landmark_ids(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trajectory_roundtrip() {
        let poses: Vec<(Pose, f64)> = (0..5)
            .map(|i| (Pose::from_enu_ypr(i as f64, -0.5 * i as f64, 1.5, 0.1 * i as f64, 0.01, -0.02), i as f64 * 0.1))
            .collect();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &poses).unwrap();
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), poses.len());
        for ((a, ta), (b, tb)) in poses.iter().zip(&back) {
            assert_eq!(ta, tb);
            assert_relative_eq!(a.translation(), b.translation(), epsilon = 1e-12);
        }
        // Header spells the column order.
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,e,n,u,yaw,pitch,roll\n"));
    }

    #[test]
    fn odometry_roundtrip_orders_angular_rates_zyx() {
        let readings = vec![(
            0.1,
            OdometryReading::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.01, 0.02, 0.03), 0.1).unwrap(),
        )];
        let mut buf = Vec::new();
        write_odometry_csv(&mut buf, &readings).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,dt,vx,vy,vz,wz,wy,wx\n"));
        // wz column carries omega.z.
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[5], "0.03");
        assert_eq!(row[7], "0.01");
        let back = read_odometry_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0].1, readings[0].1);
    }

    #[test]
    fn label_sequence_roundtrip_and_pgm() {
        let img = SegmentedImage::new(4, 3, 1, (0..12).map(|i| ClassId(i % 5)).collect()).unwrap();
        let frames = vec![
            LabelFrame { t: 0.0, image: img.clone() },
            LabelFrame { t: 0.1, image: img.clone() },
        ];
        let mut buf = Vec::new();
        write_label_sequence(&mut buf, &frames).unwrap();
        let back = read_label_sequence(buf.as_slice()).unwrap();
        assert_eq!(back, frames);
        assert!(read_label_sequence(&buf[..10]).is_err());

        let mut pgm = Vec::new();
        write_pgm(&mut pgm, &img).unwrap();
        let back = read_pgm(pgm.as_slice(), 1).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn feature_sequence_roundtrip_quantizes_descriptors() {
        let set = SparseFeatureSet::new(
            0,
            vec![Feature {
                coord: Vector2::new(0.125, -0.25),
                descriptor: vec![3.4, 200.6, 255.9, -2.0],
            }],
        )
        .unwrap();
        let frames = vec![FeatureFrame { t: 0.5, features: set }];
        let mut buf = Vec::new();
        write_feature_sequence(&mut buf, &frames, 4).unwrap();
        let back = read_feature_sequence(buf.as_slice()).unwrap();
        let feat = &back[0].features.features()[0];
        assert_eq!(feat.descriptor, vec![3.0, 201.0, 255.0, 0.0]);
        assert_relative_eq!(feat.coord.x, 0.125, epsilon = 1e-7);
        assert!(read_feature_sequence(&buf[..6]).is_err());
    }

    #[test]
    fn landmark_id_roundtrip() {
        let frames = vec![vec![1, 2, u32::MAX], vec![], vec![7]];
        let mut buf = Vec::new();
        write_landmark_ids(&mut buf, &frames).unwrap();
        assert_eq!(read_landmark_ids(buf.as_slice()).unwrap(), frames);
    }

    #[test]
    fn estimate_rows_roundtrip() {
        let rows = vec![EstimateRow {
            t: 1.5,
            e: 2.0,
            n: -3.0,
            u: 1.0,
            yaw: 0.3,
            pitch: 0.0,
            roll: -0.01,
            ess: 250.0,
            n_lambda: 42.0,
        }];
        let mut buf = Vec::new();
        write_estimates_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,e,n,u,yaw,pitch,roll,ess,n_lambda\n"));
        assert_eq!(read_estimates_csv(buf.as_slice()).unwrap(), rows);
    }
}
