//! Compact binary map format.
//!
//! Little-endian throughout. Layout:
//!
//! ```text
//! magic "SMAP" | version u8 | flags u8 (bit0: dense) | class count u8
//! per class: name length u8, UTF-8 bytes
//! max_range f32
//! class_prior  [count × f32]
//! occluded_pmf [count × f32]
//! road pose count u32, per pose 6 × f32 (e, n, u, yaw, pitch, roll)
//! point count u64, then fixed-size point records
//! ```
//!
//! Point record: position 3 × f32, wedge `gamma_a` u8 (2π/256 steps),
//! arc span u8 (2π/255 steps), range u8 (max_range/255 steps, minimum
//! one step), detection probability u8 (1/255 steps), then the
//! descriptor: three 5-bit class ids plus three 8-bit probabilities
//! packed into 39 bits (5 bytes with one pad bit) for semantic maps, or
//! 128 raw bytes for dense maps. Decoded probability vectors are
//! renormalized; per-field error bounds are listed in
//! `docs/FORMATS.md`.

use byteorder::{ReadBytesExt, WriteBytesExt, LE};

use std::f64::consts::TAU;
use std::io::Read;

use super::{
    ClassId, Descriptor, DescriptorKind, MapError, MapPoint, SemanticDescriptor, SemanticMap,
    DESCRIPTOR_TOP_K, MAX_SEMANTIC_CLASSES,
};
use crate::geometry::{Pose, VisibilityWedge};

const MAGIC: &[u8; 4] = b"SMAP";
const VERSION: u8 = 1;
const FLAG_DENSE: u8 = 0b0000_0001;

/// Stored position size: three 32-bit floats.
pub const POSITION_BYTES: usize = 12;
/// Stored visibility size: four 8-bit fields.
pub const WEDGE_BYTES: usize = 4;
/// Packed semantic descriptor width before byte padding.
pub const SEMANTIC_DESCRIPTOR_BITS: usize = 39;
/// Semantic descriptor bytes on disk (39 bits padded).
pub const SEMANTIC_DESCRIPTOR_BYTES: usize = 5;
/// Dense descriptor: 128 elements at 8-bit resolution.
pub const DENSE_DESCRIPTOR_BYTES: usize = 128;

/// On-disk bytes of one point record for the given descriptor kind.
pub fn point_record_bytes(kind: DescriptorKind) -> usize {
    POSITION_BYTES
        + WEDGE_BYTES
        + match kind {
            DescriptorKind::Semantic => SEMANTIC_DESCRIPTOR_BYTES,
            DescriptorKind::Dense => DENSE_DESCRIPTOR_BYTES,
        }
}

pub fn encode_map(map: &SemanticMap) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(match map.kind() {
        DescriptorKind::Dense => FLAG_DENSE,
        DescriptorKind::Semantic => 0,
    });
    out.push(map.num_classes() as u8);
    for name in map.class_table() {
        let bytes = name.as_bytes();
        out.push(bytes.len() as u8);
        out.extend_from_slice(bytes);
    }
    out.write_f32::<LE>(map.max_range() as f32).unwrap();
    for &p in map.class_prior() {
        out.write_f32::<LE>(p as f32).unwrap();
    }
    for &p in map.occluded_pmf() {
        out.write_f32::<LE>(p as f32).unwrap();
    }
    out.write_u32::<LE>(map.road_trajectory().len() as u32).unwrap();
    for pose in map.road_trajectory() {
        for v in pose.to_state() {
            out.write_f32::<LE>(v as f32).unwrap();
        }
    }
    out.write_u64::<LE>(map.points().len() as u64).unwrap();
    for point in map.points() {
        for i in 0..3 {
            out.write_f32::<LE>(point.position[i] as f32).unwrap();
        }
        let w = &point.wedge;
        out.push(quantize_angle(w.gamma_a()));
        out.push((w.span() / TAU * 255.0).round().clamp(0.0, 255.0) as u8);
        let range_q = ((w.range() / map.max_range() * 255.0).round() as i64).clamp(1, 255) as u8;
        out.push(range_q);
        out.push((w.detection_prob() * 255.0).round() as u8);
        match &point.descriptor {
            Descriptor::Semantic(d) => out.extend_from_slice(&pack_semantic(d)),
            Descriptor::Dense(d) => out.extend_from_slice(d),
        }
    }
    out
}

fn quantize_angle(a: f64) -> u8 {
    // 2π/256 steps over [0, 2π); 256 wraps to 0.
    ((a.rem_euclid(TAU) / TAU * 256.0).round() as u32 % 256) as u8
}

fn pack_semantic(d: &SemanticDescriptor) -> [u8; SEMANTIC_DESCRIPTOR_BYTES] {
    let mut bits: u64 = 0;
    for (slot, (class, p)) in d.entries().iter().take(DESCRIPTOR_TOP_K).enumerate() {
        let q = (p * 255.0).round().clamp(0.0, 255.0) as u64;
        let id = (class.0 as u64) & 0x1f;
        bits |= (id | (q << 5)) << (13 * slot);
    }
    let raw = bits.to_le_bytes();
    [raw[0], raw[1], raw[2], raw[3], raw[4]]
}

fn unpack_semantic(raw: &[u8; SEMANTIC_DESCRIPTOR_BYTES], num_classes: usize) -> Result<SemanticDescriptor, MapError> {
    let mut buf = [0u8; 8];
    buf[..SEMANTIC_DESCRIPTOR_BYTES].copy_from_slice(raw);
    let bits = u64::from_le_bytes(buf);
    let mut entries = Vec::new();
    for slot in 0..DESCRIPTOR_TOP_K {
        let field = bits >> (13 * slot);
        let id = (field & 0x1f) as usize;
        let q = (field >> 5) & 0xff;
        if q == 0 {
            continue;
        }
        if id >= num_classes {
            return Err(MapError::Decode(format!(
                "descriptor class id {id} out of range ({num_classes} classes)"
            )));
        }
        entries.push((ClassId(id as u8), q as f64 / 255.0));
    }
    if entries.is_empty() {
        return Err(MapError::Decode("semantic descriptor with no mass".into()));
    }
    let sum: f64 = entries.iter().map(|(_, p)| p).sum();
    for e in &mut entries {
        e.1 /= sum;
    }
    entries.sort_by_key(|(c, _)| *c);
    Ok(SemanticDescriptor { entries })
}

pub fn decode_map(bytes: &[u8]) -> Result<SemanticMap, MapError> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(MapError::Decode("bad magic bytes".into()));
    }
    let version = read_u8(&mut r)?;
    if version != VERSION {
        return Err(MapError::Decode(format!("unsupported version {version}")));
    }
    let flags = read_u8(&mut r)?;
    if flags & !FLAG_DENSE != 0 {
        return Err(MapError::Decode(format!("unknown flags {flags:#04x}")));
    }
    let kind = if flags & FLAG_DENSE != 0 {
        DescriptorKind::Dense
    } else {
        DescriptorKind::Semantic
    };
    let num_classes = read_u8(&mut r)? as usize;
    if num_classes == 0 {
        return Err(MapError::Decode("empty class table".into()));
    }
    if kind == DescriptorKind::Semantic && num_classes > MAX_SEMANTIC_CLASSES {
        return Err(MapError::TooManyClasses(num_classes));
    }
    let mut class_table = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let len = read_u8(&mut r)? as usize;
        let mut name = vec![0u8; len];
        read_exact(&mut r, &mut name)?;
        class_table.push(String::from_utf8(name).map_err(|_| MapError::Decode("class name not UTF-8".into()))?);
    }
    let max_range = read_f32(&mut r)? as f64;
    if !(max_range > 0.0) {
        return Err(MapError::Decode(format!("bad max range {max_range}")));
    }
    let class_prior = read_renormalized_pmf(&mut r, num_classes)?;
    let occluded = read_renormalized_pmf(&mut r, num_classes)?;
    let n_road = r.read_u32::<LE>().map_err(truncated)? as usize;
    let mut road = Vec::with_capacity(n_road);
    for _ in 0..n_road {
        let mut s = [0.0f64; 6];
        for v in &mut s {
            *v = read_f32(&mut r)? as f64;
        }
        road.push(Pose::from_state(&s));
    }
    let n_points = r.read_u64::<LE>().map_err(truncated)? as usize;
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let mut pos = [0.0f64; 3];
        for v in &mut pos {
            *v = read_f32(&mut r)? as f64;
        }
        let gamma_a = read_u8(&mut r)? as f64 / 256.0 * TAU;
        let span = read_u8(&mut r)? as f64 / 255.0 * TAU;
        let range = read_u8(&mut r)?.max(1) as f64 / 255.0 * max_range;
        let rho = read_u8(&mut r)? as f64 / 255.0;
        let wedge = VisibilityWedge::with_span(gamma_a, span, range, rho)
            .map_err(|e| MapError::Decode(format!("bad wedge: {e}")))?;
        let descriptor = match kind {
            DescriptorKind::Semantic => {
                let mut raw = [0u8; SEMANTIC_DESCRIPTOR_BYTES];
                read_exact(&mut r, &mut raw)?;
                Descriptor::Semantic(unpack_semantic(&raw, num_classes)?)
            }
            DescriptorKind::Dense => {
                let mut raw = vec![0u8; DENSE_DESCRIPTOR_BYTES];
                read_exact(&mut r, &mut raw)?;
                Descriptor::Dense(raw)
            }
        };
        points.push(MapPoint {
            position: nalgebra::Vector3::new(pos[0], pos[1], pos[2]),
            descriptor,
            wedge,
        });
    }
    if !r.is_empty() {
        return Err(MapError::Decode(format!("{} trailing bytes", r.len())));
    }
    SemanticMap::new(class_table, points, class_prior, occluded, road, max_range)
}

fn read_renormalized_pmf(r: &mut &[u8], n: usize) -> Result<Vec<f64>, MapError> {
    let mut pmf = Vec::with_capacity(n);
    for _ in 0..n {
        pmf.push(read_f32(r)? as f64);
    }
    let sum: f64 = pmf.iter().sum();
    if !(sum > 0.0) || pmf.iter().any(|&p| p < 0.0) {
        return Err(MapError::Decode("stored PMF is not a distribution".into()));
    }
    for p in &mut pmf {
        *p /= sum;
    }
    Ok(pmf)
}

fn truncated(_: std::io::Error) -> MapError {
    MapError::Decode("truncated stream".into())
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), MapError> {
    Read::read_exact(r, buf).map_err(truncated)
}

fn read_u8(r: &mut &[u8]) -> Result<u8, MapError> {
    r.read_u8().map_err(truncated)
}

fn read_f32(r: &mut &[u8]) -> Result<f32, MapError> {
    r.read_f32::<LE>().map_err(truncated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn semantic_point(rng: &mut ChaCha8Rng, num_classes: u8) -> MapPoint {
        let mut weights = vec![0.0f64; num_classes as usize];
        let k = rng.random_range(1..=3usize);
        for _ in 0..k {
            weights[rng.random_range(0..num_classes) as usize] += rng.random_range(0.05..1.0);
        }
        let ga: f64 = rng.random_range(-4.0..4.0);
        MapPoint {
            position: Vector3::new(
                rng.random_range(-2000.0..2000.0),
                rng.random_range(-2000.0..2000.0),
                rng.random_range(-5.0..30.0),
            ),
            descriptor: Descriptor::Semantic(SemanticDescriptor::from_histogram(&weights).unwrap()),
            wedge: VisibilityWedge::new(
                ga,
                ga + rng.random_range(0.05..TAU),
                rng.random_range(0.5..200.0),
                rng.random_range(0.0..1.0),
            )
            .unwrap(),
        }
    }

    fn random_semantic_map(rng: &mut ChaCha8Rng, n_points: usize) -> SemanticMap {
        let classes: Vec<String> = (0..8).map(|i| format!("class{i}")).collect();
        let mut prior: Vec<f64> = (0..8).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = prior.iter().sum();
        prior.iter_mut().for_each(|p| *p /= s);
        let occ = crate::map::occluded_pmf(&prior, &[ClassId(6), ClassId(7)], 4.0).unwrap();
        let road: Vec<Pose> = (0..3)
            .map(|i| Pose::from_enu_ypr(i as f64 * 10.0, 0.0, 1.5, 0.1 * i as f64, 0.0, 0.0))
            .collect();
        let points = (0..n_points).map(|_| semantic_point(rng, 8)).collect();
        SemanticMap::new(classes, points, prior, occ, road, 200.0).unwrap()
    }

    #[test]
    fn empty_map_roundtrips_as_header_only() {
        let classes = vec!["road".to_string()];
        let map = SemanticMap::new(classes, vec![], vec![1.0], vec![1.0], vec![Pose::identity()], 200.0).unwrap();
        let bytes = encode_map(&map);
        let back = decode_map(&bytes).unwrap();
        assert!(back.points().is_empty());
        assert_eq!(back.class_table(), map.class_table());
        // Header only: magic+version+flags+count, one name record, max_range,
        // two 1-entry PMFs, road count+pose, zero point count.
        let expected = 4 + 1 + 1 + 1 + (1 + 4) + 4 + 4 + 4 + (4 + 24) + 8;
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn semantic_record_is_21_bytes_and_descriptor_39_bits() {
        assert_eq!(point_record_bytes(DescriptorKind::Semantic), 21);
        assert_eq!(SEMANTIC_DESCRIPTOR_BITS, 3 * 5 + 3 * 8);
        assert_eq!(SEMANTIC_DESCRIPTOR_BYTES * 8 - SEMANTIC_DESCRIPTOR_BITS, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = random_semantic_map(&mut rng, 5);
        let bytes = encode_map(&map);
        let header = encode_map(&random_semantic_map(&mut ChaCha8Rng::seed_from_u64(3), 0)).len();
        assert_eq!(bytes.len() - header, 5 * 21);
    }

    #[test]
    fn dense_descriptor_is_128_bytes_and_ratio_exceeds_6() {
        assert_eq!(point_record_bytes(DescriptorKind::Dense), 12 + 4 + 128);
        let dense_bits = DENSE_DESCRIPTOR_BYTES * 8;
        assert!(dense_bits as f64 / SEMANTIC_DESCRIPTOR_BITS as f64 > 6.0);
        assert!(DENSE_DESCRIPTOR_BYTES as f64 / SEMANTIC_DESCRIPTOR_BYTES as f64 > 6.0);
    }

    #[test]
    fn decode_rejects_corrupted_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = random_semantic_map(&mut rng, 3);
        let bytes = encode_map(&map);
        // Bad magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_map(&bad), Err(MapError::Decode(_))));
        // Truncation at every prefix length must error, never panic.
        for cut in 0..bytes.len() {
            assert!(decode_map(&bytes[..cut]).is_err());
        }
        // Class id out of range inside a packed descriptor.
        let mut bad = bytes.clone();
        let header = bytes.len() - 3 * 21;
        let desc_off = header + 12 + 4;
        bad[desc_off] = 0xff; // slot 0: class id 31 with nonzero prob
        assert!(decode_map(&bad).is_err());
    }

    #[test]
    fn roundtrip_within_quantization_on_1000_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(0..20);
            let map = random_semantic_map(&mut rng, n);
            let back = decode_map(&encode_map(&map)).unwrap();
            assert_eq!(back.points().len(), map.points().len());
            for (a, b) in map.points().iter().zip(back.points()) {
                for i in 0..3 {
                    let tol = 1e-7 + a.position[i].abs() * 1e-6;
                    assert!((a.position[i] - b.position[i]).abs() < tol);
                }
                let da = crate::geometry::wrap_angle(a.wedge.gamma_a() - b.wedge.gamma_a()).abs();
                assert!(da <= TAU / 256.0 / 2.0 + 1e-9, "gamma_a err {da}");
                assert!((a.wedge.span() - b.wedge.span()).abs() <= TAU / 255.0 / 2.0 + 1e-9);
                assert!((a.wedge.range() - b.wedge.range()).abs() <= 200.0 / 255.0 + 1e-9);
                assert!((a.wedge.detection_prob() - b.wedge.detection_prob()).abs() <= 0.5 / 255.0 + 1e-9);
                match (&a.descriptor, &b.descriptor) {
                    (Descriptor::Semantic(x), Descriptor::Semantic(y)) => {
                        for (c, p) in x.entries() {
                            let q = y.prob(*c);
                            if *p < 1.0 / 510.0 {
                                continue; // may quantize away
                            }
                            assert!((p - q).abs() <= 2.0 / 255.0, "pmf err {}", (p - q).abs());
                        }
                    }
                    _ => panic!("descriptor kind changed"),
                }
            }
            for (a, b) in map.class_prior().iter().zip(back.class_prior()) {
                assert!((a - b).abs() < 1e-6);
            }
            let s: f64 = back.class_prior().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn full_circle_wedges_survive_roundtrip() {
        let classes = vec!["road".to_string()];
        let point = MapPoint {
            position: Vector3::new(1.0, 2.0, 3.0),
            descriptor: Descriptor::Semantic(SemanticDescriptor::single(ClassId(0))),
            wedge: VisibilityWedge::full_circle(50.0, 0.9).unwrap(),
        };
        let map = SemanticMap::new(classes, vec![point], vec![1.0], vec![1.0], vec![Pose::identity()], 200.0).unwrap();
        let back = decode_map(&encode_map(&map)).unwrap();
        assert!((back.points()[0].wedge.span() - TAU).abs() < 1e-9);
    }

    #[test]
    fn dense_map_roundtrips_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let classes: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let points: Vec<MapPoint> = (0..10)
            .map(|_| MapPoint {
                position: Vector3::new(rng.random_range(-10.0..10.0), 0.0, 1.0),
                descriptor: Descriptor::Dense((0..DENSE_DESCRIPTOR_BYTES).map(|_| rng.random()).collect()),
                wedge: VisibilityWedge::full_circle(30.0, 0.8).unwrap(),
            })
            .collect();
        let map = SemanticMap::new(
            classes,
            points,
            vec![0.25; 4],
            vec![0.25; 4],
            vec![Pose::identity()],
            200.0,
        )
        .unwrap();
        let back = decode_map(&encode_map(&map)).unwrap();
        for (a, b) in map.points().iter().zip(back.points()) {
            assert_eq!(a.descriptor, b.descriptor);
        }
        assert_eq!(back.kind(), DescriptorKind::Dense);
    }
}
