//! Readers and writers for the on-disk dataset layout.
//!
//! A dataset directory contains:
//! - `manifest.json` — calibration path, class map, condition tag
//! - `calib.txt` — line-oriented `key=value` camera + mount calibration
//! - `scans/<timestamp_ns>.csv` — one lidar rotation per file
//! - `poses.csv`, `gps.csv` — odometry and GPS tracks
//! - `masks/<timestamp_ns>.pgm` — binary P5 label masks
//! - `frames.csv` — the evaluation frames pairing scans with masks
//!
//! Timestamps are integer nanoseconds everywhere so ordering never
//! suffers float drift. Floats are serialized with 17 significant digits
//! which round-trips f64 exactly.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, Quaternion, RigidTransform, Vec3};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Schema { path: PathBuf, msg: String },
    #[error("{path}: timestamps not strictly increasing at line {line}")]
    Ordering { path: PathBuf, line: usize },
    #[error("timestamp {t} outside pose track span [{first}, {last}]")]
    OutOfRange { t: i64, first: i64, last: i64 },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }

    fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        DataError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }

    fn schema(path: &Path, msg: impl Into<String>) -> Self {
        DataError::Schema { path: path.to_path_buf(), msg: msg.into() }
    }
}

pub const BEAM_COUNT: u8 = 16;
pub const DEFAULT_MASK_WIDTH: usize = 640;
pub const DEFAULT_MASK_HEIGHT: usize = 360;

/// One lidar return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub position: Vec3,
    pub ring: u8,
    /// Intra-scan firing phase in [0, 1).
    pub time_fraction: f64,
}

impl LidarPoint {
    /// Azimuth in (-pi, pi]; a scan sweeps from -pi to pi so azimuth order
    /// equals firing order within a ring.
    pub fn azimuth(&self) -> f64 {
        self.position.y.atan2(self.position.x)
    }
}

/// One full rotation of the lidar.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub timestamp: i64,
    pub points: Vec<LidarPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub timestamp: i64,
    pub position: Vec3,
    pub orientation: Quaternion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    pub timestamp: i64,
    pub latitude: f64,
    pub longitude: f64,
}

/// Single-channel class-ID image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    pub class_ids: Vec<u8>,
}

impl LabelMask {
    pub fn filled(width: usize, height: usize, id: u8) -> LabelMask {
        LabelMask { width, height, class_ids: vec![id; width * height] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.class_ids[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, id: u8) {
        self.class_ids[row * self.width + col] = id;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u8,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionTag {
    GoodQuality,
    PoorExposure,
    DirectSunlight,
    Unspecified,
}

impl ConditionTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionTag::GoodQuality => "good_quality",
            ConditionTag::PoorExposure => "poor_exposure",
            ConditionTag::DirectSunlight => "direct_sunlight",
            ConditionTag::Unspecified => "unspecified",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub calibration: String,
    pub classes: Vec<ClassEntry>,
    pub road_id: u8,
    pub condition: ConditionTag,
}

/// Parsed manifest with its calibration resolved.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub calibration: Calibration,
    pub classes: Vec<ClassEntry>,
    pub road_id: u8,
    pub condition: ConditionTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub camera: CameraModel,
    /// lidar frame -> vehicle footprint frame
    pub lidar_mount: RigidTransform,
}

/// One evaluation frame from `frames.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub timestamp: i64,
    pub scan: String,
    pub mask: String,
}

fn fmt_f64(x: f64) -> String {
    // 17 significant digits round-trips any finite f64 exactly
    format!("{:.16e}", x)
}

fn read_to_string(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

fn parse_f64(path: &Path, line: usize, field: &str, s: &str) -> Result<f64, DataError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| DataError::parse(path, line, format!("invalid {field} value {s:?}")))
}

fn parse_i64(path: &Path, line: usize, field: &str, s: &str) -> Result<i64, DataError> {
    s.trim()
        .parse::<i64>()
        .map_err(|_| DataError::parse(path, line, format!("invalid {field} value {s:?}")))
}

// ---------------------------------------------------------------------------
// scans

/// Reads a scan CSV (`ring,time_fraction,x,y,z`). The scan timestamp comes
/// from the file stem. Points are sorted by (ring, azimuth) on load.
pub fn read_scan(path: &Path) -> Result<LidarScan, DataError> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| DataError::schema(path, "scan file name must be <timestamp_ns>.csv"))?;
    let timestamp = stem
        .parse::<i64>()
        .map_err(|_| DataError::schema(path, format!("scan file stem {stem:?} is not a timestamp")))?;
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "ring,time_fraction,x,y,z" => {}
        Some((_, h)) => return Err(DataError::parse(path, 1, format!("unexpected header {h:?}"))),
        None => return Err(DataError::parse(path, 1, "empty file, header expected")),
    }
    let mut points = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(DataError::parse(path, lineno, format!("expected 5 fields, got {}", fields.len())));
        }
        let ring = fields[0]
            .trim()
            .parse::<u8>()
            .map_err(|_| DataError::parse(path, lineno, format!("invalid ring {:?}", fields[0])))?;
        if ring >= BEAM_COUNT {
            return Err(DataError::schema(path, format!("ring {ring} out of range [0, {})", BEAM_COUNT)));
        }
        let time_fraction = parse_f64(path, lineno, "time_fraction", fields[1])?;
        if !(0.0..1.0).contains(&time_fraction) {
            return Err(DataError::schema(path, format!("time_fraction {time_fraction} outside [0, 1)")));
        }
        let x = parse_f64(path, lineno, "x", fields[2])?;
        let y = parse_f64(path, lineno, "y", fields[3])?;
        let z = parse_f64(path, lineno, "z", fields[4])?;
        let position = Vec3::new(x, y, z);
        if !position.is_finite() {
            return Err(DataError::schema(path, format!("non-finite point at line {lineno}")));
        }
        points.push(LidarPoint { position, ring, time_fraction });
    }
    sort_scan_points(&mut points);
    Ok(LidarScan { timestamp, points })
}

pub fn sort_scan_points(points: &mut [LidarPoint]) {
    points.sort_by(|a, b| {
        a.ring
            .cmp(&b.ring)
            .then(a.azimuth().partial_cmp(&b.azimuth()).unwrap_or(std::cmp::Ordering::Equal))
    });
}

pub fn write_scan(scan: &LidarScan, dir: &Path) -> Result<PathBuf, DataError> {
    let path = dir.join(format!("{}.csv", scan.timestamp));
    let mut out = String::from("ring,time_fraction,x,y,z\n");
    for p in &scan.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.ring,
            fmt_f64(p.time_fraction),
            fmt_f64(p.position.x),
            fmt_f64(p.position.y),
            fmt_f64(p.position.z)
        );
    }
    std::fs::write(&path, out).map_err(|e| DataError::io(&path, e))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// pose / gps tracks

pub fn read_pose_track(path: &Path) -> Result<Vec<Pose>, DataError> {
    let text = read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(DataError::parse(path, 1, "missing header"));
    }
    let mut poses: Vec<Pose> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != "timestamp_ns,px,py,pz,qw,qx,qy,qz" {
                return Err(DataError::parse(path, 1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(DataError::parse(path, lineno, format!("expected 8 fields, got {}", f.len())));
        }
        let timestamp = parse_i64(path, lineno, "timestamp_ns", f[0])?;
        let position = Vec3::new(
            parse_f64(path, lineno, "px", f[1])?,
            parse_f64(path, lineno, "py", f[2])?,
            parse_f64(path, lineno, "pz", f[3])?,
        );
        let q = Quaternion::new(
            parse_f64(path, lineno, "qw", f[4])?,
            parse_f64(path, lineno, "qx", f[5])?,
            parse_f64(path, lineno, "qy", f[6])?,
            parse_f64(path, lineno, "qz", f[7])?,
        );
        let n = q.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(DataError::schema(path, format!("non-unit quaternion (norm {n}) at line {lineno}")));
        }
        if let Some(prev) = poses.last() {
            if timestamp <= prev.timestamp {
                return Err(DataError::Ordering { path: path.to_path_buf(), line: lineno });
            }
        }
        poses.push(Pose { timestamp, position, orientation: q.normalized() });
    }
    Ok(poses)
}

pub fn write_pose_track(track: &[Pose], path: &Path) -> Result<(), DataError> {
    let mut out = String::from("timestamp_ns,px,py,pz,qw,qx,qy,qz\n");
    for p in track {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.timestamp,
            fmt_f64(p.position.x),
            fmt_f64(p.position.y),
            fmt_f64(p.position.z),
            fmt_f64(p.orientation.w),
            fmt_f64(p.orientation.x),
            fmt_f64(p.orientation.y),
            fmt_f64(p.orientation.z)
        );
    }
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

pub fn read_gps_track(path: &Path) -> Result<Vec<GpsFix>, DataError> {
    let text = read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(DataError::parse(path, 1, "missing header"));
    }
    let mut fixes: Vec<GpsFix> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != "timestamp_ns,lat,lon" {
                return Err(DataError::parse(path, 1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(DataError::parse(path, lineno, format!("expected 3 fields, got {}", f.len())));
        }
        let timestamp = parse_i64(path, lineno, "timestamp_ns", f[0])?;
        let latitude = parse_f64(path, lineno, "lat", f[1])?;
        let longitude = parse_f64(path, lineno, "lon", f[2])?;
        if latitude.abs() > 90.0 || longitude.abs() > 180.0 {
            return Err(DataError::schema(path, format!("coordinate out of range at line {lineno}")));
        }
        if let Some(prev) = fixes.last() {
            if timestamp <= prev.timestamp {
                return Err(DataError::Ordering { path: path.to_path_buf(), line: lineno });
            }
        }
        fixes.push(GpsFix { timestamp, latitude, longitude });
    }
    Ok(fixes)
}

pub fn write_gps_track(track: &[GpsFix], path: &Path) -> Result<(), DataError> {
    let mut out = String::from("timestamp_ns,lat,lon\n");
    for g in track {
        let _ = writeln!(out, "{},{},{}", g.timestamp, fmt_f64(g.latitude), fmt_f64(g.longitude));
    }
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

/// Samples the pose track at an arbitrary timestamp: linear position,
/// spherical orientation interpolation between the bracketing poses.
pub fn interpolate_pose(track: &[Pose], t: i64) -> Result<Pose, DataError> {
    let (first, last) = match (track.first(), track.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => return Err(DataError::OutOfRange { t, first: 0, last: 0 }),
    };
    if t < first || t > last {
        return Err(DataError::OutOfRange { t, first, last });
    }
    let idx = track.partition_point(|p| p.timestamp < t);
    if idx < track.len() && track[idx].timestamp == t {
        return Ok(track[idx]);
    }
    let hi = &track[idx];
    let lo = &track[idx - 1];
    let f = (t - lo.timestamp) as f64 / (hi.timestamp - lo.timestamp) as f64;
    Ok(Pose {
        timestamp: t,
        position: lo.position + (hi.position - lo.position).scaled(f),
        orientation: lo.orientation.slerp(hi.orientation, f),
    })
}

// ---------------------------------------------------------------------------
// masks (binary PGM, P5)

pub fn read_mask(path: &Path) -> Result<LabelMask, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| DataError::io(path, e))?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, DataError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::schema(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(&bytes)?;
    if magic != "P5" {
        return Err(DataError::schema(path, format!("bad magic {magic:?}, expected P5")));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| DataError::schema(path, "invalid width"))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| DataError::schema(path, "invalid height"))?;
    let maxval: u32 = token(&bytes)?
        .parse()
        .map_err(|_| DataError::schema(path, "invalid maxval"))?;
    if maxval != 255 {
        return Err(DataError::schema(path, format!("maxval {maxval} unsupported, expected 255")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(DataError::schema(path, "missing separator after maxval"));
    }
    pos += 1;
    let need = width.checked_mul(height).ok_or_else(|| DataError::schema(path, "dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(DataError::schema(path, format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    Ok(LabelMask { width, height, class_ids: payload[..need].to_vec() })
}

pub fn write_mask(mask: &LabelMask, path: &Path) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(mask.class_ids.len() + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", mask.width, mask.height).as_bytes());
    out.extend_from_slice(&mask.class_ids);
    let mut f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&out).map_err(|e| DataError::io(path, e))
}

// ---------------------------------------------------------------------------
// calibration

const CALIB_KEYS: [&str; 20] = [
    "fx", "fy", "ox", "oy", "width", "height", "extrinsic_qw", "extrinsic_qx", "extrinsic_qy",
    "extrinsic_qz", "extrinsic_tx", "extrinsic_ty", "extrinsic_tz", "lidar_mount_qw",
    "lidar_mount_qx", "lidar_mount_qy", "lidar_mount_qz", "lidar_mount_tx", "lidar_mount_ty",
    "lidar_mount_tz",
];

pub fn read_calibration(path: &Path) -> Result<Calibration, DataError> {
    let text = read_to_string(path)?;
    let mut values = std::collections::HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| DataError::parse(path, lineno, format!("expected key=value, got {line:?}")))?;
        let v = parse_f64(path, lineno, key, value)?;
        values.insert(key.trim().to_string(), v);
    }
    for key in CALIB_KEYS {
        if !values.contains_key(key) {
            return Err(DataError::schema(path, format!("missing calibration key {key:?}")));
        }
    }
    let g = |k: &str| values[k];
    let camera = CameraModel {
        fx: g("fx"),
        fy: g("fy"),
        ox: g("ox"),
        oy: g("oy"),
        width: g("width") as u32,
        height: g("height") as u32,
        extrinsic: RigidTransform::new(
            Quaternion::new(g("extrinsic_qw"), g("extrinsic_qx"), g("extrinsic_qy"), g("extrinsic_qz"))
                .normalized(),
            Vec3::new(g("extrinsic_tx"), g("extrinsic_ty"), g("extrinsic_tz")),
        ),
    };
    camera
        .validate()
        .map_err(|e| DataError::schema(path, e.to_string()))?;
    let lidar_mount = RigidTransform::new(
        Quaternion::new(g("lidar_mount_qw"), g("lidar_mount_qx"), g("lidar_mount_qy"), g("lidar_mount_qz"))
            .normalized(),
        Vec3::new(g("lidar_mount_tx"), g("lidar_mount_ty"), g("lidar_mount_tz")),
    );
    Ok(Calibration { camera, lidar_mount })
}

pub fn write_calibration(calib: &Calibration, path: &Path) -> Result<(), DataError> {
    let c = &calib.camera;
    let e = &c.extrinsic;
    let m = &calib.lidar_mount;
    let mut out = String::new();
    let mut kv = |k: &str, v: f64| {
        let _ = writeln!(out, "{}={}", k, fmt_f64(v));
    };
    kv("fx", c.fx);
    kv("fy", c.fy);
    kv("ox", c.ox);
    kv("oy", c.oy);
    kv("width", c.width as f64);
    kv("height", c.height as f64);
    kv("extrinsic_qw", e.rotation.w);
    kv("extrinsic_qx", e.rotation.x);
    kv("extrinsic_qy", e.rotation.y);
    kv("extrinsic_qz", e.rotation.z);
    kv("extrinsic_tx", e.translation.x);
    kv("extrinsic_ty", e.translation.y);
    kv("extrinsic_tz", e.translation.z);
    kv("lidar_mount_qw", m.rotation.w);
    kv("lidar_mount_qx", m.rotation.x);
    kv("lidar_mount_qy", m.rotation.y);
    kv("lidar_mount_qz", m.rotation.z);
    kv("lidar_mount_tx", m.translation.x);
    kv("lidar_mount_ty", m.translation.y);
    kv("lidar_mount_tz", m.translation.z);
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

// ---------------------------------------------------------------------------
// manifest + frames

pub fn read_manifest(root: &Path) -> Result<DatasetManifest, DataError> {
    let path = root.join("manifest.json");
    let text = read_to_string(&path)?;
    let file: ManifestFile =
        serde_json::from_str(&text).map_err(|e| DataError::schema(&path, e.to_string()))?;
    let mut seen = std::collections::HashSet::new();
    for c in &file.classes {
        if !seen.insert(c.id) {
            return Err(DataError::schema(&path, format!("duplicate class id {}", c.id)));
        }
    }
    if !file.classes.iter().any(|c| c.id == file.road_id) {
        return Err(DataError::schema(&path, format!("road_id {} not in class map", file.road_id)));
    }
    let calibration = read_calibration(&root.join(&file.calibration))?;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        calibration,
        classes: file.classes,
        road_id: file.road_id,
        condition: file.condition,
    })
}

pub fn write_manifest(file: &ManifestFile, root: &Path) -> Result<(), DataError> {
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(file).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| DataError::io(&path, e))
}

pub fn read_frames(path: &Path) -> Result<Vec<FrameEntry>, DataError> {
    let text = read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(DataError::parse(path, 1, "missing header"));
    }
    let mut frames: Vec<FrameEntry> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != "timestamp_ns,scan,mask" {
                return Err(DataError::parse(path, 1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(DataError::parse(path, lineno, format!("expected 3 fields, got {}", f.len())));
        }
        let timestamp = parse_i64(path, lineno, "timestamp_ns", f[0])?;
        if let Some(prev) = frames.last() {
            if timestamp <= prev.timestamp {
                return Err(DataError::Ordering { path: path.to_path_buf(), line: lineno });
            }
        }
        frames.push(FrameEntry {
            timestamp,
            scan: f[1].trim().to_string(),
            mask: f[2].trim().to_string(),
        });
    }
    Ok(frames)
}

pub fn write_frames(frames: &[FrameEntry], path: &Path) -> Result<(), DataError> {
    let mut out = String::from("timestamp_ns,scan,mask\n");
    for f in frames {
        let _ = writeln!(out, "{},{},{}", f.timestamp, f.scan, f.mask);
    }
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}
