//! Generation of datasets with exactly known ground truth: piecewise-planar
//! scenes, analytic trajectories, ray-cast lidar scans with intra-scan
//! motion, pixel-exact label masks and GPS fixes. These datasets are the
//! verification oracle for the rest of the pipeline.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{
    write_calibration, write_frames, write_gps_track, write_manifest, write_mask,
    write_pose_track, write_scan, Calibration, ClassEntry, ConditionTag, DataError, FrameEntry,
    GpsFix, LabelMask, LidarPoint, LidarScan, ManifestFile, Pose,
};
use crate::geometry::{CameraModel, Quaternion, RigidTransform, Vec3};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    BadScene(String),
    #[error("invalid sensor: {0}")]
    BadSensor(String),
    #[error("invalid trajectory: {0}")]
    BadTrajectory(String),
    #[error("flip probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub const VOID_ID: u8 = 0;
pub const ROAD_ID: u8 = 1;
pub const SIDEWALK_ID: u8 = 2;
pub const OBSTACLE_ID: u8 = 3;

/// Local-tangent GPS origin (fixed for all generated datasets).
const ORIGIN_LAT: f64 = -33.888;
const ORIGIN_LON: f64 = 151.187;
const EARTH_RADIUS: f64 = 6_371_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub dims: [f64; 3],
}

/// Road corridor with curbs and a sidewalk, plus optional box obstacles,
/// all in the world frame. The trajectory starts at the origin heading +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub road_half_width: f64,
    pub curb_height: f64,
    /// Amplitude of the sinusoidal road-surface height field.
    pub roughness_amplitude: f64,
    /// Signed arc radius of the road corridor; positive bends left.
    /// Absent means a straight road.
    pub curve_radius: Option<f64>,
    pub obstacles: Vec<BoxSpec>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            road_half_width: 3.0,
            curb_height: 0.12,
            roughness_amplitude: 0.0,
            curve_radius: None,
            obstacles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub ox: f64,
    pub oy: f64,
    pub width: u32,
    pub height: u32,
    /// Downward pitch of the optical axis, degrees.
    pub tilt_deg: f64,
    /// Camera center in the footprint frame.
    pub forward: f64,
    pub height_m: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            fx: 1400.0,
            fy: 1400.0,
            ox: 964.0,
            oy: 604.0,
            width: 1928,
            height: 1208,
            tilt_deg: 15.0,
            forward: 0.5,
            height_m: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    /// Lidar origin height above the ground, meters.
    pub lidar_height: f64,
    /// Downward pitch of the lidar, degrees.
    pub lidar_tilt_deg: f64,
    /// Per-ring beam elevations, degrees, ascending.
    pub beam_elevations_deg: Vec<f64>,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    /// Half-width of uniform along-ray range noise, meters (0 disables).
    pub range_jitter: f64,
    pub mask_width: usize,
    pub mask_height: usize,
    pub camera: CameraSpec,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            lidar_height: 1.9,
            lidar_tilt_deg: 7.0,
            beam_elevations_deg: (0..16).map(|i| -15.0 + 2.0 * i as f64).collect(),
            azimuth_step_deg: 0.5,
            max_range: 100.0,
            range_jitter: 0.0,
            mask_width: crate::dataset_io::DEFAULT_MASK_WIDTH,
            mask_height: crate::dataset_io::DEFAULT_MASK_HEIGHT,
            camera: CameraSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub speed: f64,
    pub duration: f64,
    /// Signed arc radius of the driven path; absent means straight.
    pub arc_radius: Option<f64>,
    pub scan_rate_hz: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec { speed: 2.0, duration: 3.0, arc_radius: None, scan_rate_hz: 10.0 }
    }
}

/// Top-level generator spec, the `scene.json` schema.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub scene: SceneSpec,
    pub sensor: SensorSpec,
    pub trajectory: TrajectorySpec,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let s = &self.scene;
        if !(s.road_half_width > 0.0) {
            return Err(SynthError::BadScene(format!(
                "road half-width must be positive, got {}",
                s.road_half_width
            )));
        }
        if !(s.curb_height >= 0.0) {
            return Err(SynthError::BadScene(format!(
                "curb height must be non-negative, got {}",
                s.curb_height
            )));
        }
        if let Some(r) = s.curve_radius {
            if r.abs() <= s.road_half_width {
                return Err(SynthError::BadScene(format!(
                    "curve radius {r} must exceed the road half-width"
                )));
            }
        }
        let n = &self.sensor;
        if n.beam_elevations_deg.is_empty()
            || n.beam_elevations_deg.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(SynthError::BadSensor(
                "beam elevations must be non-empty and strictly ascending".into(),
            ));
        }
        if n.beam_elevations_deg.len() > crate::dataset_io::BEAM_COUNT as usize {
            return Err(SynthError::BadSensor(format!(
                "at most {} beams supported",
                crate::dataset_io::BEAM_COUNT
            )));
        }
        let steps = 360.0 / n.azimuth_step_deg;
        if !(n.azimuth_step_deg > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(SynthError::BadSensor(format!(
                "azimuth step {} deg must evenly divide 360",
                n.azimuth_step_deg
            )));
        }
        if !(n.lidar_height > 0.0 && n.max_range > 0.0 && n.range_jitter >= 0.0) {
            return Err(SynthError::BadSensor("height/range parameters out of range".into()));
        }
        if n.mask_width == 0 || n.mask_height == 0 {
            return Err(SynthError::BadSensor("mask dimensions must be positive".into()));
        }
        let t = &self.trajectory;
        if !(t.speed >= 0.0) {
            return Err(SynthError::BadTrajectory(format!("speed must be >= 0, got {}", t.speed)));
        }
        if !(t.duration > 0.0 && t.scan_rate_hz > 0.0) {
            return Err(SynthError::BadTrajectory(
                "duration and scan rate must be positive".into(),
            ));
        }
        if let Some(r) = t.arc_radius {
            if r == 0.0 || !r.is_finite() {
                return Err(SynthError::BadTrajectory("arc radius must be finite nonzero".into()));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// scene geometry

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Road,
    Curb,
    Sidewalk,
    Obstacle,
}

impl Surface {
    /// Label-mask class. The curb face below the curb top belongs to the
    /// road label, so boundary returns low on the riser score as road.
    pub fn class_id(self) -> u8 {
        match self {
            Surface::Road | Surface::Curb => ROAD_ID,
            Surface::Sidewalk => SIDEWALK_ID,
            Surface::Obstacle => OBSTACLE_ID,
        }
    }

    fn is_road_label(self) -> bool {
        self.class_id() == ROAD_ID
    }
}

/// Ray-castable realization of a `SceneSpec`.
#[derive(Debug, Clone)]
pub struct Scene {
    half_width: f64,
    curb_height: f64,
    roughness: f64,
    curve: Option<f64>,
    obstacles: Vec<(Vec3, Vec3)>,
}

impl Scene {
    pub fn new(spec: &SceneSpec) -> Scene {
        let obstacles = spec
            .obstacles
            .iter()
            .map(|b| {
                let c = Vec3::new(b.center[0], b.center[1], b.center[2]);
                let h = Vec3::new(b.dims[0] / 2.0, b.dims[1] / 2.0, b.dims[2] / 2.0);
                (c - h, c + h)
            })
            .collect();
        Scene {
            half_width: spec.road_half_width,
            curb_height: spec.curb_height,
            roughness: spec.roughness_amplitude,
            curve: spec.curve_radius,
            obstacles,
        }
    }

    /// Signed lateral offset from the road centerline; positive toward the
    /// left curb.
    pub fn lateral(&self, x: f64, y: f64) -> f64 {
        match self.curve {
            None => y,
            Some(r) => {
                let dist = (x * x + (y - r) * (y - r)).sqrt();
                r.signum() * (r.abs() - dist)
            }
        }
    }

    fn roughness_at(&self, x: f64, y: f64) -> f64 {
        if self.roughness == 0.0 {
            0.0
        } else {
            self.roughness * (0.5 * x).sin() * (0.7 * y).sin()
        }
    }

    /// Nearest surface hit along `o + t d`, `t > 0`, within `max_range`.
    /// Road hits carry the height-field elevation; every other surface is
    /// exactly planar.
    pub fn cast(&self, o: Vec3, d: Vec3, max_range: f64) -> Option<(Vec3, Surface)> {
        const EPS: f64 = 1e-9;
        let mut best: Option<(f64, Vec3, Surface)> = None;
        let consider = |t: f64, p: Vec3, s: Surface, best: &mut Option<(f64, Vec3, Surface)>| {
            if t > EPS && t <= max_range && best.as_ref().map_or(true, |(bt, _, _)| t < *bt) {
                *best = Some((t, p, s));
            }
        };

        // road plane z = 0, inside the corridor
        if d.z.abs() > 0.0 {
            let t = -o.z / d.z;
            let p = o + d.scaled(t);
            if self.lateral(p.x, p.y).abs() <= self.half_width {
                consider(t, p, Surface::Road, &mut best);
            }
        }
        // sidewalk plane z = curb height, outside the corridor
        if d.z.abs() > 0.0 {
            let t = (self.curb_height - o.z) / d.z;
            let p = o + d.scaled(t);
            if self.lateral(p.x, p.y).abs() >= self.half_width {
                consider(t, p, Surface::Sidewalk, &mut best);
            }
        }
        // curb risers
        if self.curb_height > 0.0 {
            match self.curve {
                None => {
                    for yc in [self.half_width, -self.half_width] {
                        if d.y.abs() > 0.0 {
                            let t = (yc - o.y) / d.y;
                            let p = o + d.scaled(t);
                            if p.z >= 0.0 && p.z <= self.curb_height {
                                consider(t, p, Surface::Curb, &mut best);
                            }
                        }
                    }
                }
                Some(r) => {
                    for side in [1.0, -1.0] {
                        let radius = r.abs() - r.signum() * side * self.half_width;
                        for t in cylinder_hits(o, d, r, radius) {
                            let p = o + d.scaled(t);
                            if p.z >= 0.0 && p.z <= self.curb_height {
                                consider(t, p, Surface::Curb, &mut best);
                            }
                        }
                    }
                }
            }
        }
        // box obstacles
        for &(lo, hi) in &self.obstacles {
            if let Some(t) = aabb_hit(o, d, lo, hi) {
                consider(t, o + d.scaled(t), Surface::Obstacle, &mut best);
            }
        }

        best.map(|(_, mut p, s)| {
            if s == Surface::Road {
                p.z = self.roughness_at(p.x, p.y);
            }
            (p, s)
        })
    }
}

/// Ray parameters where a vertical cylinder of the given radius centered
/// at (0, center_y) is crossed.
fn cylinder_hits(o: Vec3, d: Vec3, center_y: f64, radius: f64) -> Vec<f64> {
    let ox = o.x;
    let oy = o.y - center_y;
    let a = d.x * d.x + d.y * d.y;
    if a < 1e-15 {
        return Vec::new();
    }
    let b = 2.0 * (ox * d.x + oy * d.y);
    let c = ox * ox + oy * oy - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    vec![(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
}

/// Slab-method ray/box intersection; returns the entry parameter.
fn aabb_hit(o: Vec3, d: Vec3, lo: Vec3, hi: Vec3) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for (ov, dv, lov, hiv) in [
        (o.x, d.x, lo.x, hi.x),
        (o.y, d.y, lo.y, hi.y),
        (o.z, d.z, lo.z, hi.z),
    ] {
        if dv.abs() < 1e-15 {
            if ov < lov || ov > hiv {
                return None;
            }
            continue;
        }
        let t1 = (lov - ov) / dv;
        let t2 = (hiv - ov) / dv;
        let (t1, t2) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        t_near = t_near.max(t1);
        t_far = t_far.min(t2);
        if t_near > t_far {
            return None;
        }
    }
    if t_far < 0.0 {
        None
    } else {
        Some(if t_near > 0.0 { t_near } else { t_far })
    }
}

// ---------------------------------------------------------------------------
// sensors and trajectory

/// Lidar frame -> vehicle footprint frame.
pub fn mount_transform(sensor: &SensorSpec) -> RigidTransform {
    RigidTransform::new(
        Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), sensor.lidar_tilt_deg.to_radians()),
        Vec3::new(0.0, 0.0, sensor.lidar_height),
    )
}

/// Camera model whose extrinsic maps footprint coordinates into the
/// camera frame (x right, y down, z forward), pitched down by the tilt.
pub fn camera_model(sensor: &SensorSpec) -> CameraModel {
    let c = &sensor.camera;
    let t = c.tilt_deg.to_radians();
    // camera axes expressed in the footprint frame
    let x_cam = Vec3::new(0.0, -1.0, 0.0);
    let y_cam = Vec3::new(-t.sin(), 0.0, -t.cos());
    let z_cam = Vec3::new(t.cos(), 0.0, -t.sin());
    let rows = [
        [x_cam.x, x_cam.y, x_cam.z],
        [y_cam.x, y_cam.y, y_cam.z],
        [z_cam.x, z_cam.y, z_cam.z],
    ];
    let rotation = Quaternion::from_rotation_matrix(&rows);
    let center = Vec3::new(c.forward, 0.0, c.height_m);
    CameraModel {
        fx: c.fx,
        fy: c.fy,
        ox: c.ox,
        oy: c.oy,
        width: c.width,
        height: c.height,
        extrinsic: RigidTransform::new(rotation, -rotation.rotate_unchecked(center)),
    }
}

/// Footprint pose at time `t` seconds along the trajectory.
pub fn trajectory_pose(traj: &TrajectorySpec, t: f64) -> RigidTransform {
    match traj.arc_radius {
        None => RigidTransform::from_translation(Vec3::new(traj.speed * t, 0.0, 0.0)),
        Some(r) => {
            let theta = traj.speed * t / r;
            RigidTransform::new(
                Quaternion::from_yaw(theta),
                Vec3::new(r * theta.sin(), r * (1.0 - theta.cos()), 0.0),
            )
        }
    }
}

// ---------------------------------------------------------------------------
// rendering

/// Simulates one full lidar rotation starting at frame `frame`'s scan
/// instant, with the pose advancing per azimuth step. Points are stored in
/// the sensor frame at their firing time.
pub fn render_scan(
    scene: &Scene,
    sensor: &SensorSpec,
    traj: &TrajectorySpec,
    frame: usize,
    seed: u64,
) -> LidarScan {
    let mount = mount_transform(sensor);
    let steps = (360.0 / sensor.azimuth_step_deg).round() as usize;
    let period = 1.0 / traj.scan_rate_hz;
    let t0 = frame as f64 * period;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut points = Vec::new();
    for s in 0..steps {
        let f = s as f64 / steps as f64;
        let az = -std::f64::consts::PI + std::f64::consts::TAU * f;
        let pose = trajectory_pose(traj, t0 + f * period);
        let sensor_to_world = pose.compose(&mount);
        let origin = sensor_to_world.apply_unchecked(Vec3::ZERO);
        let world_from_sensor = sensor_to_world.inverse();
        for (ring, &elev) in sensor.beam_elevations_deg.iter().enumerate() {
            let e = elev.to_radians();
            let dir_sensor = Vec3::new(e.cos() * az.cos(), e.cos() * az.sin(), e.sin());
            let dir = sensor_to_world.rotation.rotate_unchecked(dir_sensor);
            let Some((mut hit, _)) = scene.cast(origin, dir, sensor.max_range) else { continue };
            if sensor.range_jitter > 0.0 {
                let j = rng.gen_range(-sensor.range_jitter..=sensor.range_jitter);
                hit = hit + dir.scaled(j);
            }
            points.push(LidarPoint {
                position: world_from_sensor.apply_unchecked(hit),
                ring: ring as u8,
                time_fraction: f,
            });
        }
    }
    let timestamp = (t0 * 1e9).round() as i64;
    let mut scan = LidarScan { timestamp, points };
    crate::dataset_io::sort_scan_points(&mut scan.points);
    scan
}

/// Pixel-exact label mask from the frame's camera pose. A pixel is road
/// when its center ray or any corner ray hits the road surface, so every
/// point on the road projects into a road pixel after rounding.
pub fn render_mask(
    scene: &Scene,
    sensor: &SensorSpec,
    traj: &TrajectorySpec,
    frame: usize,
) -> LabelMask {
    let cam = camera_model(sensor).rescaled(sensor.mask_width as u32, sensor.mask_height as u32);
    let pose = trajectory_pose(traj, frame as f64 / traj.scan_rate_hz);
    let cam_to_world = pose.compose(&cam.extrinsic.inverse());
    let origin = cam_to_world.apply_unchecked(Vec3::ZERO);
    let (w, h) = (sensor.mask_width, sensor.mask_height);

    let ray_dir = |u: f64, v: f64| {
        let dir_cam = Vec3::new((u - cam.ox) / cam.fx, (v - cam.oy) / cam.fy, 1.0);
        cam_to_world.rotation.rotate_unchecked(dir_cam)
    };
    let classify = |u: f64, v: f64| {
        scene
            .cast(origin, ray_dir(u, v), f64::INFINITY)
            .map(|(_, s)| s)
    };

    // corner grid marking rays that hit road, for the half-pixel guard
    let mut corner_road = vec![false; (w + 1) * (h + 1)];
    for row in 0..=h {
        for col in 0..=w {
            corner_road[row * (w + 1) + col] =
                classify(col as f64 - 0.5, row as f64 - 0.5).is_some_and(Surface::is_road_label);
        }
    }
    let mut mask = LabelMask::filled(w, h, VOID_ID);
    for row in 0..h {
        for col in 0..w {
            let center = classify(col as f64, row as f64);
            let id = match center {
                Some(s) if s.is_road_label() => ROAD_ID,
                other => {
                    let road_corner = corner_road[row * (w + 1) + col]
                        || corner_road[row * (w + 1) + col + 1]
                        || corner_road[(row + 1) * (w + 1) + col]
                        || corner_road[(row + 1) * (w + 1) + col + 1];
                    if road_corner {
                        ROAD_ID
                    } else {
                        other.map_or(VOID_ID, Surface::class_id)
                    }
                }
            };
            mask.set(row, col, id);
        }
    }
    mask
}

// ---------------------------------------------------------------------------
// ground-truth sidecar

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub timestamp_ns: i64,
    /// Curb polylines sampled along the road, in the frame's footprint
    /// coordinates (x, y on the ground plane).
    pub curb_left: Vec<[f64; 2]>,
    pub curb_right: Vec<[f64; 2]>,
    /// Row-major runs of road pixels in the frame's mask: (start, length).
    pub road_rle: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub road_half_width: f64,
    pub curb_height: f64,
    pub frames: Vec<FrameTruth>,
}

pub fn road_rle(mask: &LabelMask, road_id: u8) -> Vec<[u32; 2]> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &id) in mask.class_ids.iter().enumerate() {
        match (id == road_id, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push([s as u32, (i - s) as u32]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push([s as u32, (mask.class_ids.len() - s) as u32]);
    }
    runs
}

/// True curb polylines for the frame, in footprint coordinates.
fn frame_curbs(scene: &Scene, traj: &TrajectorySpec, frame: usize) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let pose = trajectory_pose(traj, frame as f64 / traj.scan_rate_hz);
    let to_frame = pose.inverse();
    let mut left = Vec::new();
    let mut right = Vec::new();
    let hw = scene.half_width;
    match scene.curve {
        None => {
            let x0 = pose.translation.x;
            let mut s = -5.0;
            while s <= 25.0 {
                let l = to_frame.apply_unchecked(Vec3::new(x0 + s, hw, 0.0));
                let r = to_frame.apply_unchecked(Vec3::new(x0 + s, -hw, 0.0));
                left.push([l.x, l.y]);
                right.push([r.x, r.y]);
                s += 0.5;
            }
        }
        Some(rc) => {
            let theta = traj.speed * (frame as f64 / traj.scan_rate_hz) / rc;
            let mut s = -5.0;
            while s <= 25.0 {
                let phi = theta + s / rc;
                let along = Vec3::new(rc * phi.sin(), -rc * phi.cos(), 0.0);
                for (side, out) in [(1.0, &mut left), (-1.0, &mut right)] {
                    let radius = rc.abs() - rc.signum() * side * hw;
                    let world = Vec3::new(0.0, rc, 0.0) + along.scaled(radius / rc.abs());
                    let p = to_frame.apply_unchecked(world);
                    out.push([p.x, p.y]);
                }
                s += 0.5;
            }
        }
    }
    (left, right)
}

// ---------------------------------------------------------------------------
// dataset generation

#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub frames: usize,
    pub points: u64,
    pub road_pixels: u64,
}

pub fn class_table() -> Vec<ClassEntry> {
    vec![
        ClassEntry { id: VOID_ID, name: "void".into() },
        ClassEntry { id: ROAD_ID, name: "road".into() },
        ClassEntry { id: SIDEWALK_ID, name: "sidewalk".into() },
        ClassEntry { id: OBSTACLE_ID, name: "obstacle".into() },
    ]
}

fn local_tangent_fix(timestamp: i64, p: Vec3) -> GpsFix {
    GpsFix {
        timestamp,
        latitude: ORIGIN_LAT + (p.y / EARTH_RADIUS).to_degrees(),
        longitude: ORIGIN_LON
            + (p.x / (EARTH_RADIUS * ORIGIN_LAT.to_radians().cos())).to_degrees(),
    }
}

/// Generates a complete dataset directory plus the `truth.json` sidecar.
/// Deterministic: the same spec and seed produce bitwise-identical files.
pub fn simulate(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<SimStats, SynthError> {
    spec.validate()?;
    let scene = Scene::new(&spec.scene);
    let traj = &spec.trajectory;
    let sensor = &spec.sensor;

    let scans_dir = out_dir.join("scans");
    let masks_dir = out_dir.join("masks");
    for dir in [out_dir, &scans_dir, &masks_dir] {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    }

    let period_ns = (1e9 / traj.scan_rate_hz).round() as i64;
    let n_frames = ((traj.duration * traj.scan_rate_hz).floor() as usize).max(1);

    // frames are independent; render in parallel, write in order
    let rendered: Vec<(LidarScan, LabelMask)> = (0..n_frames)
        .into_par_iter()
        .map(|k| {
            (
                render_scan(&scene, sensor, traj, k, seed),
                render_mask(&scene, sensor, traj, k),
            )
        })
        .collect();

    let mut stats = SimStats { frames: n_frames, points: 0, road_pixels: 0 };
    let mut frames = Vec::with_capacity(n_frames);
    let mut truth =
        TruthFile { road_half_width: spec.scene.road_half_width, curb_height: spec.scene.curb_height, frames: Vec::new() };
    for (k, (scan, mask)) in rendered.iter().enumerate() {
        let ts = k as i64 * period_ns;
        write_scan(scan, &scans_dir)?;
        let mask_path = masks_dir.join(format!("{ts}.pgm"));
        write_mask(mask, &mask_path)?;
        stats.points += scan.points.len() as u64;
        let rle = road_rle(mask, ROAD_ID);
        stats.road_pixels += rle.iter().map(|r| r[1] as u64).sum::<u64>();
        let (curb_left, curb_right) = frame_curbs(&scene, traj, k);
        truth.frames.push(FrameTruth { timestamp_ns: ts, curb_left, curb_right, road_rle: rle });
        frames.push(FrameEntry {
            timestamp: ts,
            scan: format!("scans/{ts}.csv"),
            mask: format!("masks/{ts}.pgm"),
        });
    }

    // poses at 100 Hz covering every scan plus two extra periods
    let pose_step_ns = 10_000_000i64;
    let end_ns = n_frames as i64 * period_ns + 2 * period_ns;
    let mut poses = Vec::new();
    let mut t = 0i64;
    while t <= end_ns {
        let p = trajectory_pose(traj, t as f64 * 1e-9);
        poses.push(Pose { timestamp: t, position: p.translation, orientation: p.rotation });
        t += pose_step_ns;
    }
    write_pose_track(&poses, &out_dir.join("poses.csv"))?;

    // GPS at 1 Hz
    let mut gps = Vec::new();
    let mut t = 0i64;
    while t <= end_ns {
        let p = trajectory_pose(traj, t as f64 * 1e-9);
        gps.push(local_tangent_fix(t, p.translation));
        t += 1_000_000_000;
    }
    write_gps_track(&gps, &out_dir.join("gps.csv"))?;

    write_frames(&frames, &out_dir.join("frames.csv"))?;
    write_calibration(
        &Calibration { camera: camera_model(sensor), lidar_mount: mount_transform(sensor) },
        &out_dir.join("calib.txt"),
    )?;
    write_manifest(
        &ManifestFile {
            calibration: "calib.txt".into(),
            classes: class_table(),
            road_id: ROAD_ID,
            condition: ConditionTag::GoodQuality,
        },
        out_dir,
    )?;

    let truth_path = out_dir.join("truth.json");
    let text = serde_json::to_string_pretty(&truth).expect("truth serializes");
    std::fs::write(&truth_path, text).map_err(|e| DataError::io(&truth_path, e))?;

    Ok(stats)
}

// ---------------------------------------------------------------------------
// mask corruption

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CorruptionMode {
    /// Flip each road pixel to void independently with probability `p`.
    UniformFlip { p: f64 },
    /// Flip road pixels inside the image-space rectangle.
    ShadowBand { row_lo: usize, row_hi: usize, col_lo: usize, col_hi: usize },
    /// Flip road pixels within `k` pixels (Chebyshev) of a non-road pixel.
    BorderErode { k: usize },
}

pub fn corrupt_mask(
    mask: &LabelMask,
    road_id: u8,
    mode: &CorruptionMode,
    seed: u64,
) -> Result<LabelMask, SynthError> {
    let mut out = mask.clone();
    match mode {
        CorruptionMode::UniformFlip { p } => {
            if !(0.0..=1.0).contains(p) {
                return Err(SynthError::BadProbability(*p));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for id in out.class_ids.iter_mut() {
                if *id == road_id && rng.gen::<f64>() < *p {
                    *id = VOID_ID;
                }
            }
        }
        CorruptionMode::ShadowBand { row_lo, row_hi, col_lo, col_hi } => {
            for row in *row_lo..(*row_hi).min(mask.height) {
                for col in *col_lo..(*col_hi).min(mask.width) {
                    if out.get(row, col) == road_id {
                        out.set(row, col, VOID_ID);
                    }
                }
            }
        }
        CorruptionMode::BorderErode { k } => {
            let k = *k as isize;
            let (w, h) = (mask.width as isize, mask.height as isize);
            for row in 0..h {
                for col in 0..w {
                    if mask.get(row as usize, col as usize) != road_id {
                        continue;
                    }
                    let mut near_edge = false;
                    'win: for dr in -k..=k {
                        for dc in -k..=k {
                            let (r, c) = (row + dr, col + dc);
                            if r < 0 || r >= h || c < 0 || c >= w {
                                continue;
                            }
                            if mask.get(r as usize, c as usize) != road_id {
                                near_edge = true;
                                break 'win;
                            }
                        }
                    }
                    if near_edge {
                        out.set(row as usize, col as usize, VOID_ID);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan_processing::correct_motion;

    fn small_sensor() -> SensorSpec {
        SensorSpec {
            azimuth_step_deg: 2.0,
            mask_width: 160,
            mask_height: 90,
            ..SensorSpec::default()
        }
    }

    #[test]
    fn default_spec_validates() {
        SynthSpec::default().validate().unwrap();
        let mut bad = SynthSpec::default();
        bad.scene.road_half_width = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = SynthSpec::default();
        bad.sensor.azimuth_step_deg = 0.7;
        assert!(bad.validate().is_err());
        let mut bad = SynthSpec::default();
        bad.trajectory.duration = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn static_flat_scene_points_on_true_surfaces() {
        // zero roughness, zero speed, straight road: in the footprint frame
        // every ground return has z = 0 and every sidewalk return z = curb
        // height, to float precision
        let spec = SynthSpec {
            trajectory: TrajectorySpec { speed: 0.0, ..TrajectorySpec::default() },
            sensor: small_sensor(),
            ..SynthSpec::default()
        };
        let scene = Scene::new(&spec.scene);
        let scan = render_scan(&scene, &spec.sensor, &spec.trajectory, 0, 7);
        assert!(scan.points.len() > 1000);
        let mount = mount_transform(&spec.sensor);
        let mut road = 0;
        for p in &scan.points {
            let fp = mount.apply_unchecked(p.position);
            let on_road = fp.z.abs() < 1e-12;
            let on_walk = (fp.z - spec.scene.curb_height).abs() < 1e-12;
            let on_curb = fp.z > -1e-12 && fp.z < spec.scene.curb_height + 1e-12;
            assert!(on_road || on_walk || on_curb, "stray z {}", fp.z);
            if on_road {
                road += 1;
            }
        }
        assert!(road > 200, "road points: {road}");
    }

    #[test]
    fn untilted_ring_radii_match_cone_intersection() {
        // with no lidar tilt each downward beam traces an exact circle of
        // radius h / tan(-elevation)
        let mut sensor = small_sensor();
        sensor.lidar_tilt_deg = 0.0;
        let spec = SynthSpec {
            scene: SceneSpec { road_half_width: 1e6, curb_height: 0.0, ..SceneSpec::default() },
            sensor,
            trajectory: TrajectorySpec { speed: 0.0, ..TrajectorySpec::default() },
        };
        let scene = Scene::new(&spec.scene);
        let scan = render_scan(&scene, &spec.sensor, &spec.trajectory, 0, 0);
        let h = spec.sensor.lidar_height;
        for p in &scan.points {
            let e = spec.sensor.beam_elevations_deg[p.ring as usize].to_radians();
            assert!(e < 0.0);
            let expect = h / (-e).tan();
            let r = p.position.x.hypot(p.position.y);
            assert!((r - expect).abs() < 1e-9, "ring {} radius {r} vs {expect}", p.ring);
        }
    }

    #[test]
    fn flat_plane_mask_road_below_horizon() {
        let spec = SynthSpec {
            scene: SceneSpec { road_half_width: 1e7, curb_height: 0.0, ..SceneSpec::default() },
            sensor: small_sensor(),
            trajectory: TrajectorySpec { speed: 0.0, ..TrajectorySpec::default() },
        };
        let scene = Scene::new(&spec.scene);
        let mask = render_mask(&scene, &spec.sensor, &spec.trajectory, 0);
        for col in 0..mask.width {
            let first_road = (0..mask.height).find(|&r| mask.get(r, col) == ROAD_ID);
            let first = first_road.expect("column fully above horizon");
            for row in first..mask.height {
                assert_eq!(mask.get(row, col), ROAD_ID, "hole at ({row}, {col})");
            }
            for row in 0..first.saturating_sub(1) {
                assert_eq!(mask.get(row, col), VOID_ID);
            }
        }
    }

    #[test]
    fn corrected_scan_lands_on_true_surfaces() {
        // moving straight at 2 m/s: raw points mapped through the mount and
        // the fractional inverse ego transform return to the scene surfaces
        let spec = SynthSpec { sensor: small_sensor(), ..SynthSpec::default() };
        let scene = Scene::new(&spec.scene);
        let traj = &spec.trajectory;
        let k = 3;
        let scan = render_scan(&scene, &spec.sensor, traj, k, 0);
        let period = 1.0 / traj.scan_rate_hz;
        let start = trajectory_pose(traj, k as f64 * period);
        let end = trajectory_pose(traj, (k + 1) as f64 * period);
        let ego = start.inverse().compose(&end);
        let mount = mount_transform(&spec.sensor);
        let corrected = correct_motion(&scan, &ego, &mount).unwrap();
        let ch = spec.scene.curb_height;
        for p in &corrected.points {
            let z = p.position.z;
            let ok = z.abs() < 1e-3 || (z - ch).abs() < 1e-3 || (z > -1e-3 && z < ch + 1e-3);
            assert!(ok, "resid z {z}");
        }
    }

    #[test]
    fn curved_road_lateral_and_curbs() {
        let scene = Scene::new(&SceneSpec {
            curve_radius: Some(20.0),
            ..SceneSpec::default()
        });
        // on the centerline arc the lateral offset is zero
        for theta in [0.0, 0.3, 0.7] {
            let x = 20.0 * f64::sin(theta);
            let y = 20.0 * (1.0 - f64::cos(theta));
            assert!(scene.lateral(x, y).abs() < 1e-9);
        }
        // straight down onto the sidewalk side
        let hit = scene.cast(Vec3::new(0.0, -4.0, 5.0), Vec3::new(0.0, 0.0, -1.0), 100.0);
        let (p, s) = hit.unwrap();
        assert_eq!(s, Surface::Sidewalk);
        assert!((p.z - 0.12).abs() < 1e-12);
    }

    #[test]
    fn simulate_is_deterministic() {
        let spec = SynthSpec {
            sensor: small_sensor(),
            trajectory: TrajectorySpec { duration: 0.5, ..TrajectorySpec::default() },
            ..SynthSpec::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = simulate(&spec, 42, a.path()).unwrap();
        let sb = simulate(&spec, 42, b.path()).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(sa.frames, 5);
        let mut names: Vec<_> = walk(a.path());
        names.sort();
        assert!(names.iter().any(|n| n.ends_with("poses.csv")));
        for name in names {
            let fa = std::fs::read(a.path().join(&name)).unwrap();
            let fb = std::fs::read(b.path().join(&name)).unwrap();
            assert_eq!(fa, fb, "file {name} differs between runs");
        }
    }

    fn walk(root: &Path) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    out.push(path.strip_prefix(root).unwrap().to_string_lossy().into_owned());
                }
            }
        }
        out
    }

    #[test]
    fn simulated_dataset_parses_back() {
        let spec = SynthSpec {
            sensor: small_sensor(),
            trajectory: TrajectorySpec { duration: 0.3, ..TrajectorySpec::default() },
            ..SynthSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        simulate(&spec, 1, dir.path()).unwrap();
        let manifest = crate::dataset_io::read_manifest(dir.path()).unwrap();
        assert_eq!(manifest.road_id, ROAD_ID);
        let frames = crate::dataset_io::read_frames(&dir.path().join("frames.csv")).unwrap();
        assert_eq!(frames.len(), 3);
        for f in &frames {
            let scan = crate::dataset_io::read_scan(&dir.path().join(&f.scan)).unwrap();
            assert!(!scan.points.is_empty());
            let mask = crate::dataset_io::read_mask(&dir.path().join(&f.mask)).unwrap();
            assert_eq!((mask.width, mask.height), (160, 90));
        }
        crate::dataset_io::read_pose_track(&dir.path().join("poses.csv")).unwrap();
        crate::dataset_io::read_gps_track(&dir.path().join("gps.csv")).unwrap();
        let truth: TruthFile =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap())
                .unwrap();
        assert_eq!(truth.frames.len(), 3);
        assert!(!truth.frames[0].road_rle.is_empty());
        assert!(!truth.frames[0].curb_left.is_empty());
    }

    #[test]
    fn corrupt_flip_extremes() {
        let mask = LabelMask::filled(100, 50, ROAD_ID);
        let same = corrupt_mask(&mask, ROAD_ID, &CorruptionMode::UniformFlip { p: 0.0 }, 9).unwrap();
        assert_eq!(same, mask);
        let none = corrupt_mask(&mask, ROAD_ID, &CorruptionMode::UniformFlip { p: 1.0 }, 9).unwrap();
        assert!(none.class_ids.iter().all(|&id| id == VOID_ID));
        assert!(corrupt_mask(&mask, ROAD_ID, &CorruptionMode::UniformFlip { p: 1.5 }, 9).is_err());
    }

    #[test]
    fn corrupt_flip_binomial_count() {
        // 50,000 road pixels at p = 0.1: flips within 3 sigma of 5,000
        let mask = LabelMask::filled(250, 200, ROAD_ID);
        let out = corrupt_mask(&mask, ROAD_ID, &CorruptionMode::UniformFlip { p: 0.1 }, 123).unwrap();
        let flipped = out.class_ids.iter().filter(|&&id| id == VOID_ID).count() as f64;
        let sigma = (50_000.0f64 * 0.1 * 0.9).sqrt();
        assert!((flipped - 5000.0).abs() < 3.0 * sigma, "flipped {flipped}");
        // determinism
        let again = corrupt_mask(&mask, ROAD_ID, &CorruptionMode::UniformFlip { p: 0.1 }, 123).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn corrupt_shadow_band_confined() {
        let mask = LabelMask::filled(40, 30, ROAD_ID);
        let mode = CorruptionMode::ShadowBand { row_lo: 10, row_hi: 15, col_lo: 0, col_hi: 40 };
        let out = corrupt_mask(&mask, ROAD_ID, &mode, 0).unwrap();
        for row in 0..30 {
            for col in 0..40 {
                let want = if (10..15).contains(&row) { VOID_ID } else { ROAD_ID };
                assert_eq!(out.get(row, col), want);
            }
        }
    }

    #[test]
    fn corrupt_border_erode_matches_oracle() {
        // 20x20 road square inside void: erosion by k strips a k-wide ring
        let mut mask = LabelMask::filled(30, 30, VOID_ID);
        for row in 5..25 {
            for col in 5..25 {
                mask.set(row, col, ROAD_ID);
            }
        }
        let out = corrupt_mask(&mask, ROAD_ID, &CorruptionMode::BorderErode { k: 2 }, 0).unwrap();
        let road_left = out.class_ids.iter().filter(|&&id| id == ROAD_ID).count();
        assert_eq!(road_left, 16 * 16);
        for row in 7..23 {
            for col in 7..23 {
                assert_eq!(out.get(row, col), ROAD_ID);
            }
        }
    }
}
