//! Road-surface extraction from the forward ground-intersecting rings.
//!
//! Each usable ring is modelled as a ground circle (forward center offset,
//! radius). The predicted vehicle trajectory — straight, or an arc derived
//! from the yaw angle — is intersected with each ring circle to obtain a
//! seed point that is assumed on-road. From the measured point nearest the
//! seed the walk moves outward in both azimuth directions until the
//! smoothness angle between consecutive points exceeds the threshold; the
//! surviving span is the ring's road segment.

use thiserror::Error;

use crate::dataset_io::Pose;
use crate::geometry::{Quaternion, RigidTransform, Vec3};
use crate::scan_processing::CorrectedScan;

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("yaw angle {0} rad outside (-pi/2, pi/2)")]
    YawOutOfRange(f64),
    #[error("turn radius {radius} tighter than half the track width {half_track}")]
    TurnTooSharp { radius: f64, half_track: f64 },
    #[error("wheelbase and track width must be positive")]
    BadVehicleDims,
    #[error("trajectory and ring circles do not intersect (R={radius}, d={center_offset}, r_n={ring_radius})")]
    NoSeed { radius: f64, center_offset: f64, ring_radius: f64 },
}

/// Ground circle traced by one beam on flat ground, in the vehicle
/// footprint frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingModel {
    pub ring: u8,
    /// Forward (x) offset of the circle center.
    pub center_offset: f64,
    pub radius: f64,
}

/// Predicted vehicle trajectory over the next few meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryArc {
    Straight,
    /// Signed radius; positive turns left (+y).
    Turn { radius: f64 },
}

/// Road points of one corrected scan, with per-ring boundary bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadPointSet {
    pub timestamp: i64,
    pub points: Vec<Vec3>,
    pub ring_spans: Vec<RingSpan>,
    /// Rings that produced no seed this frame.
    pub skipped_rings: Vec<u8>,
}

impl RoadPointSet {
    pub fn empty(timestamp: i64) -> Self {
        RoadPointSet { timestamp, points: Vec::new(), ring_spans: Vec::new(), skipped_rings: Vec::new() }
    }
}

/// Boundary indices into a ring's azimuth-ordered point list. `right` is
/// the negative-azimuth side, `left` the positive; both bracket `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingSpan {
    pub ring: u8,
    pub right: usize,
    pub left: usize,
    pub seed: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractionParams {
    pub angle_threshold: f64,
    /// Max distance between the geometric seed and the nearest measured
    /// point before the ring is skipped (occlusion guard).
    pub seed_match_max: f64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams { angle_threshold: 10f64.to_radians(), seed_match_max: 0.5 }
    }
}

/// Turn radius from the yaw (steering) angle and vehicle dimensions:
/// R = H / tan(alpha) - W / 2, signed like alpha. alpha = 0 is straight.
pub fn trajectory_arc(alpha: f64, wheelbase: f64, track_width: f64) -> Result<TrajectoryArc, ExtractionError> {
    if !(wheelbase > 0.0 && track_width > 0.0) {
        return Err(ExtractionError::BadVehicleDims);
    }
    if alpha.abs() >= std::f64::consts::FRAC_PI_2 || alpha.is_nan() {
        return Err(ExtractionError::YawOutOfRange(alpha));
    }
    if alpha == 0.0 {
        return Ok(TrajectoryArc::Straight);
    }
    let magnitude = wheelbase / alpha.abs().tan() - track_width / 2.0;
    if magnitude < track_width / 2.0 {
        return Err(ExtractionError::TurnTooSharp { radius: magnitude, half_track: track_width / 2.0 });
    }
    Ok(TrajectoryArc::Turn { radius: alpha.signum() * magnitude })
}

/// Forward intersection of the trajectory circle (center (0, R), radius
/// |R|) with a ring circle (center (d, 0), radius r_n), on the ground
/// plane z = 0. Straight driving degenerates to (d + r_n, 0, 0).
pub fn seed_intersection(arc: &TrajectoryArc, ring: &RingModel) -> Result<Vec3, ExtractionError> {
    let d = ring.center_offset;
    let rn = ring.radius;
    let radius = match arc {
        TrajectoryArc::Straight => return Ok(Vec3::new(d + rn, 0.0, 0.0)),
        TrajectoryArc::Turn { radius } => *radius,
    };
    let no_seed = || ExtractionError::NoSeed { radius, center_offset: d, ring_radius: rn };
    // circle-circle intersection by radical-line construction
    let c_ring = (d, 0.0);
    let c_traj = (0.0, radius);
    let dx = c_traj.0 - c_ring.0;
    let dy = c_traj.1 - c_ring.1;
    let dist = (dx * dx + dy * dy).sqrt();
    let r2 = radius.abs();
    if dist <= (rn - r2).abs() || dist >= rn + r2 || dist == 0.0 {
        return Err(no_seed());
    }
    let a = (dist * dist + rn * rn - r2 * r2) / (2.0 * dist);
    let h2 = rn * rn - a * a;
    if h2 < 0.0 {
        return Err(no_seed());
    }
    let h = h2.sqrt();
    let mx = c_ring.0 + a * dx / dist;
    let my = c_ring.1 + a * dy / dist;
    let p1 = Vec3::new(mx + h * dy / dist, my - h * dx / dist, 0.0);
    let p2 = Vec3::new(mx - h * dy / dist, my + h * dx / dist, 0.0);
    let forward = if p1.x >= p2.x { p1 } else { p2 };
    if forward.x <= 0.0 {
        return Err(no_seed());
    }
    Ok(forward)
}

/// Elevation angle of the segment between two consecutive ring points,
/// relative to the ground plane.
pub fn smoothness_angle(a: Vec3, b: Vec3) -> f64 {
    let d = b - a;
    d.z.abs().atan2(d.x.hypot(d.y))
}

/// Walks outward from the seed in both azimuth directions, stopping at
/// the first consecutive pair whose smoothness angle exceeds the
/// threshold. Returns (right, left) boundary indices, the last on-road
/// index on each side.
pub fn smoothness_walk(ring_points: &[Vec3], seed_index: usize, angle_threshold: f64) -> (usize, usize) {
    let mut left = seed_index;
    while left + 1 < ring_points.len() {
        if smoothness_angle(ring_points[left], ring_points[left + 1]) > angle_threshold {
            break;
        }
        left += 1;
    }
    let mut right = seed_index;
    while right > 0 {
        if smoothness_angle(ring_points[right], ring_points[right - 1]) > angle_threshold {
            break;
        }
        right -= 1;
    }
    (right, left)
}

/// Runs the seed + walk procedure over every configured ring and unions
/// the surviving spans. Rings without a seed or without a close-enough
/// measured point contribute nothing and are listed in `skipped_rings`.
pub fn extract_road(
    scan: &CorrectedScan,
    arc: &TrajectoryArc,
    rings: &[RingModel],
    params: &ExtractionParams,
) -> RoadPointSet {
    let mut out = RoadPointSet::empty(scan.timestamp);
    let by_ring = scan.ring_indices();
    for model in rings {
        let indices = &by_ring[model.ring as usize];
        if indices.is_empty() {
            out.skipped_rings.push(model.ring);
            continue;
        }
        let seed = match seed_intersection(arc, model) {
            Ok(s) => s,
            Err(_) => {
                out.skipped_rings.push(model.ring);
                continue;
            }
        };
        let points: Vec<Vec3> = indices.iter().map(|&i| scan.points[i].position).collect();
        let seed_az = seed.y.atan2(seed.x);
        let seed_idx = nearest_azimuth(&points, seed_az);
        if (points[seed_idx] - seed).norm() > params.seed_match_max {
            out.skipped_rings.push(model.ring);
            continue;
        }
        let (right, left) = smoothness_walk(&points, seed_idx, params.angle_threshold);
        out.points.extend_from_slice(&points[right..=left]);
        out.ring_spans.push(RingSpan { ring: model.ring, right, left, seed: seed_idx });
    }
    out
}

fn nearest_azimuth(points: &[Vec3], target: f64) -> usize {
    // points are azimuth-ascending; binary search then compare neighbors
    let idx = points.partition_point(|p| p.y.atan2(p.x) < target);
    let mut best = idx.min(points.len() - 1);
    let diff = |i: usize| (points[i].y.atan2(points[i].x) - target).abs();
    if idx > 0 && diff(idx - 1) < diff(best) {
        best = idx - 1;
    }
    best
}

/// Fits ground-circle models for the given beams by intersecting each
/// beam direction with the z = 0 plane over the forward azimuth arc and
/// fitting a circle (Kasa least squares). Beams that do not reach the
/// ground produce no model.
pub fn ring_models_from_mount(
    mount: &RigidTransform,
    beam_elevations_deg: &[f64],
    ring_ids: &[u8],
) -> Vec<RingModel> {
    let origin = mount.apply_unchecked(Vec3::ZERO);
    let mut models = Vec::new();
    for &ring in ring_ids {
        let Some(&elev) = beam_elevations_deg.get(ring as usize) else { continue };
        let e = elev.to_radians();
        let mut samples = Vec::new();
        let mut az_deg = -90.0f64;
        while az_deg <= 90.0 {
            let az = az_deg.to_radians();
            let dir_sensor = Vec3::new(e.cos() * az.cos(), e.cos() * az.sin(), e.sin());
            let dir = mount.rotation.rotate_unchecked(dir_sensor);
            if dir.z < -1e-9 {
                let t = -origin.z / dir.z;
                let p = origin + dir.scaled(t);
                samples.push((p.x, p.y));
            }
            az_deg += 1.0;
        }
        if samples.len() < 120 {
            // beam leaves the ground over too much of the forward arc
            continue;
        }
        if let Some((cx, _cy, r)) = fit_circle(&samples) {
            models.push(RingModel { ring, center_offset: cx, radius: r });
        }
    }
    models
}

/// Algebraic circle fit: x^2 + y^2 = 2 a x + 2 b y + c.
fn fit_circle(samples: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = samples.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut sxz, mut syz, mut sz) = (0.0, 0.0, 0.0);
    for &(x, y) in samples {
        let z = x * x + y * y;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        sxz += x * z;
        syz += y * z;
        sz += z;
    }
    // normal equations for (2a, 2b, c)
    let m = [[sxx, sxy, sx], [sxy, syy, sy], [sx, sy, n]];
    let rhs = [sxz, syz, sz];
    let sol = solve3(&m, &rhs)?;
    let a = sol[0] / 2.0;
    let b = sol[1] / 2.0;
    let r2 = sol[2] + a * a + b * b;
    if r2 <= 0.0 {
        return None;
    }
    Some((a, b, r2.sqrt()))
}

fn solve3(m: &[[f64; 3]; 3], rhs: &[f64; 3]) -> Option<[f64; 3]> {
    let mut a = *m;
    let mut b = *rhs;
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in (row + 1)..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// The `count` lowest beams whose ground circle exists for the given
/// mount, lowest elevation first.
pub fn lowest_ground_rings(
    mount: &RigidTransform,
    beam_elevations_deg: &[f64],
    count: usize,
) -> Vec<u8> {
    let mut order: Vec<u8> = (0..beam_elevations_deg.len() as u8).collect();
    order.sort_by(|&a, &b| {
        beam_elevations_deg[a as usize]
            .partial_cmp(&beam_elevations_deg[b as usize])
            .unwrap()
    });
    let mut out = Vec::new();
    for ring in order {
        if !ring_models_from_mount(mount, beam_elevations_deg, &[ring]).is_empty() {
            out.push(ring);
            if out.len() == count {
                break;
            }
        }
    }
    out
}

/// Yaw (steering) angle estimate from the pose track via bicycle-model
/// kinematics: tan(alpha) = wheelbase * yaw_rate / speed.
pub fn estimate_yaw_angle(track: &[Pose], t: i64, wheelbase: f64) -> f64 {
    const HALF_WINDOW_NS: i64 = 50_000_000;
    let (Some(first), Some(last)) = (track.first(), track.last()) else { return 0.0 };
    let t0 = (t - HALF_WINDOW_NS).max(first.timestamp);
    let t1 = (t + HALF_WINDOW_NS).min(last.timestamp);
    if t1 <= t0 {
        return 0.0;
    }
    let (Ok(p0), Ok(p1)) = (
        crate::dataset_io::interpolate_pose(track, t0),
        crate::dataset_io::interpolate_pose(track, t1),
    ) else {
        return 0.0;
    };
    let dt = (t1 - t0) as f64 * 1e-9;
    let speed = (p1.position - p0.position).norm() / dt;
    if speed < 0.05 {
        return 0.0;
    }
    let rel = p0.orientation.conjugate().mul(p1.orientation);
    let rel = if rel.w < 0.0 { Quaternion::new(-rel.w, -rel.x, -rel.y, -rel.z) } else { rel };
    let yaw = 2.0 * rel.z.atan2(rel.w);
    let rate = yaw / dt;
    (wheelbase * rate / speed).atan()
}
