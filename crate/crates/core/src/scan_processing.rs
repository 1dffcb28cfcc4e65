//! Ego-motion correction of raw scans and outlier removal.
//!
//! Correction maps every raw point through the lidar mount transform and a
//! fractional power of the inverse ego motion, so a scan taken while the
//! vehicle moves is expressed in the vehicle footprint frame at the scan
//! reference instant. Both filters operate per ring in azimuth order; the
//! boundary walk downstream depends on that ordering, so no cross-ring
//! smoothing is done.

use thiserror::Error;

use crate::dataset_io::{LidarPoint, LidarScan};
use crate::geometry::{GeometryError, RigidTransform, Vec3};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("neighbor count k must be >= 1")]
    BadNeighborCount,
    #[error("median window must be odd and >= 3, got {0}")]
    BadWindow(usize),
}

/// A scan whose points live in the vehicle footprint frame at the scan
/// reference instant.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedScan {
    pub timestamp: i64,
    pub points: Vec<LidarPoint>,
}

impl CorrectedScan {
    /// Indices grouped per ring, preserving stored (azimuth) order.
    pub fn ring_indices(&self) -> Vec<Vec<usize>> {
        let mut rings: Vec<Vec<usize>> = vec![Vec::new(); crate::dataset_io::BEAM_COUNT as usize];
        for (i, p) in self.points.iter().enumerate() {
            rings[p.ring as usize].push(i);
        }
        rings
    }
}

/// Applies `interpolate(inverse(ego), time_fraction) ∘ mount` to every
/// point. `ego` is the footprint motion over one scan period (pose at scan
/// end relative to pose at scan start), `mount` the lidar -> footprint
/// transform. Ordering and ring indices are preserved.
pub fn correct_motion(
    scan: &LidarScan,
    ego: &RigidTransform,
    mount: &RigidTransform,
) -> Result<CorrectedScan, GeometryError> {
    ego.rotation.rotate(Vec3::ZERO)?; // surface a non-unit ego rotation early
    mount.rotation.rotate(Vec3::ZERO)?;
    let inv_ego = ego.inverse();
    let mut points = Vec::with_capacity(scan.points.len());
    for p in &scan.points {
        let in_footprint = mount.apply_unchecked(p.position);
        let unwarp = inv_ego.interpolate(p.time_fraction)?;
        points.push(LidarPoint {
            position: unwarp.apply_unchecked(in_footprint),
            ring: p.ring,
            time_fraction: p.time_fraction,
        });
    }
    Ok(CorrectedScan { timestamp: scan.timestamp, points })
}

/// Statistical outlier removal. For each point the mean distance to its k
/// nearest neighbors on the same ring is computed; points whose mean
/// exceeds (global mean + stddev_mult * global stddev) are removed. Rings
/// with fewer than k+1 points pass through unfiltered.
pub fn statistical_filter(
    scan: &CorrectedScan,
    k: usize,
    stddev_mult: f64,
) -> Result<CorrectedScan, FilterError> {
    if k < 1 {
        return Err(FilterError::BadNeighborCount);
    }
    let rings = scan.ring_indices();
    // mean k-NN distance per point index, None for pass-through rings
    let mut mean_dist: Vec<Option<f64>> = vec![None; scan.points.len()];
    let mut dists: Vec<f64> = Vec::new();
    for ring in &rings {
        if ring.len() < k + 1 {
            continue;
        }
        for &i in ring {
            dists.clear();
            let pi = scan.points[i].position;
            for &j in ring {
                if j != i {
                    dists.push((scan.points[j].position - pi).norm());
                }
            }
            dists.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
            let mean = dists[..k].iter().sum::<f64>() / k as f64;
            mean_dist[i] = Some(mean);
        }
    }
    let measured: Vec<f64> = mean_dist.iter().flatten().copied().collect();
    if measured.is_empty() {
        return Ok(scan.clone());
    }
    let n = measured.len() as f64;
    let mean = measured.iter().sum::<f64>() / n;
    let var = measured.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let threshold = mean + stddev_mult * var.sqrt();
    let points = scan
        .points
        .iter()
        .zip(&mean_dist)
        .filter(|(_, d)| d.map_or(true, |d| d <= threshold))
        .map(|(p, _)| *p)
        .collect();
    Ok(CorrectedScan { timestamp: scan.timestamp, points })
}

/// Replaces each coordinate with the component-wise median over the
/// azimuth-ordered window centered on the point within its ring. Near ring
/// ends the window shrinks symmetrically, so it stays odd-sized and
/// centered and the first and last points pass through unchanged.
pub fn median_filter(scan: &CorrectedScan, window: usize) -> Result<CorrectedScan, FilterError> {
    if window < 3 || window % 2 == 0 {
        return Err(FilterError::BadWindow(window));
    }
    let half = window / 2;
    let rings = scan.ring_indices();
    let mut points = scan.points.clone();
    let mut buf: Vec<f64> = Vec::with_capacity(window);
    for ring in &rings {
        for (pos, &i) in ring.iter().enumerate() {
            let reach = half.min(pos).min(ring.len() - 1 - pos);
            let lo = pos - reach;
            let hi = pos + reach;
            let mut median_of = |get: fn(&Vec3) -> f64| {
                buf.clear();
                for &j in &ring[lo..=hi] {
                    buf.push(get(&scan.points[j].position));
                }
                buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
                buf[buf.len() / 2]
            };
            points[i].position = Vec3::new(
                median_of(|v| v.x),
                median_of(|v| v.y),
                median_of(|v| v.z),
            );
        }
    }
    Ok(CorrectedScan { timestamp: scan.timestamp, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;

    fn ring_scan(points: Vec<(f64, f64, f64)>, ring: u8) -> CorrectedScan {
        let n = points.len();
        CorrectedScan {
            timestamp: 0,
            points: points
                .into_iter()
                .enumerate()
                .map(|(i, (x, y, z))| LidarPoint {
                    position: Vec3::new(x, y, z),
                    ring,
                    time_fraction: i as f64 / n as f64,
                })
                .collect(),
        }
    }

    fn flat_ring(n: usize, radius: f64) -> Vec<(f64, f64, f64)> {
        (0..n)
            .map(|i| {
                let az = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                (radius * az.cos(), radius * az.sin(), 0.0)
            })
            .collect()
    }

    #[test]
    fn identity_ego_is_pure_mount_transform() {
        let mount = RigidTransform::new(
            Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 7f64.to_radians()),
            Vec3::new(0.0, 0.0, 1.9),
        );
        let raw = LidarScan {
            timestamp: 5,
            points: flat_ring(100, 6.0)
                .into_iter()
                .enumerate()
                .map(|(i, (x, y, z))| LidarPoint {
                    position: Vec3::new(x, y, z),
                    ring: 0,
                    time_fraction: i as f64 / 100.0,
                })
                .collect(),
        };
        let corrected = correct_motion(&raw, &RigidTransform::IDENTITY, &mount).unwrap();
        for (c, r) in corrected.points.iter().zip(&raw.points) {
            let want = mount.apply(r.position).unwrap();
            assert!((c.position - want).norm() < 1e-15);
            assert_eq!(c.ring, r.ring);
        }
    }

    #[test]
    fn forward_translation_shifts_late_points_backward() {
        let ego = RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let raw = LidarScan {
            timestamp: 0,
            points: vec![
                LidarPoint { position: Vec3::new(5.0, 0.0, 0.0), ring: 0, time_fraction: 0.0 },
                LidarPoint { position: Vec3::new(5.0, 0.0, 0.0), ring: 0, time_fraction: 0.999_999_999 },
            ],
        };
        let corrected = correct_motion(&raw, &ego, &RigidTransform::IDENTITY).unwrap();
        let d = corrected.points[1].position - corrected.points[0].position;
        assert!((d.x + 1.0).abs() < 1e-6 && d.y.abs() < 1e-12 && d.z.abs() < 1e-12);
    }

    #[test]
    fn screw_distortion_restored_to_plane() {
        // forward-distortion oracle: distort points of a static plane with
        // the constant-velocity screw model, correct, check plane residual
        let ego = RigidTransform::new(
            Quaternion::from_yaw(10f64.to_radians()),
            Vec3::new(0.5, 0.0, 0.0),
        );
        let mut raw_points = Vec::new();
        for (i, (x, y, _)) in flat_ring(360, 7.0).into_iter().enumerate() {
            let f = i as f64 / 360.0;
            // plane point as it would be measured at fraction f under the
            // spec's fractional-ego convention
            let warp = ego.interpolate(f).unwrap();
            raw_points.push(LidarPoint {
                position: warp.apply(Vec3::new(x, y, 0.0)).unwrap(),
                ring: 0,
                time_fraction: f,
            });
        }
        let raw = LidarScan { timestamp: 0, points: raw_points };
        let corrected = correct_motion(&raw, &ego, &RigidTransform::IDENTITY).unwrap();
        let max_residual = corrected
            .points
            .iter()
            .map(|p| p.position.z.abs())
            .fold(0.0, f64::max);
        assert!(max_residual < 1e-3, "max residual {max_residual}");
    }

    #[test]
    fn statistical_filter_keeps_uniform_ring() {
        let scan = ring_scan(flat_ring(100, 6.0), 2);
        let out = statistical_filter(&scan, 10, 2.0).unwrap();
        assert_eq!(out, scan);
    }

    #[test]
    fn statistical_filter_removes_lofted_point() {
        // construct-and-check oracle: exactly one point lofted 10 m above a
        // planar ring must be removed
        let mut pts = flat_ring(100, 6.0);
        pts[37].2 = 10.0;
        let scan = ring_scan(pts, 0);
        let out = statistical_filter(&scan, 10, 2.0).unwrap();
        assert_eq!(out.points.len(), 99);
        assert!(out.points.iter().all(|p| p.position.z.abs() < 1e-9));
    }

    #[test]
    fn statistical_filter_empty_and_small() {
        let empty = CorrectedScan { timestamp: 0, points: Vec::new() };
        assert_eq!(statistical_filter(&empty, 10, 2.0).unwrap(), empty);
        // ring smaller than k+1 passes through
        let small = ring_scan(flat_ring(5, 6.0), 1);
        assert_eq!(statistical_filter(&small, 10, 2.0).unwrap(), small);
        assert!(matches!(statistical_filter(&small, 0, 2.0), Err(FilterError::BadNeighborCount)));
    }

    #[test]
    fn statistical_filter_reaches_fixed_point() {
        // smoothly varying point density (bounded spacing distribution)
        // plus two gross outliers in the dense sector
        let n = 200;
        let mut pts: Vec<(f64, f64, f64)> = (0..n)
            .map(|i| {
                let theta = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let az = theta + 0.3 * theta.sin();
                (6.0 * az.cos(), 6.0 * az.sin(), 0.0)
            })
            .collect();
        pts[5].2 = 10.0;
        pts[12].2 = -10.0;
        let scan = ring_scan(pts, 0);
        let first = statistical_filter(&scan, 10, 3.0).unwrap();
        let removed_first = scan.points.len() - first.points.len();
        assert_eq!(removed_first, 2);
        let mut prev = first;
        for _ in 0..3 {
            let next = statistical_filter(&prev, 10, 3.0).unwrap();
            let removed = prev.points.len() - next.points.len();
            assert!(removed <= removed_first);
            if next == prev {
                return;
            }
            prev = next;
        }
        panic!("no fixed point within 3 passes");
    }

    #[test]
    fn median_filter_parameter_check() {
        let scan = ring_scan(flat_ring(10, 6.0), 0);
        assert!(matches!(median_filter(&scan, 4), Err(FilterError::BadWindow(4))));
        assert!(matches!(median_filter(&scan, 1), Err(FilterError::BadWindow(1))));
    }

    #[test]
    fn median_filter_collinear_unchanged() {
        let pts: Vec<(f64, f64, f64)> = (0..20).map(|i| (i as f64, 2.0 * i as f64, 0.5 * i as f64)).collect();
        let scan = ring_scan(pts, 0);
        let out = median_filter(&scan, 3).unwrap();
        for (a, b) in out.points.iter().zip(&scan.points) {
            assert!((a.position - b.position).norm() < 1e-12);
        }
    }

    #[test]
    fn median_filter_suppresses_spike() {
        let mut pts: Vec<(f64, f64, f64)> = (0..21).map(|i| (i as f64, 0.0, 0.0)).collect();
        pts[10].2 = 0.5;
        let scan = ring_scan(pts, 0);
        let out = median_filter(&scan, 5).unwrap();
        assert!(out.points[10].position.z.abs() < 1e-12);
    }

    #[test]
    fn median_filter_matches_sort_oracle() {
        let mut st = 0xabcdu64;
        let mut next = || {
            st ^= st << 13;
            st ^= st >> 7;
            st ^= st << 17;
            (st >> 11) as f64 / (1u64 << 53) as f64
        };
        let pts: Vec<(f64, f64, f64)> =
            (0..50).map(|_| (next() * 10.0, next() * 10.0, next())).collect();
        let scan = ring_scan(pts.clone(), 3);
        let window = 7usize;
        let out = median_filter(&scan, window).unwrap();
        for i in 0..pts.len() {
            let reach = (window / 2).min(i).min(pts.len() - 1 - i);
            let (lo, hi) = (i - reach, i + reach);
            let med = |get: fn(&(f64, f64, f64)) -> f64| {
                let mut vals: Vec<f64> = pts[lo..=hi].iter().map(get).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                vals[vals.len() / 2]
            };
            let want = Vec3::new(med(|p| p.0), med(|p| p.1), med(|p| p.2));
            assert!((out.points[i].position - want).norm() < 1e-12);
        }
    }

    #[test]
    fn filters_preserve_ordering() {
        let mut pts = flat_ring(100, 6.0);
        pts[50].2 = 8.0;
        let scan = ring_scan(pts, 0);
        let out = statistical_filter(&scan, 10, 2.0).unwrap();
        let out = median_filter(&out, 5).unwrap();
        for w in out.points.windows(2) {
            assert!(w[0].time_fraction < w[1].time_fraction);
        }
    }
}
