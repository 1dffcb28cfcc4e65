//! Concatenation of road points from a window of frames into a reference
//! frame via odometry.

use thiserror::Error;

use crate::dataset_io::Pose;
use crate::geometry::{RigidTransform, Vec3};
use crate::road_extraction::RoadPointSet;

#[derive(Debug, Error)]
pub enum AccumulationError {
    #[error("reference index {0} out of range")]
    BadReferenceIndex(usize),
    #[error("reference frame has no pose")]
    MissingReferencePose,
}

/// How many frames before and after the reference contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccumulationWindow {
    pub n_before: usize,
    pub n_after: usize,
}

impl Default for AccumulationWindow {
    fn default() -> Self {
        // 20 prior and 5 future frames
        AccumulationWindow { n_before: 20, n_after: 5 }
    }
}

/// One frame's pose and extracted road points, ready for accumulation.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub pose: Option<Pose>,
    pub roads: RoadPointSet,
}

/// Road points of a whole window expressed in the reference vehicle frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedCloud {
    pub timestamp: i64,
    pub points: Vec<Vec3>,
    /// Frame index (into the input list) each point came from.
    pub sources: Vec<usize>,
    /// Frames inside the window skipped for lack of a pose.
    pub skipped_frames: Vec<usize>,
    /// True when the window was clipped at a dataset boundary.
    pub clipped: bool,
}

/// Transform mapping current-frame coordinates into the reference frame:
/// T_ref^-1 ∘ T_cur in homogeneous form.
pub fn relative_pose(reference: &Pose, current: &Pose) -> RigidTransform {
    let inv_ref_rot = reference.orientation.conjugate();
    RigidTransform::new(
        inv_ref_rot.mul(current.orientation).normalized(),
        inv_ref_rot.rotate_unchecked(current.position - reference.position),
    )
}

/// Maps every road point of every frame in the clipped window into the
/// reference frame and concatenates them. Frames without a pose are
/// skipped and recorded.
pub fn accumulate(
    frames: &[FrameInput],
    ref_index: usize,
    window: &AccumulationWindow,
) -> Result<AccumulatedCloud, AccumulationError> {
    let reference = frames.get(ref_index).ok_or(AccumulationError::BadReferenceIndex(ref_index))?;
    let ref_pose = reference.pose.ok_or(AccumulationError::MissingReferencePose)?;
    let lo = ref_index.saturating_sub(window.n_before);
    let hi = (ref_index + window.n_after).min(frames.len().saturating_sub(1));
    let clipped = lo != ref_index.wrapping_sub(window.n_before) || hi != ref_index + window.n_after;
    let mut out = AccumulatedCloud {
        timestamp: reference.roads.timestamp,
        points: Vec::new(),
        sources: Vec::new(),
        skipped_frames: Vec::new(),
        clipped,
    };
    for idx in lo..=hi {
        let frame = &frames[idx];
        let Some(pose) = frame.pose else {
            out.skipped_frames.push(idx);
            continue;
        };
        let rel = relative_pose(&ref_pose, &pose);
        for &p in &frame.roads.points {
            out.points.push(rel.apply_unchecked(p));
            out.sources.push(idx);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;
    use crate::road_extraction::RoadPointSet;

    fn pose(t: i64, x: f64, y: f64, yaw: f64) -> Pose {
        Pose {
            timestamp: t,
            position: Vec3::new(x, y, 0.0),
            orientation: Quaternion::from_yaw(yaw),
        }
    }

    fn roads(t: i64, pts: &[(f64, f64, f64)]) -> RoadPointSet {
        let mut r = RoadPointSet::empty(t);
        r.points = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
        r
    }

    #[test]
    fn relative_pose_identity_for_same_pose() {
        let p = pose(0, 1.0, 2.0, 0.7);
        let rel = relative_pose(&p, &p);
        assert!(rel.rotation.angle() < 1e-12);
        assert!(rel.translation.norm() < 1e-12);
    }

    #[test]
    fn relative_pose_pure_translation() {
        let a = pose(0, 0.0, 0.0, 0.0);
        let b = pose(1, 3.0, 0.0, 0.0);
        let rel = relative_pose(&a, &b);
        assert!((rel.translation - Vec3::new(3.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(rel.rotation.angle() < 1e-12);
    }

    /// 4x4 homogeneous inverse-compose oracle for relative_pose.
    fn matrix_oracle(reference: &Pose, current: &Pose, v: Vec3) -> Vec3 {
        // world point, then into the reference frame
        let world = current.orientation.rotate(v).unwrap() + current.position;
        reference
            .orientation
            .conjugate()
            .rotate(world - reference.position)
            .unwrap()
    }

    #[test]
    fn relative_pose_matches_matrix_oracle() {
        let a = pose(0, 1.0, 2.0, 90f64.to_radians());
        let b = pose(1, 2.0, 2.0, 0.0);
        let rel = relative_pose(&a, &b);
        let mut st = 3u64;
        for _ in 0..50 {
            st ^= st << 13;
            st ^= st >> 7;
            st ^= st << 17;
            let r = (st >> 11) as f64 / (1u64 << 53) as f64;
            let v = Vec3::new(r * 10.0 - 5.0, r * 4.0, r);
            let got = rel.apply(v).unwrap();
            let want = matrix_oracle(&a, &b, v);
            assert!((got - want).norm() < 1e-9);
        }
    }

    #[test]
    fn window_zero_returns_own_points() {
        let frames = vec![FrameInput {
            pose: Some(pose(0, 5.0, 1.0, 0.3)),
            roads: roads(0, &[(1.0, 2.0, 0.0), (3.0, -1.0, 0.0)]),
        }];
        let cloud = accumulate(&frames, 0, &AccumulationWindow { n_before: 0, n_after: 0 }).unwrap();
        assert_eq!(cloud.points.len(), 2);
        assert!((cloud.points[0] - Vec3::new(1.0, 2.0, 0.0)).norm() < 1e-12);
        assert_eq!(cloud.sources, vec![0, 0]);
    }

    #[test]
    fn static_vehicle_superimposes_copies() {
        let frames: Vec<FrameInput> = (0..5)
            .map(|i| FrameInput {
                pose: Some(pose(i, 2.0, -1.0, 0.4)),
                roads: roads(i, &[(4.0, 0.5, 0.0)]),
            })
            .collect();
        let cloud = accumulate(&frames, 2, &AccumulationWindow { n_before: 2, n_after: 2 }).unwrap();
        assert_eq!(cloud.points.len(), 5);
        for p in &cloud.points {
            assert!((*p - cloud.points[0]).norm() < 1e-12);
        }
    }

    #[test]
    fn moving_vehicle_points_stay_on_plane() {
        // synthetic-scene oracle: a road plane observed from a translating,
        // yawing vehicle accumulates back onto z = 0 exactly
        let frames: Vec<FrameInput> = (0..30)
            .map(|i| {
                let x = i as f64 * 0.3;
                let yaw = i as f64 * 0.01;
                let p = pose(i, x, 0.0, yaw);
                // a grid of world ground points expressed in this vehicle frame
                let world = [(x + 4.0, 1.0, 0.0), (x + 6.0, -2.0, 0.0)];
                let local: Vec<(f64, f64, f64)> = world
                    .iter()
                    .map(|&(wx, wy, wz)| {
                        let v = p
                            .orientation
                            .conjugate()
                            .rotate(Vec3::new(wx, wy, wz) - p.position)
                            .unwrap();
                        (v.x, v.y, v.z)
                    })
                    .collect();
                FrameInput { pose: Some(p), roads: roads(i, &local) }
            })
            .collect();
        let cloud = accumulate(&frames, 20, &AccumulationWindow::default()).unwrap();
        assert_eq!(cloud.points.len(), frames[0].roads.points.len() * 26);
        for p in &cloud.points {
            assert!(p.z.abs() < 1e-9);
        }
    }

    #[test]
    fn frame_invariance() {
        let frames: Vec<FrameInput> = (0..10)
            .map(|i| FrameInput {
                pose: Some(pose(i, i as f64 * 0.5, (i as f64 * 0.2).sin(), i as f64 * 0.02)),
                roads: roads(i, &[(5.0, 1.0, 0.1), (6.0, -1.0, 0.0)]),
            })
            .collect();
        let in_a = accumulate(&frames, 4, &AccumulationWindow { n_before: 3, n_after: 3 }).unwrap();
        let in_b = accumulate(&frames, 7, &AccumulationWindow { n_before: 6, n_after: 0 }).unwrap();
        // common subset: frames 4..=7 appear in both windows; map A's points to B
        let a_pose = frames[4].pose.unwrap();
        let b_pose = frames[7].pose.unwrap();
        let a_to_b = relative_pose(&b_pose, &a_pose);
        for (p, src) in in_a.points.iter().zip(&in_a.sources) {
            if *src >= 4 && *src <= 7 {
                let mapped = a_to_b.apply(*p).unwrap();
                // find the same source point in B
                let hit = in_b
                    .points
                    .iter()
                    .zip(&in_b.sources)
                    .filter(|(_, s)| *s == src)
                    .map(|(q, _)| (mapped - *q).norm())
                    .fold(f64::MAX, f64::min);
                assert!(hit < 1e-9, "frame-invariance violated: {hit}");
            }
        }
    }

    #[test]
    fn missing_pose_skipped_with_diagnostic() {
        let mut frames: Vec<FrameInput> = (0..5)
            .map(|i| FrameInput {
                pose: Some(pose(i, i as f64, 0.0, 0.0)),
                roads: roads(i, &[(1.0, 0.0, 0.0)]),
            })
            .collect();
        frames[1].pose = None;
        let cloud = accumulate(&frames, 2, &AccumulationWindow { n_before: 2, n_after: 2 }).unwrap();
        assert_eq!(cloud.points.len(), 4);
        assert_eq!(cloud.skipped_frames, vec![1]);
        // count conservation: points = sum over contributing frames
        assert_eq!(cloud.points.len(), frames.len() - 1);
    }

    #[test]
    fn window_clipping_flagged() {
        let frames: Vec<FrameInput> = (0..3)
            .map(|i| FrameInput {
                pose: Some(pose(i, 0.0, 0.0, 0.0)),
                roads: roads(i, &[(1.0, 0.0, 0.0)]),
            })
            .collect();
        let cloud = accumulate(&frames, 0, &AccumulationWindow::default()).unwrap();
        assert!(cloud.clipped);
        assert_eq!(cloud.points.len(), 3);
        assert!(matches!(
            accumulate(&frames, 9, &AccumulationWindow::default()),
            Err(AccumulationError::BadReferenceIndex(9))
        ));
    }
}
