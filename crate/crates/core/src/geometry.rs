//! Value types and exact operations for 3-D vectors, unit quaternions,
//! rigid transforms and pinhole camera projection.
//!
//! Conventions: right-handed frames with x forward, y left, z up in the
//! vehicle footprint frame. Quaternions are Hamilton convention, stored
//! (w, x, y, z), acting as active rotations. All types are immutable
//! values and all operations are pure functions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance within which a quaternion must be unit-norm to be usable
/// as a rotation.
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("quaternion norm {norm} deviates from unit beyond tolerance")]
    InvalidRotation { norm: f64 },
    #[error("interpolation fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * other.z - self.z * other.y,
            y: self.z * other.x - self.x * other.z,
            z: self.x * other.y - self.y * other.x,
        }
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        self.scaled(1.0 / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Hamilton quaternion, (w, x, y, z) storage order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized();
        let half = angle * 0.5;
        let s = half.sin();
        Quaternion::new(half.cos(), a.x * s, a.y * s, a.z * s)
    }

    /// Rotation about +z (yaw).
    pub fn from_yaw(angle: f64) -> Self {
        Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), angle)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn normalized(self) -> Quaternion {
        let n = self.norm();
        Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    fn check_unit(self) -> Result<(), GeometryError> {
        let n = self.norm();
        if (n - 1.0).abs() > UNIT_TOL {
            Err(GeometryError::InvalidRotation { norm: n })
        } else {
            Ok(())
        }
    }

    /// Hamilton product.
    pub fn mul(self, o: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Rotates `v` by the q * v * q^-1 sandwich.
    pub fn rotate(self, v: Vec3) -> Result<Vec3, GeometryError> {
        self.check_unit()?;
        Ok(self.rotate_unchecked(v))
    }

    pub(crate) fn rotate_unchecked(self, v: Vec3) -> Vec3 {
        // q v q* expanded via the cross-product identity.
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v).scaled(2.0);
        v + t.scaled(self.w) + u.cross(t)
    }

    /// Rotation angle in [0, pi].
    pub fn angle(self) -> f64 {
        let v = Vec3::new(self.x, self.y, self.z).norm();
        2.0 * v.atan2(self.w.abs())
    }

    /// Fractional rotation: identity at f=0, self at f=1, along the
    /// shortest arc (axis-angle scaling).
    pub fn pow(self, f: f64) -> Quaternion {
        let q = if self.w < 0.0 { Quaternion::new(-self.w, -self.x, -self.y, -self.z) } else { self };
        let vn = Vec3::new(q.x, q.y, q.z).norm();
        if vn < 1e-15 {
            return Quaternion::IDENTITY;
        }
        let angle = 2.0 * vn.atan2(q.w);
        let axis = Vec3::new(q.x, q.y, q.z).scaled(1.0 / vn);
        Quaternion::from_axis_angle(axis, angle * f)
    }

    /// Builds a unit quaternion from a row-major rotation matrix
    /// (Shepperd's branch selection).
    pub fn from_rotation_matrix(m: &[[f64; 3]; 3]) -> Quaternion {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quaternion::new(
                0.25 * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quaternion::new(
                (m[2][1] - m[1][2]) / s,
                0.25 * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quaternion::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                0.25 * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quaternion::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                0.25 * s,
            )
        };
        q.normalized()
    }

    /// Spherical interpolation between two unit quaternions along the
    /// shortest arc.
    pub fn slerp(self, other: Quaternion, t: f64) -> Quaternion {
        let dot = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z;
        let rel = if dot < 0.0 {
            self.conjugate().mul(Quaternion::new(-other.w, -other.x, -other.y, -other.z))
        } else {
            self.conjugate().mul(other)
        };
        self.mul(rel.pow(t)).normalized()
    }
}

/// Rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Quaternion,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Quaternion::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Quaternion, translation: Vec3) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        RigidTransform::new(Quaternion::IDENTITY, translation)
    }

    /// Maps a point: R v + t.
    pub fn apply(&self, v: Vec3) -> Result<Vec3, GeometryError> {
        Ok(self.rotation.rotate(v)? + self.translation)
    }

    pub(crate) fn apply_unchecked(&self, v: Vec3) -> Vec3 {
        self.rotation.rotate_unchecked(v) + self.translation
    }

    /// Composition: (a * b)(v) == a(b(v)).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation.mul(other.rotation).normalized(),
            self.rotation.rotate_unchecked(other.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv_rot = self.rotation.conjugate();
        RigidTransform::new(inv_rot, -inv_rot.rotate_unchecked(self.translation))
    }

    /// Fractional transform: translation scaled linearly, rotation
    /// spherically interpolated from identity. Exact for constant-velocity
    /// screw motion about a fixed axis.
    pub fn interpolate(&self, fraction: f64) -> Result<RigidTransform, GeometryError> {
        if !(0.0..=1.0).contains(&fraction) || fraction.is_nan() {
            return Err(GeometryError::FractionOutOfRange(fraction));
        }
        Ok(RigidTransform::new(
            self.rotation.pow(fraction),
            self.translation.scaled(fraction),
        ))
    }
}

/// Sub-pixel image coordinate; real-valued until the consumer rasterizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

/// Pinhole intrinsics plus the lidar -> camera rigid transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub ox: f64,
    pub oy: f64,
    pub width: u32,
    pub height: u32,
    /// lidar frame -> camera frame
    pub extrinsic: RigidTransform,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.ox > 0.0 && self.ox < self.width as f64) || !(self.oy > 0.0 && self.oy < self.height as f64) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({}, {}) outside image {}x{}",
                self.ox, self.oy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Projects a lidar-frame point. `None` marks a point behind the
    /// camera (Z_c <= 0), which is an outcome, not an error.
    pub fn project(&self, p_lidar: Vec3) -> Result<Option<Pixel>, GeometryError> {
        let p_cam = self.extrinsic.apply(p_lidar)?;
        if p_cam.z <= 0.0 {
            return Ok(None);
        }
        Ok(Some(Pixel {
            u: self.fx * p_cam.x / p_cam.z + self.ox,
            v: self.fy * p_cam.y / p_cam.z + self.oy,
        }))
    }

    /// Same intrinsics rescaled to a different output resolution.
    pub fn rescaled(&self, width: u32, height: u32) -> CameraModel {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraModel {
            fx: self.fx * sx,
            fy: self.fy * sy,
            ox: self.ox * sx,
            oy: self.oy * sy,
            width,
            height,
            extrinsic: self.extrinsic,
        }
    }
}
