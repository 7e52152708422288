//! Geometric primitives: vectors, quaternions, axis-aligned and oriented
//! boxes, rays, and the slab-based intersection tests the renderer is built on.
//!
//! World frame is right-handed with +z up. All lengths are meters.

use std::ops::{Add, Div, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on unit-length quantities (quaternion norms, ray directions).
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("half extents must be strictly positive, got {0:?}")]
    DegenerateExtents([f64; 3]),
    #[error("quaternion norm {0} is not 1 within tolerance")]
    NotUnitQuaternion(f64),
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("ray direction has zero length")]
    ZeroDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Vec3::new(v, v, v)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn length(self) -> f64 {
        self.length_squared().sqrt()
    }

    /// Returns `None` for (near-)zero vectors.
    pub fn try_normalize(self) -> Option<Vec3> {
        let len = self.length();
        if len > 0.0 && len.is_finite() {
            Some(self / len)
        } else {
            None
        }
    }

    pub fn abs(self) -> Vec3 {
        Vec3::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn mul_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn max_element(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn min_element(self) -> f64 {
        self.x.min(self.y).min(self.z)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix. Only used for rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub rows: [Vec3; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        rows: [Vec3::X, Vec3::Y, Vec3::Z],
    };

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3 {
            rows: [
                Vec3::new(c0.x, c1.x, c2.x),
                Vec3::new(c0.y, c1.y, c2.y),
                Vec3::new(c0.z, c1.z, c2.z),
            ],
        }
    }

    pub fn col(&self, i: usize) -> Vec3 {
        Vec3::new(self.rows[0][i], self.rows[1][i], self.rows[2][i])
    }

    pub fn transpose(&self) -> Mat3 {
        Mat3::from_cols(self.rows[0], self.rows[1], self.rows[2])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.rows[0].dot(v), self.rows[1].dot(v), self.rows[2].dot(v))
    }

    pub fn abs(&self) -> Mat3 {
        Mat3 {
            rows: [self.rows[0].abs(), self.rows[1].abs(), self.rows[2].abs()],
        }
    }
}

/// Unit quaternion stored as `[w, x, y, z]` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl From<[f64; 4]> for Quat {
    fn from(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        let a = axis.try_normalize().unwrap_or(Vec3::Z);
        let (s, c) = (angle * 0.5).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_unit(&self) -> bool {
        self.is_finite() && (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    pub fn normalized(&self) -> Result<Quat, GeometryError> {
        if !self.is_finite() {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        let n = self.norm();
        if n == 0.0 {
            return Err(GeometryError::ZeroQuaternion);
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scale(&self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn add(&self, o: &Quat) -> Quat {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }

    /// Hamilton product `self * o`.
    pub fn mul(&self, o: &Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn to_mat3(&self) -> Mat3 {
        let Quat { w, x, y, z } = *self;
        Mat3 {
            rows: [
                Vec3::new(
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ),
                Vec3::new(
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ),
                Vec3::new(
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ),
            ],
        }
    }

    /// Converts an orthonormal rotation matrix (Shepperd's method).
    pub fn from_mat3(m: &Mat3) -> Quat {
        let r = &m.rows;
        let trace = r[0].x + r[1].y + r[2].z;
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (r[2].y - r[1].z) / s,
                (r[0].z - r[2].x) / s,
                (r[1].x - r[0].y) / s,
            )
        } else if r[0].x > r[1].y && r[0].x > r[2].z {
            let s = (1.0 + r[0].x - r[1].y - r[2].z).sqrt() * 2.0;
            Quat::new(
                (r[2].y - r[1].z) / s,
                0.25 * s,
                (r[0].y + r[1].x) / s,
                (r[0].z + r[2].x) / s,
            )
        } else if r[1].y > r[2].z {
            let s = (1.0 + r[1].y - r[0].x - r[2].z).sqrt() * 2.0;
            Quat::new(
                (r[0].z - r[2].x) / s,
                (r[0].y + r[1].x) / s,
                0.25 * s,
                (r[1].z + r[2].y) / s,
            )
        } else {
            let s = (1.0 + r[2].z - r[0].x - r[1].y).sqrt() * 2.0;
            Quat::new(
                (r[1].x - r[0].y) / s,
                (r[0].z + r[2].x) / s,
                (r[1].z + r[2].y) / s,
                0.25 * s,
            )
        };
        q.normalized().unwrap_or(Quat::IDENTITY)
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        self.to_mat3().mul_vec(v)
    }

    /// Shortest-arc spherical interpolation. `t` in [0, 1].
    pub fn slerp(&self, other: &Quat, t: f64) -> Quat {
        let mut b = *other;
        let mut cos = self.dot(&b);
        if cos < 0.0 {
            b = b.scale(-1.0);
            cos = -cos;
        }
        if cos > 1.0 - 1e-12 {
            let q = self.scale(1.0 - t).add(&b.scale(t));
            return q.normalized().unwrap_or(*self);
        }
        let theta = cos.min(1.0).acos();
        let sin = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / sin;
        let wb = (t * theta).sin() / sin;
        self.scale(wa).add(&b.scale(wb)).normalized().unwrap_or(*self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Aabb { min, max }
    }

    pub fn from_center_half(center: Vec3, half: Vec3) -> Self {
        Aabb::new(center - half, center + half)
    }

    /// The empty box: union identity.
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::splat(f64::INFINITY),
            max: Vec3::splat(f64::NEG_INFINITY),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn contains_point(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn contains_aabb(&self, o: &Aabb) -> bool {
        self.contains_point(o.min) && self.contains_point(o.max)
    }

    /// Grows the box by `pad` on every side.
    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::splat(pad),
            max: self.max + Vec3::splat(pad),
        }
    }

    pub fn longest_axis(&self) -> usize {
        let e = self.extent();
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }

    /// Slab test against this box; see [`ray_aabb_intersect`].
    pub fn intersect(&self, ray: &Ray) -> Option<HitInterval> {
        slab_test(ray.origin, ray.direction, self.min, self.max)
    }
}

/// Oriented box. `rotation` maps box-local coordinates to world.
///
/// Deserialization does not validate; decoded boxes go through scene
/// validation before use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ObbWire", into = "ObbWire")]
pub struct Obb {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub rotation: Quat,
}

impl Obb {
    pub fn new(center: Vec3, half_extents: Vec3, rotation: Quat) -> Result<Self, GeometryError> {
        if !center.is_finite() {
            return Err(GeometryError::NonFinite("center"));
        }
        if !half_extents.is_finite() {
            return Err(GeometryError::NonFinite("half_extents"));
        }
        if half_extents.min_element() <= 0.0 {
            return Err(GeometryError::DegenerateExtents(half_extents.to_array()));
        }
        if !rotation.is_finite() {
            return Err(GeometryError::NonFinite("rotation"));
        }
        if !rotation.is_unit() {
            return Err(GeometryError::NotUnitQuaternion(rotation.norm()));
        }
        Ok(Obb {
            center,
            half_extents,
            rotation,
        })
    }

    /// Checks the invariants [`Obb::new`] enforces.
    pub fn check(&self) -> Result<(), GeometryError> {
        Obb::new(self.center, self.half_extents, self.rotation).map(|_| ())
    }

    pub fn axis_aligned(center: Vec3, half_extents: Vec3) -> Result<Self, GeometryError> {
        Obb::new(center, half_extents, Quat::IDENTITY)
    }

    /// Builds an axis-aligned box from its min and max corners.
    pub fn from_min_max(min: Vec3, max: Vec3) -> Result<Self, GeometryError> {
        Obb::axis_aligned((min + max) * 0.5, (max - min) * 0.5)
    }

    pub fn volume(&self) -> f64 {
        let h = self.half_extents;
        8.0 * h.x * h.y * h.z
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let m = self.rotation.to_mat3();
        let h = self.half_extents;
        let mut out = [Vec3::ZERO; 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -h.x } else { h.x };
            let sy = if i & 2 == 0 { -h.y } else { h.y };
            let sz = if i & 4 == 0 { -h.z } else { h.z };
            *c = self.center + m.mul_vec(Vec3::new(sx, sy, sz));
        }
        out
    }

    /// Precomputes the rotation matrices for repeated queries.
    pub fn prepare(&self) -> PreparedObb {
        let to_world = self.rotation.to_mat3();
        PreparedObb {
            center: self.center,
            half_extents: self.half_extents,
            to_world,
            to_local: to_world.transpose(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ObbWire {
    center: [f64; 3],
    half_extents: [f64; 3],
    rotation_quat: [f64; 4],
}

impl From<ObbWire> for Obb {
    fn from(w: ObbWire) -> Self {
        Obb {
            center: w.center.into(),
            half_extents: w.half_extents.into(),
            rotation: w.rotation_quat.into(),
        }
    }
}

impl From<Obb> for ObbWire {
    fn from(b: Obb) -> Self {
        ObbWire {
            center: b.center.into(),
            half_extents: b.half_extents.into(),
            rotation_quat: b.rotation.into(),
        }
    }
}

/// An [`Obb`] with its rotation expanded to matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedObb {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub to_world: Mat3,
    pub to_local: Mat3,
}

impl PreparedObb {
    pub fn to_local_point(&self, p: Vec3) -> Vec3 {
        self.to_local.mul_vec(p - self.center)
    }

    pub fn contains_point(&self, p: Vec3) -> bool {
        let l = self.to_local_point(p);
        let h = self.half_extents;
        l.x.abs() <= h.x && l.y.abs() <= h.y && l.z.abs() <= h.z
    }

    pub fn intersect(&self, ray: &Ray) -> Option<HitInterval> {
        let origin = self.to_local_point(ray.origin);
        let dir = self.to_local.mul_vec(ray.direction);
        slab_test(origin, dir, -self.half_extents, self.half_extents)
    }

    pub fn world_aabb(&self) -> Aabb {
        let e = self.to_world.abs().mul_vec(self.half_extents);
        Aabb::from_center_half(self.center, e)
    }

    /// Whether this box and `aabb` share a region of positive volume
    /// (separating-axis test over the 15 candidate axes). Contact with
    /// overlap thinner than `tolerance` meters does not count.
    pub fn overlaps_aabb(&self, aabb: &Aabb, tolerance: f64) -> bool {
        let a_center = aabb.center();
        let a_half = aabb.extent() * 0.5;
        let d = self.center - a_center;
        let box_axes = [self.to_world.col(0), self.to_world.col(1), self.to_world.col(2)];
        let world_axes = [Vec3::X, Vec3::Y, Vec3::Z];

        let separated_on = |axis: Vec3| -> bool {
            let ra = a_half.x * axis.x.abs() + a_half.y * axis.y.abs() + a_half.z * axis.z.abs();
            let rb = self.half_extents.x * box_axes[0].dot(axis).abs()
                + self.half_extents.y * box_axes[1].dot(axis).abs()
                + self.half_extents.z * box_axes[2].dot(axis).abs();
            d.dot(axis).abs() >= ra + rb - tolerance
        };

        for axis in world_axes.iter().chain(box_axes.iter()) {
            if separated_on(*axis) {
                return false;
            }
        }
        for wa in &world_axes {
            for ba in &box_axes {
                let c = wa.cross(*ba);
                let n2 = c.length_squared();
                // Parallel edge pairs are already covered by the face axes.
                if n2 < 1e-12 {
                    continue;
                }
                if separated_on(c / n2.sqrt()) {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self, GeometryError> {
        if !origin.is_finite() {
            return Err(GeometryError::NonFinite("ray origin"));
        }
        let direction = direction.try_normalize().ok_or(GeometryError::ZeroDirection)?;
        Ok(Ray { origin, direction })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Entry and exit ray parameters, `0 <= t_near <= t_far`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitInterval {
    pub t_near: f64,
    pub t_far: f64,
}

impl HitInterval {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_near + self.t_far)
    }
}

#[inline]
fn slab_test(origin: Vec3, dir: Vec3, min: Vec3, max: Vec3) -> Option<HitInterval> {
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for axis in 0..3 {
        let o = origin[axis];
        let d = dir[axis];
        if d == 0.0 {
            // Parallel to this slab: inside it for every t, or never.
            if o < min[axis] || o > max[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let t0 = (min[axis] - o) * inv;
        let t1 = (max[axis] - o) * inv;
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        t_min = t_min.max(lo);
        t_max = t_max.min(hi);
    }
    let t_near = t_min.max(0.0);
    if t_max >= t_near {
        Some(HitInterval { t_near, t_far: t_max })
    } else {
        None
    }
}

/// Slab test clipped to `t >= 0`. Closed boxes: grazing rays hit.
pub fn ray_aabb_intersect(ray: &Ray, aabb: &Aabb) -> Option<HitInterval> {
    aabb.intersect(ray)
}

/// Ray-OBB test by transforming the ray into the box frame. Parameters are
/// in world-ray units since the rotation preserves length.
pub fn ray_obb_intersect(ray: &Ray, obb: &Obb) -> Option<HitInterval> {
    obb.prepare().intersect(ray)
}

/// Closed-set membership.
pub fn point_in_obb(p: Vec3, obb: &Obb) -> bool {
    obb.prepare().contains_point(p)
}

/// Tightest axis-aligned bound of the eight corners.
pub fn aabb_of_obb(obb: &Obb) -> Aabb {
    obb.prepare().world_aabb()
}
