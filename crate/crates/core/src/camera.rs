//! Pinhole camera, poses and trajectories.
//!
//! Camera frame convention: +x right, +y down, +z forward. A pose's
//! orientation maps camera-frame vectors to world.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mat3, Quat, Ray, Vec3, UNIT_TOLERANCE};

pub const DEFAULT_WIDTH: u32 = 768;
pub const DEFAULT_HEIGHT: u32 = 512;
pub const DEFAULT_VFOV_DEG: f64 = 60.0;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("degenerate look-at: {0}")]
    DegenerateLookAt(&'static str),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose for frame {frame_id:?}: {reason}")]
    InvalidPose { frame_id: String, reason: String },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed trajectory json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CameraError {
    pub fn code(&self) -> &'static str {
        match self {
            CameraError::DegenerateLookAt(_) => "DEGENERATE_LOOKAT",
            CameraError::InvalidIntrinsics(_) => "INVALID_INTRINSICS",
            CameraError::InvalidPose { .. } => "MALFORMED_POSE",
            CameraError::InvalidTrajectory(_) => "INVALID_TRAJECTORY",
            CameraError::Io { .. } => "IO_ERROR",
            CameraError::Json(_) => "MALFORMED_JSON",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics::from_vfov(DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_VFOV_DEG)
    }
}

impl Intrinsics {
    /// Square pixels, centered principal point, given vertical field of view.
    pub fn from_vfov(width: u32, height: u32, vfov_deg: f64) -> Self {
        let fy = 0.5 * height as f64 / (0.5 * vfov_deg.to_radians()).tan();
        Intrinsics {
            width,
            height,
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
        }
    }

    /// Same field of view at a different resolution.
    pub fn scaled_to(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Intrinsics {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |m: String| Err(CameraError::InvalidIntrinsics(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("size {}x{} must be positive", self.width, self.height));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return bad(format!("focal lengths ({}, {}) must be positive", self.fx, self.fy));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return bad(format!("principal point ({}, {}) outside the image", self.cx, self.cy));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Default for Pose {
    fn default() -> Self {
        Pose {
            position: Vec3::ZERO,
            orientation: Quat::IDENTITY,
        }
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Pose { position, orientation }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.position.is_finite() {
            return Err("position is not finite".into());
        }
        if !self.orientation.is_unit() {
            return Err(format!(
                "orientation norm {} is not 1 within {UNIT_TOLERANCE:e}",
                self.orientation.norm()
            ));
        }
        Ok(())
    }

    pub fn forward(&self) -> Vec3 {
        self.orientation.rotate(Vec3::Z)
    }

    /// Expands the rotation once for per-pixel ray generation.
    pub fn camera(&self, intr: &Intrinsics) -> PreparedCamera {
        let q = self.orientation.normalized().unwrap_or(Quat::IDENTITY);
        PreparedCamera {
            intr: *intr,
            position: self.position,
            to_world: q.to_mat3(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PreparedCamera {
    pub intr: Intrinsics,
    pub position: Vec3,
    pub to_world: Mat3,
}

impl PreparedCamera {
    #[inline]
    pub fn ray(&self, px: f64, py: f64) -> Ray {
        let i = &self.intr;
        let d = Vec3::new((px - i.cx) / i.fx, (py - i.cy) / i.fy, 1.0);
        let d = d / d.length();
        Ray {
            origin: self.position,
            direction: self.to_world.mul_vec(d),
        }
    }

    /// Ray through the center of pixel `(col, row)`.
    #[inline]
    pub fn pixel_center_ray(&self, col: u32, row: u32) -> Ray {
        self.ray(col as f64 + 0.5, row as f64 + 0.5)
    }
}

/// World-space unit ray through image point `(px, py)`; pixel centers sit at
/// integer + 0.5.
pub fn pixel_ray(intr: &Intrinsics, pose: &Pose, px: f64, py: f64) -> Ray {
    pose.camera(intr).ray(px, py)
}

/// Camera at `eye` looking at `target`, with image-up along `up_hint`'s
/// component orthogonal to the view direction.
pub fn look_at_pose(eye: Vec3, target: Vec3, up_hint: Vec3) -> Result<Pose, CameraError> {
    let view = target - eye;
    if view.length() <= 1e-9 {
        return Err(CameraError::DegenerateLookAt("target coincides with eye"));
    }
    let forward = view / view.length();
    let up = up_hint
        .try_normalize()
        .ok_or(CameraError::DegenerateLookAt("up hint has zero length"))?;
    let right = forward.cross(up);
    if right.length() <= 1e-9 {
        return Err(CameraError::DegenerateLookAt(
            "up hint is parallel to the view direction",
        ));
    }
    let right = right / right.length();
    let down = forward.cross(right);
    let m = Mat3::from_cols(right, down, forward);
    Ok(Pose::new(eye, Quat::from_mat3(&m)))
}

/// Piecewise interpolation through `keyframes`: positions linearly,
/// orientations by shortest-arc slerp. Each segment contributes
/// `samples_per_segment` poses starting at its first keyframe; the final
/// keyframe closes the sequence.
pub fn interpolate_trajectory(keyframes: &[Pose], samples_per_segment: usize) -> Result<Vec<Pose>, CameraError> {
    if keyframes.len() < 2 {
        return Err(CameraError::InvalidTrajectory(format!(
            "need at least 2 keyframes, got {}",
            keyframes.len()
        )));
    }
    if samples_per_segment == 0 {
        return Err(CameraError::InvalidTrajectory(
            "samples_per_segment must be >= 1".into(),
        ));
    }
    let norm = |p: &Pose| -> Result<Pose, CameraError> {
        let q = p.orientation.normalized().map_err(|e| CameraError::InvalidPose {
            frame_id: String::new(),
            reason: e.to_string(),
        })?;
        Ok(Pose::new(p.position, q))
    };
    let keys = keyframes.iter().map(norm).collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity((keys.len() - 1) * samples_per_segment + 1);
    for pair in keys.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        out.push(*a);
        for s in 1..samples_per_segment {
            let t = s as f64 / samples_per_segment as f64;
            let position = a.position + (b.position - a.position) * t;
            out.push(Pose::new(position, a.orientation.slerp(&b.orientation, t)));
        }
    }
    out.push(*keys.last().expect("nonempty"));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraTrajectory {
    pub intrinsics: Intrinsics,
    pub poses: Vec<Pose>,
    pub frame_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub position: [f64; 3],
    pub rotation_quat: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrajectoryFile {
    intrinsics: Intrinsics,
    frames: Vec<FrameRecord>,
}

impl CameraTrajectory {
    /// Frame ids default to zero-padded indices.
    pub fn from_poses(intrinsics: Intrinsics, poses: Vec<Pose>) -> Self {
        let frame_ids = (0..poses.len()).map(|i| format!("{i:05}")).collect();
        CameraTrajectory {
            intrinsics,
            poses,
            frame_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        self.intrinsics.validate()?;
        if self.poses.is_empty() {
            return Err(CameraError::InvalidTrajectory("no frames".into()));
        }
        if self.poses.len() != self.frame_ids.len() {
            return Err(CameraError::InvalidTrajectory(format!(
                "{} poses but {} frame ids",
                self.poses.len(),
                self.frame_ids.len()
            )));
        }
        for (p, id) in self.poses.iter().zip(&self.frame_ids) {
            p.validate().map_err(|reason| CameraError::InvalidPose {
                frame_id: id.clone(),
                reason,
            })?;
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.poses.iter().fold(Vec3::ZERO, |acc, p| acc + p.position);
        sum / self.poses.len().max(1) as f64
    }

    pub fn from_json(s: &str) -> Result<Self, CameraError> {
        let file: TrajectoryFile = serde_json::from_str(s)?;
        let traj = CameraTrajectory {
            intrinsics: file.intrinsics,
            poses: file
                .frames
                .iter()
                .map(|f| Pose::new(f.position.into(), f.rotation_quat.into()))
                .collect(),
            frame_ids: file.frames.into_iter().map(|f| f.frame_id).collect(),
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn to_json(&self) -> String {
        let file = TrajectoryFile {
            intrinsics: self.intrinsics,
            frames: self
                .poses
                .iter()
                .zip(&self.frame_ids)
                .map(|(p, id)| FrameRecord {
                    frame_id: id.clone(),
                    position: p.position.into(),
                    rotation_quat: p.orientation.into(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("trajectory serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CameraError> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|source| CameraError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CameraError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| CameraError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Pose serialized the same way as a trajectory frame, minus the id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub position: [f64; 3],
    pub rotation_quat: [f64; 4],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        PoseRecord {
            position: p.position.into(),
            rotation_quat: p.orientation.into(),
        }
    }
}

impl From<PoseRecord> for Pose {
    fn from(p: PoseRecord) -> Self {
        Pose::new(p.position.into(), p.rotation_quat.into())
    }
}
