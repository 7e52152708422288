//! Bounding-box images: per-pixel semantic category and ray depth rendered
//! from a scene (or its voxelization) at a camera pose.
//!
//! Pixels are rendered in 32x32 tiles. Each tile is computed independently
//! and copied into a disjoint region of the output, so results do not
//! depend on how tiles are scheduled.

pub mod bvh;
pub mod export;
pub mod voxels;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraTrajectory, Intrinsics, Pose, PreparedCamera};
use crate::par;
use crate::scene::BoundingBoxScene;

pub use bvh::{build_bvh, BvhAccel, Hit};
pub use voxels::render_bbi_from_voxels;

pub const TILE: u32 = 32;

/// `object_ids` value for pixels with no hit (and for voxel renders).
pub const NO_OBJECT: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("scene has no boxes")]
    EmptyScene,
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("frame {frame_id:?}: {source}")]
    Frame {
        frame_id: String,
        #[source]
        source: Box<RenderError>,
    },
    #[error("semantic id {id} out of range for {n_categories} categories")]
    CategoryOutOfRange { id: u8, n_categories: usize },
}

impl RenderError {
    pub fn code(&self) -> &'static str {
        match self {
            RenderError::EmptyScene => "EMPTY_SCENE",
            RenderError::InvalidConfig(_) => "INVALID_RENDER_CONFIG",
            RenderError::Camera(e) => e.code(),
            RenderError::Frame { source, .. } => source.code(),
            RenderError::CategoryOutOfRange { .. } => "CATEGORY_OUT_OF_RANGE",
        }
    }
}

/// Category-conflict rule. Only one is defined: the object with the smaller
/// bound volume wins, then the lexicographically smaller object id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precedence {
    #[default]
    SmallerObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderSource {
    #[default]
    Boxes,
    Voxels,
}

impl std::str::FromStr for RenderSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "boxes" => Ok(RenderSource::Boxes),
            "voxels" => Ok(RenderSource::Voxels),
            other => Err(format!("unknown render source {other:?} (expected boxes|voxels)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub near: f64,
    pub far: f64,
    pub precedence: Precedence,
    pub source: RenderSource,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            near: 0.01,
            far: 40.0,
            precedence: Precedence::SmallerObject,
            source: RenderSource::Boxes,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.near > 0.0 && self.near.is_finite()) {
            return Err(RenderError::InvalidConfig(format!("near {} must be > 0", self.near)));
        }
        if !(self.far > self.near && self.far.is_finite()) {
            return Err(RenderError::InvalidConfig(format!(
                "far {} must exceed near {}",
                self.far, self.near
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBoxImage {
    pub width: u32,
    pub height: u32,
    /// Category id per pixel, row-major; 0 = nothing hit.
    pub semantic: Vec<u8>,
    /// Distance along the ray in meters; `f64::INFINITY` where nothing was hit.
    pub depth: Vec<f64>,
    /// Winning object index per pixel (diagnostics).
    pub object_ids: Vec<u32>,
    pub frame_id: String,
}

impl BoundingBoxImage {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        BoundingBoxImage {
            width,
            height,
            semantic: vec![0; n],
            depth: vec![f64::INFINITY; n],
            object_ids: vec![NO_OBJECT; n],
            frame_id: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn index(&self, col: u32, row: u32) -> usize {
        row as usize * self.width as usize + col as usize
    }

    pub fn hit_count(&self) -> usize {
        self.semantic.iter().filter(|&&s| s != 0).count()
    }

    /// Byte-exact equality including depth bit patterns.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.semantic == other.semantic
            && self.object_ids == other.object_ids
            && self
                .depth
                .iter()
                .zip(&other.depth)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn with_frame_id(mut self, id: &str) -> Self {
        self.frame_id = id.to_string();
        self
    }
}

/// Per-pixel one-hot expansion, stored channel-major
/// (`data[(c * height + row) * width + col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotMap {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl OneHotMap {
    pub fn get(&self, channel: usize, col: u32, row: u32) -> u8 {
        let plane = self.width as usize * self.height as usize;
        self.data[channel * plane + row as usize * self.width as usize + col as usize]
    }
}

struct TileOut {
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
    semantic: Vec<u8>,
    depth: Vec<f64>,
    objects: Vec<u32>,
}

fn tiles(width: u32, height: u32) -> Vec<(u32, u32, u32, u32)> {
    let mut out = Vec::new();
    let mut y = 0;
    while y < height {
        let h = TILE.min(height - y);
        let mut x = 0;
        while x < width {
            let w = TILE.min(width - x);
            out.push((x, y, w, h));
            x += TILE;
        }
        y += TILE;
    }
    out
}

/// Renders every pixel with `shade(camera, col, row) -> (category, depth, object)`.
fn render_tiled<F>(intr: &Intrinsics, pose: &Pose, shade: F) -> BoundingBoxImage
where
    F: Fn(&PreparedCamera, u32, u32) -> Option<(u8, f64, u32)> + Sync + Send,
{
    let cam = pose.camera(intr);
    let tile_list = tiles(intr.width, intr.height);
    let outs: Vec<TileOut> = par::map(&tile_list, |&(x0, y0, w, h)| {
        let n = (w * h) as usize;
        let mut t = TileOut {
            x0,
            y0,
            w,
            h,
            semantic: vec![0; n],
            depth: vec![f64::INFINITY; n],
            objects: vec![NO_OBJECT; n],
        };
        for dy in 0..h {
            for dx in 0..w {
                if let Some((cat, d, obj)) = shade(&cam, x0 + dx, y0 + dy) {
                    let i = (dy * w + dx) as usize;
                    t.semantic[i] = cat;
                    t.depth[i] = d;
                    t.objects[i] = obj;
                }
            }
        }
        t
    });
    let mut img = BoundingBoxImage::empty(intr.width, intr.height);
    let width = intr.width as usize;
    for t in outs {
        for dy in 0..t.h as usize {
            let src = dy * t.w as usize..(dy + 1) * t.w as usize;
            let dst0 = (t.y0 as usize + dy) * width + t.x0 as usize;
            let dst = dst0..dst0 + t.w as usize;
            img.semantic[dst.clone()].copy_from_slice(&t.semantic[src.clone()]);
            img.depth[dst.clone()].copy_from_slice(&t.depth[src.clone()]);
            img.object_ids[dst].copy_from_slice(&t.objects[src]);
        }
    }
    img
}

fn check_inputs(intr: &Intrinsics, pose: &Pose, cfg: &RenderConfig) -> Result<(), RenderError> {
    cfg.validate()?;
    intr.validate()?;
    pose.validate().map_err(|reason| {
        RenderError::Camera(CameraError::InvalidPose {
            frame_id: String::new(),
            reason,
        })
    })?;
    Ok(())
}

/// Renders one bounding-box image with the BVH. The winner at each pixel is
/// the nearest box hit inside `[near, far]`; exact depth ties go to the
/// stronger object under the scene's precedence rule.
pub fn render_bbi(
    scene: &BoundingBoxScene,
    accel: &BvhAccel,
    intr: &Intrinsics,
    pose: &Pose,
    cfg: &RenderConfig,
) -> Result<BoundingBoxImage, RenderError> {
    check_inputs(intr, pose, cfg)?;
    let (near, far) = (cfg.near, cfg.far);
    let _ = scene;
    Ok(render_tiled(intr, pose, |cam, col, row| {
        let ray = cam.pixel_center_ray(col, row);
        accel.closest_hit(&ray, near, far).map(|h| {
            let p = &accel.prims[h.prim as usize];
            (p.category, h.depth, p.object)
        })
    }))
}

/// Same contract as [`render_bbi`], testing every box at every pixel.
pub fn render_bbi_linear(
    accel: &BvhAccel,
    intr: &Intrinsics,
    pose: &Pose,
    cfg: &RenderConfig,
) -> Result<BoundingBoxImage, RenderError> {
    check_inputs(intr, pose, cfg)?;
    let (near, far) = (cfg.near, cfg.far);
    Ok(render_tiled(intr, pose, |cam, col, row| {
        let ray = cam.pixel_center_ray(col, row);
        accel.closest_hit_linear(&ray, near, far).map(|h| {
            let p = &accel.prims[h.prim as usize];
            (p.category, h.depth, p.object)
        })
    }))
}

/// Convenience wrapper that builds the hierarchy (empty scenes allowed).
pub fn render_scene(
    scene: &BoundingBoxScene,
    intr: &Intrinsics,
    pose: &Pose,
    cfg: &RenderConfig,
) -> Result<BoundingBoxImage, RenderError> {
    let accel = BvhAccel::build_allow_empty(scene);
    render_bbi(scene, &accel, intr, pose, cfg)
}

/// One image per pose, in trajectory order.
pub fn render_trajectory(
    scene: &BoundingBoxScene,
    traj: &CameraTrajectory,
    cfg: &RenderConfig,
) -> Result<Vec<BoundingBoxImage>, RenderError> {
    let accel = BvhAccel::build_allow_empty(scene);
    render_trajectory_with(scene, &accel, traj, cfg)
}

pub fn render_trajectory_with(
    scene: &BoundingBoxScene,
    accel: &BvhAccel,
    traj: &CameraTrajectory,
    cfg: &RenderConfig,
) -> Result<Vec<BoundingBoxImage>, RenderError> {
    traj.poses
        .iter()
        .zip(&traj.frame_ids)
        .map(|(pose, id)| {
            render_bbi(scene, accel, &traj.intrinsics, pose, cfg)
                .map(|img| img.with_frame_id(id))
                .map_err(|e| RenderError::Frame {
                    frame_id: id.clone(),
                    source: Box::new(e),
                })
        })
        .collect()
}

pub fn one_hot_encode(bbi: &BoundingBoxImage, n_categories: usize) -> Result<OneHotMap, RenderError> {
    if let Some(&bad) = bbi.semantic.iter().find(|&&s| s as usize >= n_categories) {
        return Err(RenderError::CategoryOutOfRange { id: bad, n_categories });
    }
    let plane = bbi.len();
    let mut data = vec![0u8; plane * n_categories];
    for (i, &s) in bbi.semantic.iter().enumerate() {
        data[s as usize * plane + i] = 1;
    }
    Ok(OneHotMap {
        width: bbi.width,
        height: bbi.height,
        channels: n_categories,
        data,
    })
}

/// Maps hit depths to `clamp((d - near) / (far - near), 0, 1)`; misses map to 1.
pub fn normalize_depth(bbi: &BoundingBoxImage, cfg: &RenderConfig) -> Vec<f64> {
    let span = cfg.far - cfg.near;
    bbi.semantic
        .iter()
        .zip(&bbi.depth)
        .map(|(&s, &d)| {
            if s == 0 {
                1.0
            } else {
                ((d - cfg.near) / span).clamp(0.0, 1.0)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::look_at_pose;
    use crate::geometry::{Obb, Vec3};
    use crate::scene::tests::small_table;
    use crate::scene::SceneObject;

    fn one_box_scene() -> BoundingBoxScene {
        BoundingBoxScene::new("s", small_table()).with_object(SceneObject::new(
            "box",
            3,
            vec![Obb::axis_aligned(Vec3::ZERO, Vec3::splat(0.5)).unwrap()],
        ))
    }

    fn small_intr() -> Intrinsics {
        Intrinsics::from_vfov(96, 64, 60.0)
    }

    #[test]
    fn analytic_face_depth() {
        let s = one_box_scene();
        let intr = Intrinsics {
            width: 65,
            height: 65,
            fx: 50.0,
            fy: 50.0,
            cx: 32.5,
            cy: 32.5,
        };
        let pose = look_at_pose(Vec3::new(-5.0, 0.0, 0.0), Vec3::ZERO, Vec3::Z).unwrap();
        let img = render_scene(&s, &intr, &pose, &RenderConfig::default()).unwrap();
        let i = img.index(32, 32);
        assert_eq!(img.semantic[i], 3);
        assert!((img.depth[i] - 4.5).abs() < 1e-12, "{}", img.depth[i]);
        assert_eq!(img.object_ids[i], 0);
    }

    #[test]
    fn empty_scene_all_void() {
        let s = BoundingBoxScene::new("e", small_table());
        let img = render_scene(&s, &small_intr(), &Pose::default(), &RenderConfig::default()).unwrap();
        assert_eq!(img.hit_count(), 0);
        assert!(img.depth.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn camera_inside_box_sees_it_at_near() {
        let s = BoundingBoxScene::new("s", small_table()).with_object(SceneObject::new(
            "room",
            1,
            vec![Obb::axis_aligned(Vec3::ZERO, Vec3::splat(3.0)).unwrap()],
        ));
        let cfg = RenderConfig::default();
        let img = render_scene(&s, &small_intr(), &Pose::default(), &cfg).unwrap();
        assert_eq!(img.hit_count(), img.len());
        assert!(img.depth.iter().all(|&d| d == cfg.near));
    }

    #[test]
    fn config_and_pose_checked() {
        let s = one_box_scene();
        let bad = RenderConfig {
            near: 1.0,
            far: 0.5,
            ..Default::default()
        };
        assert_eq!(
            render_scene(&s, &small_intr(), &Pose::default(), &bad)
                .unwrap_err()
                .code(),
            "INVALID_RENDER_CONFIG"
        );
    }

    #[test]
    fn one_hot_partition() {
        let s = one_box_scene();
        let pose = look_at_pose(Vec3::new(-3.0, 0.2, 0.1), Vec3::ZERO, Vec3::Z).unwrap();
        let img = render_scene(&s, &small_intr(), &pose, &RenderConfig::default()).unwrap();
        let oh = one_hot_encode(&img, 40).unwrap();
        for row in 0..img.height {
            for col in 0..img.width {
                let sum: u32 = (0..40).map(|c| oh.get(c, col, row) as u32).sum();
                assert_eq!(sum, 1);
                let id = img.semantic[img.index(col, row)] as usize;
                assert_eq!(oh.get(id, col, row), 1);
            }
        }
        assert!(matches!(
            one_hot_encode(&img, 3),
            Err(RenderError::CategoryOutOfRange { id: 3, .. })
        ));
    }

    #[test]
    fn depth_normalization_endpoints() {
        let cfg = RenderConfig {
            near: 0.5,
            far: 10.5,
            ..Default::default()
        };
        let mut img = BoundingBoxImage::empty(4, 1);
        img.semantic = vec![1, 1, 1, 0];
        img.depth = vec![0.5, 10.5, 5.5, f64::INFINITY];
        assert_eq!(normalize_depth(&img, &cfg), vec![0.0, 1.0, 0.5, 1.0]);
    }

    #[test]
    fn tiles_cover_image_once() {
        let t = tiles(70, 33);
        let area: u32 = t.iter().map(|&(_, _, w, h)| w * h).sum();
        assert_eq!(area, 70 * 33);
        assert_eq!(t.len(), 3 * 2);
    }

    #[test]
    fn trajectory_preserves_order_and_ids() {
        let s = one_box_scene();
        let poses = vec![
            look_at_pose(Vec3::new(-4.0, 0.0, 0.0), Vec3::ZERO, Vec3::Z).unwrap(),
            look_at_pose(Vec3::new(0.0, -4.0, 0.0), Vec3::ZERO, Vec3::Z).unwrap(),
        ];
        let traj = CameraTrajectory::from_poses(small_intr(), poses);
        let imgs = render_trajectory(&s, &traj, &RenderConfig::default()).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[1].frame_id, "00001");
        let single = render_scene(&s, &traj.intrinsics, &traj.poses[0], &RenderConfig::default()).unwrap();
        assert!(imgs[0].bitwise_eq(&single));
    }

    #[test]
    fn trajectory_errors_carry_frame_id() {
        let s = one_box_scene();
        let mut traj = CameraTrajectory::from_poses(small_intr(), vec![Pose::default(), Pose::default()]);
        traj.poses[1].orientation = crate::geometry::Quat::new(3.0, 0.0, 0.0, 0.0);
        let err = render_trajectory(&s, &traj, &RenderConfig::default()).unwrap_err();
        match err {
            RenderError::Frame { frame_id, .. } => assert_eq!(frame_id, "00001"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
