//! Bounding-box images rendered from a voxel grid by 3D-DDA traversal.

use super::{render_tiled, BoundingBoxImage, RenderConfig, RenderError, NO_OBJECT};
use crate::camera::{Intrinsics, Pose};
use crate::geometry::Ray;
use crate::voxel::VoxelGrid;

/// Returns `(category, depth)` of the first occupied cell along the ray
/// within `[near, far]`.
pub fn first_occupied(grid: &VoxelGrid, ray: &Ray, near: f64, far: f64) -> Option<(u8, f64)> {
    let bounds = grid.bounds();
    let span = bounds.intersect(ray)?;
    if span.t_far < near {
        return None;
    }
    let t_start = span.t_near.max(near);
    if t_start > far {
        return None;
    }
    let p = ray.at(t_start);
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    let u = grid.unit;
    for a in 0..3 {
        let n = grid.dims[a] as i64;
        let local = (p[a] - bounds.min[a]) / u;
        cell[a] = (local.floor() as i64).clamp(0, n - 1);
        let d = ray.direction[a];
        if d > 0.0 {
            step[a] = 1;
            let boundary = bounds.min[a] + (cell[a] + 1) as f64 * u;
            t_max[a] = (boundary - ray.origin[a]) / d;
            t_delta[a] = u / d;
        } else if d < 0.0 {
            step[a] = -1;
            let boundary = bounds.min[a] + cell[a] as f64 * u;
            t_max[a] = (boundary - ray.origin[a]) / d;
            t_delta[a] = -u / d;
        }
    }
    loop {
        let (x, y, z) = (cell[0] as usize, cell[1] as usize, cell[2] as usize);
        let c = grid.get(x, y, z);
        if c != 0 {
            // Exact entry distance into this cell; the walk only decides order.
            if let Some(h) = grid.cell_aabb(x, y, z).intersect(ray) {
                if h.t_far >= near {
                    let d = h.t_near.max(near);
                    if d <= far {
                        return Some((c, d));
                    }
                    return None;
                }
            }
        }
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[a] > far || t_max[a] > span.t_far {
            return None;
        }
        cell[a] += step[a];
        if cell[a] < 0 || cell[a] >= grid.dims[a] as i64 {
            return None;
        }
        t_max[a] += t_delta[a];
    }
}

pub fn render_bbi_from_voxels(
    grid: &VoxelGrid,
    intr: &Intrinsics,
    pose: &Pose,
    cfg: &RenderConfig,
) -> Result<BoundingBoxImage, RenderError> {
    super::check_inputs(intr, pose, cfg)?;
    let (near, far) = (cfg.near, cfg.far);
    Ok(render_tiled(intr, pose, |cam, col, row| {
        let ray = cam.pixel_center_ray(col, row);
        first_occupied(grid, &ray, near, far).map(|(c, d)| (c, d, NO_OBJECT))
    }))
}
