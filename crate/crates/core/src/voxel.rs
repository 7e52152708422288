//! Voxelization of box unions onto a unit-aligned grid, and the `BBSVOX01`
//! binary export.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Obb, PreparedObb, Vec3};
use crate::par;
use crate::scene::{precedence_ranks, scene_bounds, BoundingBoxScene, Category, SceneError, SceneObject};

/// Default cell edge, meters.
pub const DEFAULT_UNIT: f64 = 0.2;

/// Default cap on `nx * ny * nz`.
pub const DEFAULT_MAX_CELLS: usize = 1 << 27;

pub const VOXEL_MAGIC: &[u8; 8] = b"BBSVOX01";

// Relative slack (in cell units) when snapping bounds to the grid, so a box
// face lying on a grid plane does not spill into the next cell.
const SNAP_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("grid of {requested} cells exceeds the cap of {cap}")]
    GridTooLarge { requested: u128, cap: usize },
    #[error("voxel unit must be positive and finite, got {0}")]
    InvalidUnit(f64),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("bad voxel file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl VoxelError {
    pub fn code(&self) -> &'static str {
        match self {
            VoxelError::GridTooLarge { .. } => "GRID_TOO_LARGE",
            VoxelError::InvalidUnit(_) => "INVALID_UNIT",
            VoxelError::Scene(e) => e.code(),
            VoxelError::Format(_) => "BAD_VOXEL_FILE",
            VoxelError::Io(_) => "IO_ERROR",
        }
    }
}

/// When a cell counts as occupied by a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapPolicy {
    /// The cell center lies in the box (closed).
    Center,
    /// The cell and the box share a region of positive volume.
    #[default]
    Overlap,
}

impl std::str::FromStr for OverlapPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "center" => Ok(OverlapPolicy::Center),
            "overlap" => Ok(OverlapPolicy::Overlap),
            other => Err(format!("unknown voxel policy {other:?} (expected center|overlap)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelizeOptions {
    pub unit: f64,
    pub policy: OverlapPolicy,
    pub max_cells: usize,
    /// Grid extent override; required for scenes with no objects.
    pub bounds: Option<Aabb>,
}

impl Default for VoxelizeOptions {
    fn default() -> Self {
        VoxelizeOptions {
            unit: DEFAULT_UNIT,
            policy: OverlapPolicy::Overlap,
            max_cells: DEFAULT_MAX_CELLS,
            bounds: None,
        }
    }
}

impl VoxelizeOptions {
    pub fn new(unit: f64, policy: OverlapPolicy) -> Self {
        VoxelizeOptions {
            unit,
            policy,
            ..Default::default()
        }
    }
}

/// Dense category grid. Cell `(x, y, z)` spans
/// `origin + unit * [x, x+1] x [y, y+1] x [z, z+1]` and lives at index
/// `(z * ny + y) * nx + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub unit: f64,
    pub dims: [usize; 3],
    pub cells: Vec<u8>,
    pub categories: Vec<Category>,
    // Integer grid coordinate of `origin`, kept so cell geometry is computed
    // from integers rather than accumulated float offsets.
    base: [i64; 3],
}

impl VoxelGrid {
    /// A zeroed grid covering `bounds`, snapped outward to multiples of `unit`.
    pub fn covering(bounds: &Aabb, unit: f64, max_cells: usize) -> Result<VoxelGrid, VoxelError> {
        if !(unit > 0.0 && unit.is_finite()) {
            return Err(VoxelError::InvalidUnit(unit));
        }
        let mut base = [0i64; 3];
        let mut dims = [1usize; 3];
        for axis in 0..3 {
            let lo = (bounds.min[axis] / unit + SNAP_EPS).floor();
            let hi = (bounds.max[axis] / unit - SNAP_EPS).ceil();
            base[axis] = lo as i64;
            dims[axis] = ((hi - lo).max(1.0)) as usize;
        }
        let requested = dims.iter().map(|&d| d as u128).product::<u128>();
        if requested > max_cells as u128 {
            return Err(VoxelError::GridTooLarge {
                requested,
                cap: max_cells,
            });
        }
        Ok(VoxelGrid {
            origin: Vec3::new(base[0] as f64 * unit, base[1] as f64 * unit, base[2] as f64 * unit),
            unit,
            dims,
            cells: vec![0; requested as usize],
            categories: Vec::new(),
            base,
        })
    }

    /// Rebuilds a grid from raw parts (e.g. a decoded file). `origin` should
    /// be a multiple of `unit`.
    pub fn from_parts(
        origin: Vec3,
        unit: f64,
        dims: [usize; 3],
        cells: Vec<u8>,
        categories: Vec<Category>,
    ) -> Result<VoxelGrid, VoxelError> {
        if !(unit > 0.0 && unit.is_finite()) {
            return Err(VoxelError::InvalidUnit(unit));
        }
        if dims.contains(&0) || dims.iter().product::<usize>() != cells.len() {
            return Err(VoxelError::Format(format!(
                "dims {dims:?} do not match {} cells",
                cells.len()
            )));
        }
        let base = [
            (origin.x / unit).round() as i64,
            (origin.y / unit).round() as i64,
            (origin.z / unit).round() as i64,
        ];
        Ok(VoxelGrid {
            origin,
            unit,
            dims,
            cells,
            categories,
            base,
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.cells[self.index(x, y, z)]
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn bounds(&self) -> Aabb {
        let u = self.unit;
        let max = Vec3::new(
            (self.base[0] + self.dims[0] as i64) as f64 * u,
            (self.base[1] + self.dims[1] as i64) as f64 * u,
            (self.base[2] + self.dims[2] as i64) as f64 * u,
        );
        Aabb::new(self.origin, max)
    }

    pub fn cell_aabb(&self, x: usize, y: usize, z: usize) -> Aabb {
        let u = self.unit;
        let gx = self.base[0] + x as i64;
        let gy = self.base[1] + y as i64;
        let gz = self.base[2] + z as i64;
        Aabb::new(
            Vec3::new(gx as f64 * u, gy as f64 * u, gz as f64 * u),
            Vec3::new((gx + 1) as f64 * u, (gy + 1) as f64 * u, (gz + 1) as f64 * u),
        )
    }

    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let u = self.unit;
        Vec3::new(
            (self.base[0] as f64 + x as f64 + 0.5) * u,
            (self.base[1] as f64 + y as f64 + 0.5) * u,
            (self.base[2] as f64 + z as f64 + 0.5) * u,
        )
    }

    /// Cell index range (half-open, per axis) that may touch `aabb`, padded
    /// by one cell and clamped to the grid.
    fn candidate_range(&self, aabb: &Aabb) -> Option<[(usize, usize); 3]> {
        let mut out = [(0, 0); 3];
        for (axis, slot) in out.iter_mut().enumerate() {
            let lo = (aabb.min[axis] / self.unit).floor() as i64 - 1 - self.base[axis];
            let hi = (aabb.max[axis] / self.unit).ceil() as i64 + 1 - self.base[axis];
            let lo = lo.max(0);
            let hi = hi.min(self.dims[axis] as i64);
            if lo >= hi {
                return None;
            }
            *slot = (lo as usize, hi as usize);
        }
        Some(out)
    }

    /// Indices of cells occupied by `boxes` under `policy`, ascending.
    fn occupied_by(&self, boxes: &[PreparedObb], policy: OverlapPolicy) -> Vec<usize> {
        let tol = SNAP_EPS * self.unit;
        let mut out = Vec::new();
        for b in boxes {
            let Some(range) = self.candidate_range(&b.world_aabb()) else {
                continue;
            };
            for z in range[2].0..range[2].1 {
                for y in range[1].0..range[1].1 {
                    for x in range[0].0..range[0].1 {
                        let hit = match policy {
                            OverlapPolicy::Center => b.contains_point(self.cell_center(x, y, z)),
                            OverlapPolicy::Overlap => b.overlaps_aabb(&self.cell_aabb(x, y, z), tol),
                        };
                        if hit {
                            out.push(self.index(x, y, z));
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), VoxelError> {
        w.write_all(VOXEL_MAGIC)?;
        for v in self.origin.to_array() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.unit.to_le_bytes())?;
        for d in self.dims {
            let d = u32::try_from(d).map_err(|_| VoxelError::Format("dimension exceeds u32".into()))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let n = u16::try_from(self.categories.len()).map_err(|_| VoxelError::Format("too many categories".into()))?;
        w.write_all(&n.to_le_bytes())?;
        for c in &self.categories {
            w.write_all(&c.id.to_le_bytes())?;
            w.write_all(&c.color)?;
            let name = c.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| VoxelError::Format("category name too long".into()))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name)?;
        }
        w.write_all(&self.cells)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.cells.len() + 64);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<VoxelGrid, VoxelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != VOXEL_MAGIC {
            return Err(VoxelError::Format("missing BBSVOX01 magic".into()));
        }
        let mut f = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> io::Result<f64> {
            r.read_exact(&mut f)?;
            Ok(f64::from_le_bytes(f))
        };
        let origin = Vec3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
        let unit = read_f64(&mut r)?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let n = u16::from_le_bytes(b2);
        let mut categories = Vec::with_capacity(n as usize);
        for _ in 0..n {
            r.read_exact(&mut b2)?;
            let id = u16::from_le_bytes(b2);
            let mut color = [0u8; 3];
            r.read_exact(&mut color)?;
            r.read_exact(&mut b2)?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| VoxelError::Format(e.to_string()))?;
            categories.push(Category { id, name, color });
        }
        let total = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| VoxelError::Format("dims overflow".into()))?;
        let mut cells = Vec::new();
        r.by_ref().take(total as u64).read_to_end(&mut cells)?;
        if cells.len() != total {
            return Err(VoxelError::Format(format!(
                "expected {total} cell bytes, found {}",
                cells.len()
            )));
        }
        VoxelGrid::from_parts(origin, unit, dims, cells, categories)
    }
}

/// Voxelizes one object on a grid covering its own bound.
pub fn voxelize_object(obj: &SceneObject, unit: f64, policy: OverlapPolicy) -> Result<VoxelGrid, VoxelError> {
    voxelize_object_with(obj, &VoxelizeOptions::new(unit, policy))
}

pub fn voxelize_object_with(obj: &SceneObject, opts: &VoxelizeOptions) -> Result<VoxelGrid, VoxelError> {
    let bounds = opts.bounds.unwrap_or_else(|| obj.bounds());
    let mut grid = VoxelGrid::covering(&bounds, opts.unit, opts.max_cells)?;
    let cat = obj.category_id as u8;
    let boxes: Vec<PreparedObb> = obj.boxes.iter().map(Obb::prepare).collect();
    for idx in grid.occupied_by(&boxes, opts.policy) {
        grid.cells[idx] = cat;
    }
    Ok(grid)
}

/// Voxelizes a whole scene onto one shared grid. Where objects share a
/// cell, the stronger object under [`precedence_ranks`] wins.
pub fn voxelize_scene(scene: &BoundingBoxScene, unit: f64, policy: OverlapPolicy) -> Result<VoxelGrid, VoxelError> {
    voxelize_scene_with(scene, &VoxelizeOptions::new(unit, policy))
}

pub fn voxelize_scene_with(scene: &BoundingBoxScene, opts: &VoxelizeOptions) -> Result<VoxelGrid, VoxelError> {
    let bounds = match opts.bounds {
        Some(b) => b,
        None => scene_bounds(scene)?,
    };
    let mut grid = VoxelGrid::covering(&bounds, opts.unit, opts.max_cells)?;
    grid.categories = scene.categories.clone();

    let per_object: Vec<Vec<usize>> = par::map(&scene.objects, |obj| {
        let boxes: Vec<PreparedObb> = obj.boxes.iter().map(Obb::prepare).collect();
        grid.occupied_by(&boxes, opts.policy)
    });

    // Weakest first so stronger objects overwrite.
    let ranks = precedence_ranks(scene);
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(ranks[i]));
    for i in order {
        let cat = scene.objects[i].category_id as u8;
        for &idx in &per_object[i] {
            grid.cells[idx] = cat;
        }
    }
    Ok(grid)
}
