//! The bounding-box scene: category-labeled objects, each a union of
//! oriented boxes. Room shells (walls, floor, ceiling, doors, windows) are
//! ordinary objects carrying reserved category names.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{aabb_of_obb, Aabb, GeometryError, Obb, PreparedObb, Vec3};

pub const FORMAT_VERSION: &str = "1.0";

/// Category names treated as room-shell geometry.
pub const SHELL_CATEGORIES: [&str; 5] = ["wall", "floor", "ceiling", "door", "window"];

/// Scene objects and voxel cells store category ids in one byte.
pub const MAX_CATEGORIES: usize = 256;

/// Boxes below this volume (m^3) raise a warning.
pub const TINY_BOX_VOLUME: f64 = 1e-6;

const DEFAULT_CATEGORY_TABLE: &str = include_str!("../../../docs/categories_nyu40.json");

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene has no objects")]
    EmptyScene,
    #[error("scene failed validation with {} error(s): {}", .0.errors.len(), .0.summary())]
    Invalid(ValidationReport),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scene json: {0}")]
    Json(#[from] serde_json::Error),
}

impl SceneError {
    pub fn code(&self) -> &'static str {
        match self {
            SceneError::EmptyScene => "EMPTY_SCENE",
            SceneError::Invalid(_) => "INVALID_SCENE",
            SceneError::Io { .. } => "IO_ERROR",
            SceneError::Json(_) => "MALFORMED_JSON",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u16,
    pub name: String,
    pub color: [u8; 3],
}

impl Category {
    pub fn new(id: u16, name: impl Into<String>, color: [u8; 3]) -> Self {
        Category {
            id,
            name: name.into(),
            color,
        }
    }

    pub fn is_shell(&self) -> bool {
        SHELL_CATEGORIES.contains(&self.name.as_str())
    }
}

/// The bundled NYU40-style table (id 0 = void).
pub fn default_categories() -> Vec<Category> {
    serde_json::from_str(DEFAULT_CATEGORY_TABLE).expect("bundled category table is valid json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_id: String,
    pub category_id: u16,
    pub boxes: Vec<Obb>,
}

impl SceneObject {
    pub fn new(object_id: impl Into<String>, category_id: u16, boxes: Vec<Obb>) -> Self {
        SceneObject {
            object_id: object_id.into(),
            category_id,
            boxes,
        }
    }

    /// Union membership: inside any member box.
    pub fn contains_point(&self, p: Vec3) -> bool {
        self.boxes.iter().any(|b| b.prepare().contains_point(p))
    }

    /// Axis-aligned bound of all member boxes.
    pub fn bounds(&self) -> Aabb {
        self.boxes
            .iter()
            .fold(Aabb::empty(), |acc, b| acc.union(&aabb_of_obb(b)))
    }
}

/// Free-function form of [`SceneObject::contains_point`].
pub fn object_contains_point(obj: &SceneObject, p: Vec3) -> bool {
    obj.contains_point(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBoxScene {
    pub version: String,
    pub scene_id: String,
    pub categories: Vec<Category>,
    pub objects: Vec<SceneObject>,
}

impl BoundingBoxScene {
    pub fn new(scene_id: impl Into<String>, categories: Vec<Category>) -> Self {
        BoundingBoxScene {
            version: FORMAT_VERSION.to_string(),
            scene_id: scene_id.into(),
            categories,
            objects: Vec::new(),
        }
    }

    pub fn with_object(mut self, obj: SceneObject) -> Self {
        self.objects.push(obj);
        self
    }

    pub fn category(&self, id: u16) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn category_by_name(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn box_count(&self) -> usize {
        self.objects.iter().map(|o| o.boxes.len()).sum()
    }

    /// Palette indexed by category id; gaps are black.
    pub fn palette(&self) -> Vec<[u8; 3]> {
        let n = self.categories.iter().map(|c| c.id as usize + 1).max().unwrap_or(0);
        let mut out = vec![[0u8; 3]; n];
        for c in &self.categories {
            out[c.id as usize] = c.color;
        }
        out
    }

    pub fn from_json(s: &str) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Hex SHA-256 of the compact JSON encoding. Used as the stored scene id.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scene serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Validates and returns the scene, or the report as an error.
    pub fn validated(self) -> Result<Self, SceneError> {
        let report = validate_scene(&self);
        if report.is_ok() {
            Ok(self)
        } else {
            Err(SceneError::Invalid(report))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: String,
    pub object_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn error_codes(&self) -> Vec<&str> {
        self.errors.iter().map(|e| e.code.as_str()).collect()
    }

    pub fn summary(&self) -> String {
        self.errors
            .iter()
            .map(|e| format!("{}({})", e.code, e.object_id))
            .collect::<Vec<_>>()
            .join(", ")
    }

    fn error(&mut self, code: &str, object_id: &str, message: String) {
        self.errors.push(Issue {
            code: code.to_string(),
            object_id: object_id.to_string(),
            message,
        });
    }

    fn warn(&mut self, code: &str, object_id: &str, message: String) {
        self.warnings.push(Issue {
            code: code.to_string(),
            object_id: object_id.to_string(),
            message,
        });
    }
}

/// Checks every scene invariant. Errors are data; this never fails.
pub fn validate_scene(scene: &BoundingBoxScene) -> ValidationReport {
    let mut report = ValidationReport::default();

    if scene.version.trim().is_empty() {
        report.error("MISSING_VERSION", "", "version must be nonempty".into());
    }

    check_categories(scene, &mut report);

    let known: HashSet<u16> = scene.categories.iter().map(|c| c.id).collect();
    let mut seen_ids = HashSet::new();
    for obj in &scene.objects {
        let oid = obj.object_id.as_str();
        if oid.is_empty() {
            report.error("EMPTY_OBJECT_ID", oid, "object_id must be nonempty".into());
        }
        if !seen_ids.insert(oid) {
            report.error(
                "DUPLICATE_OBJECT_ID",
                oid,
                format!("object_id {oid:?} appears more than once"),
            );
        }
        if !known.contains(&obj.category_id) {
            report.error(
                "UNKNOWN_CATEGORY",
                oid,
                format!("category_id {} is not in the category table", obj.category_id),
            );
        } else if obj.category_id == 0 {
            report.error(
                "VOID_CATEGORY_USED",
                oid,
                "category 0 is reserved for empty space".into(),
            );
        }
        if obj.boxes.is_empty() {
            report.error("EMPTY_OBJECT", oid, "object has no boxes".into());
        }
        for (i, b) in obj.boxes.iter().enumerate() {
            match b.check() {
                Ok(()) => {
                    if b.volume() < TINY_BOX_VOLUME {
                        report.warn("TINY_BOX", oid, format!("box {i} has volume {:.3e} m^3", b.volume()));
                    }
                }
                Err(e) => {
                    let code = match e {
                        GeometryError::DegenerateExtents(_) => "DEGENERATE_BOX",
                        GeometryError::NotUnitQuaternion(_) | GeometryError::ZeroQuaternion => "INVALID_ROTATION",
                        _ => "NON_FINITE",
                    };
                    report.error(code, oid, format!("box {i}: {e}"));
                }
            }
        }
    }

    if report.is_ok() {
        check_containment(scene, &mut report);
    }
    report
}

fn check_categories(scene: &BoundingBoxScene, report: &mut ValidationReport) {
    let cats = &scene.categories;
    if cats.len() > MAX_CATEGORIES {
        report.error(
            "TOO_MANY_CATEGORIES",
            "",
            format!("{} categories exceed the limit of {MAX_CATEGORIES}", cats.len()),
        );
    }
    let mut ids = HashSet::new();
    for c in cats {
        if !ids.insert(c.id) {
            report.error(
                "DUPLICATE_CATEGORY_ID",
                "",
                format!("category id {} defined twice", c.id),
            );
        }
    }
    if !ids.contains(&0) {
        report.error(
            "MISSING_VOID_CATEGORY",
            "",
            "category id 0 (void) must be defined".into(),
        );
    }
    let max = cats.iter().map(|c| c.id as usize).max();
    if let Some(max) = max {
        if ids.len() == cats.len() && max + 1 != cats.len() {
            report.error(
                "NON_CONTIGUOUS_CATEGORIES",
                "",
                format!("category ids must be 0..{} without gaps", cats.len()),
            );
        }
    }
}

fn check_containment(scene: &BoundingBoxScene, report: &mut ValidationReport) {
    let prepared: Vec<Vec<PreparedObb>> = scene
        .objects
        .iter()
        .map(|o| o.boxes.iter().map(Obb::prepare).collect())
        .collect();
    let bounds: Vec<Aabb> = scene.objects.iter().map(SceneObject::bounds).collect();
    for (i, a) in scene.objects.iter().enumerate() {
        for (j, b) in scene.objects.iter().enumerate() {
            if i == j || !bounds[j].padded(1e-9).contains_aabb(&bounds[i]) {
                continue;
            }
            // Convexity: a box whose corners all lie in one box of `b` is inside it.
            let inside = a.boxes.iter().all(|ab| {
                let corners = ab.corners();
                prepared[j]
                    .iter()
                    .any(|pb| corners.iter().all(|&c| pb.contains_point(c)))
            });
            if inside {
                report.warn(
                    "CONTAINED_OBJECT",
                    &a.object_id,
                    format!("object lies entirely inside {:?}", b.object_id),
                );
                break;
            }
        }
    }
}

/// Union of every box's axis-aligned bound.
pub fn scene_bounds(scene: &BoundingBoxScene) -> Result<Aabb, SceneError> {
    let b = scene
        .objects
        .iter()
        .fold(Aabb::empty(), |acc, o| acc.union(&o.bounds()));
    if b.is_empty() {
        Err(SceneError::EmptyScene)
    } else {
        Ok(b)
    }
}

/// Priority order for category conflicts: smaller object bound volume wins,
/// ties broken by lexicographic `object_id`. Returns one rank per object,
/// rank 0 being the strongest.
pub fn precedence_ranks(scene: &BoundingBoxScene) -> Vec<u32> {
    let volumes: Vec<f64> = scene.objects.iter().map(|o| o.bounds().volume()).collect();
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by(|&a, &b| compare_precedence(volumes[a], &scene.objects[a], volumes[b], &scene.objects[b]));
    let mut ranks = vec![0u32; order.len()];
    for (rank, idx) in order.into_iter().enumerate() {
        ranks[idx] = rank as u32;
    }
    ranks
}

fn compare_precedence(va: f64, a: &SceneObject, vb: f64, b: &SceneObject) -> Ordering {
    va.total_cmp(&vb).then_with(|| a.object_id.cmp(&b.object_id))
}

/// Maps category ids to dense lookups; absent ids yield `None`.
pub fn category_lookup(scene: &BoundingBoxScene) -> HashMap<u16, &Category> {
    scene.categories.iter().map(|c| (c.id, c)).collect()
}
