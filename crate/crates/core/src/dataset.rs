//! Conversion of annotated multi-view scenes into training pairs:
//! bounding-box scene, trajectory, exported bounding-box images, and a
//! manifest tying them to the base prompt.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::{CameraTrajectory, Intrinsics, Pose, PoseRecord};
use crate::distill::{Image, ViewEntry};
use crate::geometry::{ray_obb_intersect, Obb, Ray, Vec3};
use crate::par;
use crate::render::export::{read_frame, write_frame, Sidecar};
use crate::render::{render_bbi, render_bbi_from_voxels, BvhAccel, RenderConfig, RenderSource};
use crate::scene::{default_categories, scene_bounds, validate_scene, BoundingBoxScene, Category, SceneObject};
use crate::voxel::{voxelize_scene_with, VoxelizeOptions, DEFAULT_UNIT};

pub const BASE_PROMPT: &str = "This is one view of a room.";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("scene {0:?} has no object with a mappable category")]
    NoMappableObjects(String),
    #[error("frame {frame_id:?}: {reason}")]
    MalformedPose { frame_id: String, reason: String },
    #[error("scene {0:?} has no frames")]
    NoFrames(String),
    #[error("duplicate scene id {0:?}")]
    DuplicateScene(String),
    #[error("{scene_id}: {message}")]
    Scene {
        scene_id: String,
        code: &'static str,
        message: String,
    },
    #[error("all {0} scene(s) failed")]
    AllScenesFailed(usize),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: malformed json: {message}")]
    Json { path: String, message: String },
}

impl DatasetError {
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::NoMappableObjects(_) => "NO_MAPPABLE_OBJECTS",
            DatasetError::MalformedPose { .. } => "MALFORMED_POSE",
            DatasetError::NoFrames(_) => "NO_FRAMES",
            DatasetError::DuplicateScene(_) => "DUPLICATE_SCENE",
            DatasetError::Scene { code, .. } => code,
            DatasetError::AllScenesFailed(_) => "ALL_SCENES_FAILED",
            DatasetError::Io { .. } => "IO_ERROR",
            DatasetError::Json { .. } => "MALFORMED_JSON",
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFrame {
    pub frame_id: String,
    pub position: [f64; 3],
    pub rotation_quat: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photo_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceObject {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    pub label: String,
    pub boxes: Vec<Obb>,
}

/// One labeled sample of a semantic point cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePoint {
    pub position: [f64; 3],
    pub label: String,
    #[serde(default)]
    pub instance: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSceneRecord {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    pub frames: Vec<SourceFrame>,
    #[serde(default)]
    pub objects: Vec<SourceObject>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<SourcePoint>,
}

/// Source label to target category table.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMap {
    pub table: Vec<Category>,
    /// Lowercased source label -> target category name.
    pub aliases: BTreeMap<String, String>,
}

impl Default for CategoryMap {
    fn default() -> Self {
        CategoryMap {
            table: default_categories(),
            aliases: BTreeMap::new(),
        }
    }
}

impl CategoryMap {
    pub fn with_aliases(aliases: BTreeMap<String, String>) -> Self {
        CategoryMap {
            aliases: aliases.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect(),
            ..Default::default()
        }
    }

    /// Target id for a source label; id 0 (void) never maps.
    pub fn map(&self, label: &str) -> Option<u16> {
        let l = label.to_lowercase();
        let name = self.aliases.get(&l).map(String::as_str).unwrap_or(&l);
        self.table.iter().find(|c| c.name == name && c.id != 0).map(|c| c.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRules {
    pub max_extent_m: f64,
    /// Empty means every category is allowed.
    pub category_whitelist: BTreeSet<String>,
    pub min_frames: usize,
    pub require_bounded: bool,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            max_extent_m: 15.0,
            category_whitelist: BTreeSet::new(),
            min_frames: 20,
            require_bounded: true,
        }
    }
}

/// Contents of a `--rules` file: filter rules plus optional label aliases.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RulesFile {
    #[serde(flatten)]
    pub rules: FilterRules,
    pub label_map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub keep: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub scene: BoundingBoxScene,
    pub trajectory: CameraTrajectory,
    pub photos: Vec<Option<String>>,
    pub intrinsics_defaulted: bool,
    pub warnings: Vec<String>,
}

/// Groups labeled points by (label, instance), voxelizes each group at
/// `unit` and merges cells into x-runs, one box per run.
fn points_to_objects(points: &[SourcePoint], unit: f64) -> Vec<SourceObject> {
    type Cells = BTreeSet<(i64, i64, i64)>;
    let mut groups: BTreeMap<(String, u32), Cells> = BTreeMap::new();
    for p in points {
        if !p.position.iter().all(|v| v.is_finite()) {
            continue;
        }
        let cell = (
            (p.position[2] / unit).floor() as i64,
            (p.position[1] / unit).floor() as i64,
            (p.position[0] / unit).floor() as i64,
        );
        groups.entry((p.label.clone(), p.instance)).or_default().insert(cell);
    }
    let mut out = Vec::new();
    for ((label, instance), cells) in groups {
        let mut boxes = Vec::new();
        let mut iter = cells.into_iter().peekable();
        while let Some((z, y, x0)) = iter.next() {
            let mut x1 = x0;
            while let Some(&(nz, ny, nx)) = iter.peek() {
                if nz == z && ny == y && nx == x1 + 1 {
                    x1 = nx;
                    iter.next();
                } else {
                    break;
                }
            }
            let min = Vec3::new(x0 as f64 * unit, y as f64 * unit, z as f64 * unit);
            let max = Vec3::new((x1 + 1) as f64 * unit, (y + 1) as f64 * unit, (z + 1) as f64 * unit);
            boxes.push(Obb::from_min_max(min, max).expect("positive cell extents"));
        }
        out.push(SourceObject {
            object_id: Some(format!("{label}_{instance}")),
            label,
            boxes,
        });
    }
    out
}

/// Converts a source record into a scene and trajectory. Unmapped labels are
/// dropped with a warning; frame order is preserved.
pub fn ingest_source_scene(record: &SourceSceneRecord, map: &CategoryMap) -> Result<Ingested, DatasetError> {
    ingest_with_unit(record, map, DEFAULT_UNIT)
}

pub fn ingest_with_unit(record: &SourceSceneRecord, map: &CategoryMap, unit: f64) -> Result<Ingested, DatasetError> {
    if record.frames.is_empty() {
        return Err(DatasetError::NoFrames(record.scene_id.clone()));
    }
    let mut warnings = Vec::new();
    let mut scene = BoundingBoxScene::new(record.scene_id.clone(), map.table.clone());
    let mut used_ids = HashSet::new();
    let from_points = points_to_objects(&record.points, unit);
    for (i, obj) in record.objects.iter().chain(from_points.iter()).enumerate() {
        let Some(cat) = map.map(&obj.label) else {
            warnings.push(format!("dropped unmapped label {:?}", obj.label));
            continue;
        };
        let mut id = obj
            .object_id
            .clone()
            .unwrap_or_else(|| format!("{}_{i:03}", obj.label.to_lowercase().replace(' ', "_")));
        if !used_ids.insert(id.clone()) {
            id = format!("{id}_{i:03}");
            used_ids.insert(id.clone());
        }
        scene.objects.push(SceneObject::new(id, cat, obj.boxes.clone()));
    }
    if scene.objects.is_empty() {
        return Err(DatasetError::NoMappableObjects(record.scene_id.clone()));
    }
    let mut poses = Vec::with_capacity(record.frames.len());
    let mut ids = Vec::with_capacity(record.frames.len());
    let mut photos = Vec::with_capacity(record.frames.len());
    let mut seen = HashSet::new();
    for f in &record.frames {
        if !seen.insert(f.frame_id.clone()) {
            warnings.push(format!("duplicate frame {:?} skipped", f.frame_id));
            continue;
        }
        let pose: Pose = PoseRecord {
            position: f.position,
            rotation_quat: f.rotation_quat,
        }
        .into();
        pose.validate().map_err(|reason| DatasetError::MalformedPose {
            frame_id: f.frame_id.clone(),
            reason,
        })?;
        poses.push(pose);
        ids.push(f.frame_id.clone());
        photos.push(f.photo_path.clone());
    }
    let intrinsics_defaulted = record.intrinsics.is_none();
    let trajectory = CameraTrajectory {
        intrinsics: record.intrinsics.unwrap_or_default(),
        poses,
        frame_ids: ids,
    };
    Ok(Ingested {
        scene,
        trajectory,
        photos,
        intrinsics_defaulted,
        warnings,
    })
}

/// Number of the six axis directions from `origin` that hit a shell box.
pub fn shell_probe_hits(scene: &BoundingBoxScene, origin: Vec3) -> usize {
    let shell: Vec<&Obb> = scene
        .objects
        .iter()
        .filter(|o| scene.category(o.category_id).is_some_and(|c| c.is_shell()))
        .flat_map(|o| o.boxes.iter())
        .collect();
    let dirs = [Vec3::X, -Vec3::X, Vec3::Y, -Vec3::Y, Vec3::Z, -Vec3::Z];
    dirs.iter()
        .filter(|&&d| {
            let ray = Ray::new(origin, d).expect("axis direction");
            shell.iter().any(|b| ray_obb_intersect(&ray, b).is_some())
        })
        .count()
}

pub fn filter_scene(scene: &BoundingBoxScene, traj: &CameraTrajectory, rules: &FilterRules) -> FilterDecision {
    let mut reasons = Vec::new();
    if !validate_scene(scene).is_ok() {
        reasons.push("INVALID_SCENE".to_string());
    }
    if let Ok(b) = scene_bounds(scene) {
        if b.extent().max_element() > rules.max_extent_m {
            reasons.push("EXCESSIVE_EXTENT".to_string());
        }
    }
    if traj.len() < rules.min_frames {
        reasons.push("TOO_FEW_FRAMES".to_string());
    }
    if rules.require_bounded && shell_probe_hits(scene, traj.centroid()) < 5 {
        reasons.push("UNBOUNDED".to_string());
    }
    if !rules.category_whitelist.is_empty() {
        let bad = scene.objects.iter().any(|o| {
            scene
                .category(o.category_id)
                .is_none_or(|c| !rules.category_whitelist.contains(&c.name))
        });
        if bad {
            reasons.push("DISALLOWED_CATEGORY".to_string());
        }
    }
    FilterDecision {
        keep: reasons.is_empty(),
        reasons,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbiPaths {
    pub semantic: String,
    pub depth: String,
    pub sidecar: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub frame_id: String,
    pub bbi_paths: BbiPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photo_path: Option<String>,
    pub pose: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene_id: String,
    pub scene_path: String,
    pub trajectory_path: String,
    pub frames: usize,
    pub intrinsics_defaulted: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub scene_id: String,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub scene_id: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub base_prompt: String,
    pub seed: u64,
    pub unit: f64,
    pub source: RenderSource,
    pub render: RenderConfig,
    pub rules: FilterRules,
    pub scenes: Vec<SceneSummary>,
    pub rejected: Vec<Rejection>,
    pub failed: Vec<Failure>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| DatasetError::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub unit: f64,
    pub source: RenderSource,
    pub render: RenderConfig,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            unit: DEFAULT_UNIT,
            source: RenderSource::Boxes,
            render: RenderConfig::default(),
            seed: 0,
        }
    }
}

/// Loads every `*.json` record in `dir`, sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<SourceSceneRecord>, DatasetError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| DatasetError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let s = fs::read_to_string(p).map_err(|e| DatasetError::io(p, e))?;
            serde_json::from_str(&s).map_err(|e| DatasetError::Json {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Reads back one kept scene of a built dataset as distillation views, with
/// uniform gray supervision. `scene_id` defaults to the first kept scene.
pub fn load_scene_views(
    root: &Path,
    manifest: &DatasetManifest,
    scene_id: Option<&str>,
) -> Result<(BoundingBoxScene, Vec<ViewEntry>), DatasetError> {
    let summary = match scene_id {
        Some(id) => manifest.scenes.iter().find(|s| s.scene_id == id),
        None => manifest.scenes.first(),
    }
    .ok_or_else(|| DatasetError::NoFrames(scene_id.unwrap_or("<any>").to_string()))?;
    let fail = |code: &'static str, message: String| DatasetError::Scene {
        scene_id: summary.scene_id.clone(),
        code,
        message,
    };
    let scene = BoundingBoxScene::load(root.join(&summary.scene_path)).map_err(|e| fail(e.code(), e.to_string()))?;
    let read = |p: &str| fs::read(root.join(p)).map_err(|e| DatasetError::io(&root.join(p), e));
    let mut views = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.scene_id == summary.scene_id) {
        let side: Sidecar = serde_json::from_slice(&read(&e.bbi_paths.sidecar)?).map_err(|err| DatasetError::Json {
            path: e.bbi_paths.sidecar.clone(),
            message: err.to_string(),
        })?;
        let bbi = read_frame(&read(&e.bbi_paths.semantic)?, &read(&e.bbi_paths.depth)?, &side)
            .map_err(|err| fail(err.code(), err.to_string()))?;
        views.push(ViewEntry {
            frame_id: e.frame_id.clone(),
            pose: e.pose.into(),
            supervision: Image::filled(bbi.width, bbi.height, 0.5),
            bbi,
            generation_epoch: 0,
            last_strength: 0.0,
        });
    }
    if views.is_empty() {
        return Err(DatasetError::NoFrames(summary.scene_id.clone()));
    }
    Ok((scene, views))
}

enum Outcome {
    Kept(SceneSummary, Vec<ManifestEntry>),
    Rejected(Rejection),
    Failed(Failure),
}

fn rel(p: &Path, root: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn scene_failure(scene_id: &str, code: &str, message: impl ToString) -> Outcome {
    Outcome::Failed(Failure {
        scene_id: scene_id.to_string(),
        code: code.to_string(),
        message: message.to_string(),
    })
}

fn process_scene(
    record: &SourceSceneRecord,
    map: &CategoryMap,
    rules: &FilterRules,
    opts: &BuildOptions,
    out: &Path,
) -> Outcome {
    let id = &record.scene_id;
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return scene_failure(id, "INVALID_SCENE_ID", "scene_id must be a plain file name");
    }
    let ing = match ingest_with_unit(record, map, opts.unit) {
        Ok(i) => i,
        Err(e) => return scene_failure(id, e.code(), e),
    };
    let decision = filter_scene(&ing.scene, &ing.trajectory, rules);
    if !decision.keep {
        return Outcome::Rejected(Rejection {
            scene_id: id.clone(),
            reasons: decision.reasons,
        });
    }
    let dir = out.join(id);
    let bbi_dir = dir.join("bbi");
    if let Err(e) = fs::create_dir_all(&bbi_dir) {
        return scene_failure(id, "IO_ERROR", e);
    }
    let scene_path = dir.join("scene.json");
    let traj_path = dir.join("trajectory.json");
    if let Err(e) = ing.scene.save(&scene_path) {
        return scene_failure(id, e.code(), e);
    }
    if let Err(e) = ing.trajectory.save(&traj_path) {
        return scene_failure(id, e.code(), e);
    }
    let intr = &ing.trajectory.intrinsics;
    let cfg = &opts.render;
    enum Source {
        Boxes(BvhAccel),
        Voxels(crate::voxel::VoxelGrid),
    }
    let source = match opts.source {
        RenderSource::Boxes => Source::Boxes(BvhAccel::build_allow_empty(&ing.scene)),
        RenderSource::Voxels => {
            match voxelize_scene_with(&ing.scene, &VoxelizeOptions::new(opts.unit, Default::default())) {
                Ok(g) => Source::Voxels(g),
                Err(e) => return scene_failure(id, e.code(), e),
            }
        }
    };
    let mut entries = Vec::with_capacity(ing.trajectory.len());
    for ((pose, frame_id), photo) in ing
        .trajectory
        .poses
        .iter()
        .zip(&ing.trajectory.frame_ids)
        .zip(&ing.photos)
    {
        let bbi = match &source {
            Source::Boxes(accel) => render_bbi(&ing.scene, accel, intr, pose, cfg),
            Source::Voxels(g) => render_bbi_from_voxels(g, intr, pose, cfg),
        };
        let mut bbi = match bbi {
            Ok(b) => b,
            Err(e) => return scene_failure(id, e.code(), format!("frame {frame_id}: {e}")),
        };
        bbi.frame_id = frame_id.clone();
        let files = match write_frame(&bbi_dir, &bbi, &ing.scene.categories, cfg, pose, intr) {
            Ok(f) => f,
            Err(e) => return scene_failure(id, e.code(), e),
        };
        entries.push(ManifestEntry {
            scene_id: id.clone(),
            frame_id: frame_id.clone(),
            bbi_paths: BbiPaths {
                semantic: rel(&files.semantic, out),
                depth: rel(&files.depth, out),
                sidecar: rel(&files.sidecar, out),
            },
            photo_path: photo.clone(),
            pose: (*pose).into(),
        });
    }
    let summary = SceneSummary {
        scene_id: id.clone(),
        scene_path: rel(&scene_path, out),
        trajectory_path: rel(&traj_path, out),
        frames: entries.len(),
        intrinsics_defaulted: ing.intrinsics_defaulted,
        warnings: ing.warnings,
    };
    Outcome::Kept(summary, entries)
}

fn dataset_id(records: &[SourceSceneRecord], rules: &FilterRules, opts: &BuildOptions) -> String {
    let mut h = Sha256::new();
    h.update(opts.seed.to_le_bytes());
    h.update(opts.unit.to_bits().to_le_bytes());
    h.update(serde_json::to_vec(rules).expect("rules serialize"));
    h.update(serde_json::to_vec(&opts.render).expect("config serializes"));
    for r in records {
        h.update(serde_json::to_vec(r).expect("record serializes"));
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// Renders and exports every kept scene, then writes `manifest.json` last.
/// Scenes are processed in parallel; the manifest lists them in input order.
pub fn build_dataset(
    records: &[SourceSceneRecord],
    map: &CategoryMap,
    rules: &FilterRules,
    opts: &BuildOptions,
    out: &Path,
) -> Result<DatasetManifest, DatasetError> {
    fs::create_dir_all(out).map_err(|e| DatasetError::io(out, e))?;
    let mut seen = HashSet::new();
    let unique: Vec<bool> = records.iter().map(|r| seen.insert(r.scene_id.clone())).collect();
    let idx: Vec<usize> = (0..records.len()).collect();
    let outcomes = par::map(&idx, |&i| {
        if !unique[i] {
            let e = DatasetError::DuplicateScene(records[i].scene_id.clone());
            return scene_failure(&records[i].scene_id, e.code(), e);
        }
        process_scene(&records[i], map, rules, opts, out)
    });
    let mut manifest = DatasetManifest {
        dataset_id: dataset_id(records, rules, opts),
        base_prompt: BASE_PROMPT.to_string(),
        seed: opts.seed,
        unit: opts.unit,
        source: opts.source,
        render: opts.render,
        rules: rules.clone(),
        scenes: Vec::new(),
        rejected: Vec::new(),
        failed: Vec::new(),
        entries: Vec::new(),
    };
    for o in outcomes {
        match o {
            Outcome::Kept(s, e) => {
                manifest.scenes.push(s);
                manifest.entries.extend(e);
            }
            Outcome::Rejected(r) => manifest.rejected.push(r),
            Outcome::Failed(f) => manifest.failed.push(f),
        }
    }
    if manifest.scenes.is_empty() && !manifest.failed.is_empty() && manifest.rejected.is_empty() {
        return Err(DatasetError::AllScenesFailed(manifest.failed.len()));
    }
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| DatasetError::io(&path, e))?;
    Ok(manifest)
}

/// SHA-256 of the manifest file bytes.
pub fn manifest_hash(out: &Path) -> Result<String, DatasetError> {
    let path = out.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| DatasetError::io(&path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Relative path and SHA-256 of every file under `root`, sorted by path.
pub fn tree_digest(root: &Path) -> Result<Vec<(String, String)>, DatasetError> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, String)>) -> Result<(), DatasetError> {
        for e in fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))? {
            let p = e.map_err(|e| DatasetError::io(dir, e))?.path();
            if p.is_dir() {
                walk(&p, root, out)?;
            } else {
                let bytes = fs::read(&p).map_err(|e| DatasetError::io(&p, e))?;
                out.push((rel(&p, root), hex::encode(Sha256::digest(&bytes))));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}
