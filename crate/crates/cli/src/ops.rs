//! Operations shared by the command line and the HTTP service.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bbs_core::bench::{run_bench, BenchOptions, BenchReport};
use bbs_core::camera::{CameraTrajectory, Intrinsics, Pose};
use bbs_core::dataset::{
    build_dataset, load_records, load_scene_views, BuildOptions, CategoryMap, DatasetManifest, Failure, Rejection,
    RulesFile, MANIFEST_FILE,
};
use bbs_core::distill::mock::{MockGenerator, MockRepresentation};
use bbs_core::distill::{
    run_two_worker, verify_event_log, DistillConfig, DistillationState, Event, MigrationEvent, StepRecord,
    TwoWorkerOptions,
};
use bbs_core::geometry::{Aabb, Vec3};
use bbs_core::render::export::{encode_depth_png, encode_preview_png, encode_semantic_png, write_frame};
use bbs_core::render::{render_bbi, render_bbi_from_voxels, BoundingBoxImage, BvhAccel, RenderConfig, RenderSource};
use bbs_core::scene::{validate_scene, BoundingBoxScene, Issue, ValidationReport};
use bbs_core::voxel::{voxelize_scene_with, OverlapPolicy, VoxelGrid, VoxelizeOptions, DEFAULT_UNIT};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub fn parse_scene(json: &str) -> Result<BoundingBoxScene, ApiError> {
    Ok(BoundingBoxScene::from_json(json)?)
}

pub fn load_scene(path: &Path) -> Result<BoundingBoxScene, ApiError> {
    Ok(BoundingBoxScene::load(path)?)
}

pub fn load_trajectory(path: &Path) -> Result<CameraTrajectory, ApiError> {
    Ok(CameraTrajectory::load(path)?)
}

pub fn require_valid(scene: &BoundingBoxScene) -> Result<(), ApiError> {
    let report = validate_scene(scene);
    if report.is_ok() {
        Ok(())
    } else {
        Err(ApiError::invalid(report))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateOutput {
    pub ok: bool,
    pub scene_id: String,
    pub content_hash: String,
    pub objects: usize,
    pub boxes: usize,
    #[serde(flatten)]
    pub report: ValidationReport,
}

/// Validates a scene and, when given, a trajectory. Trajectory problems are
/// reported as errors with an empty object id.
pub fn validate(scene: &BoundingBoxScene, traj: Option<&CameraTrajectory>) -> ValidateOutput {
    let mut report = validate_scene(scene);
    if let Some(Err(e)) = traj.map(CameraTrajectory::validate) {
        report.errors.push(Issue {
            code: e.code().to_string(),
            object_id: String::new(),
            message: e.to_string(),
        });
    }
    ValidateOutput {
        ok: report.is_ok(),
        scene_id: scene.scene_id.clone(),
        content_hash: scene.content_hash(),
        objects: scene.objects.len(),
        boxes: scene.box_count(),
        report,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoxelizeParams {
    pub unit: f64,
    pub policy: OverlapPolicy,
    /// `[min, max]` corners; required for scenes without objects.
    pub bounds: Option<[[f64; 3]; 2]>,
}

impl Default for VoxelizeParams {
    fn default() -> Self {
        VoxelizeParams {
            unit: DEFAULT_UNIT,
            policy: OverlapPolicy::Overlap,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelSummary {
    pub unit: f64,
    pub policy: OverlapPolicy,
    pub origin: [f64; 3],
    pub dims: [usize; 3],
    pub cells: usize,
    pub occupied: usize,
    /// Occupied cell count per category id.
    pub per_category: BTreeMap<u8, usize>,
}

pub fn voxelize(scene: &BoundingBoxScene, p: &VoxelizeParams, max_cells: usize) -> Result<VoxelGrid, ApiError> {
    require_valid(scene)?;
    let opts = VoxelizeOptions {
        unit: p.unit,
        policy: p.policy,
        max_cells,
        bounds: p.bounds.map(|[lo, hi]| Aabb::new(Vec3::from(lo), Vec3::from(hi))),
    };
    Ok(voxelize_scene_with(scene, &opts)?)
}

pub fn voxel_summary(grid: &VoxelGrid, policy: OverlapPolicy) -> VoxelSummary {
    let mut per_category = BTreeMap::new();
    for &c in grid.cells.iter().filter(|&&c| c != 0) {
        *per_category.entry(c).or_insert(0) += 1;
    }
    VoxelSummary {
        unit: grid.unit,
        policy,
        origin: grid.origin.into(),
        dims: grid.dims,
        cells: grid.len(),
        occupied: grid.occupied_count(),
        per_category,
    }
}

/// A validated scene with its hierarchy, ready for repeated renders.
pub struct Prepared {
    pub scene: BoundingBoxScene,
    pub hash: String,
    pub accel: BvhAccel,
}

impl Prepared {
    pub fn new(scene: BoundingBoxScene) -> Result<Self, ApiError> {
        require_valid(&scene)?;
        let hash = scene.content_hash();
        let accel = BvhAccel::build_allow_empty(&scene);
        Ok(Prepared { scene, hash, accel })
    }
}

/// Renders from boxes, or from `grid` when the config asks for voxels.
pub fn render_frame(
    prep: &Prepared,
    grid: Option<&VoxelGrid>,
    intr: &Intrinsics,
    pose: &Pose,
    cfg: &RenderConfig,
) -> Result<BoundingBoxImage, ApiError> {
    match (cfg.source, grid) {
        (RenderSource::Boxes, _) => Ok(render_bbi(&prep.scene, &prep.accel, intr, pose, cfg)?),
        (RenderSource::Voxels, Some(g)) => Ok(render_bbi_from_voxels(g, intr, pose, cfg)?),
        (RenderSource::Voxels, None) => Err(ApiError::bad_request("voxel source needs a grid")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    SemanticPng,
    DepthPng,
    PreviewPng,
}

impl Output {
    pub const ALL: [Output; 3] = [Output::SemanticPng, Output::DepthPng, Output::PreviewPng];

    pub fn name(self) -> &'static str {
        match self {
            Output::SemanticPng => "semantic_png",
            Output::DepthPng => "depth_png",
            Output::PreviewPng => "preview_png",
        }
    }
}

pub fn encode_outputs(
    bbi: &BoundingBoxImage,
    scene: &BoundingBoxScene,
    cfg: &RenderConfig,
    outputs: &[Output],
) -> Result<Vec<(Output, Vec<u8>)>, ApiError> {
    let mut wanted = outputs.to_vec();
    wanted.sort();
    wanted.dedup();
    wanted
        .into_iter()
        .map(|o| {
            let bytes = match o {
                Output::SemanticPng => encode_semantic_png(bbi, &scene.categories)?,
                Output::DepthPng => encode_depth_png(bbi, cfg)?,
                Output::PreviewPng => encode_preview_png(bbi, &scene.categories, cfg)?,
            };
            Ok((o, bytes))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSummary {
    pub out_dir: PathBuf,
    pub width: u32,
    pub height: u32,
    pub source: RenderSource,
    pub frames: Vec<FrameSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame_id: String,
    pub hit_pixels: usize,
    pub files: Vec<PathBuf>,
}

/// Renders every trajectory frame into `out` as semantic, depth and sidecar
/// files, plus `<frame>_preview.png` when asked.
pub fn render_to_dir(
    scene: BoundingBoxScene,
    traj: &CameraTrajectory,
    cfg: &RenderConfig,
    unit: f64,
    out: &Path,
    preview: bool,
) -> Result<RenderSummary, ApiError> {
    traj.validate()?;
    let prep = Prepared::new(scene)?;
    let grid = match cfg.source {
        RenderSource::Voxels => Some(voxelize(
            &prep.scene,
            &VoxelizeParams {
                unit,
                ..Default::default()
            },
            usize::MAX,
        )?),
        RenderSource::Boxes => None,
    };
    let mut frames = Vec::with_capacity(traj.len());
    for (pose, id) in traj.poses.iter().zip(&traj.frame_ids) {
        let mut bbi = render_frame(&prep, grid.as_ref(), &traj.intrinsics, pose, cfg)?;
        bbi.frame_id = id.clone();
        let w = write_frame(out, &bbi, &prep.scene.categories, cfg, pose, &traj.intrinsics)?;
        let mut files = vec![w.semantic, w.depth, w.sidecar];
        if preview {
            let p = out.join(format!("{id}_preview.png"));
            let bytes = encode_preview_png(&bbi, &prep.scene.categories, cfg)?;
            std::fs::write(&p, bytes).map_err(|e| ApiError::io(p.display(), e))?;
            files.push(p);
        }
        frames.push(FrameSummary {
            frame_id: id.clone(),
            hit_pixels: bbi.hit_count(),
            files,
        });
    }
    Ok(RenderSummary {
        out_dir: out.to_path_buf(),
        width: traj.intrinsics.width,
        height: traj.intrinsics.height,
        source: cfg.source,
        frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertParams {
    /// Directory of source scene records, one JSON file per scene.
    pub input: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub rules: RulesFile,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_unit")]
    pub unit: f64,
    #[serde(default)]
    pub source: RenderSource,
}

fn default_unit() -> f64 {
    DEFAULT_UNIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertSummary {
    pub dataset_id: String,
    pub manifest: PathBuf,
    pub scenes: usize,
    pub entries: usize,
    pub rejected: Vec<Rejection>,
    pub failed: Vec<Failure>,
}

pub fn convert(p: &ConvertParams) -> Result<ConvertSummary, ApiError> {
    let records = load_records(&p.input)?;
    let map = CategoryMap::with_aliases(p.rules.label_map.clone());
    let opts = BuildOptions {
        unit: p.unit,
        source: p.source,
        seed: p.seed,
        ..Default::default()
    };
    let m = build_dataset(&records, &map, &p.rules.rules, &opts, &p.out)?;
    Ok(ConvertSummary {
        dataset_id: m.dataset_id,
        manifest: p.out.join(MANIFEST_FILE),
        scenes: m.scenes.len(),
        entries: m.entries.len(),
        rejected: m.rejected,
        failed: m.failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    TwoWorker,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateParams {
    /// Path to a dataset manifest.
    pub dataset: PathBuf,
    /// Scene to distill; defaults to the first kept scene.
    #[serde(default)]
    pub scene: Option<String>,
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
    /// Overrides; `total_iters` and `seed` are always taken from this request.
    #[serde(default)]
    pub config: Option<DistillConfig>,
    #[serde(default)]
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub iter: usize,
    /// Mean error of the active representation against the mock targets.
    pub mean_error: f64,
    /// Mean error of the supervision images against the mock targets.
    pub dataset_error: f64,
    pub min_epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub dataset_id: String,
    pub scene_id: String,
    pub mode: Mode,
    pub views: usize,
    pub iters: usize,
    pub config: DistillConfig,
    /// Sampled before the first step and after every pass over the views.
    pub series: Vec<SeriesPoint>,
    pub steps: Vec<StepRecord>,
    pub migrations: Vec<MigrationEvent>,
    /// Two-worker runs only.
    pub events: Vec<Event>,
    pub fingerprint: String,
}

impl SimulateReport {
    pub fn initial_error(&self) -> f64 {
        self.series.first().map_or(f64::NAN, |p| p.mean_error)
    }

    pub fn final_error(&self) -> f64 {
        self.series.last().map_or(f64::NAN, |p| p.mean_error)
    }
}

/// Distills one dataset scene with the mock generator and representation.
pub fn simulate(p: &SimulateParams) -> Result<SimulateReport, ApiError> {
    let manifest = DatasetManifest::load(&p.dataset)?;
    let root = p.dataset.parent().unwrap_or(Path::new("."));
    let (scene, views) = load_scene_views(root, &manifest, p.scene.as_deref())?;
    let mut cfg = p.config.clone().unwrap_or_default();
    cfg.total_iters = p.iters;
    cfg.seed = p.seed;
    let gen = MockGenerator::new(scene.palette(), cfg.seed);
    let rep = MockRepresentation::new(&views, cfg.seed);
    let n = views.len();
    let mut st = DistillationState::new(views, rep, cfg.clone())?.with_targets_from(&gen);
    let sample = |st: &DistillationState<MockRepresentation>| SeriesPoint {
        iter: st.iter,
        mean_error: st.mean_error().unwrap_or(f64::NAN),
        dataset_error: st.dataset_error().unwrap_or(f64::NAN),
        min_epoch: st.dataset.iter().map(|v| v.generation_epoch).min().unwrap_or(0),
    };
    let mut series = vec![sample(&st)];
    let mut events: Vec<Event> = Vec::new();
    let mut done = 0;
    while done < p.iters {
        let chunk = n.min(p.iters - done);
        match p.mode {
            Mode::Sequential => st.run(&gen, chunk)?,
            Mode::TwoWorker => {
                let start = st.iter;
                let (next, mut log) = run_two_worker(st, &gen, chunk, TwoWorkerOptions::default())?;
                verify_event_log(&log, start, chunk).map_err(|m| ApiError::new("EVENT_ORDER", m))?;
                let base = events.len();
                for e in &mut log {
                    e.seq += base;
                }
                events.extend(log);
                st = next;
            }
        }
        done += chunk;
        series.push(sample(&st));
    }
    Ok(SimulateReport {
        dataset_id: manifest.dataset_id,
        scene_id: scene.scene_id,
        mode: p.mode,
        views: n,
        iters: p.iters,
        config: cfg,
        series,
        fingerprint: st.fingerprint(),
        steps: st.history,
        migrations: st.migrations,
        events,
    })
}

pub fn bench(
    scene: &BoundingBoxScene,
    traj: &CameraTrajectory,
    cfg: &RenderConfig,
    opts: &BenchOptions,
) -> Result<BenchReport, ApiError> {
    require_valid(scene)?;
    traj.validate()?;
    Ok(run_bench(scene, traj, cfg, opts)?)
}
