//! HTTP service backing the layout editor and remote tooling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use bbs_core::camera::{Intrinsics, PoseRecord};
use bbs_core::render::{RenderConfig, RenderSource};
use bbs_core::scene::BoundingBoxScene;
use bbs_core::voxel::{OverlapPolicy, VoxelGrid, DEFAULT_MAX_CELLS, DEFAULT_UNIT};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::error::ApiError;
use crate::jobs::{JobKind, JobStore};
use crate::ops::{self, ConvertParams, Output, Prepared, SimulateParams, VoxelizeParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub store_dir: PathBuf,
    pub bind: String,
    pub max_grid_cells: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            store_dir: PathBuf::from("bbs-store"),
            bind: "127.0.0.1:8080".into(),
            max_grid_cells: DEFAULT_MAX_CELLS,
        }
    }
}

impl ServerConfig {
    /// Reads `BBS_STORE_DIR`, `BBS_BIND_ADDR` and `BBS_MAX_GRID_CELLS`.
    pub fn from_env() -> Result<Self, ApiError> {
        let mut cfg = ServerConfig::default();
        if let Ok(v) = std::env::var("BBS_STORE_DIR") {
            cfg.store_dir = v.into();
        }
        if let Ok(v) = std::env::var("BBS_BIND_ADDR") {
            cfg.bind = v;
        }
        if let Ok(v) = std::env::var("BBS_MAX_GRID_CELLS") {
            cfg.max_grid_cells = v
                .parse()
                .map_err(|_| ApiError::bad_request(format!("BBS_MAX_GRID_CELLS={v:?} is not a cell count")))?;
        }
        Ok(cfg)
    }
}

type GridKey = (String, u64, OverlapPolicy);

pub struct AppState {
    pub config: ServerConfig,
    pub jobs: JobStore,
    prepared: Mutex<HashMap<String, Arc<Prepared>>>,
    grids: Mutex<HashMap<GridKey, Arc<VoxelGrid>>>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Result<Self, ApiError> {
        let scenes = config.store_dir.join("scenes");
        std::fs::create_dir_all(&scenes).map_err(|e| ApiError::io(scenes.display(), e))?;
        let jobs = JobStore::open(&config.store_dir.join("jobs"))?;
        Ok(AppState {
            config,
            jobs,
            prepared: Mutex::new(HashMap::new()),
            grids: Mutex::new(HashMap::new()),
        })
    }

    fn scene_path(&self, id: &str) -> Result<PathBuf, ApiError> {
        if id.len() != 64 || !id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(ApiError::new("SCENE_NOT_FOUND", format!("no stored scene {id:?}")));
        }
        Ok(self.config.store_dir.join("scenes").join(format!("{id}.json")))
    }

    fn stored_scene(&self, id: &str) -> Result<BoundingBoxScene, ApiError> {
        let path = self.scene_path(id)?;
        if !path.exists() {
            return Err(ApiError::new("SCENE_NOT_FOUND", format!("no stored scene {id:?}")));
        }
        ops::load_scene(&path)
    }

    /// Scene and hierarchy for `scene`, shared between requests by content hash.
    fn prepare(&self, scene: BoundingBoxScene) -> Result<Arc<Prepared>, ApiError> {
        let hash = scene.content_hash();
        if let Some(p) = self.prepared.lock().unwrap().get(&hash) {
            return Ok(p.clone());
        }
        let p = Arc::new(Prepared::new(scene)?);
        Ok(self.prepared.lock().unwrap().entry(hash).or_insert(p).clone())
    }

    fn grid(&self, prep: &Prepared, p: &VoxelizeParams) -> Result<Arc<VoxelGrid>, ApiError> {
        let key = (prep.hash.clone(), p.unit.to_bits(), p.policy);
        let cacheable = p.bounds.is_none();
        if cacheable {
            if let Some(g) = self.grids.lock().unwrap().get(&key) {
                return Ok(g.clone());
            }
        }
        let g = Arc::new(ops::voxelize(&prep.scene, p, self.config.max_grid_cells)?);
        if cacheable {
            self.grids.lock().unwrap().insert(key, g.clone());
        }
        Ok(g)
    }

    fn resolve(&self, inline: Option<Value>, scene_id: Option<String>) -> Result<BoundingBoxScene, ApiError> {
        match (inline, scene_id) {
            (Some(v), None) => Ok(serde_json::from_value(v)?),
            (None, Some(id)) => self.stored_scene(&id),
            _ => Err(ApiError::bad_request("give exactly one of `scene` and `scene_id`")),
        }
    }

    /// Relative paths in job requests are taken from the store directory.
    fn store_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config.store_dir.join(p)
        }
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "INVALID_SCENE" => StatusCode::UNPROCESSABLE_ENTITY,
        "SCENE_NOT_FOUND" | "JOB_NOT_FOUND" => StatusCode::NOT_FOUND,
        "GRID_TOO_LARGE" => StatusCode::PAYLOAD_TOO_LARGE,
        "IO_ERROR" | "PNG_ERROR" | "INTERNAL" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ApiError {
    /// Validation failures return the report itself, tagged with the code.
    fn into_response(self) -> Response {
        let status = status_for(&self.code);
        let body = match &self.report {
            Some(r) => json!({"code": self.code, "message": self.message, "errors": r.errors, "warnings": r.warnings}),
            None => json!({"code": self.code, "message": self.message}),
        };
        (status, Json(body)).into_response()
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    Ok(serde_json::from_slice(body)?)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new("INTERNAL", e.to_string())))
}

fn accepts(headers: &HeaderMap, prefix: &str) -> bool {
    headers
        .get_all(header::ACCEPT)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .any(|v| v.split(',').any(|t| t.trim().starts_with(prefix)))
}

type AppResult = Result<Response, ApiError>;
type Shared = State<Arc<AppState>>;

async fn post_scene(State(app): Shared, body: Bytes) -> AppResult {
    let scene = ops::parse_scene(std::str::from_utf8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?)?;
    let out = ops::validate(&scene, None);
    if !out.ok {
        return Err(ApiError::invalid(out.report));
    }
    let path = app.scene_path(&out.content_hash)?;
    if !path.exists() {
        scene.save(&path)?;
    }
    let body = json!({"scene_id": out.content_hash, "objects": out.objects, "boxes": out.boxes, "warnings": out.report.warnings});
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_scene(State(app): Shared, UrlPath(id): UrlPath<String>) -> AppResult {
    let scene = app.stored_scene(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], scene.to_json()).into_response())
}

async fn post_validate(body: Bytes) -> AppResult {
    let scene: BoundingBoxScene = parse(&body)?;
    Ok(Json(ops::validate(&scene, None)).into_response())
}

#[derive(Debug, Deserialize)]
struct VoxelizeRequest {
    #[serde(default)]
    scene: Option<Value>,
    #[serde(default)]
    scene_id: Option<String>,
    #[serde(flatten)]
    params: VoxelizeParams,
}

async fn post_voxelize(State(app): Shared, headers: HeaderMap, body: Bytes) -> AppResult {
    let req: VoxelizeRequest = parse(&body)?;
    let scene = app.resolve(req.scene, req.scene_id)?;
    let params = req.params;
    let (grid, hash) = blocking({
        let app = app.clone();
        move || {
            let prep = app.prepare(scene)?;
            Ok((app.grid(&prep, &params)?, prep.hash.clone()))
        }
    })
    .await?;
    if accepts(&headers, "application/octet-stream") {
        return Ok(([(header::CONTENT_TYPE, "application/octet-stream")], grid.to_bytes()).into_response());
    }
    let summary = ops::voxel_summary(&grid, params.policy);
    Ok(Json(json!({"scene_id": hash, "summary": summary, "grid_base64": B64.encode(grid.to_bytes())})).into_response())
}

#[derive(Debug, Deserialize)]
pub struct RenderRequest {
    #[serde(default)]
    pub scene: Option<Value>,
    #[serde(default)]
    pub scene_id: Option<String>,
    pub pose: PoseRecord,
    pub intrinsics: Intrinsics,
    #[serde(default)]
    pub cfg: RenderConfig,
    /// Voxel size when `cfg.source` is `voxels`.
    #[serde(default)]
    pub unit: Option<f64>,
    #[serde(default)]
    pub outputs: Option<Vec<Output>>,
    /// Echoed back so clients can drop stale responses.
    #[serde(default)]
    pub revision: Option<u64>,
}

#[derive(Debug, Serialize)]
struct RenderMeta {
    scene_id: String,
    width: u32,
    height: u32,
    hit_pixels: usize,
    near: f64,
    far: f64,
    source: RenderSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    revision: Option<u64>,
}

const BOUNDARY: &str = "bbs-render-part";

fn multipart(meta: &RenderMeta, parts: &[(Output, Vec<u8>)]) -> Response {
    let mut boundary = BOUNDARY.to_string();
    while parts
        .iter()
        .any(|(_, b)| b.windows(boundary.len()).any(|w| w == boundary.as_bytes()))
    {
        boundary.push('x');
    }
    let mut body = Vec::new();
    let mut part = |headers: String, data: &[u8]| {
        body.extend_from_slice(format!("--{boundary}\r\n{headers}\r\n").as_bytes());
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    };
    let meta = serde_json::to_vec(meta).expect("meta serializes");
    part(
        "Content-Type: application/json\r\nContent-Disposition: form-data; name=\"meta\"\r\n".into(),
        &meta,
    );
    for (o, bytes) in parts {
        let name = o.name();
        part(
            format!("Content-Type: image/png\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.png\"\r\n"),
            bytes,
        );
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    let ct = HeaderValue::from_str(&format!("multipart/mixed; boundary={boundary}")).expect("ascii boundary");
    ([(header::CONTENT_TYPE, ct)], body).into_response()
}

async fn post_render(State(app): Shared, headers: HeaderMap, body: Bytes) -> AppResult {
    let req: RenderRequest = parse(&body)?;
    let scene = app.resolve(req.scene, req.scene_id)?;
    let outputs = req.outputs.unwrap_or_else(|| Output::ALL.to_vec());
    let (cfg, revision) = (req.cfg, req.revision);
    let (meta, parts) = blocking({
        let app = app.clone();
        move || {
            let prep = app.prepare(scene)?;
            let grid = match cfg.source {
                RenderSource::Voxels => Some(app.grid(
                    &prep,
                    &VoxelizeParams {
                        unit: req.unit.unwrap_or(DEFAULT_UNIT),
                        ..Default::default()
                    },
                )?),
                RenderSource::Boxes => None,
            };
            let bbi = ops::render_frame(&prep, grid.as_deref(), &req.intrinsics, &req.pose.into(), &cfg)?;
            let parts = ops::encode_outputs(&bbi, &prep.scene, &cfg, &outputs)?;
            let meta = RenderMeta {
                scene_id: prep.hash.clone(),
                width: bbi.width,
                height: bbi.height,
                hit_pixels: bbi.hit_count(),
                near: cfg.near,
                far: cfg.far,
                source: cfg.source,
                revision,
            };
            Ok((meta, parts))
        }
    })
    .await?;
    if accepts(&headers, "multipart/") {
        return Ok(multipart(&meta, &parts));
    }
    let mut body = serde_json::to_value(&meta).expect("meta serializes");
    let images: serde_json::Map<String, Value> = parts
        .iter()
        .map(|(o, b)| (o.name().to_string(), Value::String(B64.encode(b))))
        .collect();
    body["images"] = Value::Object(images);
    Ok(Json(body).into_response())
}

fn spawn_job<F>(app: &Arc<AppState>, kind: JobKind, run: F) -> Response
where
    F: FnOnce(&str) -> Result<(Value, Vec<String>), ApiError> + Send + 'static,
{
    let rec = app.jobs.submit(kind);
    let id = rec.job_id.clone();
    let app = app.clone();
    tokio::task::spawn_blocking(move || {
        app.jobs.start(&id);
        let out = run(&id);
        app.jobs.finish(&id, out);
    });
    (StatusCode::ACCEPTED, Json(rec)).into_response()
}

#[derive(Debug, Deserialize)]
struct ConvertJob {
    input: PathBuf,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    rules: Option<Value>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    unit: Option<f64>,
    #[serde(default)]
    source: RenderSource,
}

async fn post_convert(State(app): Shared, body: Bytes) -> AppResult {
    let req: ConvertJob = parse(&body)?;
    let rules = req.rules.map(serde_json::from_value).transpose()?.unwrap_or_default();
    let input = app.store_path(&req.input);
    let out = req.out.map(|p| app.store_path(&p));
    let store = app.config.store_dir.clone();
    Ok(spawn_job(&app, JobKind::Convert, move |id| {
        let params = ConvertParams {
            input,
            out: out.unwrap_or_else(|| store.join("datasets").join(id)),
            rules,
            seed: req.seed,
            unit: req.unit.unwrap_or(DEFAULT_UNIT),
            source: req.source,
        };
        let summary = ops::convert(&params)?;
        let artifacts = vec![summary.manifest.display().to_string()];
        Ok((serde_json::to_value(summary)?, artifacts))
    }))
}

async fn post_simulate(State(app): Shared, body: Bytes) -> AppResult {
    let mut req: SimulateParams = parse(&body)?;
    req.dataset = app.store_path(&req.dataset);
    let dir = app.jobs.dir().to_path_buf();
    Ok(spawn_job(&app, JobKind::Simulate, move |id| {
        let report = ops::simulate(&req)?;
        let path = dir.join(format!("{id}.report.json"));
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(&path, text).map_err(|e| ApiError::io(path.display(), e))?;
        let summary = json!({
            "dataset_id": report.dataset_id,
            "scene_id": report.scene_id,
            "iters": report.iters,
            "views": report.views,
            "initial_error": report.initial_error(),
            "final_error": report.final_error(),
            "fingerprint": report.fingerprint,
            "report": path,
        });
        Ok((summary, vec![path.display().to_string()]))
    }))
}

async fn get_job(State(app): Shared, UrlPath(id): UrlPath<String>) -> AppResult {
    app.jobs
        .get(&id)
        .map(|r| Json(r).into_response())
        .ok_or_else(|| ApiError::new("JOB_NOT_FOUND", format!("no job {id:?}")))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/v1/scenes", post(post_scene))
        .route("/v1/scenes/{id}", get(get_scene))
        .route("/v1/validate", post(post_validate))
        .route("/v1/voxelize", post(post_voxelize))
        .route("/v1/render", post(post_render))
        .route("/v1/jobs/convert", post(post_convert))
        .route("/v1/jobs/simulate", post(post_simulate))
        .route("/v1/jobs/{id}", get(get_job))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServerConfig) -> Result<(), ApiError> {
    let bind = config.bind.clone();
    let state = Arc::new(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| ApiError::new("BIND_FAILURE", format!("{bind}: {e}")))?;
    eprintln!("listening on {}", listener.local_addr().map_or(bind, |a| a.to_string()));
    axum::serve(listener, router(state))
        .await
        .map_err(|e| ApiError::new("INTERNAL", e.to_string()))
}
