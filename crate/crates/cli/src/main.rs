use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bbs_cli::ops::{self, ConvertParams, Mode, SimulateParams, VoxelizeParams};
use bbs_cli::server::{self, ServerConfig};
use bbs_cli::ApiError;
use bbs_core::bench::BenchOptions;
use bbs_core::dataset::RulesFile;
use bbs_core::distill::DistillConfig;
use bbs_core::render::{RenderConfig, RenderSource};
use bbs_core::voxel::{OverlapPolicy, DEFAULT_MAX_CELLS};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "bbs", version, about = "Bounding-box scene toolkit")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RenderArgs {
    /// Near clip distance in meters.
    #[arg(long, default_value_t = RenderConfig::default().near)]
    near: f64,
    /// Far clip distance in meters.
    #[arg(long, default_value_t = RenderConfig::default().far)]
    far: f64,
    /// Render from the boxes or from their voxelization.
    #[arg(long, default_value = "boxes")]
    source: RenderSource,
    /// Voxel size in meters for the voxel source.
    #[arg(long, default_value_t = 0.2)]
    unit: f64,
}

impl RenderArgs {
    fn config(&self) -> RenderConfig {
        RenderConfig {
            near: self.near,
            far: self.far,
            source: self.source,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a scene (and optionally a trajectory) against every invariant.
    Validate {
        scene: PathBuf,
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Voxelize a scene into the binary grid format.
    Voxelize {
        scene: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        unit: f64,
        #[arg(long, default_value = "overlap")]
        policy: OverlapPolicy,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "BBS_MAX_GRID_CELLS", default_value_t = DEFAULT_MAX_CELLS)]
        max_cells: usize,
    },
    /// Render bounding-box images for every frame of a trajectory.
    Render {
        scene: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a shaded RGB preview per frame.
        #[arg(long)]
        preview: bool,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// Build a training dataset from a directory of source scene records.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Filter rules and label aliases as JSON.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        unit: f64,
        #[arg(long, default_value = "boxes")]
        source: RenderSource,
    },
    /// Run the distillation loop on one dataset scene with mock models.
    Simulate {
        /// Dataset manifest written by `convert`.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        scene: Option<String>,
        #[arg(long, default_value_t = 400)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Distillation config as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::TwoWorker)]
        mode: Mode,
        /// Where to write the full report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time renders with and without the hierarchy, one thread and all.
    Bench {
        scene: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        /// Skip the linear-scan variants.
        #[arg(long)]
        no_linear: bool,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, env = "BBS_BIND_ADDR", default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, env = "BBS_STORE_DIR", default_value = "bbs-store")]
        store: PathBuf,
        #[arg(long, env = "BBS_MAX_GRID_CELLS", default_value_t = DEFAULT_MAX_CELLS)]
        max_grid_cells: usize,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ApiError> {
    let text = std::fs::read_to_string(path).map_err(|e| ApiError::io(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| ApiError::new("MALFORMED_JSON", format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ApiError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| ApiError::io(path.display(), e))
}

/// Result of a command: JSON payload, human summary, and success flag.
struct Done {
    value: serde_json::Value,
    text: String,
    ok: bool,
}

fn done<T: Serialize>(value: &T, text: String) -> Result<Done, ApiError> {
    Ok(Done {
        value: serde_json::to_value(value)?,
        text,
        ok: true,
    })
}

fn run(cmd: Cmd) -> Result<Done, ApiError> {
    match cmd {
        Cmd::Validate { scene, trajectory } => {
            let s = ops::load_scene(&scene)?;
            let traj = trajectory.as_deref().map(ops::load_trajectory).transpose()?;
            let out = ops::validate(&s, traj.as_ref());
            let mut text = format!(
                "{}: {} objects, {} boxes, {} error(s), {} warning(s)",
                scene.display(),
                out.objects,
                out.boxes,
                out.report.errors.len(),
                out.report.warnings.len()
            );
            for i in out.report.errors.iter().chain(&out.report.warnings) {
                text.push_str(&format!("\n  {} {}: {}", i.code, i.object_id, i.message));
            }
            let mut d = done(&out, text)?;
            d.ok = out.ok;
            Ok(d)
        }
        Cmd::Voxelize {
            scene,
            unit,
            policy,
            out,
            max_cells,
        } => {
            let s = ops::load_scene(&scene)?;
            let p = VoxelizeParams {
                unit,
                policy,
                bounds: None,
            };
            let grid = ops::voxelize(&s, &p, max_cells)?;
            let file = std::fs::File::create(&out).map_err(|e| ApiError::io(out.display(), e))?;
            grid.write_to(std::io::BufWriter::new(file))?;
            let summary = ops::voxel_summary(&grid, policy);
            let text = format!(
                "{} cells ({}x{}x{}), {} occupied -> {}",
                summary.cells,
                summary.dims[0],
                summary.dims[1],
                summary.dims[2],
                summary.occupied,
                out.display()
            );
            done(&summary, text)
        }
        Cmd::Render {
            scene,
            trajectory,
            out,
            preview,
            render,
        } => {
            let s = ops::load_scene(&scene)?;
            let traj = ops::load_trajectory(&trajectory)?;
            let summary = ops::render_to_dir(s, &traj, &render.config(), render.unit, &out, preview)?;
            let text = format!(
                "{} frame(s) at {}x{} -> {}",
                summary.frames.len(),
                summary.width,
                summary.height,
                out.display()
            );
            done(&summary, text)
        }
        Cmd::Convert {
            input,
            out,
            rules,
            seed,
            unit,
            source,
        } => {
            let rules: RulesFile = rules.as_deref().map(read_json).transpose()?.unwrap_or_default();
            let summary = ops::convert(&ConvertParams {
                input,
                out,
                rules,
                seed,
                unit,
                source,
            })?;
            let mut text = format!(
                "dataset {}: {} scene(s), {} entries, {} rejected, {} failed -> {}",
                summary.dataset_id,
                summary.scenes,
                summary.entries,
                summary.rejected.len(),
                summary.failed.len(),
                summary.manifest.display()
            );
            for r in &summary.rejected {
                text.push_str(&format!("\n  rejected {}: {}", r.scene_id, r.reasons.join(", ")));
            }
            for f in &summary.failed {
                text.push_str(&format!("\n  failed {}: {} {}", f.scene_id, f.code, f.message));
            }
            done(&summary, text)
        }
        Cmd::Simulate {
            dataset,
            scene,
            iters,
            seed,
            config,
            mode,
            report,
        } => {
            let config: Option<DistillConfig> = config.as_deref().map(read_json).transpose()?;
            let r = ops::simulate(&SimulateParams {
                dataset,
                scene,
                iters,
                seed,
                config,
                mode,
            })?;
            if let Some(p) = &report {
                write_json(p, &r)?;
            }
            let mut text = format!(
                "{} / {}: {} iterations over {} views, error {:.5} -> {:.5}",
                r.dataset_id,
                r.scene_id,
                r.iters,
                r.views,
                r.initial_error(),
                r.final_error()
            );
            if let Some(p) = &report {
                text.push_str(&format!("\nreport -> {}", p.display()));
            }
            if report.is_some() {
                let brief = serde_json::json!({
                    "dataset_id": r.dataset_id,
                    "scene_id": r.scene_id,
                    "iters": r.iters,
                    "initial_error": r.initial_error(),
                    "final_error": r.final_error(),
                    "fingerprint": r.fingerprint,
                    "report": report,
                });
                done(&brief, text)
            } else {
                done(&r, text)
            }
        }
        Cmd::Bench {
            scene,
            trajectory,
            repetitions,
            no_linear,
            report,
            render,
        } => {
            let s = ops::load_scene(&scene)?;
            let traj = ops::load_trajectory(&trajectory)?;
            let opts = BenchOptions {
                repetitions,
                include_linear: !no_linear,
                ..Default::default()
            };
            let r = ops::bench(&s, &traj, &render.config(), &opts)?;
            if let Some(p) = &report {
                write_json(p, &r)?;
            }
            let mut text = format!(
                "{}x{}, {} frame(s), {} boxes, {} thread(s) available",
                r.width, r.height, r.frames, r.boxes, r.available_threads
            );
            for v in &r.variants {
                text.push_str(&format!(
                    "\n  {:?} threads={}: p50 {:.1} ms, p95 {:.1} ms, {:.0} rays/s",
                    v.accel, v.threads, v.p50_ms, v.p95_ms, v.rays_per_sec
                ));
            }
            text.push_str(&format!("\n  outputs identical: {}", r.outputs_identical));
            let mut d = done(&r, text)?;
            d.ok = r.outputs_identical;
            Ok(d)
        }
        Cmd::Serve {
            bind,
            store,
            max_grid_cells,
        } => {
            let cfg = ServerConfig {
                store_dir: store,
                bind,
                max_grid_cells,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| ApiError::new("INTERNAL", e.to_string()))?;
            rt.block_on(server::serve(cfg))?;
            done(&serde_json::json!({"status": "stopped"}), "stopped".into())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(d) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&d.value).expect("output serializes"));
            } else {
                println!("{}", d.text);
            }
            if d.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            if cli.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&serde_json::json!({"error": e})).expect("error serializes")
                );
            } else {
                eprintln!("error[{}]: {}", e.code, e.message);
            }
            ExitCode::FAILURE
        }
    }
}
