//! Timing harness for the box renderer: BVH against linear scan, one thread
//! against the full pool.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::CameraTrajectory;
use crate::par;
use crate::render::{render_bbi, render_bbi_linear, BoundingBoxImage, BvhAccel, RenderConfig, RenderError};
use crate::scene::BoundingBoxScene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accel {
    Bvh,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub repetitions: usize,
    pub include_linear: bool,
    /// Thread counts to run; `None` means the full pool.
    pub threads: Vec<Option<usize>>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repetitions: 3,
            include_linear: true,
            threads: vec![Some(1), None],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub accel: Accel,
    pub threads: usize,
    /// Wall time of every frame render, in milliseconds, in run order.
    pub samples_ms: Vec<f64>,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub total_s: f64,
    pub rays_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub boxes: usize,
    pub repetitions: usize,
    pub available_threads: usize,
    pub parallel_feature: bool,
    pub variants: Vec<VariantReport>,
    /// Every variant produced bitwise-identical images for every frame.
    pub outputs_identical: bool,
}

impl BenchReport {
    pub fn variant(&self, accel: Accel, threads: usize) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.accel == accel && v.threads == threads)
    }
}

/// Nearest-rank percentile of unsorted samples; 0 for an empty slice.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

fn run_variant(
    scene: &BoundingBoxScene,
    accel: &BvhAccel,
    traj: &CameraTrajectory,
    cfg: &RenderConfig,
    kind: Accel,
    reps: usize,
) -> Result<(Vec<f64>, f64, Vec<BoundingBoxImage>), RenderError> {
    let mut samples = Vec::with_capacity(reps * traj.len());
    let mut last = Vec::new();
    let start = Instant::now();
    for _ in 0..reps {
        last.clear();
        for pose in &traj.poses {
            let t = Instant::now();
            let img = match kind {
                Accel::Bvh => render_bbi(scene, accel, &traj.intrinsics, pose, cfg)?,
                Accel::Linear => render_bbi_linear(accel, &traj.intrinsics, pose, cfg)?,
            };
            samples.push(t.elapsed().as_secs_f64() * 1e3);
            last.push(img);
        }
    }
    Ok((samples, start.elapsed().as_secs_f64(), last))
}

pub fn run_bench(
    scene: &BoundingBoxScene,
    traj: &CameraTrajectory,
    cfg: &RenderConfig,
    opts: &BenchOptions,
) -> Result<BenchReport, RenderError> {
    let accel = BvhAccel::build_allow_empty(scene);
    let reps = opts.repetitions.max(1);
    let rays = traj.intrinsics.pixel_count() * traj.len() * reps;
    let mut kinds = vec![Accel::Bvh];
    if opts.include_linear {
        kinds.push(Accel::Linear);
    }
    let mut variants = Vec::new();
    let mut reference: Option<Vec<BoundingBoxImage>> = None;
    let mut identical = true;
    for &kind in &kinds {
        for &threads in &opts.threads {
            let (samples, total, images, used) = par::with_threads(threads, || {
                run_variant(scene, &accel, traj, cfg, kind, reps).map(|(s, t, i)| (s, t, i, par::current_threads()))
            })?;
            match &reference {
                None => reference = Some(images),
                Some(r) => identical &= r.len() == images.len() && r.iter().zip(&images).all(|(a, b)| a.bitwise_eq(b)),
            }
            variants.push(VariantReport {
                accel: kind,
                threads: used,
                p50_ms: percentile(&samples, 50.0),
                p95_ms: percentile(&samples, 95.0),
                samples_ms: samples,
                total_s: total,
                rays_per_sec: if total > 0.0 { rays as f64 / total } else { 0.0 },
            });
        }
    }
    Ok(BenchReport {
        width: traj.intrinsics.width,
        height: traj.intrinsics.height,
        frames: traj.len(),
        boxes: scene.box_count(),
        repetitions: reps,
        available_threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        parallel_feature: cfg!(feature = "parallel"),
        variants,
        outputs_identical: identical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::fixtures::{furnished_room, room_orbit};

    #[test]
    fn percentiles_by_rank() {
        let s = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(percentile(&s, 50.0), 3.0);
        assert_eq!(percentile(&s, 95.0), 5.0);
        assert_eq!(percentile(&[7.0], 95.0), 7.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn one_frame_one_rep() {
        let scene = furnished_room(3, 40);
        let traj = room_orbit(8.0, 7.0, 3.0, 1, Intrinsics::from_vfov(48, 32, 60.0));
        let opts = BenchOptions {
            repetitions: 1,
            ..Default::default()
        };
        let r = run_bench(&scene, &traj, &RenderConfig::default(), &opts).unwrap();
        assert_eq!(r.variants.len(), 4);
        assert!(r.outputs_identical);
        for v in &r.variants {
            assert_eq!(v.samples_ms.len(), 1);
            let expect = (48 * 32) as f64 / v.total_s;
            assert!((v.rays_per_sec - expect).abs() <= 1e-9 * expect);
        }
        assert_eq!(r.variant(Accel::Bvh, 1).unwrap().accel, Accel::Bvh);
    }
}
