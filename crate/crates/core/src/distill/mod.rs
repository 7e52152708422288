//! Simulation of the dataset-replacement distillation loop.
//!
//! The generator and the scene representation are traits; [`mock`] holds the
//! reference implementations used by tests and the `simulate` command.

pub mod loss;
pub mod mock;
pub mod schedule;
pub mod scheduler;
pub mod state;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Pose;
use crate::render::BoundingBoxImage;

pub use loss::{
    composite_loss, depth_constraint_loss, FeatureExtractor, LossBreakdown, LossWeights, NormMode, PatchStats,
};
pub use schedule::{annealing_strength, AnnealingSchedule, Shape};
pub use scheduler::{run_two_worker, verify_event_log, Event, EventKind, TwoWorkerOptions};
pub use state::{DistillConfig, DistillationState, InitSource, MigrationEvent, MigrationKind, StepRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("migration requested at iter {iter} before early stage ends at {early}")]
    MigrationBeforeEarlyStage { iter: usize, early: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("train_step on frozen S_c at iter {0}")]
    FrozenTrain(usize),
    #[error("iter {iter}: {message}")]
    Step { iter: usize, message: String },
    #[error("{0} starved for longer than the configured bound")]
    DeadlockTimeout(&'static str),
    #[error("worker failed: {0}")]
    Worker(String),
}

impl DistillError {
    pub fn code(&self) -> &'static str {
        match self {
            DistillError::ShapeMismatch(_) => "SHAPE_MISMATCH",
            DistillError::MigrationBeforeEarlyStage { .. } => "MIGRATION_BEFORE_EARLY_STAGE",
            DistillError::InvalidConfig(_) => "INVALID_CONFIG",
            DistillError::FrozenTrain(_) => "FROZEN_TRAIN",
            DistillError::Step { .. } => "STEP_FAILED",
            DistillError::DeadlockTimeout(_) => "DEADLOCK_TIMEOUT",
            DistillError::Worker(_) => "WORKER_FAILED",
        }
    }
}

/// RGB image, interleaved, values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; width as usize * height as usize * 3],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn same_shape(&self, o: &Image) -> bool {
        self.width == o.width && self.height == o.height && self.data.len() == o.data.len()
    }

    pub fn mse(&self, o: &Image) -> Result<f64, DistillError> {
        if !self.same_shape(o) {
            return Err(DistillError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, o.width, o.height
            )));
        }
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let s: f64 = self.data.iter().zip(&o.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn bitwise_eq(&self, o: &Image) -> bool {
        self.same_shape(o) && self.data.iter().zip(&o.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Quantized 8-bit RGB bytes, for PNG export.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// One entry of the multi-view supervision set.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEntry {
    pub frame_id: String,
    pub pose: Pose,
    pub bbi: BoundingBoxImage,
    pub supervision: Image,
    /// 0 = never replaced.
    pub generation_epoch: u64,
    pub last_strength: f64,
}

impl ViewEntry {
    /// Layout depth with no-hit pixels as `+inf`.
    pub fn layout_depth(&self) -> &[f64] {
        &self.bbi.depth
    }
}

/// Identifies a generation call; mock noise is keyed on it so results do not
/// depend on call order across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationKey {
    pub view: usize,
    pub epoch: u64,
}

pub trait Generator: Send + Sync {
    /// `strength` 0 must return `init` unchanged.
    fn generate(
        &self,
        bbi: &BoundingBoxImage,
        prompt: &str,
        init: &Image,
        strength: f64,
        key: GenerationKey,
    ) -> Result<Image, DistillError>;

    /// Ground-truth image for a view, when the generator has one (mocks only).
    fn target(&self, _bbi: &BoundingBoxImage) -> Option<Image> {
        None
    }
}

/// Loss configuration handed to a representation's training step.
pub struct TrainContext<'a> {
    pub weights: LossWeights,
    /// `Some(delta)` while the depth term is active.
    pub depth_delta: Option<f64>,
    pub norm_mode: NormMode,
    pub perceptual: &'a dyn FeatureExtractor,
}

pub trait SceneRepresentation: Clone + Send {
    /// Image and depth (`+inf` where empty) for the view at `index`.
    fn render(&self, index: usize, pose: &Pose) -> (Image, Vec<f64>);

    /// One optimization step on `batch` (view index, entry); returns the mean
    /// loss over the batch measured before the update.
    fn train_step(&mut self, batch: &[(usize, &ViewEntry)], ctx: &TrainContext) -> Result<LossBreakdown, DistillError>;

    /// Same architecture, no learned content.
    fn fresh(&self) -> Self;

    /// Content digest used to compare runs.
    fn fingerprint(&self) -> String;
}
