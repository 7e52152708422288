//! Distillation state, the single-threaded step, and the coarse/fine
//! migration hooks.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::{LossBreakdown, LossWeights, NormMode, PatchStats};
use super::schedule::{annealing_strength, AnnealingSchedule, Shape};
use super::{DistillError, GenerationKey, Generator, Image, SceneRepresentation, TrainContext, ViewEntry};

pub const DEFAULT_BASE_PROMPT: &str = "This is one view of a room.";

/// Which representation renders the init image once S_f exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    /// The representation currently being trained (S_f after migration starts).
    #[default]
    Active,
    /// The frozen coarse representation S_c.
    FrozenCoarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthConstraintConfig {
    pub delta: f64,
    pub active: bool,
    /// Defaults to 30% of the run.
    pub disable_after_iter: Option<usize>,
    pub norm_mode: NormMode,
}

impl Default for DepthConstraintConfig {
    fn default() -> Self {
        DepthConstraintConfig {
            delta: 0.25,
            active: true,
            disable_after_iter: None,
            norm_mode: NormMode::PerPixel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub total_iters: usize,
    /// E; defaults to 20% of `total_iters`.
    pub early_stage_iters: Option<usize>,
    /// M
    pub migration_interval: usize,
    /// m
    pub sync_interval: usize,
    pub weights: LossWeights,
    pub depth: DepthConstraintConfig,
    pub s_start: f64,
    pub s_end: f64,
    pub shape: Shape,
    pub seed: u64,
    pub init_source: InitSource,
    pub prompt: String,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            total_iters: 1000,
            early_stage_iters: None,
            migration_interval: 2000,
            sync_interval: 250,
            weights: LossWeights::default(),
            depth: DepthConstraintConfig::default(),
            s_start: 0.98,
            s_end: 0.35,
            shape: Shape::Linear,
            seed: 0,
            init_source: InitSource::Active,
            prompt: DEFAULT_BASE_PROMPT.to_string(),
        }
    }
}

impl DistillConfig {
    pub fn with_total(total_iters: usize) -> Self {
        DistillConfig {
            total_iters,
            ..Default::default()
        }
    }

    pub fn early_stage(&self) -> usize {
        self.early_stage_iters
            .unwrap_or_else(|| ((self.total_iters as f64 * 0.2).round() as usize).max(1))
    }

    pub fn depth_disable_after(&self) -> usize {
        self.depth
            .disable_after_iter
            .unwrap_or_else(|| (self.total_iters as f64 * 0.3).round() as usize)
    }

    pub fn schedule(&self) -> AnnealingSchedule {
        AnnealingSchedule {
            s_start: self.s_start,
            s_end: self.s_end,
            total_iters: self.total_iters,
            shape: self.shape,
        }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        self.schedule().validate()?;
        if self.early_stage() == 0 {
            return Err(DistillError::InvalidConfig("early_stage_iters must be >= 1".into()));
        }
        if self.sync_interval == 0 || self.sync_interval >= self.migration_interval {
            return Err(DistillError::InvalidConfig(format!(
                "need 0 < sync_interval ({}) < migration_interval ({})",
                self.sync_interval, self.migration_interval
            )));
        }
        if self.depth.delta.is_nan() || self.depth.delta < 0.0 {
            return Err(DistillError::InvalidConfig("depth delta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iter: usize,
    pub view: usize,
    pub frame_id: String,
    pub strength: f64,
    pub epoch: u64,
    pub trained: Role,
    pub depth_active: bool,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationKind {
    /// S_f created from scratch, S_c frozen, S_f synced.
    Create,
    /// S_f trained on the whole current dataset.
    Sync,
    /// S_c replaced by a frozen snapshot of S_f; new S_f synced.
    Swap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationEvent {
    pub iter: usize,
    pub kind: MigrationKind,
    /// Mean error of the (new) S_c against the oracle targets, when known.
    pub lineage_error: Option<f64>,
}

pub struct DistillationState<R> {
    pub iter: usize,
    pub dataset: Vec<ViewEntry>,
    pub s_c: R,
    pub s_f: Option<R>,
    pub c_frozen: bool,
    pub config: DistillConfig,
    /// Oracle images per view (mock runs only).
    pub targets: Option<Vec<Image>>,
    pub history: Vec<StepRecord>,
    pub migrations: Vec<MigrationEvent>,
    perceptual: PatchStats,
}

impl<R: Clone> Clone for DistillationState<R> {
    fn clone(&self) -> Self {
        DistillationState {
            iter: self.iter,
            dataset: self.dataset.clone(),
            s_c: self.s_c.clone(),
            s_f: self.s_f.clone(),
            c_frozen: self.c_frozen,
            config: self.config.clone(),
            targets: self.targets.clone(),
            history: self.history.clone(),
            migrations: self.migrations.clone(),
            perceptual: self.perceptual.clone(),
        }
    }
}

/// What a training step touched, for the scheduler's event log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub trained: Role,
    pub trained_frozen: bool,
    pub migrations: Vec<MigrationEvent>,
}

impl<R: SceneRepresentation> DistillationState<R> {
    pub fn new(dataset: Vec<ViewEntry>, representation: R, config: DistillConfig) -> Result<Self, DistillError> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(DistillError::InvalidConfig("dataset has no views".into()));
        }
        Ok(DistillationState {
            iter: 0,
            dataset,
            s_c: representation,
            s_f: None,
            c_frozen: false,
            config,
            targets: None,
            history: Vec::new(),
            migrations: Vec::new(),
            perceptual: PatchStats::default(),
        })
    }

    /// Records the generator's oracle targets so errors can be measured.
    pub fn with_targets_from(mut self, gen: &dyn Generator) -> Self {
        let t: Option<Vec<Image>> = self.dataset.iter().map(|v| gen.target(&v.bbi)).collect();
        self.targets = t;
        self
    }

    /// Least recently replaced view, then frame order.
    pub fn select_view(&self) -> usize {
        (0..self.dataset.len())
            .min_by_key(|&i| (self.dataset[i].generation_epoch, i))
            .expect("dataset is nonempty")
    }

    pub fn strength(&self) -> f64 {
        annealing_strength(self.iter, &self.config.schedule())
    }

    pub fn depth_active(&self) -> bool {
        self.config.depth.active && self.iter < self.config.depth_disable_after()
    }

    fn render_source(&self) -> &R {
        match (self.config.init_source, &self.s_f) {
            (InitSource::Active, Some(f)) => f,
            _ => &self.s_c,
        }
    }

    /// The representation whose error is tracked (the one being trained).
    pub fn active(&self) -> &R {
        self.s_f.as_ref().unwrap_or(&self.s_c)
    }

    pub fn render_init(&self, view: usize) -> Image {
        self.render_source().render(view, &self.dataset[view].pose).0
    }

    /// True when the init image for the next step is rendered by the frozen
    /// S_c and the coming step cannot change it.
    pub fn next_render_is_stable(&self) -> bool {
        if self.s_f.is_none() || self.config.init_source != InitSource::FrozenCoarse {
            return false;
        }
        let next = self.iter + 1;
        let e = self.config.early_stage();
        !(next > e && (next - e).is_multiple_of(self.config.migration_interval))
    }

    pub fn apply_update(&mut self, view: usize, image: Image, strength: f64) {
        let v = &mut self.dataset[view];
        v.supervision = image;
        v.generation_epoch += 1;
        v.last_strength = strength;
    }

    fn loss_settings(&self) -> (LossWeights, Option<f64>, NormMode) {
        let depth_active = self.depth_active();
        let weights = LossWeights {
            w_depth: if depth_active { self.config.weights.w_depth } else { 0.0 },
            ..self.config.weights
        };
        (
            weights,
            depth_active.then_some(self.config.depth.delta),
            self.config.depth.norm_mode,
        )
    }

    /// Trains on the updated view, advances the iteration and runs any
    /// migration hook that falls on the new iteration.
    pub fn train_and_advance(&mut self, view: usize) -> Result<StepOutcome, DistillError> {
        let iter = self.iter;
        let trained = if self.s_f.is_some() { Role::Fine } else { Role::Coarse };
        let trained_frozen = trained == Role::Coarse && self.c_frozen;
        if trained_frozen {
            return Err(DistillError::FrozenTrain(iter));
        }
        let (weights, depth_delta, norm_mode) = self.loss_settings();
        let ctx = TrainContext {
            weights,
            depth_delta,
            norm_mode,
            perceptual: &self.perceptual,
        };
        let batch = [(view, &self.dataset[view])];
        let target = match trained {
            Role::Fine => self.s_f.as_mut().expect("fine exists"),
            Role::Coarse => &mut self.s_c,
        };
        let loss = target.train_step(&batch, &ctx).map_err(|e| DistillError::Step {
            iter,
            message: e.to_string(),
        })?;
        let v = &self.dataset[view];
        self.history.push(StepRecord {
            iter,
            view,
            frame_id: v.frame_id.clone(),
            strength: v.last_strength,
            epoch: v.generation_epoch,
            trained,
            depth_active: depth_delta.is_some(),
            loss,
        });
        self.iter += 1;
        let migrations = if self.iter >= self.config.early_stage() {
            self.run_hooks()?
        } else {
            Vec::new()
        };
        Ok(StepOutcome {
            trained,
            trained_frozen,
            migrations,
        })
    }

    /// One full iteration: select, render, generate, replace, train, advance.
    pub fn step(&mut self, gen: &dyn Generator) -> Result<StepOutcome, DistillError> {
        let view = self.select_view();
        let init = self.render_init(view);
        let s = self.strength();
        let key = GenerationKey {
            view,
            epoch: self.dataset[view].generation_epoch + 1,
        };
        let img = gen
            .generate(&self.dataset[view].bbi, &self.config.prompt, &init, s, key)
            .map_err(|e| DistillError::Step {
                iter: self.iter,
                message: e.to_string(),
            })?;
        self.apply_update(view, img, s);
        self.train_and_advance(view)
    }

    pub fn run(&mut self, gen: &dyn Generator, iters: usize) -> Result<(), DistillError> {
        for _ in 0..iters {
            self.step(gen)?;
        }
        Ok(())
    }

    /// Applies the migration hook for the current iteration.
    pub fn migrate(&mut self) -> Result<Vec<MigrationEvent>, DistillError> {
        let early = self.config.early_stage();
        if self.iter < early {
            return Err(DistillError::MigrationBeforeEarlyStage { iter: self.iter, early });
        }
        self.run_hooks()
    }

    fn run_hooks(&mut self) -> Result<Vec<MigrationEvent>, DistillError> {
        let e = self.config.early_stage();
        let iter = self.iter;
        let mut out = Vec::new();
        if iter == e && self.s_f.is_none() {
            self.s_f = Some(self.s_c.fresh());
            self.c_frozen = true;
            self.sync()?;
            out.push(MigrationEvent {
                iter,
                kind: MigrationKind::Create,
                lineage_error: self.lineage_error(&self.s_c),
            });
        } else if iter > e {
            let k = iter - e;
            if k.is_multiple_of(self.config.migration_interval) {
                let fine = self.s_f.take().expect("fine exists after early stage");
                self.s_f = Some(fine.fresh());
                self.s_c = fine;
                self.c_frozen = true;
                self.sync()?;
                out.push(MigrationEvent {
                    iter,
                    kind: MigrationKind::Swap,
                    lineage_error: self.lineage_error(&self.s_c),
                });
            } else if k.is_multiple_of(self.config.sync_interval) {
                self.sync()?;
                out.push(MigrationEvent {
                    iter,
                    kind: MigrationKind::Sync,
                    lineage_error: None,
                });
            }
        }
        self.migrations.extend(out.iter().cloned());
        Ok(out)
    }

    /// Trains S_f on every view of the current dataset.
    fn sync(&mut self) -> Result<(), DistillError> {
        let iter = self.iter;
        let (weights, depth_delta, norm_mode) = self.loss_settings();
        let ctx = TrainContext {
            weights,
            depth_delta,
            norm_mode,
            perceptual: &self.perceptual,
        };
        let batch: Vec<(usize, &ViewEntry)> = self.dataset.iter().enumerate().collect();
        self.s_f
            .as_mut()
            .expect("sync needs S_f")
            .train_step(&batch, &ctx)
            .map_err(|e| DistillError::Step {
                iter,
                message: e.to_string(),
            })?;
        Ok(())
    }

    fn lineage_error(&self, r: &R) -> Option<f64> {
        self.representation_error(r)
    }

    /// Mean over views of the image MSE between `r`'s rendering and the target.
    pub fn representation_error(&self, r: &R) -> Option<f64> {
        let targets = self.targets.as_ref()?;
        let mut sum = 0.0;
        for (i, (v, t)) in self.dataset.iter().zip(targets).enumerate() {
            sum += r.render(i, &v.pose).0.mse(t).ok()?;
        }
        Some(sum / self.dataset.len() as f64)
    }

    /// Error of the representation currently being trained.
    pub fn mean_error(&self) -> Option<f64> {
        self.representation_error(self.active())
    }

    /// Mean MSE of the supervision images against the targets.
    pub fn dataset_error(&self) -> Option<f64> {
        let targets = self.targets.as_ref()?;
        let mut sum = 0.0;
        for (v, t) in self.dataset.iter().zip(targets) {
            sum += v.supervision.mse(t).ok()?;
        }
        Some(sum / self.dataset.len() as f64)
    }

    /// Digest over iteration, dataset and both representations.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.iter as u64).to_le_bytes());
        for v in &self.dataset {
            h.update(v.generation_epoch.to_le_bytes());
            h.update(v.last_strength.to_bits().to_le_bytes());
            for x in &v.supervision.data {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.update(self.s_c.fingerprint());
        h.update([self.c_frozen as u8]);
        if let Some(f) = &self.s_f {
            h.update(f.fingerprint());
        }
        hex::encode(h.finalize())
    }
}
