//! Reference generator and scene representation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::loss::{composite_loss, depth_constraint_loss, LossBreakdown};
use super::{DistillError, GenerationKey, Generator, Image, SceneRepresentation, TrainContext, ViewEntry};
use crate::camera::Pose;
use crate::render::BoundingBoxImage;

/// Gray value a representation renders for views it has never seen.
pub const UNTRAINED_GRAY: f64 = 0.5;

/// Colorizes the bounding-box image (palette color darkened with depth) as
/// its fixed target, then blends toward it from the init image:
/// `init + s * (target - init) + s * noise`.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    pub palette: Vec<[u8; 3]>,
    pub near: f64,
    pub far: f64,
    pub seed: u64,
    pub noise_amplitude: f64,
}

impl MockGenerator {
    pub fn new(palette: Vec<[u8; 3]>, seed: u64) -> Self {
        MockGenerator {
            palette,
            near: 0.01,
            far: 40.0,
            seed,
            noise_amplitude: 0.05,
        }
    }

    pub fn target_image(&self, bbi: &BoundingBoxImage) -> Image {
        let span = self.far - self.near;
        let mut data = Vec::with_capacity(bbi.len() * 3);
        for (&s, &d) in bbi.semantic.iter().zip(&bbi.depth) {
            let norm = if s == 0 {
                1.0
            } else {
                ((d - self.near) / span).clamp(0.0, 1.0)
            };
            let shade = 1.0 - 0.6 * norm;
            let c = self.palette.get(s as usize).copied().unwrap_or([0, 0, 0]);
            for ch in c {
                data.push(ch as f64 / 255.0 * shade);
            }
        }
        Image {
            width: bbi.width,
            height: bbi.height,
            data,
        }
    }

    fn noise_rng(&self, key: GenerationKey) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((key.view as u64) << 32) ^ key.epoch);
        rng
    }
}

impl Generator for MockGenerator {
    fn generate(
        &self,
        bbi: &BoundingBoxImage,
        _prompt: &str,
        init: &Image,
        strength: f64,
        key: GenerationKey,
    ) -> Result<Image, DistillError> {
        if init.width != bbi.width || init.height != bbi.height {
            return Err(DistillError::ShapeMismatch(format!(
                "init {}x{} vs layout {}x{}",
                init.width, init.height, bbi.width, bbi.height
            )));
        }
        if strength == 0.0 {
            return Ok(init.clone());
        }
        let target = self.target_image(bbi);
        let mut rng = self.noise_rng(key);
        let a = self.noise_amplitude;
        let data = init
            .data
            .iter()
            .zip(&target.data)
            .map(|(&i, &t)| {
                let n = if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
                i + strength * (t - i) + strength * n
            })
            .collect();
        Ok(Image {
            width: init.width,
            height: init.height,
            data,
        })
    }

    fn target(&self, bbi: &BoundingBoxImage) -> Option<Image> {
        Some(self.target_image(bbi))
    }
}

/// Per-view moving-average image store. Depth starts at the layout depth
/// plus a seeded perturbation and is trained by the depth term only.
#[derive(Debug, Clone)]
pub struct MockRepresentation {
    width: u32,
    height: u32,
    pub ema_rate: f64,
    pub lr_depth: f64,
    seed: u64,
    layout: Arc<Vec<Vec<f64>>>,
    images: Vec<Option<Image>>,
    depths: Vec<Vec<f64>>,
}

impl MockRepresentation {
    pub fn new(views: &[ViewEntry], seed: u64) -> Self {
        let (width, height) = views.first().map(|v| (v.bbi.width, v.bbi.height)).unwrap_or((0, 0));
        let layout: Vec<Vec<f64>> = views.iter().map(|v| v.layout_depth().to_vec()).collect();
        let mut r = MockRepresentation {
            width,
            height,
            ema_rate: 1.0,
            lr_depth: 0.5,
            seed,
            layout: Arc::new(layout),
            images: Vec::new(),
            depths: Vec::new(),
        };
        r.reset();
        r
    }

    fn reset(&mut self) {
        let mut depths = Vec::with_capacity(self.layout.len());
        for (i, l) in self.layout.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(i as u64);
            depths.push(
                l.iter()
                    .map(|&d| {
                        if d.is_finite() {
                            d + rng.random_range(-0.5..0.5)
                        } else {
                            d
                        }
                    })
                    .collect(),
            );
        }
        self.images = vec![None; self.layout.len()];
        self.depths = depths;
    }

    pub fn is_trained(&self, index: usize) -> bool {
        self.images.get(index).is_some_and(|i| i.is_some())
    }
}

impl SceneRepresentation for MockRepresentation {
    fn render(&self, index: usize, _pose: &Pose) -> (Image, Vec<f64>) {
        let img = match self.images.get(index) {
            Some(Some(img)) => img.clone(),
            _ => Image::filled(self.width, self.height, UNTRAINED_GRAY),
        };
        let depth = self.depths.get(index).cloned().unwrap_or_default();
        (img, depth)
    }

    fn train_step(&mut self, batch: &[(usize, &ViewEntry)], ctx: &TrainContext) -> Result<LossBreakdown, DistillError> {
        let mut losses = Vec::with_capacity(batch.len());
        for &(i, entry) in batch {
            if i >= self.images.len() {
                return Err(DistillError::ShapeMismatch(format!("view {i} not in representation")));
            }
            let (img, depth) = self.render(i, &entry.pose);
            let layout = &self.layout[i];
            losses.push(composite_loss(
                &img,
                &entry.supervision,
                &depth,
                layout,
                &ctx.weights,
                ctx.depth_delta,
                ctx.norm_mode,
                ctx.perceptual,
            )?);
            match &mut self.images[i] {
                slot @ None => *slot = Some(entry.supervision.clone()),
                Some(cur) => {
                    for (c, s) in cur.data.iter_mut().zip(&entry.supervision.data) {
                        *c += self.ema_rate * (s - *c);
                    }
                }
            }
            if let Some(delta) = ctx.depth_delta {
                let (_, grad) = depth_constraint_loss(&depth, layout, delta, ctx.norm_mode)?;
                let n = depth
                    .iter()
                    .zip(layout.iter())
                    .filter(|(a, b)| a.is_finite() && b.is_finite())
                    .count();
                // Scale back to a per-pixel step so the rate is resolution independent.
                let k = self.lr_depth * n as f64 / 2.0;
                for (d, g) in self.depths[i].iter_mut().zip(&grad) {
                    *d -= k * g;
                }
            }
        }
        Ok(LossBreakdown::mean_of(&losses))
    }

    fn fresh(&self) -> Self {
        let mut r = self.clone();
        r.reset();
        r
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (img, d) in self.images.iter().zip(&self.depths) {
            match img {
                Some(img) => {
                    h.update([1u8]);
                    for v in &img.data {
                        h.update(v.to_bits().to_le_bytes());
                    }
                }
                None => h.update([0u8]),
            }
            for v in d {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
