//! Depth constraint, composite loss and the perceptual-term interface.

use serde::{Deserialize, Serialize};

use super::{DistillError, Image};

/// How the depth difference is reduced before the hinge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Hinge on each pixel's absolute difference, mean of squares.
    #[default]
    PerPixel,
    /// Hinge once on the RMS difference over valid pixels.
    PerImage,
}

/// Hinge-squared depth penalty with soft threshold `delta`.
///
/// Pixels whose layout depth (or rendered depth) is not finite are masked and
/// get zero gradient. Returns the loss and its gradient with respect to
/// `d_render`.
pub fn depth_constraint_loss(
    d_render: &[f64],
    d_layout: &[f64],
    delta: f64,
    mode: NormMode,
) -> Result<(f64, Vec<f64>), DistillError> {
    if d_render.len() != d_layout.len() {
        return Err(DistillError::ShapeMismatch(format!(
            "depth maps {} vs {}",
            d_render.len(),
            d_layout.len()
        )));
    }
    let valid = |i: usize| d_layout[i].is_finite() && d_render[i].is_finite();
    let n = (0..d_render.len()).filter(|&i| valid(i)).count();
    let mut grad = vec![0.0; d_render.len()];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let nf = n as f64;
    match mode {
        NormMode::PerPixel => {
            let mut loss = 0.0;
            for i in 0..d_render.len() {
                if !valid(i) {
                    continue;
                }
                let diff = d_render[i] - d_layout[i];
                let r = diff.abs() - delta;
                if r > 0.0 {
                    loss += r * r;
                    grad[i] = 2.0 / nf * r * diff.signum();
                }
            }
            Ok((loss / nf, grad))
        }
        NormMode::PerImage => {
            let sq: f64 = (0..d_render.len())
                .filter(|&i| valid(i))
                .map(|i| (d_render[i] - d_layout[i]).powi(2))
                .sum();
            let rms = (sq / nf).sqrt();
            let r = rms - delta;
            if r <= 0.0 {
                return Ok((0.0, grad));
            }
            for i in 0..d_render.len() {
                if valid(i) {
                    grad[i] = 2.0 * r * (d_render[i] - d_layout[i]) / (nf * rms);
                }
            }
            Ok((r * r, grad))
        }
    }
}

/// Maps an image to a feature vector; the perceptual term is the mean squared
/// feature difference.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, img: &Image) -> Vec<f64>;

    fn distance(&self, a: &Image, b: &Image) -> Result<f64, DistillError> {
        if !a.same_shape(b) {
            return Err(DistillError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                a.width, a.height, b.width, b.height
            )));
        }
        let fa = self.features(a);
        let fb = self.features(b);
        if fa.is_empty() {
            return Ok(0.0);
        }
        Ok(fa.iter().zip(&fb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / fa.len() as f64)
    }
}

/// Per-channel mean and variance over non-overlapping square patches at
/// several sizes. Size 1 is always included, so the distance is zero only
/// for identical images.
#[derive(Debug, Clone)]
pub struct PatchStats {
    pub sizes: Vec<u32>,
}

impl Default for PatchStats {
    fn default() -> Self {
        PatchStats {
            sizes: vec![1, 2, 4, 8],
        }
    }
}

impl FeatureExtractor for PatchStats {
    fn features(&self, img: &Image) -> Vec<f64> {
        let (w, h) = (img.width as usize, img.height as usize);
        let mut out = Vec::new();
        for &p in &self.sizes {
            let p = p.max(1) as usize;
            for py in 0..h / p {
                for px in 0..w / p {
                    for c in 0..3 {
                        let mut sum = 0.0;
                        let mut sum2 = 0.0;
                        for y in py * p..(py + 1) * p {
                            for x in px * p..(px + 1) * p {
                                let v = img.data[(y * w + x) * 3 + c];
                                sum += v;
                                sum2 += v * v;
                            }
                        }
                        let k = (p * p) as f64;
                        let mean = sum / k;
                        out.push(mean);
                        out.push((sum2 / k - mean * mean).max(0.0));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_img: f64,
    pub w_depth: f64,
    pub w_perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_img: 1.0,
            w_depth: 1.0,
            w_perc: 0.1,
        }
    }
}

/// Weighted terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub image: f64,
    pub depth: f64,
    pub perceptual: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn mean_of(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.image += b.image;
            m.depth += b.depth;
            m.perceptual += b.perceptual;
        }
        m.image /= n;
        m.depth /= n;
        m.perceptual /= n;
        m.total = m.image + m.depth + m.perceptual;
        m
    }
}

/// `w_img * MSE + w_depth * depth term (when delta is Some) + w_perc * perceptual`.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    rendered: &Image,
    generated: &Image,
    d_render: &[f64],
    d_layout: &[f64],
    weights: &LossWeights,
    depth_delta: Option<f64>,
    norm_mode: NormMode,
    perceptual: &dyn FeatureExtractor,
) -> Result<LossBreakdown, DistillError> {
    let image = weights.w_img * rendered.mse(generated)?;
    let depth = match depth_delta {
        Some(delta) => weights.w_depth * depth_constraint_loss(d_render, d_layout, delta, norm_mode)?.0,
        None => 0.0,
    };
    let perc = if weights.w_perc != 0.0 {
        weights.w_perc * perceptual.distance(rendered, generated)?
    } else {
        0.0
    };
    Ok(LossBreakdown {
        image,
        depth,
        perceptual: perc,
        total: image + depth + perc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_example() {
        let (l, g) = depth_constraint_loss(&[2.0], &[1.0], 0.5, NormMode::PerPixel).unwrap();
        assert_eq!(l, 0.25);
        assert_eq!(g, vec![1.0]);
    }

    #[test]
    fn dead_zone_and_hinge_point_are_exactly_zero() {
        let (l, g) = depth_constraint_loss(&[1.0, 2.2, 3.0], &[1.1, 2.0, 3.25], 0.25, NormMode::PerPixel).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn masked_pixels_ignored() {
        let (l, g) = depth_constraint_loss(&[5.0, 2.0], &[f64::INFINITY, 1.0], 0.5, NormMode::PerPixel).unwrap();
        assert_eq!(l, 0.25);
        assert_eq!(g, vec![0.0, 1.0]);
    }

    #[test]
    fn shape_mismatch() {
        let e = depth_constraint_loss(&[1.0], &[1.0, 2.0], 0.1, NormMode::PerPixel).unwrap_err();
        assert_eq!(e.code(), "SHAPE_MISMATCH");
    }

    #[test]
    fn per_image_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dr: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..4.0)).collect();
        let dl: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..4.0)).collect();
        let (_, g) = depth_constraint_loss(&dr, &dl, 0.1, NormMode::PerImage).unwrap();
        let h = 1e-6;
        for i in 0..dr.len() {
            let mut p = dr.clone();
            p[i] += h;
            let mut m = dr.clone();
            m[i] -= h;
            let fd = (depth_constraint_loss(&p, &dl, 0.1, NormMode::PerImage).unwrap().0
                - depth_constraint_loss(&m, &dl, 0.1, NormMode::PerImage).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3), "{fd} {}", g[i]);
        }
    }

    fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Image {
        Image {
            width: w,
            height: h,
            data: (0..w * h * 3).map(|_| rng.random::<f64>()).collect(),
        }
    }

    #[test]
    fn patch_stats_is_a_distance_like_measure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ps = PatchStats::default();
        for _ in 0..50 {
            let a = random_image(&mut rng, 17, 9);
            let mut b = a.clone();
            assert_eq!(ps.distance(&a, &b).unwrap(), 0.0);
            let k = rng.random_range(0..b.data.len());
            b.data[k] += 1e-3;
            let ab = ps.distance(&a, &b).unwrap();
            assert!(ab > 0.0);
            assert_eq!(ab, ps.distance(&b, &a).unwrap());
        }
    }

    #[test]
    fn composite_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        let dr: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..3.0)).collect();
        let dl: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..3.0)).collect();
        let w = LossWeights {
            w_img: 2.0,
            w_depth: 3.0,
            w_perc: 0.0,
        };
        let ps = PatchStats::default();
        let c = composite_loss(&a, &b, &dr, &dl, &w, Some(0.2), NormMode::PerPixel, &ps).unwrap();
        let expect =
            2.0 * a.mse(&b).unwrap() + 3.0 * depth_constraint_loss(&dr, &dl, 0.2, NormMode::PerPixel).unwrap().0;
        assert_eq!(c.total, expect);
        let full = composite_loss(
            &a,
            &b,
            &dr,
            &dl,
            &LossWeights::default(),
            Some(0.2),
            NormMode::PerPixel,
            &ps,
        )
        .unwrap();
        assert!((full.image + full.depth + full.perceptual - full.total).abs() < 1e-9);
        let same = composite_loss(
            &a,
            &a,
            &dl,
            &dl,
            &LossWeights::default(),
            Some(0.2),
            NormMode::PerPixel,
            &ps,
        )
        .unwrap();
        assert_eq!(same.total, 0.0);
    }
}
