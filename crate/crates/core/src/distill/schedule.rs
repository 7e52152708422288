use serde::{Deserialize, Serialize};

use super::DistillError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    #[default]
    Linear,
    Cosine,
}

/// Generator strength over the run: high early (free generation), low late
/// (refinement).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealingSchedule {
    pub s_start: f64,
    pub s_end: f64,
    pub total_iters: usize,
    pub shape: Shape,
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        AnnealingSchedule {
            s_start: 0.98,
            s_end: 0.35,
            total_iters: 1000,
            shape: Shape::Linear,
        }
    }
}

impl AnnealingSchedule {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(0.0 < self.s_end && self.s_end <= self.s_start && self.s_start <= 1.0) {
            return Err(DistillError::InvalidConfig(format!(
                "annealing needs 0 < s_end <= s_start <= 1, got {} / {}",
                self.s_end, self.s_start
            )));
        }
        if self.total_iters == 0 {
            return Err(DistillError::InvalidConfig("annealing total_iters must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn annealing_strength(iter: usize, s: &AnnealingSchedule) -> f64 {
    if iter == 0 {
        return s.s_start;
    }
    if iter >= s.total_iters {
        return s.s_end;
    }
    let t = iter as f64 / s.total_iters as f64;
    let w = match s.shape {
        Shape::Linear => t,
        Shape::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * t).cos()),
    };
    (s.s_start + (s.s_end - s.s_start) * w).clamp(s.s_end, s.s_start)
}
