use serde::{Deserialize, Serialize};
use trec_core::augment::AugmentPolicy;
use trec_core::data::FrameSampling;
use trec_core::kde::KdeConfig;

use crate::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_transformer: f64,
    pub lr_backbone: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    /// Warmup iterations; `None` means `min(5000, total_steps / 10)`.
    pub warmup: Option<usize>,
    /// Length in epochs of the first warmup-plus-cosine cycle.
    pub restart_epochs: usize,
    pub restart_mult: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Inclusive range of points fed per mini-batch.
    pub points: [usize; 2],
    /// Points per clip during validation; `None` keeps all of them.
    pub eval_points: Option<usize>,
    pub eval_seed: u64,
    pub frame_sampling: FrameSampling,
    pub augment: AugmentPolicy,
    /// When set, every training clip is KDE-filtered before point sampling.
    pub kde: Option<KdeConfig>,
    /// Validate every this many epochs (the last epoch always validates).
    pub validate_every: usize,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr_transformer: 1e-4,
            lr_backbone: 1e-5,
            weight_decay: 0.01,
            betas: [0.9, 0.999],
            eps: 1e-8,
            warmup: None,
            restart_epochs: 5,
            restart_mult: 2,
            epochs: 20,
            seed: 0,
            points: [200, 400],
            eval_points: Some(400),
            eval_seed: 1,
            frame_sampling: FrameSampling::Uniform,
            augment: AugmentPolicy::default(),
            kde: None,
            validate_every: 1,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_transformer > 0.0 && self.lr_backbone > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.points[0] == 0 || self.points[0] > self.points[1] {
            return bad("points must be a range [min, max] with 0 < min <= max");
        }
        if self.restart_epochs == 0 || self.restart_mult == 0 || self.validate_every == 0 {
            return bad("restart_epochs, restart_mult and validate_every must be positive");
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.betas[0]) || !(0.0..1.0).contains(&self.betas[1]) {
            return bad("weight_decay must be non-negative and betas in [0, 1)");
        }
        self.augment.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if let Some(kde) = &self.kde {
            kde.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
