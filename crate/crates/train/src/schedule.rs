use std::f64::consts::PI;

use crate::TrainConfig;

/// Linear warmup followed by cosine annealing with warm restarts. The first
/// cosine period ends `restart_epochs` into training; each later period is
/// `restart_mult` times longer. The floor of every period is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub warmup: u64,
    pub first_period: u64,
    pub mult: u64,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig, steps_per_epoch: usize) -> Self {
        let total = (cfg.epochs * steps_per_epoch) as u64;
        let warmup = cfg.warmup.map_or_else(|| (total / 10).min(5000), |w| w as u64);
        let cycle = (cfg.restart_epochs * steps_per_epoch) as u64;
        Self { warmup, first_period: cycle.saturating_sub(warmup).max(1), mult: cfg.restart_mult as u64 }
    }

    /// Multiplier on the base rates at `step`.
    pub fn factor(&self, step: u64) -> f64 {
        if step < self.warmup {
            return step as f64 / self.warmup as f64;
        }
        let (mut s, mut period) = (step - self.warmup, self.first_period);
        while s >= period {
            s -= period;
            period = period.saturating_mul(self.mult);
        }
        0.5 * (1.0 + (PI * s as f64 / period as f64).cos())
    }
}

/// `(lr_transformer, lr_backbone)` at `step`.
pub fn lr_at(step: u64, cfg: &TrainConfig, steps_per_epoch: usize) -> (f64, f64) {
    let f = LrSchedule::new(cfg, steps_per_epoch).factor(step);
    (cfg.lr_transformer * f, cfg.lr_backbone * f)
}
