use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use trec_model::{ParamGroup, ParamStore};

use crate::{TrainConfig, TrainError};

/// Adam with decoupled weight decay and one learning rate per parameter
/// group. Decay applies to matrices only; biases, norms and embeddings with
/// a single axis are left alone.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    steps: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    applied: BTreeMap<ParamGroup, f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    steps: u64,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.betas[0],
            beta2: cfg.betas[1],
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            steps: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            applied: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Learning rate each group received on the last step.
    pub fn applied_rates(&self) -> &BTreeMap<ParamGroup, f64> {
        &self.applied
    }

    /// Per-group L2 norms of the gradients.
    pub fn grad_norms(params: &ParamStore, grads: &GradStore) -> Result<BTreeMap<ParamGroup, f64>, TrainError> {
        let mut sq = BTreeMap::new();
        for (name, var) in params.vars() {
            if let Some(g) = grads.get(var.as_tensor()) {
                let s = g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                *sq.entry(ParamGroup::of(name)).or_insert(0.0) += s;
            }
        }
        Ok(sq.into_iter().map(|(k, v): (ParamGroup, f64)| (k, v.sqrt())).collect())
    }

    /// One update. `grad_scale` multiplies every gradient (used for clipping).
    pub fn step(
        &mut self,
        params: &ParamStore,
        grads: &GradStore,
        lr: impl Fn(ParamGroup) -> f64,
        grad_scale: f64,
    ) -> Result<(), TrainError> {
        self.steps += 1;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        self.applied.clear();
        for (name, var) in params.vars() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let group = ParamGroup::of(name);
            let rate = lr(group);
            self.applied.insert(group, rate);
            let g = if grad_scale == 1.0 { g.detach() } else { (g.detach() * grad_scale)? };
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                None => (&g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + self.eps)?)?;
            let theta = var.as_tensor();
            let decayed = if var.rank() >= 2 && self.weight_decay > 0.0 {
                (theta * (1.0 - rate * self.weight_decay))?
            } else {
                theta.clone()
            };
            var.set(&(decayed - (update * rate)?)?.detach())?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut map: HashMap<String, Tensor> = HashMap::new();
        for (k, t) in &self.m {
            map.insert(format!("m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            map.insert(format!("v.{k}"), t.clone());
        }
        if map.is_empty() {
            map.insert("empty".into(), Tensor::zeros(1, DType::F32, &Device::Cpu)?);
        }
        candle_core::safetensors::save(&map, path)?;
        let meta = serde_json::to_string(&Meta { steps: self.steps })?;
        let mp = path.with_extension("json");
        std::fs::write(&mp, meta).map_err(|e| TrainError::io(mp, e))
    }

    pub fn load(&mut self, path: &Path) -> Result<(), TrainError> {
        let mp = path.with_extension("json");
        let text = std::fs::read_to_string(&mp).map_err(|e| TrainError::io(&mp, e))?;
        self.steps = serde_json::from_str::<Meta>(&text)?.steps;
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        self.m.clear();
        self.v.clear();
        for (k, t) in tensors {
            if let Some(name) = k.strip_prefix("m.") {
                self.m.insert(name.to_string(), t);
            } else if let Some(name) = k.strip_prefix("v.") {
                self.v.insert(name.to_string(), t);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_weight_by_the_rate() {
        // with bias correction the first Adam step is lr * sign(g)
        let mut ps = ParamStore::new(0, DType::F64);
        let w = ps.normal("encoder.w", &[2, 2], 1.0).unwrap();
        let b = ps.normal("head.b", &[2], 1.0).unwrap();
        let before_w: Vec<f64> = w.flatten_all().unwrap().to_vec1().unwrap();
        let before_b: Vec<f64> = b.to_vec1().unwrap();
        let loss = (w.sum_all().unwrap() * 3.0).unwrap().add(&(b.sum_all().unwrap() * -2.0).unwrap()).unwrap();
        let grads = loss.backward().unwrap();
        let cfg = TrainConfig { weight_decay: 0.0, eps: 0.0, ..TrainConfig::default() };
        let mut opt = AdamW::new(&cfg);
        opt.step(&ps, &grads, |g| if g == ParamGroup::Backbone { 0.01 } else { 0.1 }, 1.0).unwrap();
        let after_w: Vec<f64> = w.flatten_all().unwrap().to_vec1().unwrap();
        let after_b: Vec<f64> = b.to_vec1().unwrap();
        for (a, b) in after_w.iter().zip(&before_w) {
            assert!((b - a - 0.01).abs() < 1e-12);
        }
        for (a, b) in after_b.iter().zip(&before_b) {
            assert!((a - b - 0.1).abs() < 1e-12);
        }
        assert_eq!(opt.applied_rates()[&ParamGroup::Backbone], 0.01);
        assert_eq!(opt.applied_rates()[&ParamGroup::Transformer], 0.1);
    }

    #[test]
    fn decay_only_touches_matrices() {
        let mut ps = ParamStore::new(0, DType::F64);
        let w = ps.constant("a.w", &[1, 1], 2.0).unwrap();
        let b = ps.constant("a.b", &[1], 2.0).unwrap();
        let sum = w.sum_all().unwrap().add(&b.sum_all().unwrap()).unwrap();
        let zero = (&sum - &sum).unwrap();
        let grads = zero.backward().unwrap();
        let mut opt = AdamW::new(&TrainConfig { weight_decay: 0.5, ..TrainConfig::default() });
        opt.step(&ps, &grads, |_| 0.1, 1.0).unwrap();
        assert!((w.flatten_all().unwrap().to_vec1::<f64>().unwrap()[0] - 2.0 * 0.95).abs() < 1e-12);
        assert_eq!(b.to_vec1::<f64>().unwrap()[0], 2.0);
    }

    #[test]
    fn state_round_trips() {
        let mut ps = ParamStore::new(0, DType::F32);
        let w = ps.normal("x.w", &[3, 2], 1.0).unwrap();
        let grads = w.sqr().unwrap().sum_all().unwrap().backward().unwrap();
        let mut opt = AdamW::new(&TrainConfig::default());
        opt.step(&ps, &grads, |_| 0.1, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("opt.safetensors");
        opt.save(&path).unwrap();
        let mut other = AdamW::new(&TrainConfig::default());
        other.load(&path).unwrap();
        assert_eq!(other.steps(), 1);
        let a: Vec<f32> = opt.m["x.w"].flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = other.m["x.w"].flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }
}
