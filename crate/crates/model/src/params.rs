use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use trec_core::seed;

use crate::ModelError;

/// Learning-rate group of a parameter. Everything under `encoder.` is the
/// backbone; the rest (projections, transformer, pooling, head) is trained at
/// the transformer rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    Transformer,
}

impl ParamGroup {
    pub fn of(name: &str) -> Self {
        if name.starts_with("encoder.") {
            ParamGroup::Backbone
        } else {
            ParamGroup::Transformer
        }
    }
}

/// Named trainable variables, kept sorted by name.
///
/// Each parameter is initialized from its own stream derived from the model
/// seed and its name, so adding a layer does not reshuffle the others.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self { vars: BTreeMap::new(), dtype, device: Device::Cpu, seed }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    fn insert(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor, ModelError> {
        if self.vars.contains_key(name) {
            return Err(ModelError::Config(format!("parameter `{name}` declared twice")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(handle)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor, ModelError> {
        let mut rng = seed::rng(self.seed, &[seed::hash_str(name)]);
        let n = shape.iter().product();
        let values = (0..n).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        }).collect();
        self.insert(name, values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor, ModelError> {
        self.insert(name, vec![value; shape.iter().product()], shape)
    }

    /// Copies the values of every stored variable whose name starts with
    /// `prefix` from `tensors`. Missing or misshapen entries are errors.
    pub fn assign_from(&self, tensors: &HashMap<String, Tensor>, prefix: &str) -> Result<usize, ModelError> {
        let mut n = 0;
        for (name, var) in self.vars.iter().filter(|(k, _)| k.starts_with(prefix)) {
            let src = tensors.get(name).ok_or_else(|| ModelError::Checkpoint(format!("missing tensor `{name}`")))?;
            if src.dims() != var.dims() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    src.dims(),
                    var.dims()
                )));
            }
            var.set(&src.to_dtype(self.dtype)?)?;
            n += 1;
        }
        Ok(n)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let map: HashMap<String, Tensor> = self.vars.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }
}
