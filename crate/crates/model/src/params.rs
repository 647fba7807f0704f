//! Named, grouped trainable tensors with seeded initialisation.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Base weights of the language backbone (never trained after adapters exist).
    Backbone,
    Adapter,
    Projection,
    GraspHead,
    /// Text encoder of the clip-style baseline.
    TextEncoder,
}

#[derive(Debug, Clone)]
struct Entry {
    var: Var,
    group: ParamGroup,
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device) -> Self {
        ParamStore {
            dtype,
            device,
            entries: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, group: ParamGroup) -> Result<Var> {
        if self.entries.contains_key(name) {
            return Err(ModelError::State(format!("parameter {name} registered twice")));
        }
        let var = Var::from_tensor(&tensor.to_dtype(self.dtype)?)?;
        self.entries.insert(
            name.to_string(),
            Entry {
                var: var.clone(),
                group,
            },
        );
        Ok(var)
    }

    pub fn normal<R: Rng + ?Sized>(&mut self, rng: &mut R, name: &str, shape: &[usize], std: f64, group: ParamGroup) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| ModelError::Config(e.to_string()))?;
        let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.insert(name, t, group)
    }

    pub fn uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, name: &str, shape: &[usize], bound: f64, group: ParamGroup) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.insert(name, t, group)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64, group: ParamGroup) -> Result<Var> {
        let t = (Tensor::ones(shape, DType::F64, &self.device)? * value)?;
        self.insert(name, t, group)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.get(name).map(|e| &e.var)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn group_of(&self, name: &str) -> Option<ParamGroup> {
        self.entries.get(name).map(|e| e.group)
    }

    pub fn vars(&self, groups: &[ParamGroup]) -> Vec<Var> {
        self.entries
            .values()
            .filter(|e| groups.contains(&e.group))
            .map(|e| e.var.clone())
            .collect()
    }

    pub fn named_vars(&self, groups: &[ParamGroup]) -> Vec<(String, Var)> {
        self.entries
            .iter()
            .filter(|(_, e)| groups.contains(&e.group))
            .map(|(n, e)| (n.clone(), e.var.clone()))
            .collect()
    }

    pub fn count(&self, groups: &[ParamGroup]) -> usize {
        self.vars(groups).iter().map(|v| v.elem_count()).sum()
    }

    /// SHA-256 over the raw values of every tensor in `groups`, in name order.
    pub fn hash(&self, groups: &[ParamGroup]) -> Result<String> {
        let mut h = Sha256::new();
        for (name, v) in self.named_vars(groups) {
            h.update(name.as_bytes());
            let vals: Vec<f64> = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
            for x in vals {
                h.update(x.to_le_bytes());
            }
        }
        Ok(format!("{:x}", h.finalize()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .entries
            .iter()
            .map(|(n, e)| (n.clone(), e.var.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path).map_err(|e| ModelError::io(path, e))
    }

    /// Overwrites every registered tensor with the file's value of the same name.
    pub fn load(&self, path: &Path) -> Result<()> {
        let map = candle_core::safetensors::load(path, &self.device).map_err(|e| ModelError::io(path, e))?;
        for (name, e) in &self.entries {
            let t = map
                .get(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("{} lacks tensor {name}", path.display())))?;
            if t.dims() != e.var.dims() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name}: file has {:?}, model expects {:?}",
                    t.dims(),
                    e.var.dims()
                )));
            }
            e.var.set(&t.to_dtype(self.dtype)?)?;
        }
        if let Some(extra) = map.keys().find(|k| !self.entries.contains_key(*k)) {
            return Err(ModelError::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }
}
