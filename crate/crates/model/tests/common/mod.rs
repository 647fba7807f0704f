//! Tiny dataset and model shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use graspreason_core::dataset::{build_synthetic_dataset, load_generic, load_samples, scene_split, GenericSample, InstructionSample, Split, SyntheticConfig};
use graspreason_core::geometry::default_width_max;
use graspreason_model::data::ImageCache;
use graspreason_model::model::{ModelConfig, ReasoningModel};
use graspreason_model::train::{build_vocab, prepare_generic_samples, prepare_grasp_samples, PreparedSample};

pub struct Tiny {
    pub dir: tempfile::TempDir,
    pub train: Vec<InstructionSample>,
    pub test: Vec<InstructionSample>,
    pub generic: Vec<GenericSample>,
}

impl Tiny {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn cache(&self, cfg: &ModelConfig, dtype: DType) -> ImageCache {
        ImageCache::new(self.root(), cfg.image_size, cfg.use_depth, dtype, Device::Cpu)
    }
}

pub fn tiny_dataset(scenes: usize, seed: u64) -> Tiny {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig {
        scenes,
        seed,
        ..SyntheticConfig::default()
    };
    build_synthetic_dataset(&cfg, dir.path()).unwrap();
    let train = load_samples(dir.path(), Split::Train, 0.8).unwrap();
    let test = load_samples(dir.path(), Split::Test, 0.8).unwrap();
    let ids = scene_split(train.iter().map(|s| s.scene_id.as_str()), 1.0);
    let generic = load_generic(dir.path(), &ids).unwrap();
    Tiny { dir, train, test, generic }
}

/// Small enough for finite differences in `f64`; resizes 64 px scenes to 32.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: 32,
        hidden_dim: 16,
        layers: 1,
        heads: 2,
        mlp_ratio: 2,
        vision_patch: 16,
        max_seq: 64,
        adapter_rank: 4,
        adapter_alpha: 4.0,
        fusion_dim: 8,
        base_channels: 2,
        residual_blocks: 1,
        first_kernel: 3,
        width_max: default_width_max(32),
        text_dim: 8,
        max_new_tokens: 16,
        peak_distance: 2.0,
        ..ModelConfig::default()
    }
}

pub fn tiny_model(ds: &Tiny, dtype: DType) -> ReasoningModel {
    let vocab = build_vocab(&ds.train, &ds.generic);
    let mut m = ReasoningModel::new(tiny_config(), vocab, dtype, Device::Cpu).unwrap();
    m.apply_adapters().unwrap();
    m
}

pub fn prepared(m: &ReasoningModel, ds: &Tiny, cache: &ImageCache) -> (Vec<PreparedSample>, Vec<PreparedSample>) {
    (prepare_grasp_samples(m, &ds.train, cache).unwrap(), prepare_generic_samples(m, &ds.generic))
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

/// Sets the flat entry `i` of `v` to `x` and returns the previous value.
pub fn set_entry(v: &Var, i: usize, x: f64) -> f64 {
    let shape = v.shape().clone();
    let mut vals: Vec<f64> = v.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
    let old = vals[i];
    vals[i] = x;
    v.set(&Tensor::from_vec(vals, shape, v.device()).unwrap()).unwrap();
    old
}

/// Central difference of `loss` in entry `i` of `v`, restoring the value after.
pub fn central_diff(v: &Var, i: usize, eps: f64, loss: &mut dyn FnMut() -> f64) -> f64 {
    let x = set_entry(v, i, 0.0);
    set_entry(v, i, x + eps);
    let up = loss();
    set_entry(v, i, x - eps);
    let down = loss();
    set_entry(v, i, x);
    (up - down) / (2.0 * eps)
}

/// Relative error with a floor on the denominator so near-zero gradients
/// compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Flat entry indices spread across a tensor of `n` values.
pub fn probe_indices(n: usize, count: usize) -> Vec<usize> {
    let count = count.min(n);
    (0..count).map(|i| (i * n) / count + (i * 7919) % (n / count).max(1)).collect()
}

/// Seeded standard-normal tensor scaled by `std`, in f64 on the CPU.
pub fn randn(seed: u64, std: f64, dims: &[usize]) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    let v: Vec<f64> = (0..n).map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    Tensor::from_vec(v, dims, &Device::Cpu).unwrap()
}
