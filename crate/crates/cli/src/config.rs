//! The run configuration file shared by `train` and the model crate: one
//! `key = value` file with `model.*` and `train.*` sections.

use std::collections::BTreeMap;
use std::path::Path;

use graspreason_model::config::KeyValues;
use graspreason_model::model::{ModelConfig, ModelKind};
use graspreason_model::train::TrainConfig;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Baselines trained next to the reasoning model.
    pub baselines: Vec<ModelKind>,
    /// Single source of randomness; overrides `model.seed` and `train.seed`.
    pub seed: u64,
}

impl RunConfig {
    pub fn read(path: &Path) -> CliResult<Self> {
        if !path.is_file() {
            return Err(CliError::Config(format!("config file {} not found", path.display())));
        }
        let kv = KeyValues::read(path).map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &KeyValues) -> CliResult<Self> {
        let mut model = KeyValues::default();
        let mut train = KeyValues::default();
        let mut unknown = Vec::new();
        for (k, v) in &kv.0 {
            if let Some(rest) = k.strip_prefix("model.") {
                model.set(rest, v);
            } else if let Some(rest) = k.strip_prefix("train.") {
                train.set(rest, v);
            } else if k != "baselines" && k != "seed" {
                unknown.push(k.clone());
            }
        }
        unknown.extend(model.unknown_keys(ModelConfig::keys()).into_iter().map(|k| format!("model.{k}")));
        unknown.extend(train.unknown_keys(TrainConfig::keys()).into_iter().map(|k| format!("train.{k}")));
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let seed = kv.get_or("seed", model.get_or("seed", 0u64)?)?;
        model.set("seed", seed);
        train.set("seed", seed);
        let model = ModelConfig::from_kv(&model)?;
        if model.kind != ModelKind::Reasoning {
            return Err(CliError::Config("model.kind must be reasoning; baselines are listed under `baselines`".into()));
        }
        let baselines = kv
            .get_or("baselines", String::new())?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| match ModelKind::parse(s)? {
                ModelKind::Reasoning => Err(CliError::Config("`baselines` lists reasoning".into())),
                k => Ok(k),
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(RunConfig {
            model,
            train: TrainConfig::from_kv(&train)?,
            baselines,
            seed,
        })
    }

    /// Flat snapshot for the run manifest.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (k, v) in self.model.to_kv().0 {
            out.insert(format!("model.{k}"), v);
        }
        for (k, v) in self.train.to_kv().0 {
            out.insert(format!("train.{k}"), v);
        }
        out.insert("baselines".into(), self.baselines.iter().map(|k| k.name()).collect::<Vec<_>>().join(","));
        out.insert("seed".into(), self.seed.to_string());
        out
    }
}
