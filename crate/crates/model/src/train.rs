//! The combined objective, the two-phase schedule and the optimisation loop.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use graspreason_core::dataset::{GenericSample, InstructionSample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::KeyValues;
use crate::data::{gt_map_tensor, scale_rects, ImageCache};
use crate::error::{ModelError, Result};
use crate::head::grasp_loss;
use crate::model::ReasoningModel;
use crate::vocab::Vocabulary;
use crate::vlm::{batch_target_embeddings, extract_target_span, prompt_text, response_text, text_loss, TargetSpan};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_text: f64,
    pub lambda_grasp: f64,
    /// 1-indexed epoch from which the text term is dropped and adapters freeze.
    pub freeze_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Generic batches per grasp batch during the first phase.
    pub mix: f64,
    pub seed: u64,
    pub split_fraction: f64,
    /// Also record the gradient norm of the text term (an extra backward pass).
    pub log_text_grad_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_text: 1.0,
            lambda_grasp: 1.0,
            freeze_epoch: 3,
            batch_size: 8,
            lr: 5e-4,
            epochs: 10,
            mix: 0.5,
            seed: 0,
            split_fraction: 0.9,
            log_text_grad_norm: false,
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "lambda_text", "lambda_grasp", "freeze_epoch", "batch_size", "lr", "epochs", "mix", "seed",
    "split_fraction", "log_text_grad_norm", "schedule",
];

impl TrainConfig {
    pub fn keys() -> &'static [&'static str] {
        TRAIN_KEYS
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let schedule: String = kv.get_or("schedule", "cosine".to_string())?;
        if schedule != "cosine" {
            return Err(ModelError::Config(format!("schedule {schedule}: only cosine is supported")));
        }
        let cfg = TrainConfig {
            lambda_text: kv.get_or("lambda_text", d.lambda_text)?,
            lambda_grasp: kv.get_or("lambda_grasp", d.lambda_grasp)?,
            freeze_epoch: kv.get_or("freeze_epoch", d.freeze_epoch)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            lr: kv.get_or("lr", d.lr)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            mix: kv.get_or("mix", d.mix)?,
            seed: kv.get_or("seed", d.seed)?,
            split_fraction: kv.get_or("split_fraction", d.split_fraction)?,
            log_text_grad_norm: kv.get_or("log_text_grad_norm", d.log_text_grad_norm)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("lambda_text", self.lambda_text);
        kv.set("lambda_grasp", self.lambda_grasp);
        kv.set("freeze_epoch", self.freeze_epoch);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("epochs", self.epochs);
        kv.set("mix", self.mix);
        kv.set("seed", self.seed);
        kv.set("split_fraction", self.split_fraction);
        kv.set("log_text_grad_norm", self.log_text_grad_norm);
        kv.set("schedule", "cosine");
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_text >= 0.0 && self.lambda_grasp >= 0.0) {
            return Err(ModelError::Config("loss weights must be non-negative".into()));
        }
        if self.freeze_epoch < 1 {
            return Err(ModelError::Config("freeze_epoch must be at least 1".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ModelError::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.mix >= 0.0) {
            return Err(ModelError::Config("lr must be positive and mix non-negative".into()));
        }
        Ok(())
    }

    /// Whether `epoch` (1-indexed) runs in the frozen, grasp-only phase.
    pub fn frozen_in(&self, epoch: usize) -> bool {
        epoch >= self.freeze_epoch
    }
}

fn check_loss(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(ModelError::Domain(format!("{name} must be finite and non-negative, got {v}")));
    }
    Ok(())
}

/// `λ_t · l_text + λ_g · l_grasp` on plain numbers.
pub fn combined_loss(l_text: f64, l_grasp: f64, lambda_text: f64, lambda_grasp: f64) -> Result<f64> {
    check_loss("l_text", l_text)?;
    check_loss("l_grasp", l_grasp)?;
    Ok(lambda_text * l_text + lambda_grasp * l_grasp)
}

/// Differentiable form of [`combined_loss`]; a zero weight drops its term
/// from the graph entirely.
pub fn combined_loss_tensor(l_text: &Tensor, l_grasp: &Tensor, lambda_text: f64, lambda_grasp: f64) -> Result<Tensor> {
    check_loss("l_text", l_text.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)?;
    check_loss("l_grasp", l_grasp.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)?;
    let g = (l_grasp * lambda_grasp)?;
    if lambda_text == 0.0 {
        return Ok(g);
    }
    Ok(((l_text * lambda_text)? + g)?)
}

pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / (total - 1) as f64).cos())
}

/// Vocabulary covering every prompt and response the trainer will see.
pub fn build_vocab(samples: &[InstructionSample], generic: &[GenericSample]) -> Vocabulary {
    let mut texts: Vec<String> = Vec::new();
    for s in samples {
        texts.push(prompt_text(&s.instruction));
        texts.push(response_text(&s.target_name));
    }
    for g in generic {
        texts.push(prompt_text(&g.prompt));
        texts.push(g.response.clone());
    }
    Vocabulary::build(texts.iter().map(String::as_str))
}

/// A reasoning-grasp sample tokenised for training.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    pub scene: PathBuf,
    pub depth: Option<PathBuf>,
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
    /// Target span inside `response`.
    pub span: Option<TargetSpan>,
    pub gt: Option<Tensor>,
}

pub fn prepare_grasp_samples(model: &ReasoningModel, samples: &[InstructionSample], cache: &ImageCache) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            let response = model.vocab.encode(&response_text(&s.target_name));
            let span = extract_target_span(&response, model.vocab.spt())?.span;
            let input = cache.for_sample(s)?;
            let rects = scale_rects(&s.gt_rects, input.scale)?;
            let gt = gt_map_tensor(&rects, model.cfg.image_size, model.cfg.width_max, model.dtype(), model.device())?;
            Ok(PreparedSample {
                id: s.sample_id.clone(),
                scene: s.image_path.clone(),
                depth: s.depth_path.clone(),
                prompt: model.prompt_ids(&s.instruction),
                response,
                span: Some(span),
                gt: Some(gt),
            })
        })
        .collect()
}

pub fn prepare_generic_samples(model: &ReasoningModel, samples: &[GenericSample]) -> Vec<PreparedSample> {
    samples
        .iter()
        .enumerate()
        .map(|(i, g)| PreparedSample {
            id: format!("generic_{i}"),
            scene: g.image_path.clone(),
            depth: None,
            prompt: model.vocab.encode(&prompt_text(&g.prompt)),
            response: model.vocab.encode(&format!("{} <eos>", g.response)),
            span: None,
            gt: None,
        })
        .collect()
}

/// Forward products of one batch.
pub struct BatchOutput {
    pub l_text: Tensor,
    pub l_grasp: Option<Tensor>,
}

/// Runs the model on a batch with teacher-forced spans. With `frozen_lm` the
/// language path is evaluated without recording gradients into it.
pub fn forward_batch(model: &ReasoningModel, batch: &[&PreparedSample], cache: &ImageCache, frozen_lm: bool) -> Result<BatchOutput> {
    forward_batch_with(model, batch, cache, frozen_lm, true)
}

/// [`forward_batch`], optionally skipping the grasp path.
pub fn forward_batch_with(model: &ReasoningModel, batch: &[&PreparedSample], cache: &ImageCache, frozen_lm: bool, grasp: bool) -> Result<BatchOutput> {
    let dev = model.device().clone();
    let mut scene_ids: BTreeMap<&Path, u32> = BTreeMap::new();
    let mut order = Vec::new();
    for s in batch {
        if !scene_ids.contains_key(s.scene.as_path()) {
            scene_ids.insert(s.scene.as_path(), order.len() as u32);
            order.push(*s);
        }
    }
    let inputs = order
        .iter()
        .map(|s| cache.get(&s.scene, s.depth.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let index = Tensor::new(batch.iter().map(|s| scene_ids[s.scene.as_path()]).collect::<Vec<_>>().as_slice(), &dev)?;

    let bb = model.backbone.as_ref();
    let v = bb.config().vision_tokens();
    let t_max = batch.iter().map(|s| s.prompt.len() + s.response.len()).max().unwrap_or(0);
    let len = v + t_max;
    let mut ids = Vec::with_capacity(batch.len() * t_max);
    let mut labels = vec![None; batch.len() * len];
    let mut spans = Vec::new();
    for (b, s) in batch.iter().enumerate() {
        let row: Vec<u32> = s.prompt.iter().chain(&s.response).copied().collect();
        for p in 0..row.len().saturating_sub(1) {
            if p + 1 >= s.prompt.len() {
                labels[b * len + v + p] = Some(row[p + 1]);
            }
        }
        ids.extend(row.iter().copied().chain(std::iter::repeat(model.vocab.pad()).take(t_max - row.len())));
        if let Some(sp) = s.span {
            spans.push(sp.shifted(v + s.prompt.len()));
        }
    }
    let rgb = Tensor::stack(&inputs.iter().map(|i| &i.rgb).collect::<Vec<_>>(), 0)?;
    let vis = bb.embed_image(&rgb)?.index_select(&index, 0)?;
    let tok = bb.embed_tokens(&Tensor::from_vec(ids, (batch.len(), t_max), &dev)?)?;
    let mut emb = Tensor::cat(&[vis, tok], 1)?;
    if frozen_lm {
        emb = emb.detach();
    }
    let mut hidden = bb.hidden_states(&emb)?;
    if frozen_lm {
        hidden = hidden.detach();
    }
    let logits = bb.logits(&hidden)?;
    let vocab = logits.dim(2)?;
    let l_text = text_loss(&logits.reshape((batch.len() * len, vocab))?, &labels)?;

    let l_grasp = if grasp && spans.len() == batch.len() {
        let h_avg = batch_target_embeddings(&hidden, &spans)?;
        let f = model.projection.project_feature(&h_avg)?;
        let head_in = Tensor::stack(&inputs.iter().map(|i| &i.head).collect::<Vec<_>>(), 0)?;
        let feats = model.head.encode(&head_in)?.index_select(&index, 0)?;
        let maps = model.head.decode(&feats, &f)?.stacked()?;
        let gt = Tensor::stack(&batch.iter().map(|s| s.gt.as_ref().expect("grasp sample")).collect::<Vec<_>>(), 0)?;
        Some(grasp_loss(&maps, &gt)?)
    } else {
        None
    };
    Ok(BatchOutput { l_text, l_grasp })
}

fn fingerprint(batch: &[&PreparedSample]) -> String {
    let mut h = Sha256::new();
    for s in batch {
        h.update(s.id.as_bytes());
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())[..16].to_string()
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub phase: u8,
    pub source: String,
    pub l_text: f64,
    pub l_grasp: Option<f64>,
    pub total: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Grasp,
    Generic,
}

/// Shuffled grasp batches, then generic batches interleaved at the configured
/// ratio. Batches are not grouped by scene: same-scene batches share objects
/// and colours, which slows the language side badly.
fn epoch_plan(
    grasp: &[PreparedSample],
    generic: &[PreparedSample],
    cfg: &TrainConfig,
    epoch: usize,
    with_generic: bool,
) -> Vec<(Source, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64);
    let mut flat: Vec<usize> = (0..grasp.len()).collect();
    flat.shuffle(&mut rng);
    let mut plan: Vec<(Source, Vec<usize>)> = flat.chunks(cfg.batch_size).map(|c| (Source::Grasp, c.to_vec())).collect();
    if with_generic && !generic.is_empty() && cfg.mix > 0.0 {
        let n = (plan.len() as f64 * cfg.mix).round() as usize;
        let mut pool: Vec<usize> = (0..generic.len()).collect();
        pool.shuffle(&mut rng);
        let mut cursor = 0;
        for _ in 0..n {
            let batch = (0..cfg.batch_size)
                .map(|_| {
                    let i = pool[cursor % pool.len()];
                    cursor += 1;
                    i
                })
                .collect();
            plan.push((Source::Generic, batch));
        }
        plan.shuffle(&mut rng);
    }
    plan
}

pub struct TrainData<'a> {
    pub grasp: &'a [PreparedSample],
    pub generic: &'a [PreparedSample],
    pub cache: &'a ImageCache,
}

/// Trains in place. Epochs before `freeze_epoch` mix generic data and train
/// adapters, projection and head on both losses; from `freeze_epoch` on the
/// text weight is zero, adapters are frozen and only grasp data is used.
/// `observer` sees every step after the optimiser update.
pub fn train(
    model: &mut ReasoningModel,
    data: &TrainData,
    cfg: &TrainConfig,
    out: Option<&Path>,
    observer: &mut dyn FnMut(&StepRecord, &ReasoningModel),
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if !model.backbone.adapters_applied() {
        return Err(ModelError::State("train expects a model with adapters applied".into()));
    }
    if data.grasp.is_empty() {
        return Err(ModelError::Domain("no training samples".into()));
    }
    let plans: Vec<_> = (1..=cfg.epochs)
        .map(|e| epoch_plan(data.grasp, data.generic, cfg, e, !cfg.frozen_in(e)))
        .collect();
    let total: usize = plans.iter().map(Vec::len).sum();
    let adam = |vars: Vec<Var>| {
        AdamW::new(
            vars,
            ParamsAdamW {
                lr: cfg.lr,
                weight_decay: 0.0,
                ..ParamsAdamW::default()
            },
        )
    };
    use crate::params::ParamGroup;
    let mut lm_opt = Some(adam(model.store.vars(&[ParamGroup::Adapter]))?);
    let mut main_opt = adam(model.store.vars(&[ParamGroup::Projection, ParamGroup::GraspHead]))?;
    let mut metrics = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
            let p = dir.join("metrics.jsonl");
            Some((OpenOptions::new().create(true).append(true).open(&p).map_err(|e| ModelError::io(&p, e))?, p))
        }
        None => None,
    };
    let mut records = Vec::with_capacity(total);
    let mut step = 0;
    for (e, plan) in plans.iter().enumerate() {
        let epoch = e + 1;
        let frozen = cfg.frozen_in(epoch);
        if frozen && !model.is_frozen() {
            model.freeze_adapters()?;
            lm_opt = None;
            log::info!("epoch {epoch}: text loss weight set to 0, adapters frozen");
        }
        let lambda_text = if frozen { 0.0 } else { cfg.lambda_text };
        for (source, idx) in plan {
            let pool = match source {
                Source::Grasp => data.grasp,
                Source::Generic => data.generic,
            };
            let batch: Vec<&PreparedSample> = idx.iter().map(|&i| &pool[i]).collect();
            let lr = cosine_lr(cfg.lr, step, total);
            let o = forward_batch(model, &batch, data.cache, frozen)?;
            let l_text_v = o.l_text.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            let l_grasp_v = match &o.l_grasp {
                Some(g) => Some(g.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?),
                None => None,
            };
            if !l_text_v.is_finite() || !l_grasp_v.unwrap_or(0.0).is_finite() {
                return Err(ModelError::NonFinite {
                    step,
                    fingerprint: fingerprint(&batch),
                });
            }
            let zero = Tensor::zeros((), o.l_text.dtype(), o.l_text.device())?;
            let lg = o.l_grasp.clone().unwrap_or(zero);
            let loss = combined_loss_tensor(&o.l_text, &lg, lambda_text, cfg.lambda_grasp)?;
            let total_v = lambda_text * l_text_v + cfg.lambda_grasp * l_grasp_v.unwrap_or(0.0);

            let text_grad_norm = if cfg.log_text_grad_norm {
                Some(text_term_grad_norm(model, &o.l_text, lambda_text)?)
            } else {
                None
            };
            if lambda_text > 0.0 || o.l_grasp.is_some() {
                let grads = loss.backward()?;
                if let Some(opt) = lm_opt.as_mut() {
                    opt.set_learning_rate(lr);
                    opt.step(&grads)?;
                }
                main_opt.set_learning_rate(lr);
                main_opt.step(&grads)?;
            }
            let rec = StepRecord {
                step,
                epoch,
                phase: if frozen { 2 } else { 1 },
                source: match source {
                    Source::Grasp => "grasp".into(),
                    Source::Generic => "generic".into(),
                },
                l_text: l_text_v,
                l_grasp: l_grasp_v,
                total: total_v,
                lr,
                text_grad_norm,
            };
            if let Some((f, p)) = metrics.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(|e| ModelError::io(p.as_path(), e))?;
            }
            observer(&rec, model);
            records.push(rec);
            step += 1;
        }
        if let Some(dir) = out {
            model.save(&dir.join(format!("epoch-{epoch}")))?;
        }
        let n = plan.len().max(1) as f64;
        let mean = |f: &dyn Fn(&StepRecord) -> f64| records.iter().rev().take(plan.len()).map(f).sum::<f64>() / n;
        log::info!(
            "epoch {epoch}: mean l_text {:.4}, mean l_grasp {:.4}",
            mean(&|r| r.l_text),
            mean(&|r| r.l_grasp.unwrap_or(0.0))
        );
    }
    if let Some(dir) = out {
        model.save(&dir.join("model"))?;
    }
    Ok(records)
}

/// L2 norm of the gradient of `λ_t · l_text` over the currently trainable parameters.
pub fn text_term_grad_norm(model: &ReasoningModel, l_text: &Tensor, lambda_text: f64) -> Result<f64> {
    let grads = (l_text * lambda_text)?.backward()?;
    let mut sq = 0.0;
    for v in model.store.vars(&model.trainable_groups()) {
        if let Some(g) = grads.get(&v) {
            sq += g.to_dtype(candle_core::DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
    }
    Ok(sq.sqrt())
}

/// Training losses averaged per epoch, for quick inspection.
pub fn epoch_means(records: &[StepRecord]) -> HashMap<usize, (f64, f64)> {
    let mut acc: HashMap<usize, (f64, f64, f64)> = HashMap::new();
    for r in records {
        let e = acc.entry(r.epoch).or_default();
        e.0 += r.l_text;
        e.1 += r.l_grasp.unwrap_or(0.0);
        e.2 += 1.0;
    }
    acc.into_iter().map(|(k, (a, b, n))| (k, (a / n, b / n))).collect()
}
