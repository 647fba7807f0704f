//! Comparison systems: a text-feature-conditioned grasp head, an
//! unconditioned detector, and a grounding-then-detection pipeline.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use base64::Engine;
use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use graspreason_core::dataset::InstructionSample;
use graspreason_core::geometry::{GraspPose, GraspRect, DEFAULT_JAW_RATIO};
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};

use crate::config::KeyValues;
use crate::data::{gt_map_tensor, rgb_tensor, scale_rects, ImageCache, SceneInput};
use crate::error::{ModelError, Result};
use crate::head::{grasp_loss, GraspHead};
use crate::model::{decode_poses, GraspPredictor, ModelConfig, ModelKind, Prediction, CONFIG_FILE, VOCAB_FILE, WEIGHTS_FILE};
use crate::params::{ParamGroup, ParamStore};
use crate::train::{cosine_lr, StepRecord, TrainConfig};
use crate::vocab::Vocabulary;

/// Mean of learned word embeddings followed by a linear map; stands in for a
/// contrastive text encoder.
#[derive(Debug, Clone)]
pub struct BowEncoder {
    emb: Var,
    proj: crate::nn::Linear,
    dim: usize,
}

impl BowEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut dyn rand::RngCore, vocab_size: usize, dim: usize) -> Result<Self> {
        let g = ParamGroup::TextEncoder;
        Ok(BowEncoder {
            emb: store.normal(rng, "text.emb", &[vocab_size, dim], 1.0 / (dim as f64).sqrt(), g)?,
            proj: crate::nn::Linear::new(store, rng, "text.proj", dim, dim, true, g)?,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(B, dim)` features for a batch of token-id lists. Empty lists give
    /// the projection of a zero vector.
    pub fn encode(&self, batch: &[&[u32]]) -> Result<Tensor> {
        let v = self.emb.dim(0)?;
        let mut w = vec![0f32; batch.len() * v];
        for (b, ids) in batch.iter().enumerate() {
            for &id in ids.iter() {
                if id as usize >= v {
                    return Err(ModelError::Domain(format!("token id {id} outside a vocabulary of {v}")));
                }
                w[b * v + id as usize] += 1.0 / ids.len() as f32;
            }
        }
        let emb = self.emb.as_tensor();
        let w = Tensor::from_vec(w, (batch.len(), v), emb.device())?.to_dtype(emb.dtype())?;
        self.proj.forward(&w.matmul(emb)?)
    }
}

/// Grasp head conditioned on an instruction feature (clip-style) or on
/// nothing at all (detector). Both train on the grasp loss alone.
pub struct GraspOnlyModel {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: Option<BowEncoder>,
    pub head: GraspHead,
}

impl GraspOnlyModel {
    pub fn new(cfg: ModelConfig, vocab: Vocabulary, dtype: DType, device: Device) -> Result<Self> {
        let mut store = ParamStore::new(dtype, device);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (encoder, fusion) = match cfg.kind {
            ModelKind::ClipStyle => (Some(BowEncoder::new(&mut store, &mut rng, vocab.len(), cfg.text_dim)?), cfg.text_dim),
            ModelKind::Detector => (None, cfg.fusion_dim),
            ModelKind::Reasoning => return Err(ModelError::Config("reasoning models are built by ReasoningModel".into())),
        };
        let head = GraspHead::new(cfg.head(fusion), &mut store, &mut rng, "head")?;
        Ok(GraspOnlyModel { cfg, vocab, store, encoder, head })
    }

    pub fn kind(&self) -> ModelKind {
        self.cfg.kind
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn feature_dim(&self) -> usize {
        self.head.config().fusion_dim
    }

    pub fn instruction_ids(&self, instruction: &str) -> Vec<u32> {
        self.vocab.encode(instruction)
    }

    /// Conditioning features `(B, feature_dim)`: text features, or zeros.
    pub fn features(&self, batch: &[&[u32]]) -> Result<Tensor> {
        match &self.encoder {
            Some(e) => e.encode(batch),
            None => Ok(Tensor::zeros((batch.len(), self.feature_dim()), self.dtype(), self.device())?),
        }
    }

    /// Maps from an image batch and explicit features; the feature width
    /// must match the head.
    pub fn forward_with_feature(&self, images: &Tensor, feature: &Tensor) -> Result<crate::head::MapTensors> {
        self.head.forward(images, feature)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
        self.cfg.to_kv().write(&dir.join(CONFIG_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        self.store.save(&dir.join(WEIGHTS_FILE))
    }

    pub fn load(dir: &Path, dtype: DType, device: Device) -> Result<Self> {
        let cfg = ModelConfig::from_kv(&KeyValues::read(&dir.join(CONFIG_FILE))?)?;
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let m = GraspOnlyModel::new(cfg, vocab, dtype, device)?;
        m.store.load(&dir.join(WEIGHTS_FILE))?;
        Ok(m)
    }

    /// Top-`k` poses for a stored-resolution image of any size.
    pub fn detect_image(&self, image: &RgbImage, ids: &[u32], k: usize) -> Result<Vec<GraspPose<f64>>> {
        if self.cfg.use_depth {
            return Err(ModelError::Config("detecting on crops needs an RGB-only head".into()));
        }
        let (rgb, scale) = rgb_tensor(image, self.cfg.image_size, self.device())?;
        let f = self.features(&[ids])?;
        let maps = self.head.forward(&rgb.to_dtype(self.dtype())?.unsqueeze(0)?, &f)?;
        decode_poses(&self.cfg, &maps, 0, scale, k)
    }
}

impl GraspPredictor for GraspOnlyModel {
    fn name(&self) -> &str {
        self.cfg.kind.name()
    }

    fn predict(&self, scene: &SceneInput, instruction: &str, _hint: Option<[f64; 4]>, k: usize) -> Result<Prediction> {
        let ids = self.instruction_ids(instruction);
        let f = self.features(&[ids.as_slice()])?;
        let maps = self.head.forward(&scene.head.unsqueeze(0)?, &f)?;
        Ok(Prediction {
            poses: decode_poses(&self.cfg, &maps, 0, scene.scale, k)?,
            ..Prediction::default()
        })
    }
}

/// One grasp-only training item.
#[derive(Debug, Clone)]
pub struct GraspItem {
    pub id: String,
    pub image_path: PathBuf,
    pub depth_path: Option<PathBuf>,
    pub tokens: Vec<u32>,
    pub gt: Tensor,
}

/// Clip-style items: one per sample, the sample's own ground truth.
pub fn clip_items(model: &GraspOnlyModel, samples: &[InstructionSample], cache: &ImageCache) -> Result<Vec<GraspItem>> {
    samples
        .iter()
        .map(|s| {
            let input = cache.for_sample(s)?;
            let rects = scale_rects(&s.gt_rects, input.scale)?;
            Ok(GraspItem {
                id: s.sample_id.clone(),
                image_path: s.image_path.clone(),
                depth_path: s.depth_path.clone(),
                tokens: model.instruction_ids(&s.instruction),
                gt: gt_map_tensor(&rects, model.cfg.image_size, model.cfg.width_max, model.dtype(), model.device())?,
            })
        })
        .collect()
}

/// Detector items: one per scene, ground truth of every object-level target.
pub fn detector_items(model: &GraspOnlyModel, samples: &[InstructionSample], cache: &ImageCache) -> Result<Vec<GraspItem>> {
    let mut scenes: BTreeMap<&str, (&InstructionSample, Vec<GraspRect<f64>>)> = BTreeMap::new();
    for s in samples {
        let e = scenes.entry(&s.scene_id).or_insert((s, Vec::new()));
        if s.target_level == graspreason_core::dataset::TargetLevel::Object {
            e.1.extend(s.gt_rects.iter().cloned());
        }
    }
    scenes
        .into_iter()
        .filter(|(_, (_, r))| !r.is_empty())
        .map(|(id, (s, rects))| {
            let input = cache.for_sample(s)?;
            let rects = scale_rects(&rects, input.scale)?;
            Ok(GraspItem {
                id: id.to_string(),
                image_path: s.image_path.clone(),
                depth_path: s.depth_path.clone(),
                tokens: Vec::new(),
                gt: gt_map_tensor(&rects, model.cfg.image_size, model.cfg.width_max, model.dtype(), model.device())?,
            })
        })
        .collect()
}

/// Grasp-loss-only training with the same optimiser, schedule, batching and
/// logging conventions as the main trainer. The text weight and freeze
/// settings of `cfg` do not apply.
pub fn train_grasp_only(
    model: &mut GraspOnlyModel,
    items: &[GraspItem],
    cache: &ImageCache,
    cfg: &TrainConfig,
    out: Option<&Path>,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    use rand::seq::SliceRandom;
    cfg.validate()?;
    if items.is_empty() {
        return Err(ModelError::Domain("no training items".into()));
    }
    let per_epoch = items.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let groups = [ParamGroup::TextEncoder, ParamGroup::GraspHead];
    let mut opt = AdamW::new(
        model.store.vars(&groups),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        },
    )?;
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
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&GraspItem> = idx.iter().map(|&i| &items[i]).collect();
            let images = batch
                .iter()
                .map(|b| Ok(cache.get(&b.image_path, b.depth_path.as_deref())?.head))
                .collect::<Result<Vec<_>>>()?;
            let tokens: Vec<&[u32]> = batch.iter().map(|b| b.tokens.as_slice()).collect();
            let f = model.features(&tokens)?;
            let maps = model.head.forward(&Tensor::stack(&images, 0)?, &f)?.stacked()?;
            let gt = Tensor::stack(&batch.iter().map(|b| &b.gt).collect::<Vec<_>>(), 0)?;
            let loss = grasp_loss(&maps, &gt)?;
            let v = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !v.is_finite() {
                let mut h = Sha256::new();
                for b in &batch {
                    h.update(b.id.as_bytes());
                    h.update(b"\n");
                }
                return Err(ModelError::NonFinite {
                    step,
                    fingerprint: format!("{:x}", h.finalize())[..16].to_string(),
                });
            }
            let lr = cosine_lr(cfg.lr, step, total);
            opt.set_learning_rate(lr);
            opt.step(&(loss * cfg.lambda_grasp)?.backward()?)?;
            let rec = StepRecord {
                step,
                epoch,
                phase: 2,
                source: "grasp".into(),
                l_text: 0.0,
                l_grasp: Some(v),
                total: cfg.lambda_grasp * v,
                lr,
                text_grad_norm: None,
            };
            if let Some((f, p)) = metrics.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(|e| ModelError::io(p.as_path(), e))?;
            }
            observer(&rec);
            records.push(rec);
            step += 1;
        }
        if let Some(dir) = out {
            model.save(&dir.join(format!("epoch-{epoch}")))?;
        }
        let recent = &records[records.len() - per_epoch.min(records.len())..];
        log::info!(
            "{} epoch {epoch}: mean l_grasp {:.4}",
            model.kind().name(),
            recent.iter().map(|r| r.l_grasp.unwrap_or(0.0)).sum::<f64>() / recent.len().max(1) as f64
        );
    }
    if let Some(dir) = out {
        model.save(&dir.join("model"))?;
    }
    Ok(records)
}

/// Axis-aligned box `[x0, y0, x1, y1]` in image pixels.
pub type BBox = [f64; 4];

/// Turns an instruction and image into a textual box description.
pub trait Grounder {
    /// `hint` is the annotated target box when the caller has one.
    fn ground(&self, image: &RgbImage, prompt: &str, hint: Option<BBox>) -> Result<String>;
}

/// Replies with the annotated target box (an upper bound for grounding).
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleGrounder;

impl Grounder for OracleGrounder {
    fn ground(&self, _image: &RgbImage, _prompt: &str, hint: Option<BBox>) -> Result<String> {
        let b = hint.ok_or_else(|| ModelError::Grounding("oracle grounder needs the target box".into()))?;
        Ok(format!("{:.1},{:.1},{:.1},{:.1}", b[0], b[1], b[2], b[3]))
    }
}

/// Replays fixed replies in order, repeating the last one.
#[derive(Debug)]
pub struct StubGrounder {
    replies: Vec<String>,
    calls: std::sync::atomic::AtomicUsize,
}

impl StubGrounder {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        StubGrounder {
            replies: replies.into_iter().map(Into::into).collect(),
            calls: Default::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl Grounder for StubGrounder {
    fn ground(&self, _image: &RgbImage, _prompt: &str, _hint: Option<BBox>) -> Result<String> {
        let i = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.replies
            .get(i.min(self.replies.len().saturating_sub(1)))
            .cloned()
            .ok_or_else(|| ModelError::Grounding("stub grounder has no replies".into()))
    }
}

/// Vision-language chat endpoint (OpenAI-compatible) asked for a box.
#[derive(Debug, Clone)]
pub struct HttpGrounder {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
}

impl HttpGrounder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpGrounder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(graspreason_core::dataset::instructions::API_KEY_ENV).ok(),
        }
    }
}

impl Grounder for HttpGrounder {
    fn ground(&self, image: &RgbImage, prompt: &str, _hint: Option<BBox>) -> Result<String> {
        let mut png = Vec::new();
        image
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| ModelError::Grounding(e.to_string()))?;
        let url = format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(&png));
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0.0,
            "messages": [{"role": "user", "content": [
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": url}},
            ]}],
        });
        let mut req = ureq::post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| ModelError::Grounding(e.to_string()))?;
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| ModelError::Grounding(e.to_string()))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ModelError::Grounding("response has no message content".into()))?;
        log::info!("grounder reply: {text}");
        Ok(text.to_string())
    }
}

pub const DEFAULT_GROUNDING_PROMPT: &str = "Find the object the user needs for this request: \"{instruction}\". \
The image is {width}x{height} pixels. Answer with its bounding box only, as x0,y0,x1,y1 in pixels.";

pub const FORMAT_REMINDER: &str = "Reply with exactly four comma-separated numbers x0,y0,x1,y1 and nothing else.";

/// Parses a reply that is exactly `x0,y0,x1,y1` (whitespace allowed).
pub fn parse_box(text: &str) -> Result<BBox> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        let n = r"\s*(-?\d+(?:\.\d+)?)\s*";
        Regex::new(&format!("^{n},{n},{n},{n}$")).expect("valid pattern")
    });
    let c = re
        .captures(text.trim())
        .ok_or_else(|| ModelError::Grounding(format!("no x0,y0,x1,y1 box in {text:?}")))?;
    let v: Vec<f64> = (1..=4).map(|i| c[i].parse().expect("regex matched a number")).collect();
    if !(v[2] > v[0] && v[3] > v[1]) {
        return Err(ModelError::Grounding(format!("degenerate box {v:?}")));
    }
    Ok([v[0], v[1], v[2], v[3]])
}

/// Clips a box to the image, warning when anything was cut.
pub fn clip_box(b: BBox, width: u32, height: u32) -> Result<BBox> {
    let c = [
        b[0].clamp(0.0, width as f64),
        b[1].clamp(0.0, height as f64),
        b[2].clamp(0.0, width as f64),
        b[3].clamp(0.0, height as f64),
    ];
    if c != b {
        log::warn!("box {b:?} exceeds the {width}x{height} image; clipped to {c:?}");
    }
    if !(c[2] > c[0] && c[3] > c[1]) {
        return Err(ModelError::Grounding(format!("box {b:?} lies outside the image")));
    }
    Ok(c)
}

/// Square pixel window around a box, clipped to the image: `(x0, y0, side)`.
/// Square windows keep the resize to the detector isotropic.
pub fn crop_window(b: BBox, width: u32, height: u32) -> (u32, u32, u32) {
    let side = ((b[2] - b[0]).max(b[3] - b[1]).ceil() as u32).clamp(1, width.min(height));
    let cx = 0.5 * (b[0] + b[2]);
    let cy = 0.5 * (b[1] + b[3]);
    let x0 = (cx - side as f64 / 2.0).round().clamp(0.0, (width - side) as f64) as u32;
    let y0 = (cy - side as f64 / 2.0).round().clamp(0.0, (height - side) as f64) as u32;
    (x0, y0, side)
}

/// Runs on an image crop and returns poses in crop pixels, best first.
pub trait Detector {
    fn detect(&self, crop: &RgbImage, k: usize) -> Result<Vec<GraspPose<f64>>>;
}

impl Detector for GraspOnlyModel {
    fn detect(&self, crop: &RgbImage, k: usize) -> Result<Vec<GraspPose<f64>>> {
        self.detect_image(crop, &[], k)
    }
}

/// Decodes rasterised ground truth for one crop; a perfect detector.
#[derive(Debug, Clone)]
pub struct GtMapDetector {
    rects: Vec<GraspRect<f64>>,
    width_max: f64,
    peak_distance: f64,
}

impl GtMapDetector {
    /// `rects` in full-image pixels; `window` from [`crop_window`].
    /// Rectangles that do not fit inside the window are dropped.
    pub fn for_window(rects: &[GraspRect<f64>], window: (u32, u32, u32), width_max: f64, peak_distance: f64) -> Result<Self> {
        let (x0, y0, side) = window;
        let mut shifted = Vec::new();
        for r in rects {
            let c = r.corners().map(|p| graspreason_core::geometry::Point2::new(p.x - x0 as f64, p.y - y0 as f64));
            let r = GraspRect::from_corners(c)?;
            let (a, b, c, d) = r.bounds();
            let hi = side as f64 - 0.5;
            if a >= -0.5 && b >= -0.5 && c <= hi && d <= hi {
                shifted.push(r);
            }
        }
        Ok(GtMapDetector {
            rects: shifted,
            width_max,
            peak_distance,
        })
    }
}

impl Detector for GtMapDetector {
    fn detect(&self, crop: &RgbImage, k: usize) -> Result<Vec<GraspPose<f64>>> {
        let (w, h) = crop.dimensions();
        let maps = graspreason_core::geometry::rasterize_gt_maps::<f64>(&self.rects, (h as usize, w as usize), self.width_max, graspreason_core::geometry::DEFAULT_CENTER_FRACTION)?;
        Ok(graspreason_core::geometry::decode_grasps(&maps, self.width_max, k, self.peak_distance)?)
    }
}

/// Grounder proposes a box, detector runs on the crop, poses map back.
pub struct ModularPipeline<G, D> {
    pub grounder: G,
    pub detector: D,
    pub prompt_template: String,
}

impl<G: Grounder, D: Detector> ModularPipeline<G, D> {
    pub fn new(grounder: G, detector: D) -> Self {
        ModularPipeline {
            grounder,
            detector,
            prompt_template: DEFAULT_GROUNDING_PROMPT.to_string(),
        }
    }

    pub fn prompt(&self, instruction: &str, width: u32, height: u32) -> String {
        self.prompt_template
            .replace("{instruction}", instruction)
            .replace("{width}", &width.to_string())
            .replace("{height}", &height.to_string())
    }

    /// Box from the grounder, asking once more with a format reminder when the
    /// first reply does not parse.
    pub fn ground(&self, image: &RgbImage, instruction: &str, hint: Option<BBox>) -> Result<(BBox, String)> {
        let (w, h) = image.dimensions();
        let prompt = self.prompt(instruction, w, h);
        let first = self.grounder.ground(image, &prompt, hint)?;
        let (reply, parsed) = match parse_box(&first) {
            Ok(b) => (first, b),
            Err(_) => {
                let second = self.grounder.ground(image, &format!("{prompt}\n{FORMAT_REMINDER}"), hint)?;
                let b = parse_box(&second)?;
                (second, b)
            }
        };
        Ok((clip_box(parsed, w, h)?, reply))
    }

    /// Top-`k` poses in full-image pixels; all lie inside the grounded box.
    pub fn run(&self, image: &RgbImage, instruction: &str, hint: Option<BBox>, k: usize) -> Result<(Vec<GraspPose<f64>>, String)> {
        let (b, reply) = self.ground(image, instruction, hint)?;
        Ok((self.detect_in_box(image, b, k)?, reply))
    }

    pub fn detect_in_box(&self, image: &RgbImage, b: BBox, k: usize) -> Result<Vec<GraspPose<f64>>> {
        let (w, h) = image.dimensions();
        let (x0, y0, side) = crop_window(b, w, h);
        let crop = image::imageops::crop_imm(image, x0, y0, side, side).to_image();
        // ask for extra candidates: some fall outside the box and are dropped
        let poses = self.detector.detect(&crop, k * 4)?;
        Ok(poses
            .into_iter()
            .map(|p| p.affine(1.0, 1.0, x0 as f64, y0 as f64))
            .filter(|p| p.x() >= b[0] && p.x() <= b[2] && p.y() >= b[1] && p.y() <= b[3])
            .take(k)
            .collect())
    }
}

/// Model-resolution input tensor back to an 8-bit image.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(ModelError::Shape(format!("expected a (3, H, W) image, got {:?}", t.dims())));
    }
    let v: Vec<f32> = t.to_dtype(DType::F32)?.permute((1, 2, 0))?.flatten_all()?.to_vec1()?;
    let raw = v.iter().map(|x| ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8).collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions"))
}

impl<G: Grounder, D: Detector> GraspPredictor for ModularPipeline<G, D> {
    fn name(&self) -> &str {
        "modular"
    }

    fn predict(&self, scene: &SceneInput, instruction: &str, hint: Option<BBox>, k: usize) -> Result<Prediction> {
        let image = tensor_to_rgb(&scene.rgb)?;
        let (sx, sy) = scene.scale;
        let hint = hint.map(|b| [b[0] * sx, b[1] * sy, b[2] * sx, b[3] * sy]);
        let (poses, reply) = self.run(&image, instruction, hint, k)?;
        Ok(Prediction {
            response_text: Some(reply),
            poses: poses.into_iter().map(|p| crate::model::unscale_pose(p, scene.scale)).collect(),
            ..Prediction::default()
        })
    }
}

/// Default jaw ratio used when turning detector poses into rectangles.
pub const JAW_RATIO: f64 = DEFAULT_JAW_RATIO;
