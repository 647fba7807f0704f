//! The reasoning grasp model (backbone + projection + grasp head), its
//! configuration and checkpoint directory format.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use graspreason_core::geometry::{default_width_max, GraspMaps, GraspPose};
use graspreason_core::decode_grasps;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, BackboneConfig, ToyTransformer};
use crate::config::KeyValues;
use crate::data::SceneInput;
use crate::error::{ModelError, Result};
use crate::head::{GraspHead, GraspHeadConfig, MapTensors};
use crate::params::{ParamGroup, ParamStore};
use crate::vlm::{
    extract_target_span, generate, prompt_text, target_embedding, Projection, SpanExtraction,
};
use crate::vocab::Vocabulary;

pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const WEIGHTS_FILE: &str = "weights.safetensors";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Reasoning,
    ClipStyle,
    Detector,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Reasoning => "reasoning",
            ModelKind::ClipStyle => "clip_style",
            ModelKind::Detector => "detector",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reasoning" => Ok(ModelKind::Reasoning),
            "clip_style" => Ok(ModelKind::ClipStyle),
            "detector" => Ok(ModelKind::Detector),
            _ => Err(ModelError::Config(format!("unknown model kind {s}"))),
        }
    }
}

/// Architecture of every model kind; one flat key/value file on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub image_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub vision_patch: usize,
    pub max_seq: usize,
    pub adapter_rank: usize,
    pub adapter_alpha: f64,
    pub fusion_dim: usize,
    pub base_channels: usize,
    pub residual_blocks: usize,
    pub first_kernel: usize,
    pub use_depth: bool,
    pub width_max: f64,
    /// Embedding width of the clip-style baseline's text encoder.
    pub text_dim: usize,
    pub max_new_tokens: usize,
    /// Minimum distance between decoded peaks, pixels.
    pub peak_distance: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Reasoning,
            image_size: 224,
            hidden_dim: 256,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            vision_patch: 16,
            max_seq: 256,
            adapter_rank: 64,
            adapter_alpha: 64.0,
            fusion_dim: 64,
            base_channels: 32,
            residual_blocks: 5,
            first_kernel: 9,
            use_depth: false,
            width_max: default_width_max(224),
            text_dim: 64,
            max_new_tokens: 24,
            peak_distance: 8.0,
            seed: 0,
        }
    }
}

const MODEL_KEYS: &[&str] = &[
    "kind", "image_size", "hidden_dim", "layers", "heads", "mlp_ratio", "vision_patch", "max_seq",
    "adapter_rank", "adapter_alpha", "fusion_dim", "base_channels", "residual_blocks", "first_kernel",
    "use_depth", "width_max", "text_dim", "max_new_tokens", "peak_distance", "seed",
];

impl ModelConfig {
    pub fn keys() -> &'static [&'static str] {
        MODEL_KEYS
    }

    /// Values from `kv`, defaults elsewhere; `width_max` follows `image_size`
    /// unless given.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = ModelConfig::default();
        let image_size = kv.get_or("image_size", d.image_size)?;
        let cfg = ModelConfig {
            kind: ModelKind::parse(&kv.get_or("kind", d.kind.name().to_string())?)?,
            image_size,
            hidden_dim: kv.get_or("hidden_dim", d.hidden_dim)?,
            layers: kv.get_or("layers", d.layers)?,
            heads: kv.get_or("heads", d.heads)?,
            mlp_ratio: kv.get_or("mlp_ratio", d.mlp_ratio)?,
            vision_patch: kv.get_or("vision_patch", d.vision_patch)?,
            max_seq: kv.get_or("max_seq", d.max_seq)?,
            adapter_rank: kv.get_or("adapter_rank", d.adapter_rank)?,
            adapter_alpha: kv.get_or("adapter_alpha", d.adapter_alpha)?,
            fusion_dim: kv.get_or("fusion_dim", d.fusion_dim)?,
            base_channels: kv.get_or("base_channels", d.base_channels)?,
            residual_blocks: kv.get_or("residual_blocks", d.residual_blocks)?,
            first_kernel: kv.get_or("first_kernel", d.first_kernel)?,
            use_depth: kv.get_or("use_depth", d.use_depth)?,
            width_max: kv.get_or("width_max", default_width_max(image_size))?,
            text_dim: kv.get_or("text_dim", d.text_dim)?,
            max_new_tokens: kv.get_or("max_new_tokens", d.max_new_tokens)?,
            peak_distance: kv.get_or("peak_distance", d.peak_distance)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("kind", self.kind.name());
        kv.set("image_size", self.image_size);
        kv.set("hidden_dim", self.hidden_dim);
        kv.set("layers", self.layers);
        kv.set("heads", self.heads);
        kv.set("mlp_ratio", self.mlp_ratio);
        kv.set("vision_patch", self.vision_patch);
        kv.set("max_seq", self.max_seq);
        kv.set("adapter_rank", self.adapter_rank);
        kv.set("adapter_alpha", self.adapter_alpha);
        kv.set("fusion_dim", self.fusion_dim);
        kv.set("base_channels", self.base_channels);
        kv.set("residual_blocks", self.residual_blocks);
        kv.set("first_kernel", self.first_kernel);
        kv.set("use_depth", self.use_depth);
        kv.set("width_max", self.width_max);
        kv.set("text_dim", self.text_dim);
        kv.set("max_new_tokens", self.max_new_tokens);
        kv.set("peak_distance", self.peak_distance);
        kv.set("seed", self.seed);
        kv
    }

    pub fn backbone(&self, vocab_size: usize) -> BackboneConfig {
        BackboneConfig {
            vocab_size,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            image_size: self.image_size,
            vision_patch: self.vision_patch,
            max_seq: self.max_seq,
            adapter_rank: self.adapter_rank,
            adapter_alpha: self.adapter_alpha,
        }
    }

    pub fn head(&self, fusion_dim: usize) -> GraspHeadConfig {
        GraspHeadConfig {
            in_channels: if self.use_depth { 4 } else { 3 },
            base_channels: self.base_channels,
            residual_blocks: self.residual_blocks,
            fusion_dim,
            input_size: self.image_size,
            first_kernel: self.first_kernel,
        }
    }
}

/// Output of any grasp predictor for one instruction.
#[derive(Debug, Clone, Default)]
pub struct Prediction {
    /// Generated response tokens (reasoning model only).
    pub response_ids: Option<Vec<u32>>,
    /// Human-readable response or grounder reply.
    pub response_text: Option<String>,
    /// Decoded target name when one was identified.
    pub target: Option<String>,
    /// Poses in the stored image's pixel coordinates, best first.
    pub poses: Vec<GraspPose<f64>>,
    /// Why target identification failed, if it did.
    pub failure: Option<String>,
}

/// Anything evaluation can run: the main model or a baseline.
pub trait GraspPredictor {
    fn name(&self) -> &str;
    fn vocab(&self) -> Option<&Vocabulary> {
        None
    }
    fn predict(&self, scene: &SceneInput, instruction: &str, hint_bbox: Option<[f64; 4]>, k: usize) -> Result<Prediction>;
}

/// `(B, 4, S, S)` map tensor of one sample to `f32` arrays.
pub fn maps_to_arrays(maps: &MapTensors, index: usize) -> Result<GraspMaps<f32>> {
    let grab = |t: &Tensor| -> Result<Array2<f32>> {
        let m = t.get(index)?.to_dtype(DType::F32)?;
        let (h, w) = m.dims2()?;
        let v: Vec<f32> = m.flatten_all()?.to_vec1()?;
        Ok(Array2::from_shape_vec((h, w), v).expect("shape matches"))
    };
    Ok(GraspMaps::from_parts(grab(&maps.quality)?, grab(&maps.cos)?, grab(&maps.sin)?, grab(&maps.width)?)?)
}

/// Top-`k` poses from one sample's maps, mapped back to stored-image pixels.
pub fn decode_poses(cfg: &ModelConfig, maps: &MapTensors, index: usize, scale: (f64, f64), k: usize) -> Result<Vec<GraspPose<f64>>> {
    let arrays = maps_to_arrays(maps, index)?.cast::<f64>();
    let poses = decode_grasps(&arrays, cfg.width_max, k, cfg.peak_distance)?;
    Ok(poses.into_iter().map(|p| unscale_pose(p, scale)).collect())
}

/// Model-resolution pose back to stored-image pixels (pixel-centre convention).
pub fn unscale_pose(p: GraspPose<f64>, scale: (f64, f64)) -> GraspPose<f64> {
    if scale == (1.0, 1.0) {
        return p;
    }
    let (ix, iy) = (1.0 / scale.0, 1.0 / scale.1);
    p.affine(ix, iy, 0.5 * ix - 0.5, 0.5 * iy - 0.5)
}

pub struct ReasoningModel {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub backbone: Box<dyn Backbone>,
    pub projection: Projection,
    pub head: GraspHead,
    frozen: bool,
}

impl ReasoningModel {
    /// Fresh weights from `cfg.seed`; adapters not yet applied.
    pub fn new(cfg: ModelConfig, vocab: Vocabulary, dtype: DType, device: Device) -> Result<Self> {
        let mut store = ParamStore::new(dtype, device);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let backbone = ToyTransformer::new(cfg.backbone(vocab.len()), &mut store, &mut rng)?;
        let projection = Projection::new(&mut store, &mut rng, cfg.hidden_dim, cfg.fusion_dim)?;
        let head = GraspHead::new(cfg.head(cfg.fusion_dim), &mut store, &mut rng, "head")?;
        Ok(ReasoningModel {
            cfg,
            vocab,
            store,
            backbone: Box::new(backbone),
            projection,
            head,
            frozen: false,
        })
    }

    pub fn apply_adapters(&mut self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xada9);
        self.backbone.apply_adapters(&mut self.store, &mut rng)
    }

    /// Backbone and adapters stop training; projection and head continue.
    pub fn freeze_adapters(&mut self) -> Result<()> {
        if !self.backbone.adapters_applied() {
            return Err(ModelError::State("freeze_adapters called before apply_adapters".into()));
        }
        self.frozen = true;
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn trainable_groups(&self) -> Vec<ParamGroup> {
        match (self.backbone.adapters_applied(), self.frozen) {
            (false, _) => vec![ParamGroup::Backbone, ParamGroup::Projection, ParamGroup::GraspHead],
            (true, false) => vec![ParamGroup::Adapter, ParamGroup::Projection, ParamGroup::GraspHead],
            (true, true) => vec![ParamGroup::Projection, ParamGroup::GraspHead],
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
        let mut kv = self.cfg.to_kv();
        kv.set("state.adapters", self.backbone.adapters_applied());
        kv.set("state.frozen", self.frozen);
        kv.write(&dir.join(CONFIG_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        self.store.save(&dir.join(WEIGHTS_FILE))
    }

    pub fn load(dir: &Path, dtype: DType, device: Device) -> Result<Self> {
        let kv = KeyValues::read(&dir.join(CONFIG_FILE))?;
        let cfg = ModelConfig::from_kv(&kv)?;
        if cfg.kind != ModelKind::Reasoning {
            return Err(ModelError::Checkpoint(format!("{} holds a {} model", dir.display(), cfg.kind.name())));
        }
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let mut m = ReasoningModel::new(cfg, vocab, dtype, device)?;
        if kv.get_or("state.adapters", false)? {
            m.apply_adapters()?;
        }
        if kv.get_or("state.frozen", false)? {
            m.freeze_adapters()?;
        }
        m.store.load(&dir.join(WEIGHTS_FILE))?;
        Ok(m)
    }

    pub fn prompt_ids(&self, instruction: &str) -> Vec<u32> {
        self.vocab.encode(&prompt_text(instruction))
    }

    /// Fusion feature `(1, fusion_dim)` for a prompt and a response that
    /// contains the span, by re-running the backbone over both.
    pub fn fusion_for(&self, rgb: &Tensor, prompt: &[u32], response: &[u32], span: &SpanExtraction) -> Result<Tensor> {
        let mut seq = prompt.to_vec();
        seq.extend_from_slice(response);
        let ids = Tensor::new(seq.as_slice(), self.device())?.unsqueeze(0)?;
        let emb = crate::vlm::encode_multimodal(self.backbone.as_ref(), &rgb.unsqueeze(0)?, &ids)?;
        let hidden = self.backbone.hidden_states(&emb)?.squeeze(0)?;
        let offset = self.backbone.config().vision_tokens() + prompt.len();
        let h = target_embedding(&hidden, span.span.shifted(offset))?;
        Ok(self.projection.project_feature(&h.unsqueeze(0)?)?)
    }
}

impl GraspPredictor for ReasoningModel {
    fn name(&self) -> &str {
        "reasoning"
    }

    fn vocab(&self) -> Option<&Vocabulary> {
        Some(&self.vocab)
    }

    fn predict(&self, scene: &SceneInput, instruction: &str, _hint: Option<[f64; 4]>, k: usize) -> Result<Prediction> {
        let prompt = self.prompt_ids(instruction);
        let rgb = scene.rgb.unsqueeze(0)?;
        let response = generate(self.backbone.as_ref(), &self.vocab, &rgb, &prompt, self.cfg.max_new_tokens)?;
        let mut pred = Prediction {
            response_text: Some(self.vocab.decode(&response)),
            ..Prediction::default()
        };
        let f = match extract_target_span(&response, self.vocab.spt()) {
            Ok(span) => {
                let s = span.span;
                pred.target = Some(self.vocab.decode(&response[s.start..s.end]));
                self.fusion_for(&scene.rgb, &prompt, &response, &span)?
            }
            Err(e) => {
                log::debug!("target identification failed for '{instruction}': {e}");
                pred.failure = Some(match e {
                    ModelError::EmptyTarget => "empty_target".into(),
                    _ => "missing_target".into(),
                });
                Tensor::zeros((1, self.cfg.fusion_dim), self.dtype(), self.device())?
            }
        };
        pred.response_ids = Some(response);
        let maps = self.head.forward(&scene.head.unsqueeze(0)?, &f)?;
        pred.poses = decode_poses(&self.cfg, &maps, 0, scene.scale, k)?;
        Ok(pred)
    }
}
