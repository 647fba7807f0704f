//! Multimodal causal language backbone: the interface downstream code relies
//! on and a small pre-LN transformer implementing it.

use candle_core::{DType, Device, Tensor, Var};
use rand::RngCore;

use crate::error::{ModelError, Result};
use crate::nn::{softmax_last, LayerNorm, Linear};
use crate::params::{ParamGroup, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub image_size: usize,
    pub vision_patch: usize,
    pub max_seq: usize,
    pub adapter_rank: usize,
    pub adapter_alpha: f64,
}

impl BackboneConfig {
    pub fn new(vocab_size: usize) -> Self {
        BackboneConfig {
            vocab_size,
            hidden_dim: 64,
            layers: 2,
            heads: 4,
            mlp_ratio: 4,
            image_size: 64,
            vision_patch: 16,
            max_seq: 96,
            adapter_rank: 64,
            adapter_alpha: 64.0,
        }
    }

    pub fn vision_tokens(&self) -> usize {
        (self.image_size / self.vision_patch).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.vision_patch * self.vision_patch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return bad(format!("hidden_dim {} not divisible by heads {}", self.hidden_dim, self.heads));
        }
        if self.adapter_rank == 0 || self.adapter_rank > self.hidden_dim {
            return bad(format!("adapter_rank {} must lie in 1..={}", self.adapter_rank, self.hidden_dim));
        }
        if self.vision_patch == 0 || self.image_size % self.vision_patch != 0 {
            return bad(format!("image_size {} not divisible by vision_patch {}", self.image_size, self.vision_patch));
        }
        if self.vision_tokens() >= self.max_seq {
            return bad("max_seq leaves no room for text".into());
        }
        if self.vocab_size < crate::vocab::SPECIALS.len() {
            return bad("vocabulary smaller than the special tokens".into());
        }
        Ok(())
    }

    /// `(in, out)` of every linear map that receives an adapter.
    pub fn linear_shapes(&self) -> Vec<(usize, usize)> {
        let h = self.hidden_dim;
        let m = h * self.mlp_ratio;
        let mut v = vec![(self.patch_dim(), h)];
        for _ in 0..self.layers {
            v.extend([(h, 3 * h), (h, h), (h, m), (m, h)]);
        }
        v.push((h, self.vocab_size));
        v
    }

    /// Parameters of the base model (embeddings, norms, linear maps).
    pub fn base_param_count(&self) -> usize {
        let h = self.hidden_dim;
        let linears: usize = self.linear_shapes().iter().map(|(i, o)| i * o + o).sum::<usize>() - self.vocab_size;
        let norms = (4 * self.layers + 2) * h;
        self.vocab_size * h + self.max_seq * h + linears + norms
    }

    pub fn adapter_param_count(&self) -> usize {
        self.linear_shapes().iter().map(|(i, o)| self.adapter_rank * (i + o)).sum()
    }
}

/// What the rest of the system needs from a multimodal language model.
pub trait Backbone: Send + Sync {
    fn config(&self) -> &BackboneConfig;
    /// `(B, T)` token ids to `(B, T, H)`.
    fn embed_tokens(&self, ids: &Tensor) -> Result<Tensor>;
    /// `(B, 3, S, S)` images in `[-1, 1]` to `(B, vision_tokens, H)`.
    fn embed_image(&self, images: &Tensor) -> Result<Tensor>;
    /// Last-layer hidden states `(B, L, H)` for an embedding sequence.
    fn hidden_states(&self, embeddings: &Tensor) -> Result<Tensor>;
    /// Vocabulary logits `(B, L, V)`.
    fn logits(&self, hidden: &Tensor) -> Result<Tensor>;
    fn apply_adapters(&mut self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()>;
    fn adapters_applied(&self) -> bool;
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct ToyTransformer {
    cfg: BackboneConfig,
    tok_emb: Var,
    pos_emb: Var,
    patch: Linear,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    lm_head: Linear,
    adapters: bool,
}

impl ToyTransformer {
    pub fn new(cfg: BackboneConfig, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        let g = ParamGroup::Backbone;
        let h = cfg.hidden_dim;
        let tok_emb = store.normal(rng, "lm.tok_emb", &[cfg.vocab_size, h], 1.0, g)?;
        let pos_emb = store.normal(rng, "lm.pos_emb", &[cfg.max_seq, h], 0.1, g)?;
        let patch = Linear::new(store, rng, "lm.patch", cfg.patch_dim(), h, true, g)?;
        let mut blocks = Vec::new();
        for i in 0..cfg.layers {
            let p = format!("lm.block{i}");
            blocks.push(Block {
                ln1: LayerNorm::new(store, &format!("{p}.ln1"), h, g)?,
                qkv: Linear::new(store, rng, &format!("{p}.qkv"), h, 3 * h, true, g)?,
                out: Linear::new(store, rng, &format!("{p}.out"), h, h, true, g)?,
                ln2: LayerNorm::new(store, &format!("{p}.ln2"), h, g)?,
                fc1: Linear::new(store, rng, &format!("{p}.fc1"), h, h * cfg.mlp_ratio, true, g)?,
                fc2: Linear::new(store, rng, &format!("{p}.fc2"), h * cfg.mlp_ratio, h, true, g)?,
            });
        }
        let ln_f = LayerNorm::new(store, "lm.ln_f", h, g)?;
        let lm_head = Linear::new(store, rng, "lm.head", h, cfg.vocab_size, false, g)?;
        Ok(ToyTransformer {
            cfg,
            tok_emb,
            pos_emb,
            patch,
            blocks,
            ln_f,
            lm_head,
            adapters: false,
        })
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut v = vec![&mut self.patch];
        for b in &mut self.blocks {
            v.extend([&mut b.qkv, &mut b.out, &mut b.fc1, &mut b.fc2]);
        }
        v.push(&mut self.lm_head);
        v
    }

    fn causal_mask(len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
        let data: Vec<f64> = (0..len)
            .flat_map(|i| (0..len).map(move |j| if j > i { -1e9 } else { 0.0 }))
            .collect();
        Ok(Tensor::from_vec(data, (len, len), device)?.to_dtype(dtype)?)
    }

    fn attention(&self, b: &Block, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (bsz, len, h) = x.dims3()?;
        let nh = self.cfg.heads;
        let hd = h / nh;
        let qkv = b.qkv.forward(x)?.reshape((bsz, len, 3, nh, hd))?;
        let split = |i: usize| -> Result<Tensor> { Ok(qkv.narrow(2, i, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?) };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?.broadcast_add(mask)?;
        let att = softmax_last(&scores)?.matmul(&v)?;
        let merged = att.transpose(1, 2)?.contiguous()?.reshape((bsz, len, h))?;
        b.out.forward(&merged)
    }
}

impl Backbone for ToyTransformer {
    fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    fn embed_tokens(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        let flat = ids.flatten_all()?;
        Ok(self.tok_emb.as_tensor().index_select(&flat, 0)?.reshape((b, t, self.cfg.hidden_dim))?)
    }

    fn embed_image(&self, images: &Tensor) -> Result<Tensor> {
        let (b, c, hh, ww) = images.dims4()?;
        let s = self.cfg.image_size;
        if c != 3 || hh != s || ww != s {
            return Err(ModelError::Shape(format!("backbone expects (B, 3, {s}, {s}) images, got {:?}", images.dims())));
        }
        let p = self.cfg.vision_patch;
        let g = s / p;
        let patches = images
            .reshape((b, 3, g, p, g, p))?
            .permute([0, 2, 4, 1, 3, 5])?
            .contiguous()?
            .reshape((b, g * g, self.cfg.patch_dim()))?;
        self.patch.forward(&patches)
    }

    fn hidden_states(&self, embeddings: &Tensor) -> Result<Tensor> {
        let (_, len, _) = embeddings.dims3()?;
        if len > self.cfg.max_seq {
            return Err(ModelError::SequenceTooLong { len, max: self.cfg.max_seq });
        }
        let pos = self.pos_emb.as_tensor().narrow(0, 0, len)?;
        let mut x = embeddings.broadcast_add(&pos)?;
        let mask = Self::causal_mask(len, x.dtype(), x.device())?;
        for b in &self.blocks {
            x = (&x + self.attention(b, &b.ln1.forward(&x)?, &mask)?)?;
            let m = b.fc2.forward(&b.fc1.forward(&b.ln2.forward(&x)?)?.gelu()?)?;
            x = (x + m)?;
        }
        self.ln_f.forward(&x)
    }

    fn logits(&self, hidden: &Tensor) -> Result<Tensor> {
        self.lm_head.forward(hidden)
    }

    fn apply_adapters(&mut self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        if self.adapters {
            return Err(ModelError::State("adapters already applied".into()));
        }
        let (rank, alpha) = (self.cfg.adapter_rank, self.cfg.adapter_alpha);
        for l in self.linears_mut() {
            l.add_adapter(store, rng, rank, alpha)?;
        }
        self.adapters = true;
        Ok(())
    }

    fn adapters_applied(&self) -> bool {
        self.adapters
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_match_built_model() {
        let mut cfg = BackboneConfig::new(40);
        cfg.hidden_dim = 32;
        cfg.adapter_rank = 4;
        cfg.image_size = 32;
        let mut store = ParamStore::new(DType::F32, Device::Cpu);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = ToyTransformer::new(cfg.clone(), &mut store, &mut rng).unwrap();
        assert_eq!(store.count(&[ParamGroup::Backbone]), cfg.base_param_count());
        m.apply_adapters(&mut store, &mut rng).unwrap();
        assert_eq!(store.count(&[ParamGroup::Adapter]), cfg.adapter_param_count());
        assert!(m.apply_adapters(&mut store, &mut rng).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = BackboneConfig::new(40);
        cfg.heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = BackboneConfig::new(40);
        cfg.adapter_rank = 65;
        assert!(cfg.validate().is_err());
    }
}
