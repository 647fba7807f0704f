//! Encoder–decoder grasp network conditioned on the fusion feature, and its loss.

use candle_core::Tensor;
use rand::RngCore;

use crate::error::{ModelError, Result};
use crate::nn::{sigmoid, Conv2d, ConvTranspose2d};
use crate::params::{ParamGroup, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct GraspHeadConfig {
    /// 3 for RGB, 4 with depth appended.
    pub in_channels: usize,
    pub base_channels: usize,
    pub residual_blocks: usize,
    pub fusion_dim: usize,
    pub input_size: usize,
    /// Kernel of the first (stride 1) encoder convolution.
    pub first_kernel: usize,
}

impl GraspHeadConfig {
    /// 480 px input, 32 base channels, 9×9 first kernel.
    pub fn paper(fusion_dim: usize) -> Self {
        GraspHeadConfig {
            in_channels: 3,
            base_channels: 32,
            residual_blocks: 5,
            fusion_dim,
            input_size: 480,
            first_kernel: 9,
        }
    }

    /// 224 px input.
    pub fn desk(fusion_dim: usize) -> Self {
        GraspHeadConfig {
            input_size: 224,
            ..Self::paper(fusion_dim)
        }
    }

    pub const STRIDE: usize = 4;

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % Self::STRIDE != 0 {
            return Err(ModelError::Config(format!(
                "input_size {} must be a positive multiple of the encoder stride {}",
                self.input_size,
                Self::STRIDE
            )));
        }
        if self.first_kernel % 2 == 0 {
            return Err(ModelError::Config("first_kernel must be odd".into()));
        }
        if self.in_channels == 0 || self.base_channels == 0 || self.fusion_dim == 0 {
            return Err(ModelError::Config("channel counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Residual {
    a: Conv2d,
    b: Conv2d,
}

#[derive(Debug, Clone)]
pub struct GraspHead {
    cfg: GraspHeadConfig,
    enc: [Conv2d; 3],
    res: Vec<Residual>,
    merge: Conv2d,
    dec: [ConvTranspose2d; 3],
    out: Conv2d,
}

/// The four output maps, each `(B, H, W)`.
#[derive(Debug, Clone)]
pub struct MapTensors {
    pub quality: Tensor,
    pub cos: Tensor,
    pub sin: Tensor,
    pub width: Tensor,
}

impl MapTensors {
    /// Stacked as `(B, 4, H, W)` in the order Q, C, S, W.
    pub fn stacked(&self) -> Result<Tensor> {
        Ok(Tensor::stack(&[&self.quality, &self.cos, &self.sin, &self.width], 1)?)
    }
}

/// Leaky ReLU; plain ReLU units die easily at this width.
fn act(x: &Tensor) -> candle_core::Result<Tensor> {
    x.maximum(&(x * LEAK)?)
}

const LEAK: f64 = 0.1;

/// Initial logit of the quality and width outputs (sigmoid ≈ 0.05).
pub const OUT_PRIOR_LOGIT: f64 = -3.0;

impl GraspHead {
    pub fn new(cfg: GraspHeadConfig, store: &mut ParamStore, rng: &mut dyn RngCore, prefix: &str) -> Result<Self> {
        cfg.validate()?;
        let g = ParamGroup::GraspHead;
        let c = cfg.base_channels;
        let k = cfg.first_kernel;
        let n = |s: &str| format!("{prefix}.{s}");
        let enc = [
            Conv2d::new(store, rng, &n("enc1"), cfg.in_channels, c, k, 1, k / 2, g)?,
            Conv2d::new(store, rng, &n("enc2"), c, 2 * c, 4, 2, 1, g)?,
            Conv2d::new(store, rng, &n("enc3"), 2 * c, 4 * c, 4, 2, 1, g)?,
        ];
        let mut res = Vec::new();
        for i in 0..cfg.residual_blocks {
            let r = Residual {
                a: Conv2d::new(store, rng, &n(&format!("res{i}.a")), 4 * c, 4 * c, 3, 1, 1, g)?,
                b: Conv2d::new(store, rng, &n(&format!("res{i}.b")), 4 * c, 4 * c, 3, 1, 1, g)?,
            };
            // without normalisation layers each block starts as the identity
            r.b.scale_weights(0.0)?;
            res.push(r);
        }
        let merge = Conv2d::new(store, rng, &n("merge"), 4 * c + cfg.fusion_dim, 4 * c, 1, 1, 0, g)?;
        let dec = [
            ConvTranspose2d::new(store, rng, &n("dec1"), 4 * c, 2 * c, 4, 2, 1, 0, g)?,
            ConvTranspose2d::new(store, rng, &n("dec2"), 2 * c, c, 4, 2, 1, 0, g)?,
            ConvTranspose2d::new(store, rng, &n("dec3"), c, c, k, 1, k / 2, 0, g)?,
        ];
        let out = Conv2d::new(store, rng, &n("out"), c, 4, 3, 1, 1, g)?;
        out.scale_weights(0.1)?;
        // start Q and W near the empty-scene prior so early steps go to the grasp regions
        let bias = store.get(&n("out.bias")).expect("just created");
        bias.set(&Tensor::new(&[OUT_PRIOR_LOGIT, 0.0, 0.0, OUT_PRIOR_LOGIT], store.device())?.to_dtype(store.dtype())?)?;
        Ok(GraspHead { cfg, enc, res, merge, dec, out })
    }

    pub fn config(&self) -> &GraspHeadConfig {
        &self.cfg
    }

    /// Image path up to and including the residual stack: `(B, 4c, S/4, S/4)`.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        let (_, ch, h, w) = images.dims4()?;
        let s = self.cfg.input_size;
        if ch != self.cfg.in_channels || h != s || w != s {
            return Err(ModelError::Shape(format!(
                "grasp head expects (B, {}, {s}, {s}), got {:?}",
                self.cfg.in_channels,
                images.dims()
            )));
        }
        let mut x = images.clone();
        for c in &self.enc {
            x = c.forward(&x)?.apply(&act)?;
        }
        for r in &self.res {
            let y = r.b.forward(&r.a.forward(&x)?.apply(&act)?)?;
            x = (x + y)?.apply(&act)?;
        }
        Ok(x)
    }

    /// Fuses `f` (`(B, fusion_dim)`) into encoded features and decodes the maps.
    pub fn decode(&self, features: &Tensor, f: &Tensor) -> Result<MapTensors> {
        let (b, _, h, w) = features.dims4()?;
        let (fb, fd) = f.dims2()?;
        if fb != b || fd != self.cfg.fusion_dim {
            return Err(ModelError::Shape(format!(
                "fusion feature {:?} does not match batch {b} and fusion_dim {}",
                f.dims(),
                self.cfg.fusion_dim
            )));
        }
        let tiled = f.reshape((b, fd, 1, 1))?.broadcast_as((b, fd, h, w))?;
        let mut x = self.merge.forward(&Tensor::cat(&[features, &tiled], 1)?)?.apply(&act)?;
        for d in &self.dec {
            x = d.forward(&x)?.apply(&act)?;
        }
        let o = self.out.forward(&x)?;
        let ch = |i: usize| o.narrow(1, i, 1).and_then(|t| t.squeeze(1));
        Ok(MapTensors {
            quality: sigmoid(&ch(0)?)?,
            cos: ch(1)?.tanh()?,
            sin: ch(2)?.tanh()?,
            width: sigmoid(&ch(3)?)?,
        })
    }

    pub fn forward(&self, images: &Tensor, f: &Tensor) -> Result<MapTensors> {
        self.decode(&self.encode(images)?, f)
    }
}

/// Sum over the four maps of the mean per-pixel smooth-L1 distance (δ = 1).
/// Both arguments are `(B, 4, H, W)`.
pub fn grasp_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() || pred.rank() != 4 || pred.dim(1)? != 4 {
        return Err(ModelError::Shape(format!("grasp maps {:?} vs {:?}", pred.dims(), gt.dims())));
    }
    let (b, _, h, w) = pred.dims4()?;
    let d = (pred - gt)?.abs()?;
    let q = d.clamp(0.0, 1.0)?;
    let per = ((q.sqr()? * 0.5)? + (d - &q)?)?;
    Ok((per.sum_all()? / (b * h * w) as f64)?)
}
