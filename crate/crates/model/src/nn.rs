//! Layers on top of candle tensors. Everything here works in `f32` and `f64`
//! so gradients can be checked against finite differences.

use candle_core::{Tensor, Var, D};
use rand::Rng;

use crate::error::Result;
use crate::params::{ParamGroup, ParamStore};

/// Logistic function written through `tanh` so it stays finite and
/// differentiable for large inputs.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Var,
    beta: Var,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, group: ParamGroup) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.constant(&format!("{name}.gamma"), &[dim], 1.0, group)?,
            beta: store.constant(&format!("{name}.beta"), &[dim], 0.0, group)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(xn.broadcast_mul(self.gamma.as_tensor())?.broadcast_add(self.beta.as_tensor())?)
    }
}

#[derive(Debug, Clone)]
pub struct Lora {
    pub a: Var,
    pub b: Var,
    pub scale: f64,
}

/// Affine map `y = x Wᵀ + b`, optionally with a low-rank path `scale · x Aᵀ Bᵀ`.
#[derive(Debug, Clone)]
pub struct Linear {
    name: String,
    w: Var,
    b: Option<Var>,
    lora: Option<Lora>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        group: ParamGroup,
    ) -> Result<Self> {
        let bound = (3.0 / in_dim as f64).sqrt();
        let w = store.uniform(rng, &format!("{name}.weight"), &[out_dim, in_dim], bound, group)?;
        let b = if bias {
            Some(store.constant(&format!("{name}.bias"), &[out_dim], 0.0, group)?)
        } else {
            None
        };
        Ok(Linear {
            name: name.to_string(),
            w,
            b,
            lora: None,
        })
    }

    pub fn from_vars(name: &str, w: Var, b: Option<Var>) -> Self {
        Linear {
            name: name.to_string(),
            w,
            b,
            lora: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.dims()[0]
    }

    pub fn has_adapter(&self) -> bool {
        self.lora.is_some()
    }

    /// Adds the low-rank path; its second factor starts at zero so the layer's
    /// output is unchanged.
    pub fn add_adapter<R: Rng + ?Sized>(&mut self, store: &mut ParamStore, rng: &mut R, rank: usize, alpha: f64) -> Result<()> {
        let bound = (1.0 / self.in_dim() as f64).sqrt();
        let a = store.uniform(rng, &format!("{}.lora_a", self.name), &[rank, self.in_dim()], bound, ParamGroup::Adapter)?;
        let b = store.constant(&format!("{}.lora_b", self.name), &[self.out_dim(), rank], 0.0, ParamGroup::Adapter)?;
        self.lora = Some(Lora {
            a,
            b,
            scale: alpha / rank as f64,
        });
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("rank >= 1");
        let x2 = x.reshape(((), in_dim))?;
        let mut y = x2.matmul(&self.w.t()?)?;
        if let Some(b) = &self.b {
            y = y.broadcast_add(b.as_tensor())?;
        }
        if let Some(l) = &self.lora {
            let low = x2.matmul(&l.a.t()?)?.matmul(&l.b.t()?)?;
            y = (y + (low * l.scale)?)?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().expect("rank >= 1") = self.out_dim();
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    w: Var,
    b: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        // He-uniform: every conv here feeds a ReLU or a bounded output
        let bound = (6.0 / (c_in * kernel * kernel) as f64).sqrt();
        Ok(Conv2d {
            w: store.uniform(rng, &format!("{name}.weight"), &[c_out, c_in, kernel, kernel], bound, group)?,
            b: store.constant(&format!("{name}.bias"), &[c_out], 0.0, group)?,
            stride,
            padding,
        })
    }

    /// Multiplies the initial weights by `factor`.
    pub fn scale_weights(&self, factor: f64) -> Result<()> {
        Ok(self.w.set(&(self.w.as_tensor() * factor)?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.w.as_tensor(), self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.b.as_tensor().reshape((1, (), 1, 1))?)?)
    }
}

/// Transposed convolution: `out = (in - 1)·stride - 2·padding + kernel + output_padding`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    w: Var,
    b: Var,
    stride: usize,
    padding: usize,
    output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        // each output pixel sees about c_in·(k/stride)² inputs
        let fan = (c_in * kernel * kernel / (stride * stride)).max(1);
        let bound = (6.0 / fan as f64).sqrt();
        Ok(ConvTranspose2d {
            w: store.uniform(rng, &format!("{name}.weight"), &[c_in, c_out, kernel, kernel], bound, group)?,
            b: store.constant(&format!("{name}.bias"), &[c_out], 0.0, group)?,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.w.as_tensor(), self.padding, self.output_padding, self.stride, 1)?;
        Ok(y.broadcast_add(&self.b.as_tensor().reshape((1, (), 1, 1))?)?)
    }
}
