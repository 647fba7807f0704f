//! Target identification with `[SPT]` markers, span averaging, the projection
//! to the fusion feature, the prompt template and greedy generation.

use candle_core::{DType, Device, Tensor, D};
use rand::RngCore;

use crate::backbone::Backbone;
use crate::error::{ModelError, Result};
use crate::nn::{log_softmax_last, Linear};
use crate::params::{ParamGroup, ParamStore};
use crate::vocab::Vocabulary;

pub const SYSTEM_LINE: &str = "you are a grasping assistant .";

/// Prompt text placed after the image tokens.
pub fn prompt_text(instruction: &str) -> String {
    format!("<bos> {SYSTEM_LINE} user : {instruction} assistant :")
}

/// Response the model is trained to produce for a grasp target.
pub fn response_text(target: &str) -> String {
    format!("sure , the [SPT] {target} [SPT] . <eos>")
}

/// Token range strictly between an opening and closing `[SPT]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetSpan {
    pub start: usize,
    pub end: usize,
}

impl TargetSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn shifted(self, by: usize) -> Self {
        TargetSpan {
            start: self.start + by,
            end: self.end + by,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanExtraction {
    pub span: TargetSpan,
    /// More `[SPT]` pairs followed the first; they were ignored.
    pub multiple_pairs: bool,
}

/// The span of the first `[SPT] ... [SPT]` pair in `ids`.
pub fn extract_target_span(ids: &[u32], spt: u32) -> Result<SpanExtraction> {
    let marks: Vec<usize> = ids.iter().enumerate().filter(|(_, &t)| t == spt).map(|(i, _)| i).collect();
    if marks.len() < 2 {
        return Err(ModelError::MissingTarget);
    }
    let span = TargetSpan {
        start: marks[0] + 1,
        end: marks[1],
    };
    if span.is_empty() {
        return Err(ModelError::EmptyTarget);
    }
    Ok(SpanExtraction {
        span,
        multiple_pairs: marks.len() >= 4,
    })
}

/// Mean of the rows of `last_layer` (`(L, H)`) inside `span`.
pub fn target_embedding(last_layer: &Tensor, span: TargetSpan) -> Result<Tensor> {
    let (len, _) = last_layer.dims2()?;
    if span.is_empty() || span.end > len {
        return Err(ModelError::SpanOutOfBounds {
            start: span.start,
            end: span.end,
            len,
        });
    }
    Ok(last_layer.narrow(0, span.start, span.len())?.mean(0)?)
}

/// Per-sample span means for a batch `(B, L, H)` in one matrix product, so
/// every sample's average stays differentiable.
pub fn batch_target_embeddings(hidden: &Tensor, spans: &[TargetSpan]) -> Result<Tensor> {
    let (b, len, h) = hidden.dims3()?;
    if spans.len() != b {
        return Err(ModelError::Shape(format!("{} spans for a batch of {b}", spans.len())));
    }
    let mut w = vec![0f64; b * b * len];
    for (i, s) in spans.iter().enumerate() {
        if s.is_empty() || s.end > len {
            return Err(ModelError::SpanOutOfBounds {
                start: s.start,
                end: s.end,
                len,
            });
        }
        for p in s.start..s.end {
            w[i * b * len + i * len + p] = 1.0 / s.len() as f64;
        }
    }
    let w = Tensor::from_vec(w, (b, b * len), hidden.device())?.to_dtype(hidden.dtype())?;
    Ok(w.matmul(&hidden.reshape((b * len, h))?)?)
}

/// Two-layer perceptron from `h_avg` to the fusion feature `f`.
#[derive(Debug, Clone)]
pub struct Projection {
    l1: Linear,
    l2: Linear,
    activation: bool,
}

impl Projection {
    pub fn new(store: &mut ParamStore, rng: &mut dyn RngCore, hidden_dim: usize, fusion_dim: usize) -> Result<Self> {
        Ok(Projection {
            l1: Linear::new(store, rng, "proj.l1", hidden_dim, fusion_dim, true, ParamGroup::Projection)?,
            l2: Linear::new(store, rng, "proj.l2", fusion_dim, fusion_dim, true, ParamGroup::Projection)?,
            activation: true,
        })
    }

    /// Projection from explicit layers; `activation: false` makes it affine.
    pub fn from_layers(l1: Linear, l2: Linear, activation: bool) -> Self {
        Projection { l1, l2, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn fusion_dim(&self) -> usize {
        self.l2.out_dim()
    }

    /// `h_avg` of shape `(H,)` or `(B, H)`.
    pub fn project_feature(&self, h_avg: &Tensor) -> Result<Tensor> {
        let d = *h_avg.dims().last().unwrap_or(&0);
        if d != self.input_dim() {
            return Err(ModelError::Shape(format!("h_avg has {d} entries, projection expects {}", self.input_dim())));
        }
        let mut x = self.l1.forward(h_avg)?;
        if self.activation {
            x = x.gelu()?;
        }
        self.l2.forward(&x)
    }
}

/// Mean cross-entropy over positions with a label; `None` marks masked positions.
pub fn text_loss(logits: &Tensor, labels: &[Option<u32>]) -> Result<Tensor> {
    let (n, _) = logits.dims2()?;
    if n != labels.len() {
        return Err(ModelError::Shape(format!("{n} logit rows for {} labels", labels.len())));
    }
    let rows: Vec<u32> = labels.iter().enumerate().filter(|(_, l)| l.is_some()).map(|(i, _)| i as u32).collect();
    if rows.is_empty() {
        return Err(ModelError::Domain("every position is masked".into()));
    }
    let targets: Vec<u32> = labels.iter().flatten().copied().collect();
    let dev = logits.device();
    let picked = logits.index_select(&Tensor::new(rows.as_slice(), dev)?, 0)?;
    let lp = log_softmax_last(&picked)?;
    let tgt = Tensor::new(targets.as_slice(), dev)?.unsqueeze(1)?;
    Ok(lp.gather(&tgt, 1)?.neg()?.mean_all()?)
}

/// `(B, V + T, H)`: image tokens followed by text token embeddings.
pub fn encode_multimodal(backbone: &dyn Backbone, images: &Tensor, ids: &Tensor) -> Result<Tensor> {
    let vis = backbone.embed_image(images)?;
    let (b, t) = ids.dims2()?;
    let len = backbone.config().vision_tokens() + t;
    if len > backbone.config().max_seq {
        return Err(ModelError::SequenceTooLong { len, max: backbone.config().max_seq });
    }
    if t == 0 {
        return Ok(vis);
    }
    if vis.dim(0)? != b {
        return Err(ModelError::Shape(format!("{} images for {b} token rows", vis.dim(0)?)));
    }
    Ok(Tensor::cat(&[vis, backbone.embed_tokens(ids)?], 1)?)
}

fn ids_tensor(ids: &[u32], device: &Device) -> Result<Tensor> {
    Ok(Tensor::new(ids, device)?.unsqueeze(0)?)
}

/// Greedy decoding; returns the response tokens without the closing EOS.
pub fn generate(backbone: &dyn Backbone, vocab: &Vocabulary, image: &Tensor, prompt: &[u32], max_new: usize) -> Result<Vec<u32>> {
    let device = image.device();
    let vis = backbone.embed_image(image)?;
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        if backbone.config().vision_tokens() + seq.len() >= backbone.config().max_seq {
            break;
        }
        let emb = Tensor::cat(&[vis.clone(), backbone.embed_tokens(&ids_tensor(&seq, device)?)?], 1)?;
        let hidden = backbone.hidden_states(&emb)?;
        let last = hidden.narrow(1, hidden.dim(1)? - 1, 1)?;
        let logits = backbone.logits(&last)?.flatten_all()?.to_dtype(DType::F64)?;
        let next = logits.argmax(D::Minus1)?.to_scalar::<u32>()?;
        if next == vocab.eos() {
            break;
        }
        seq.push(next);
        out.push(next);
    }
    Ok(out)
}
