//! Pre-norm residual transformer stacks (T5 layout, no biases, ReLU FFN).

use super::attention::{causal_mask, key_padding_mask, AttentionSpec, MultiHeadAttention, RelativeBias};
use super::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub wi: ParamId,
    pub wo: ParamId,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, group: ParamGroup, d_model: usize, d_ff: usize) -> Self {
        let wi = store.add(&format!("{prefix}.wi"), group, &[d_model, d_ff], Init::Normal(1.0 / (d_model as f64).sqrt()), rng);
        let wo = store.add(&format!("{prefix}.wo"), group, &[d_ff, d_model], Init::Normal(1.0 / (d_ff as f64).sqrt()), rng);
        Self { wi, wo }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.matmul(store.get(self.wi))?.relu().matmul(store.get(self.wo))
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm_attn: ParamId,
    pub attn: MultiHeadAttention,
    pub norm_ffn: ParamId,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub norm_self: ParamId,
    pub self_attn: MultiHeadAttention,
    pub norm_cross: ParamId,
    pub cross_attn: MultiHeadAttention,
    pub norm_ffn: ParamId,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub bias: RelativeBias,
    pub final_norm: ParamId,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub bias: RelativeBias,
    pub final_norm: ParamId,
}

pub struct EncoderOutput {
    pub hidden: Tensor,
    /// Per-layer attention weights `[heads, n, n]`.
    pub attentions: Vec<Tensor>,
}

fn gain(store: &mut ParamStore, rng: &mut Rng, name: String, group: ParamGroup, d: usize) -> ParamId {
    store.add(&name, group, &[d], Init::Ones, rng)
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, spec: AttentionSpec, n_layers: usize, d_ff: usize) -> Self {
        let g = ParamGroup::Encoder;
        let d = spec.d_model;
        let bias = RelativeBias::new(store, rng, "encoder.rel_bias", g, spec, true);
        let layers = (0..n_layers)
            .map(|i| {
                let p = format!("encoder.{i}");
                EncoderLayer {
                    norm_attn: gain(store, rng, format!("{p}.norm_attn"), g, d),
                    attn: MultiHeadAttention::new(store, rng, &format!("{p}.attn"), g, spec),
                    norm_ffn: gain(store, rng, format!("{p}.norm_ffn"), g, d),
                    ffn: FeedForward::new(store, rng, &format!("{p}.ffn"), g, d, d_ff),
                }
            })
            .collect();
        let final_norm = gain(store, rng, "encoder.final_norm".into(), g, d);
        Self { layers, bias, final_norm }
    }

    /// Runs the stack over `[n, d_model]` embeddings. `visible` hides keys
    /// (e.g. padding) from every query; hidden positions still produce rows.
    pub fn forward(&self, store: &ParamStore, input: &Tensor, visible: Option<&[bool]>) -> Result<EncoderOutput> {
        let n = *input.shape().first().unwrap_or(&0);
        if n == 0 {
            return Err(Error::Validation("encoder input is empty".into()));
        }
        let mask = match visible {
            Some(v) if v.len() != n => {
                return Err(Error::Shape(format!("mask of length {} for sequence of {n}", v.len())))
            }
            Some(v) => Some(key_padding_mask(n, v)),
            None => None,
        };
        let bias = self.bias.compute(store, n, n)?;
        let mut x = input.clone();
        let mut attentions = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = x.rms_norm(store.get(layer.norm_attn), NORM_EPS)?;
            let (a, w) = layer.attn.forward(store, &h, &h, Some(&bias), mask.as_ref())?;
            x = x.add(&a)?;
            let h = x.rms_norm(store.get(layer.norm_ffn), NORM_EPS)?;
            x = x.add(&layer.ffn.forward(store, &h)?)?;
            attentions.push(w);
        }
        Ok(EncoderOutput {
            hidden: x.rms_norm(store.get(self.final_norm), NORM_EPS)?,
            attentions,
        })
    }
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, spec: AttentionSpec, n_layers: usize, d_ff: usize) -> Self {
        let g = ParamGroup::Decoder;
        let d = spec.d_model;
        let bias = RelativeBias::new(store, rng, "decoder.rel_bias", g, spec, false);
        let layers = (0..n_layers)
            .map(|i| {
                let p = format!("decoder.{i}");
                DecoderLayer {
                    norm_self: gain(store, rng, format!("{p}.norm_self"), g, d),
                    self_attn: MultiHeadAttention::new(store, rng, &format!("{p}.self_attn"), g, spec),
                    norm_cross: gain(store, rng, format!("{p}.norm_cross"), g, d),
                    cross_attn: MultiHeadAttention::new(store, rng, &format!("{p}.cross_attn"), g, spec),
                    norm_ffn: gain(store, rng, format!("{p}.norm_ffn"), g, d),
                    ffn: FeedForward::new(store, rng, &format!("{p}.ffn"), g, d, d_ff),
                }
            })
            .collect();
        let final_norm = gain(store, rng, "decoder.final_norm".into(), g, d);
        Self { layers, bias, final_norm }
    }

    /// Causal decoder over `[t, d_model]` target embeddings attending to
    /// `[s, d_model]` memory.
    pub fn forward(&self, store: &ParamStore, target: &Tensor, memory: &Tensor, memory_visible: Option<&[bool]>) -> Result<Tensor> {
        let t = *target.shape().first().unwrap_or(&0);
        let s = *memory.shape().first().unwrap_or(&0);
        if t == 0 || s == 0 {
            return Err(Error::Validation("decoder target and memory must be non-empty".into()));
        }
        let self_mask = causal_mask(t);
        let cross_mask = match memory_visible {
            Some(v) if v.len() != s => {
                return Err(Error::Shape(format!("memory mask of length {} for memory of {s}", v.len())))
            }
            Some(v) => Some(key_padding_mask(t, v)),
            None => None,
        };
        let bias = self.bias.compute(store, t, t)?;
        let mut x = target.clone();
        for layer in &self.layers {
            let h = x.rms_norm(store.get(layer.norm_self), NORM_EPS)?;
            x = x.add(&layer.self_attn.forward(store, &h, &h, Some(&bias), Some(&self_mask))?.0)?;
            let h = x.rms_norm(store.get(layer.norm_cross), NORM_EPS)?;
            x = x.add(&layer.cross_attn.forward(store, &h, memory, None, cross_mask.as_ref())?.0)?;
            let h = x.rms_norm(store.get(layer.norm_ffn), NORM_EPS)?;
            x = x.add(&layer.ffn.forward(store, &h)?)?;
        }
        x.rms_norm(store.get(self.final_norm), NORM_EPS)
    }
}
