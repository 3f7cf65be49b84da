//! Post-norm transformer block: self-attention, add & normalize,
//! feed-forward, add & normalize.

use rand::Rng as _;

use super::config::{Activation, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Xavier-uniform weight, zero bias.
    pub fn register(params: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Self> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect();
        Ok(Linear {
            weight: params.add(format!("{prefix}.w"), Tensor::matrix(fan_in, fan_out, w)?)?,
            bias: params.add(format!("{prefix}.b"), Tensor::vector(vec![0.0; fan_out]))?,
        })
    }

    pub fn lookup(params: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(Linear {
            weight: lookup(params, &format!("{prefix}.w"))?,
            bias: lookup(params, &format!("{prefix}.b"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

fn lookup(params: &ParamSet, name: &str) -> Result<ParamId> {
    params
        .id(name)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("missing parameter {name}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    fn register(params: &mut ParamSet, prefix: &str, d: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gain: params.add(format!("{prefix}.gain"), Tensor::vector(vec![1.0; d]))?,
            bias: params.add(format!("{prefix}.bias"), Tensor::vector(vec![0.0; d]))?,
        })
    }

    fn lookup(params: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(LayerNormParams {
            gain: lookup(params, &format!("{prefix}.gain"))?,
            bias: lookup(params, &format!("{prefix}.bias"))?,
        })
    }

    fn forward(&self, tape: &mut Tape<'_>, x: Var, eps: f64) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, eps)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl AttentionParams {
    fn register(params: &mut ParamSet, prefix: &str, d: usize, rng: &mut Rng) -> Result<Self> {
        Ok(AttentionParams {
            query: Linear::register(params, &format!("{prefix}.q"), d, d, rng)?,
            key: Linear::register(params, &format!("{prefix}.k"), d, d, rng)?,
            value: Linear::register(params, &format!("{prefix}.v"), d, d, rng)?,
            output: Linear::register(params, &format!("{prefix}.o"), d, d, rng)?,
        })
    }

    fn lookup(params: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(AttentionParams {
            query: Linear::lookup(params, &format!("{prefix}.q"))?,
            key: Linear::lookup(params, &format!("{prefix}.k"))?,
            value: Linear::lookup(params, &format!("{prefix}.v"))?,
            output: Linear::lookup(params, &format!("{prefix}.o"))?,
        })
    }

    /// Scaled dot-product attention of `queries` over `memory`, unmasked.
    pub fn forward(&self, tape: &mut Tape<'_>, queries: Var, memory: Var, heads: usize) -> Result<Var> {
        let d = tape.value(queries).cols();
        let dh = d / heads;
        let q = self.query.forward(tape, queries)?;
        let k = self.key.forward(tape, memory)?;
        let v = self.value.forward(tape, memory)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax_rows(scores);
            outs.push(tape.matmul(weights, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        self.output.forward(tape, joined)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock {
    pub attention: AttentionParams,
    pub norm1: LayerNormParams,
    /// Cross-attention sublayer, only when the decoder attends to encoder outputs.
    pub cross: Option<(AttentionParams, LayerNormParams)>,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm2: LayerNormParams,
}

impl TransformerBlock {
    pub fn register(params: &mut ParamSet, prefix: &str, cfg: &ModelConfig, with_cross: bool, rng: &mut Rng) -> Result<Self> {
        let d = cfg.d;
        let attention = AttentionParams::register(params, &format!("{prefix}.attn"), d, rng)?;
        let norm1 = LayerNormParams::register(params, &format!("{prefix}.ln1"), d)?;
        let cross = if with_cross {
            Some((
                AttentionParams::register(params, &format!("{prefix}.cross"), d, rng)?,
                LayerNormParams::register(params, &format!("{prefix}.ln_cross"), d)?,
            ))
        } else {
            None
        };
        Ok(TransformerBlock {
            attention,
            norm1,
            cross,
            ff_in: Linear::register(params, &format!("{prefix}.ff1"), d, cfg.ff_width, rng)?,
            ff_out: Linear::register(params, &format!("{prefix}.ff2"), cfg.ff_width, d, rng)?,
            norm2: LayerNormParams::register(params, &format!("{prefix}.ln2"), d)?,
        })
    }

    pub fn lookup(params: &ParamSet, prefix: &str, with_cross: bool) -> Result<Self> {
        Ok(TransformerBlock {
            attention: AttentionParams::lookup(params, &format!("{prefix}.attn"))?,
            norm1: LayerNormParams::lookup(params, &format!("{prefix}.ln1"))?,
            cross: if with_cross {
                Some((
                    AttentionParams::lookup(params, &format!("{prefix}.cross"))?,
                    LayerNormParams::lookup(params, &format!("{prefix}.ln_cross"))?,
                ))
            } else {
                None
            },
            ff_in: Linear::lookup(params, &format!("{prefix}.ff1"))?,
            ff_out: Linear::lookup(params, &format!("{prefix}.ff2"))?,
            norm2: LayerNormParams::lookup(params, &format!("{prefix}.ln2"))?,
        })
    }

    /// `y = LN(x + MHSA(x))`, optionally `y = LN(y + MHA(y, memory))`,
    /// then `LN(y + FFN(y))`. Output shape equals input shape.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        memory: Option<Var>,
        cfg: &ModelConfig,
        mut dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        if tape.value(x).cols() != cfg.d {
            return Err(Error::shape("transformer_block", tape.shape(x), &[cfg.d]));
        }
        let mut drop = |tape: &mut Tape<'_>, v: Var| match dropout.as_deref_mut() {
            Some(rng) if cfg.dropout > 0.0 => tape.dropout(v, cfg.dropout, rng),
            _ => v,
        };
        let attn = self.attention.forward(tape, x, x, cfg.heads)?;
        let attn = drop(tape, attn);
        let res = tape.add(x, attn)?;
        let mut y = self.norm1.forward(tape, res, cfg.layer_norm_eps)?;
        if let (Some((cross, norm)), Some(mem)) = (&self.cross, memory) {
            let c = cross.forward(tape, y, mem, cfg.heads)?;
            let c = drop(tape, c);
            let res = tape.add(y, c)?;
            y = norm.forward(tape, res, cfg.layer_norm_eps)?;
        }
        let h = self.ff_in.forward(tape, y)?;
        let h = match cfg.activation {
            Activation::Gelu => tape.gelu(h),
            Activation::Relu => tape.relu(h),
        };
        let f = self.ff_out.forward(tape, h)?;
        let f = drop(tape, f);
        let res = tape.add(y, f)?;
        self.norm2.forward(tape, res, cfg.layer_norm_eps)
    }
}
