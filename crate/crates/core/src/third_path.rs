//! Fine-grained attention path over the summed bi-temporal intermediate
//! features: `Q = C2 + D2`, `K = C3 + D3`, `V = C4 + D4`, `f_Tr = Attention(Q, K, V)`.
//!
//! The sums are flattened to tokens and linearly projected to `d_model`; a
//! 2-D sine-cosine position code is added to the queries and keys. Each block
//! updates the query stream as `x = LN(x + MHA(x, K, V))` with its own
//! per-head projections; the result is projected to `out_channels` and
//! reshaped to the feature grid.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tripath_autograd::{Module, Param, Var};

use crate::backbone::FeatureBundle;
use crate::error::{Error, Result};
use crate::nn::{from_tokens, multi_head_attention, sincos_2d, to_tokens, LayerNorm, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThirdPathConfig {
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub out_channels: usize,
}

impl Default for ThirdPathConfig {
    fn default() -> Self {
        Self { d_model: 64, heads: 4, blocks: 1, out_channels: 64 }
    }
}

impl ThirdPathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.blocks == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig("third path heads, blocks and out_channels must be positive".into()));
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) || !self.d_model.is_multiple_of(4) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} must be a positive multiple of 4 and of heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Cross-attention from the query stream to fixed keys and values.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub norm: LayerNorm,
    pub heads: usize,
}

impl AttentionBlock {
    pub fn new<R: Rng>(name: &str, d: usize, heads: usize, rng: &mut R) -> Self {
        let lin = |part: &str, rng: &mut R| Linear::new(&format!("{name}.{part}"), d, d, true, true, rng);
        Self {
            wq: lin("wq", rng),
            wk: lin("wk", rng),
            wv: lin("wv", rng),
            wo: lin("wo", rng),
            norm: LayerNorm::new(&format!("{name}.norm"), d, true),
            heads,
        }
    }

    /// `W_o MHA(W_q x, W_k k, W_v v)` and the attention weights.
    pub fn attention(&self, x: &Var, k: &Var, v: &Var) -> (Var, Var) {
        let (out, attn) = multi_head_attention(&self.wq.forward(x), &self.wk.forward(k), &self.wv.forward(v), self.heads);
        (self.wo.forward(&out), attn)
    }

    pub fn forward(&self, x: &Var, k: &Var, v: &Var) -> (Var, Var) {
        let (a, attn) = self.attention(x, k, v);
        (self.norm.forward(&x.add(&a)), attn)
    }

    /// Identity projections with zero biases.
    pub fn set_identity(&mut self) {
        for l in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo] {
            l.set_identity();
        }
    }
}

impl Module for AttentionBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for l in [&self.wq, &self.wk, &self.wv, &self.wo] {
            v.extend(l.params());
        }
        v.extend(self.norm.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for l in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo] {
            v.extend(l.params_mut());
        }
        v.extend(self.norm.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct ThirdPath {
    pub config: ThirdPathConfig,
    pub proj_q: Linear,
    pub proj_k: Linear,
    pub proj_v: Linear,
    pub blocks: Vec<AttentionBlock>,
    pub out: Linear,
}

/// Elementwise sums `(C2 + D2, C3 + D3, C4 + D4)` as maps.
pub fn sum_taps(a: &FeatureBundle, b: &FeatureBundle) -> Result<(Var, Var, Var)> {
    let s = a.c2.shape();
    for m in [&a.c3, &a.c4, &b.c2, &b.c3, &b.c4] {
        if m.shape() != s {
            return Err(Error::ShapeMismatch(format!("intermediate maps {s:?} vs {:?}", m.shape())));
        }
    }
    Ok((a.c2.add(&b.c2), a.c3.add(&b.c3), a.c4.add(&b.c4)))
}

impl ThirdPath {
    /// `d` is the width of the incoming intermediate maps.
    pub fn new<R: Rng>(d: usize, config: &ThirdPathConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let m = config.d_model;
        Ok(Self {
            config: config.clone(),
            proj_q: Linear::new("third_path.proj_q", d, m, true, true, rng),
            proj_k: Linear::new("third_path.proj_k", d, m, true, true, rng),
            proj_v: Linear::new("third_path.proj_v", d, m, true, true, rng),
            blocks: (0..config.blocks)
                .map(|i| AttentionBlock::new(&format!("third_path.block{i}"), m, config.heads, rng))
                .collect(),
            out: Linear::new("third_path.out", m, config.out_channels, true, true, rng),
        })
    }

    /// Projected token sequences `[B, h*w, d_model]`; position codes are
    /// added to the queries and keys.
    pub fn form_qkv(&self, a: &FeatureBundle, b: &FeatureBundle) -> Result<(Var, Var, Var)> {
        let (q, k, v) = sum_taps(a, b)?;
        let (h, w) = (q.shape()[2], q.shape()[3]);
        let m = self.config.d_model;
        let pos = Var::constant(sincos_2d(h, w, m).into_dyn().into_shape_with_order(vec![1, h * w, m]).unwrap());
        let q = self.proj_q.forward(&to_tokens(&q)).add(&pos);
        let k = self.proj_k.forward(&to_tokens(&k)).add(&pos);
        let v = self.proj_v.forward(&to_tokens(&v));
        Ok((q, k, v))
    }

    /// Run the blocks on token sequences; returns `[B, out_channels, h, w]`
    /// and every block's attention weights.
    pub fn attend(&self, q: &Var, k: &Var, v: &Var, h: usize, w: usize) -> (Var, Vec<Var>) {
        let mut x = q.clone();
        let mut maps = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, attn) = block.forward(&x, k, v);
            x = y;
            maps.push(attn);
        }
        (from_tokens(&self.out.forward(&x), h, w), maps)
    }

    /// `f_Tr`, resized to `target` when the tap grid differs from it.
    pub fn forward(&self, a: &FeatureBundle, b: &FeatureBundle, target: (usize, usize)) -> Result<Var> {
        let (h, w) = (a.c2.shape()[2], a.c2.shape()[3]);
        let (q, k, v) = self.form_qkv(a, b)?;
        let (f, _) = self.attend(&q, &k, &v, h, w);
        Ok(if (h, w) == target { f } else { f.upsample_bilinear(target.0, target.1) })
    }
}

impl Module for ThirdPath {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for l in [&self.proj_q, &self.proj_k, &self.proj_v] {
            v.extend(l.params());
        }
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.out.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for l in [&mut self.proj_q, &mut self.proj_k, &mut self.proj_v] {
            v.extend(l.params_mut());
        }
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }
}
