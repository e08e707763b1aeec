//! Weight-shared ViT encoder with frozen base weights and trainable LoRA and
//! adapter insertions.
//!
//! Tensor names follow `backbone.<part>`:
//!
//! ```text
//! backbone.patch_embed.{weight,bias}
//! backbone.block<i>.norm1.{weight,bias}
//! backbone.block<i>.attn.{q,k,v,proj}.{weight,bias}
//! backbone.block<i>.attn.{q,v}.lora_{a,b}        (when lora_rank > 0)
//! backbone.block<i>.norm2.{weight,bias}
//! backbone.block<i>.mlp.{fc1,fc2}.{weight,bias}
//! backbone.block<i>.adapter.{down,up}.{weight,bias} (when adapter_dim > 0)
//! backbone.norm.{weight,bias}
//! ```
//!
//! Base weights and adaptation weights are drawn from separate random
//! streams, so the base of a model does not depend on its LoRA rank or
//! adapter width.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tripath_autograd::{init, Buffer, Module, Param, Var};

use crate::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::nn::{from_tokens, multi_head_attention, sincos_2d, to_tokens, Conv2d, LayerNorm, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Blocks whose outputs become C2, C3, C4.
    pub tap_layers: [usize; 3],
    pub lora_rank: usize,
    pub adapter_dim: usize,
    pub freeze_base: bool,
    pub mlp_ratio: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            embed_dim: 64,
            depth: 6,
            heads: 4,
            tap_layers: default_taps(6),
            lora_rank: 4,
            adapter_dim: 16,
            freeze_base: true,
            mlp_ratio: 4,
        }
    }
}

/// Evenly spaced thirds of the depth: `L = 6` gives `(1, 3, 5)`.
pub fn default_taps(depth: usize) -> [usize; 3] {
    [0, 1, 2].map(|i| ((i + 1) * depth / 3).max(1) - 1)
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.patch_size == 0 || self.depth == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return bad("patch_size, depth, heads and mlp_ratio must be positive".into());
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(4) || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of 4 and of heads {}",
                self.embed_dim, self.heads
            ));
        }
        let t = self.tap_layers;
        if !(t[0] < t[1] && t[1] < t[2] && t[2] < self.depth) {
            return bad(format!("tap_layers {t:?} must be strictly increasing and below depth {}", self.depth));
        }
        if self.lora_rank >= self.embed_dim || self.adapter_dim >= self.embed_dim {
            return bad(format!(
                "lora_rank {} and adapter_dim {} must be below embed_dim {}",
                self.lora_rank, self.adapter_dim, self.embed_dim
            ));
        }
        Ok(())
    }
}

/// Encoder outputs for one temporal branch, each `[B, d, h, w]`.
#[derive(Debug, Clone)]
pub struct FeatureBundle {
    pub s: Var,
    pub c2: Var,
    pub c3: Var,
    pub c4: Var,
}

impl FeatureBundle {
    /// Rows `start..start+len` of every map.
    pub fn narrow(&self, start: usize, len: usize) -> Self {
        Self {
            s: self.s.narrow(0, start, len),
            c2: self.c2.narrow(0, start, len),
            c3: self.c3.narrow(0, start, len),
            c4: self.c4.narrow(0, start, len),
        }
    }

    pub fn maps(&self) -> [&Var; 4] {
        [&self.s, &self.c2, &self.c3, &self.c4]
    }
}

/// Low-rank update `B A x`, with `B` zero at construction.
#[derive(Debug, Clone)]
pub struct Lora {
    pub a: Param,
    pub b: Param,
}

impl Lora {
    fn new(name: &str, dim: usize, rank: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            a: Param::new(format!("{name}.lora_a"), init::fan_in_uniform(&[rank, dim], dim, rng), true),
            b: Param::new(format!("{name}.lora_b"), init::zeros(&[dim, rank]), true),
        }
    }

    fn forward(&self, x: &Var) -> Var {
        x.linear(&self.a.var(), None).linear(&self.b.var(), None)
    }
}

/// Residual bottleneck `x + up(GELU(down(x)))` with `up` zero at construction.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub down: Linear,
    pub up: Linear,
}

impl Adapter {
    fn new(name: &str, dim: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let down = Linear::new(&format!("{name}.down"), dim, width, true, true, rng);
        let mut up = Linear::new(&format!("{name}.up"), width, dim, true, true, rng);
        up.weight.value_mut().fill(0.0);
        up.bias.as_mut().unwrap().value_mut().fill(0.0);
        Self { down, up }
    }

    fn forward(&self, x: &Var) -> Var {
        x.add(&self.up.forward(&self.down.forward(x).gelu()))
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub lora_q: Option<Lora>,
    pub lora_v: Option<Lora>,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub adapter: Option<Adapter>,
    heads: usize,
}

impl Block {
    fn new(index: usize, cfg: &BackboneConfig, base: &mut ChaCha8Rng, adapt: &mut ChaCha8Rng) -> Self {
        let p = format!("backbone.block{index}");
        let d = cfg.embed_dim;
        let t = !cfg.freeze_base;
        let lin = |part: &str, fin: usize, fout: usize, rng: &mut ChaCha8Rng| {
            Linear::new(&format!("{p}.{part}"), fin, fout, true, t, rng)
        };
        let q = lin("attn.q", d, d, base);
        let k = lin("attn.k", d, d, base);
        let v = lin("attn.v", d, d, base);
        let proj = lin("attn.proj", d, d, base);
        let fc1 = lin("mlp.fc1", d, d * cfg.mlp_ratio, base);
        let fc2 = lin("mlp.fc2", d * cfg.mlp_ratio, d, base);
        let r = cfg.lora_rank;
        Self {
            norm1: LayerNorm::new(&format!("{p}.norm1"), d, t),
            q,
            k,
            v,
            proj,
            lora_q: (r > 0).then(|| Lora::new(&format!("{p}.attn.q"), d, r, adapt)),
            lora_v: (r > 0).then(|| Lora::new(&format!("{p}.attn.v"), d, r, adapt)),
            norm2: LayerNorm::new(&format!("{p}.norm2"), d, t),
            fc1,
            fc2,
            adapter: (cfg.adapter_dim > 0).then(|| Adapter::new(&format!("{p}.adapter"), d, cfg.adapter_dim, adapt)),
            heads: cfg.heads,
        }
    }

    fn forward(&self, x: &Var) -> Var {
        let h = self.norm1.forward(x);
        let mut q = self.q.forward(&h);
        if let Some(l) = &self.lora_q {
            q = q.add(&l.forward(&h));
        }
        let k = self.k.forward(&h);
        let mut v = self.v.forward(&h);
        if let Some(l) = &self.lora_v {
            v = v.add(&l.forward(&h));
        }
        let (attn, _) = multi_head_attention(&q, &k, &v, self.heads);
        let x = x.add(&self.proj.forward(&attn));
        let m = self.fc2.forward(&self.fc1.forward(&self.norm2.forward(&x)).gelu());
        let x = x.add(&m);
        match &self.adapter {
            Some(a) => a.forward(&x),
            None => x,
        }
    }

    fn base_params(&self) -> Vec<&Param> {
        let mut v = self.norm1.params();
        for l in [&self.q, &self.k, &self.v, &self.proj] {
            v.extend(l.params());
        }
        v.extend(self.norm2.params());
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v
    }

    fn base_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.norm1.params_mut();
        for l in [&mut self.q, &mut self.k, &mut self.v, &mut self.proj] {
            v.extend(l.params_mut());
        }
        v.extend(self.norm2.params_mut());
        v.extend(self.fc1.params_mut());
        v.extend(self.fc2.params_mut());
        v
    }

    fn adaptation_params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for l in [&self.lora_q, &self.lora_v].into_iter().flatten() {
            v.extend([&l.a, &l.b]);
        }
        if let Some(a) = &self.adapter {
            v.extend(a.down.params());
            v.extend(a.up.params());
        }
        v
    }

    fn all_params_mut(&mut self) -> Vec<&mut Param> {
        let Self { norm1, q, k, v: val, proj, lora_q, lora_v, norm2, fc1, fc2, adapter, .. } = self;
        let mut v = norm1.params_mut();
        for l in [q, k, val, proj] {
            v.extend(l.params_mut());
        }
        v.extend(norm2.params_mut());
        v.extend(fc1.params_mut());
        v.extend(fc2.params_mut());
        for l in [lora_q, lora_v].into_iter().flatten() {
            v.extend([&mut l.a, &mut l.b]);
        }
        if let Some(a) = adapter {
            v.extend(a.down.params_mut());
            v.extend(a.up.params_mut());
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub patch_embed: Conv2d,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

impl Backbone {
    pub fn new(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut base = ChaCha8Rng::seed_from_u64(seed);
        let mut adapt = ChaCha8Rng::seed_from_u64(seed);
        adapt.set_stream(1);
        let t = !config.freeze_base;
        let (p, d) = (config.patch_size, config.embed_dim);
        let patch_embed = Conv2d::new("backbone.patch_embed", 3, d, p, p, 0, true, t, &mut base);
        let blocks = (0..config.depth)
            .map(|i| Block::new(i, config, &mut base, &mut adapt))
            .collect();
        Ok(Self {
            config: config.clone(),
            patch_embed,
            blocks,
            norm: LayerNorm::new("backbone.norm", d, t),
        })
    }

    /// Encode a `[B, 3, H, W]` stack. Each image is processed independently.
    pub fn encode(&self, images: &Var) -> Result<FeatureBundle> {
        let s = images.shape();
        let p = self.config.patch_size;
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("expected [B, 3, H, W], got {s:?}")));
        }
        if !s[2].is_multiple_of(p) || !s[3].is_multiple_of(p) || s[2] == 0 || s[3] == 0 {
            return Err(Error::Shape(format!("image {}x{} is not divisible by patch size {p}", s[2], s[3])));
        }
        let (h, w) = (s[2] / p, s[3] / p);
        let d = self.config.embed_dim;
        let pos = Var::constant(sincos_2d(h, w, d).into_dyn().into_shape_with_order(vec![1, h * w, d]).unwrap());
        let mut x = to_tokens(&self.patch_embed.forward(images)).add(&pos);
        let mut taps = Vec::with_capacity(3);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x);
            if self.config.tap_layers.contains(&i) {
                taps.push(from_tokens(&x, h, w));
            }
        }
        let s = from_tokens(&self.norm.forward(&x), h, w);
        let [c2, c3, c4]: [Var; 3] = taps.try_into().expect("three taps");
        Ok(FeatureBundle { s, c2, c3, c4 })
    }

    /// Every weight that belongs to the pretrained base.
    pub fn base_params(&self) -> Vec<&Param> {
        let mut v = self.patch_embed.params();
        for b in &self.blocks {
            v.extend(b.base_params());
        }
        v.extend(self.norm.params());
        v
    }

    fn base_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.patch_embed.params_mut();
        for b in &mut self.blocks {
            v.extend(b.base_params_mut());
        }
        v.extend(self.norm.params_mut());
        v
    }

    /// LoRA matrices and adapter weights.
    pub fn adaptation_params(&self) -> Vec<&Param> {
        self.blocks.iter().flat_map(Block::adaptation_params).collect()
    }

    /// SHA-256 over the names, shapes and little-endian bytes of every
    /// frozen weight, in name order.
    pub fn frozen_fingerprint(&self) -> String {
        fingerprint(self.params().into_iter().filter(|p| !p.trainable()))
    }

    /// Write the base weights in archive format.
    pub fn save_external_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut ar = TensorArchive::new(serde_json::json!({ "kind": "backbone" }));
        for p in self.base_params() {
            ar.insert(p.name(), p.value().clone());
        }
        ar.save(path)
    }

    /// Replace the base weights from an archive; adaptation weights are kept.
    pub fn load_external_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let ar = TensorArchive::load(path)?;
        self.load_base_from(&ar)
    }

    pub fn load_base_from(&mut self, ar: &TensorArchive) -> Result<()> {
        // validate everything before touching any weight
        for p in self.base_params() {
            let t = ar.tensors.get(p.name()).ok_or_else(|| Error::MissingTensor(p.name().to_string()))?;
            if t.shape() != p.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "`{}`: checkpoint {:?}, model {:?}",
                    p.name(),
                    t.shape(),
                    p.shape()
                )));
            }
        }
        for p in self.base_params_mut() {
            p.set_value(ar.tensors[p.name()].clone());
        }
        Ok(())
    }
}

impl Module for Backbone {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.base_params();
        v.extend(self.adaptation_params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.patch_embed.params_mut();
        for b in &mut self.blocks {
            v.extend(b.all_params_mut());
        }
        v.extend(self.norm.params_mut());
        v
    }

    fn buffers(&self) -> Vec<&Buffer> {
        Vec::new()
    }
}

pub fn fingerprint<'a>(params: impl Iterator<Item = &'a Param>) -> String {
    let mut sorted: Vec<&Param> = params.collect();
    sorted.sort_by(|a, b| a.name().cmp(b.name()));
    let mut h = Sha256::new();
    for p in sorted {
        h.update(p.name().as_bytes());
        for &s in p.shape() {
            h.update((s as u64).to_le_bytes());
        }
        for v in p.value().iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
