//! Multi-level hybrid attention decoder.
//!
//! Initial fusion:
//!
//! ```text
//! F_k       = GELU(BN(Conv_k(f_fuse)))          for each kernel size k
//! gate      = sigmoid(BN(Conv_1x1([F_k ...])))
//! X_spatial = f_fuse * gate
//! y         = f_fuse + GELU(BN(Conv_3x3(X_spatial)))
//! ```
//!
//! Final fusion, `out = y + y_channel + y_spatial + y_local`:
//! - `y_channel = y * sigmoid(fc2(ReLU(fc1(GAP(y)))))`, one gate per channel;
//! - `y_spatial = y * sigmoid(Conv_1x1(y))`, one gate per position;
//! - `y_local = DepthwiseConv_3x3(y)`.
//!
//! Each branch carries a learnable per-channel scale, initialized to one, so
//! the branches can be switched off exactly (a sigmoid gate alone never
//! reaches zero).
//!
//! The head upsamples by repeated 2x bilinear resizing, each step followed by
//! a 3x3 convolution and GELU that halves the width, and ends with a 1x1
//! classifier over `N + 1` classes.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tripath_autograd::{init, Buffer, Module, Param, Var};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ConvBnGelu, Linear, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlhaConfig {
    pub kernel_sizes: Vec<usize>,
    /// Channel-gate bottleneck ratio.
    pub reduction: usize,
    /// Narrowest width of the upsampling stages.
    pub head_min_channels: usize,
}

impl Default for MlhaConfig {
    fn default() -> Self {
        Self { kernel_sizes: vec![3, 5, 7], reduction: 4, head_min_channels: 16 }
    }
}

impl MlhaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() {
            return Err(Error::InvalidConfig("at least one kernel size is required".into()));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|k| **k % 2 == 0) {
            return Err(Error::Shape(format!("kernel size {k} is even")));
        }
        if self.reduction == 0 || self.head_min_channels == 0 {
            return Err(Error::InvalidConfig("reduction and head_min_channels must be positive".into()));
        }
        Ok(())
    }
}

fn per_channel(v: &Var) -> Var {
    let c = v.shape()[0];
    v.reshape(&[1, c, 1, 1])
}

#[derive(Debug, Clone)]
pub struct InitialFusion {
    pub branches: Vec<ConvBnGelu>,
    pub gate_conv: Conv2d,
    pub gate_bn: BatchNorm2d,
    pub refine_conv: Conv2d,
    pub refine_bn: BatchNorm2d,
}

impl InitialFusion {
    pub fn new<R: Rng>(channels: usize, kernels: &[usize], rng: &mut R) -> Self {
        let c = channels;
        Self {
            branches: kernels
                .iter()
                .map(|&k| ConvBnGelu::new(&format!("mlha.initial.branch{k}"), c, c, k, rng))
                .collect(),
            gate_conv: Conv2d::same("mlha.initial.gate_conv", kernels.len() * c, c, 1, true, rng),
            gate_bn: BatchNorm2d::new("mlha.initial.gate_bn", c, true),
            refine_conv: Conv2d::same("mlha.initial.refine_conv", c, c, 3, true, rng),
            refine_bn: BatchNorm2d::new("mlha.initial.refine_bn", c, true),
        }
    }

    /// `(y, F_concat, gate, X_spatial)`.
    pub fn forward_parts(&self, f: &Var, phase: Phase) -> (Var, Var, Var, Var) {
        let fk: Vec<Var> = self.branches.iter().map(|b| b.forward(f, phase)).collect();
        let concat = Var::concat(&fk, 1);
        let gate = self.gate_bn.forward(&self.gate_conv.forward(&concat), phase).sigmoid();
        let xs = f.mul(&gate);
        let y = f.add(&self.refine_bn.forward(&self.refine_conv.forward(&xs), phase).gelu());
        (y, concat, gate, xs)
    }

    pub fn forward(&self, f: &Var, phase: Phase) -> Var {
        self.forward_parts(f, phase).0
    }

    /// Zero the refinement convolution and its batch-norm shift, making the
    /// block an exact identity.
    pub fn zero_residual(&mut self) {
        self.refine_conv.zero_();
        self.refine_bn.beta.value_mut().fill(0.0);
    }
}

impl Module for InitialFusion {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.branches.iter().flat_map(|b| b.params()).collect();
        v.extend(self.gate_conv.params());
        v.extend(self.gate_bn.params());
        v.extend(self.refine_conv.params());
        v.extend(self.refine_bn.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.branches.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend(self.gate_conv.params_mut());
        v.extend(self.gate_bn.params_mut());
        v.extend(self.refine_conv.params_mut());
        v.extend(self.refine_bn.params_mut());
        v
    }
    fn buffers(&self) -> Vec<&Buffer> {
        let mut v: Vec<&Buffer> = self.branches.iter().flat_map(|b| b.buffers()).collect();
        v.extend(self.gate_bn.buffers());
        v.extend(self.refine_bn.buffers());
        v
    }
}

#[derive(Debug, Clone)]
pub struct FinalFusion {
    pub se_fc1: Linear,
    pub se_fc2: Linear,
    pub spatial_conv: Conv2d,
    pub local_weight: Param,
    pub local_bias: Param,
    pub scale_channel: Param,
    pub scale_spatial: Param,
    pub scale_local: Param,
}

/// The three final-fusion branches before scaling.
pub struct FinalParts {
    pub channel_gate: Var,
    pub spatial_gate: Var,
    pub y_channel: Var,
    pub y_spatial: Var,
    pub y_local: Var,
}

impl FinalFusion {
    pub fn new<R: Rng>(channels: usize, reduction: usize, rng: &mut R) -> Self {
        let c = channels;
        let hidden = (c / reduction).max(1);
        let p = |name: &str, v| Param::new(format!("mlha.final.{name}"), v, true);
        Self {
            se_fc1: Linear::new("mlha.final.se_fc1", c, hidden, true, true, rng),
            se_fc2: Linear::new("mlha.final.se_fc2", hidden, c, true, true, rng),
            spatial_conv: Conv2d::same("mlha.final.spatial_conv", c, 1, 1, true, rng),
            local_weight: p("local.weight", init::fan_in_uniform(&[c, 1, 3, 3], 9, rng)),
            local_bias: p("local.bias", init::fan_in_uniform(&[c], 9, rng)),
            scale_channel: p("scale_channel", init::ones(&[c])),
            scale_spatial: p("scale_spatial", init::ones(&[c])),
            scale_local: p("scale_local", init::ones(&[c])),
        }
    }

    pub fn parts(&self, y: &Var) -> FinalParts {
        let (b, c) = (y.shape()[0], y.shape()[1]);
        let pooled = y.mean_axis(3, false).mean_axis(2, false);
        let channel_gate = self
            .se_fc2
            .forward(&self.se_fc1.forward(&pooled).relu())
            .sigmoid()
            .reshape(&[b, c, 1, 1]);
        let spatial_gate = self.spatial_conv.forward(y).sigmoid();
        FinalParts {
            y_channel: y.mul(&channel_gate),
            y_spatial: y.mul(&spatial_gate),
            y_local: y.depthwise_conv2d(&self.local_weight.var(), Some(&self.local_bias.var())),
            channel_gate,
            spatial_gate,
        }
    }

    pub fn forward(&self, y: &Var) -> Var {
        let p = self.parts(y);
        y.add(&p.y_channel.mul(&per_channel(&self.scale_channel.var())))
            .add(&p.y_spatial.mul(&per_channel(&self.scale_spatial.var())))
            .add(&p.y_local.mul(&per_channel(&self.scale_local.var())))
    }

    /// Switch every branch off: zero branch scales and the local convolution.
    pub fn zero_branches(&mut self) {
        for p in [&mut self.scale_channel, &mut self.scale_spatial, &mut self.scale_local, &mut self.local_weight, &mut self.local_bias] {
            p.value_mut().fill(0.0);
        }
    }
}

impl Module for FinalFusion {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.se_fc1.params();
        v.extend(self.se_fc2.params());
        v.extend(self.spatial_conv.params());
        v.extend([&self.local_weight, &self.local_bias, &self.scale_channel, &self.scale_spatial, &self.scale_local]);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.se_fc1.params_mut();
        v.extend(self.se_fc2.params_mut());
        v.extend(self.spatial_conv.params_mut());
        v.extend([
            &mut self.local_weight,
            &mut self.local_bias,
            &mut self.scale_channel,
            &mut self.scale_spatial,
            &mut self.scale_local,
        ]);
        v
    }
}

#[derive(Debug, Clone)]
pub struct Mlha {
    pub initial: InitialFusion,
    pub last: FinalFusion,
}

impl Mlha {
    pub fn new<R: Rng>(channels: usize, config: &MlhaConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            initial: InitialFusion::new(channels, &config.kernel_sizes, rng),
            last: FinalFusion::new(channels, config.reduction, rng),
        })
    }

    pub fn forward(&self, f: &Var, phase: Phase) -> Var {
        self.last.forward(&self.initial.forward(f, phase))
    }
}

impl Module for Mlha {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.initial.params();
        v.extend(self.last.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.initial.params_mut();
        v.extend(self.last.params_mut());
        v
    }
    fn buffers(&self) -> Vec<&Buffer> {
        self.initial.buffers()
    }
}

#[derive(Debug, Clone)]
pub struct DecodeHead {
    pub stages: Vec<Conv2d>,
    pub classifier: Conv2d,
    pub factor: usize,
}

impl DecodeHead {
    pub fn new<R: Rng>(channels: usize, num_classes: usize, factor: usize, min_channels: usize, rng: &mut R) -> Result<Self> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::Shape(format!("upsample factor {factor} is not a power of two")));
        }
        let mut stages = Vec::new();
        let mut c = channels;
        for i in 0..factor.trailing_zeros() {
            let next = (c / 2).max(min_channels).min(c);
            stages.push(Conv2d::same(&format!("head.stage{i}"), c, next, 3, true, rng));
            c = next;
        }
        Ok(Self {
            stages,
            classifier: Conv2d::same("head.classifier", c, num_classes + 1, 1, true, rng),
            factor,
        })
    }

    pub fn forward(&self, x: &Var, target: (usize, usize)) -> Result<Var> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        if (h * self.factor, w * self.factor) != target {
            return Err(Error::Shape(format!(
                "grid {h}x{w} times factor {} does not give {}x{}",
                self.factor, target.0, target.1
            )));
        }
        let mut x = x.clone();
        for s in &self.stages {
            let (h, w) = (x.shape()[2], x.shape()[3]);
            x = s.forward(&x.upsample_bilinear(2 * h, 2 * w)).gelu();
        }
        Ok(self.classifier.forward(&x))
    }
}

impl Module for DecodeHead {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.stages.iter().flat_map(|s| s.params()).collect();
        v.extend(self.classifier.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.stages.iter_mut().flat_map(|s| s.params_mut()).collect();
        v.extend(self.classifier.params_mut());
        v
    }
}

/// Fusion block followed by the upsampling head. Without MLHA the fusion
/// block is a single 3x3 conv-BN-GELU.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub mlha: Option<Mlha>,
    pub plain: Option<ConvBnGelu>,
    pub head: DecodeHead,
}

impl Decoder {
    pub fn new<R: Rng>(
        channels: usize,
        num_classes: usize,
        factor: usize,
        use_mlha: bool,
        config: &MlhaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (mlha, plain) = if use_mlha {
            (Some(Mlha::new(channels, config, rng)?), None)
        } else {
            (None, Some(ConvBnGelu::new("decoder.plain", channels, channels, 3, rng)))
        };
        Ok(Self { mlha, plain, head: DecodeHead::new(channels, num_classes, factor, config.head_min_channels, rng)? })
    }

    pub fn fuse(&self, f: &Var, phase: Phase) -> Var {
        match (&self.mlha, &self.plain) {
            (Some(m), _) => m.forward(f, phase),
            (None, Some(p)) => p.forward(f, phase),
            (None, None) => unreachable!("decoder without a fusion block"),
        }
    }

    pub fn forward(&self, f: &Var, target: (usize, usize), phase: Phase) -> Result<Var> {
        self.head.forward(&self.fuse(f, phase), target)
    }
}

impl Module for Decoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.mlha.params();
        v.extend(self.plain.params());
        v.extend(self.head.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.mlha.params_mut();
        v.extend(self.plain.params_mut());
        v.extend(self.head.params_mut());
        v
    }
    fn buffers(&self) -> Vec<&Buffer> {
        let mut v = self.mlha.buffers();
        v.extend(self.plain.buffers());
        v
    }
}
