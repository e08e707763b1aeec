//! Coarse change path over the final encoder features:
//! `f_CNN = FT2([S1 - S2, FT1([S1, S2])])`, brackets being channel concatenation.

use rand::Rng;
use tripath_autograd::{Buffer, Module, Param, Var};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Phase};

/// `Conv1x1(GELU(BN(Conv3x3(x))))`.
#[derive(Debug, Clone)]
pub struct ConvProcessor {
    pub conv3: Conv2d,
    pub norm: BatchNorm2d,
    pub conv1: Conv2d,
}

impl ConvProcessor {
    pub fn new<R: Rng>(name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            conv3: Conv2d::same(&format!("{name}.conv3"), cin, cout, 3, true, rng),
            norm: BatchNorm2d::new(&format!("{name}.norm"), cout, true),
            conv1: Conv2d::same(&format!("{name}.conv1"), cout, cout, 1, true, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv3.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.conv1.weight.shape()[0]
    }

    pub fn forward(&self, x: &Var, phase: Phase) -> Var {
        self.conv1.forward(&self.norm.forward(&self.conv3.forward(x), phase).gelu())
    }
}

impl Module for ConvProcessor {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv3.params();
        v.extend(self.norm.params());
        v.extend(self.conv1.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv3.params_mut();
        v.extend(self.norm.params_mut());
        v.extend(self.conv1.params_mut());
        v
    }
    fn buffers(&self) -> Vec<&Buffer> {
        self.norm.buffers()
    }
}

#[derive(Debug, Clone)]
pub struct CnnPath {
    pub ft1: ConvProcessor,
    pub ft2: ConvProcessor,
}

impl CnnPath {
    /// `d` input channels per branch; FT1 emits `ft1_channels`, FT2 `out_channels`.
    pub fn new<R: Rng>(d: usize, ft1_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self {
            ft1: ConvProcessor::new("cnn_path.ft1", 2 * d, ft1_channels, rng),
            ft2: ConvProcessor::new("cnn_path.ft2", d + ft1_channels, out_channels, rng),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.ft2.out_channels()
    }

    /// The FT2 input `v = [S1 - S2, FT1([S1, S2])]`.
    pub fn fuse_input(&self, s1: &Var, s2: &Var, phase: Phase) -> Result<Var> {
        if s1.shape() != s2.shape() {
            return Err(Error::ShapeMismatch(format!("S1 {:?} vs S2 {:?}", s1.shape(), s2.shape())));
        }
        let u = self.ft1.forward(&Var::concat(&[s1.clone(), s2.clone()], 1), phase);
        Ok(Var::concat(&[s1.sub(s2), u], 1))
    }

    pub fn forward(&self, s1: &Var, s2: &Var, phase: Phase) -> Result<Var> {
        Ok(self.ft2.forward(&self.fuse_input(s1, s2, phase)?, phase))
    }
}

impl Module for CnnPath {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.ft1.params();
        v.extend(self.ft2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.ft1.params_mut();
        v.extend(self.ft2.params_mut());
        v
    }
    fn buffers(&self) -> Vec<&Buffer> {
        let mut v = self.ft1.buffers();
        v.extend(self.ft2.buffers());
        v
    }
}
