//! The assembled change detector: shared encoder, CNN path, optional third
//! path and the decoder.

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tripath_autograd::{Buffer, Module, Param, Var};

use crate::backbone::{Backbone, BackboneConfig, FeatureBundle};
use crate::cnn_path::CnnPath;
use crate::error::{Error, Result};
use crate::mlha::{Decoder, MlhaConfig};
use crate::nn::Phase;
use crate::third_path::{ThirdPath, ThirdPathConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub third_path: ThirdPathConfig,
    pub mlha: MlhaConfig,
    /// Width of FT1; `None` keeps the encoder width.
    pub ft1_channels: Option<usize>,
    /// Width of `f_CNN`.
    pub cnn_channels: usize,
    /// Change classes `N`; the model predicts `N + 1` scores per pixel.
    pub num_classes: usize,
    pub use_third_path: bool,
    pub use_mlha: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            third_path: ThirdPathConfig::default(),
            mlha: MlhaConfig::default(),
            ft1_channels: None,
            cnn_channels: 64,
            num_classes: 3,
            use_third_path: true,
            use_mlha: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.third_path.validate()?;
        self.mlha.validate()?;
        if self.num_classes == 0 || self.num_classes > 254 {
            return Err(Error::InvalidConfig(format!("num_classes must be in 1..=254, got {}", self.num_classes)));
        }
        if self.cnn_channels == 0 || self.ft1_channels == Some(0) {
            return Err(Error::InvalidConfig("CNN path widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of `f_fuse`.
    pub fn fused_channels(&self) -> usize {
        self.cnn_channels + if self.use_third_path { self.third_path.out_channels } else { 0 }
    }
}

/// Everything a forward pass produces.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `[B, N+1, H, W]`.
    pub logits: Var,
    pub f_cnn: Var,
    pub f_tr: Option<Var>,
    pub features_t1: FeatureBundle,
    pub features_t2: FeatureBundle,
}

#[derive(Debug, Clone)]
pub struct TriPathModel {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub cnn_path: CnnPath,
    pub third_path: Option<ThirdPath>,
    pub decoder: Decoder,
}

impl TriPathModel {
    /// The encoder depends only on `(config.backbone, seed)`, so models that
    /// differ in their heads share the same frozen base.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(&config.backbone, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let d = config.backbone.embed_dim;
        let cnn_path = CnnPath::new(d, config.ft1_channels.unwrap_or(d), config.cnn_channels, &mut rng);
        let third_path = if config.use_third_path {
            Some(ThirdPath::new(d, &config.third_path, &mut rng)?)
        } else {
            None
        };
        let decoder = Decoder::new(
            config.fused_channels(),
            config.num_classes,
            config.backbone.patch_size,
            config.use_mlha,
            &config.mlha,
            &mut rng,
        )?;
        Ok(Self { config: config.clone(), backbone, cnn_path, third_path, decoder })
    }

    pub fn forward(&self, t1: &Array4<f64>, t2: &Array4<f64>, phase: Phase) -> Result<ModelOutput> {
        self.forward_with(t1, t2, phase, false)
    }

    /// With `track_paths`, gradients with respect to `f_CNN` and `f_Tr` are
    /// kept after a backward pass.
    pub fn forward_with(&self, t1: &Array4<f64>, t2: &Array4<f64>, phase: Phase, track_paths: bool) -> Result<ModelOutput> {
        if t1.dim() != t2.dim() {
            return Err(Error::ShapeMismatch(format!("t1 {:?} vs t2 {:?}", t1.shape(), t2.shape())));
        }
        let b = t1.shape()[0];
        let target = (t1.shape()[2], t1.shape()[3]);
        let both = ndarray::concatenate(ndarray::Axis(0), &[t1.view(), t2.view()]).expect("same shapes");
        let feats = self.backbone.encode(&Var::constant(both.into_dyn()))?;
        let (f1, f2) = (feats.narrow(0, b), feats.narrow(b, b));
        let grid = (f1.s.shape()[2], f1.s.shape()[3]);
        let mut f_cnn = self.cnn_path.forward(&f1.s, &f2.s, phase)?;
        let mut f_tr = match &self.third_path {
            Some(tp) => Some(tp.forward(&f1, &f2, grid)?),
            None => None,
        };
        if track_paths {
            f_cnn = f_cnn.tracked();
            f_tr = f_tr.map(|f| f.tracked());
        }
        let fused = match &f_tr {
            Some(f) => Var::concat(&[f_cnn.clone(), f.clone()], 1),
            None => f_cnn.clone(),
        };
        let logits = self.decoder.forward(&fused, target, phase)?;
        Ok(ModelOutput { logits, f_cnn, f_tr, features_t1: f1, features_t2: f2 })
    }

    pub fn frozen_fingerprint(&self) -> String {
        crate::backbone::fingerprint(self.params().into_iter().filter(|p| !p.trainable()))
    }
}

impl Module for TriPathModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.backbone.params();
        v.extend(self.cnn_path.params());
        v.extend(self.third_path.params());
        v.extend(self.decoder.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.backbone.params_mut();
        v.extend(self.cnn_path.params_mut());
        v.extend(self.third_path.params_mut());
        v.extend(self.decoder.params_mut());
        v
    }
    fn buffers(&self) -> Vec<&Buffer> {
        let mut v = self.cnn_path.buffers();
        v.extend(self.third_path.buffers());
        v.extend(self.decoder.buffers());
        v
    }
}
