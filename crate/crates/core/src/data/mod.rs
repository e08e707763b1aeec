//! Bi-temporal dataset handling: directory manifests, PNG decoding, dihedral
//! augmentation, batching and a deterministic synthetic generator.
//!
//! A dataset directory looks like
//!
//! ```text
//! <root>/manifest.json
//! <root>/A/<id>.png        image at the first date (8-bit RGB)
//! <root>/B/<id>.png        image at the second date
//! <root>/label/<id>.png    8-bit gray, raw class index per pixel (0 = no change)
//! ```

mod augment;
mod batch;
mod manifest;
pub mod png_io;
mod synth;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

pub use augment::Dihedral;
pub use batch::{make_batches, Batch, BatchLoader};
pub use manifest::{image_path, load_manifest, DatasetManifest, ManifestFile, Split, Splits, MANIFEST_FILE};
pub use synth::{synth_dataset, SynthOptions, SYNTH_MAX_CHANGE, SYNTH_MIN_CHANGE};

use crate::error::{Error, Result};

/// One co-registered sample. Images are stored channel-first, `[3, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub sample_id: String,
    pub image_t1: Array3<f64>,
    pub image_t2: Array3<f64>,
    pub mask: Option<Array2<u8>>,
}

impl ImagePair {
    pub fn new(
        sample_id: String,
        image_t1: Array3<f64>,
        image_t2: Array3<f64>,
        mask: Option<Array2<u8>>,
        num_classes: usize,
    ) -> Result<Self> {
        if image_t1.shape()[0] != 3 || image_t1.dim() != image_t2.dim() {
            return Err(Error::ShapeMismatch(format!(
                "sample `{sample_id}`: t1 {:?} vs t2 {:?}",
                image_t1.shape(),
                image_t2.shape()
            )));
        }
        if image_t1.iter().chain(image_t2.iter()).any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArg(format!("sample `{sample_id}`: intensities outside [0, 1]")));
        }
        if let Some(m) = &mask {
            let (h, w) = (image_t1.shape()[1], image_t1.shape()[2]);
            if m.dim() != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "sample `{sample_id}`: image {h}x{w}, mask {:?}",
                    m.dim()
                )));
            }
            manifest::check_labels(m, num_classes, &sample_id)?;
        }
        Ok(Self { sample_id, image_t1, image_t2, mask })
    }

    pub fn height(&self) -> usize {
        self.image_t1.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image_t1.shape()[2]
    }
}

/// Per-channel standardization applied after scaling to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: [0.5; 3], std: [0.25; 3] }
    }
}

impl Normalization {
    pub fn apply(&self, img: &Array3<f64>) -> Array3<f64> {
        let mut out = img.clone();
        for (c, mut plane) in out.outer_iter_mut().enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            plane.mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad normalization {self:?}")));
        }
        Ok(())
    }
}
