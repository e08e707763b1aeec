use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tripath_autograd::par;

use super::{image_path, png_io, DatasetManifest, Dihedral, ImagePair, Normalization};
use crate::error::{Error, Result};

/// A stacked, standardized mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub t1: Array4<f64>,
    pub t2: Array4<f64>,
    /// `[B, H, W]` class indices; absent for unlabeled splits.
    pub masks: Option<Array3<u8>>,
    pub sample_ids: Vec<String>,
    pub transforms: Vec<Dihedral>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn from_pairs(pairs: &[ImagePair], norm: &Normalization) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::InvalidArg("empty batch".into()))?;
        let (h, w) = (first.height(), first.width());
        if let Some(p) = pairs.iter().find(|p| p.height() != h || p.width() != w) {
            return Err(Error::ShapeMismatch(format!(
                "sample `{}` is {}x{}, batch is {h}x{w}",
                p.sample_id,
                p.height(),
                p.width()
            )));
        }
        let t1: Vec<_> = pairs.iter().map(|p| norm.apply(&p.image_t1)).collect();
        let t2: Vec<_> = pairs.iter().map(|p| norm.apply(&p.image_t2)).collect();
        let stack = |v: &[Array3<f64>]| {
            let views: Vec<_> = v.iter().map(|a| a.view()).collect();
            ndarray::stack(Axis(0), &views).expect("same-size images")
        };
        let masks = if pairs.iter().all(|p| p.mask.is_some()) {
            let views: Vec<_> = pairs.iter().map(|p| p.mask.as_ref().unwrap().view()).collect();
            Some(ndarray::stack(Axis(0), &views).expect("same-size masks"))
        } else {
            None
        };
        Ok(Self {
            t1: stack(&t1),
            t2: stack(&t2),
            masks,
            sample_ids: pairs.iter().map(|p| p.sample_id.clone()).collect(),
            transforms: vec![Dihedral::Identity; pairs.len()],
        })
    }
}

/// Deterministic epoch iterator factory over a manifest.
#[derive(Debug, Clone)]
pub struct BatchLoader {
    manifest: DatasetManifest,
    batch_size: usize,
    augment: bool,
    shuffle: bool,
    seed: u64,
    norm: Normalization,
    square: bool,
    cache: Option<Vec<ImagePair>>,
}

/// Batches over `manifest`. With `augment`, each sample gets a random
/// dihedral transform applied jointly to both images and the mask; order and
/// transforms depend only on `(seed, epoch)`.
pub fn make_batches(manifest: &DatasetManifest, batch_size: usize, augment: bool, seed: u64) -> Result<BatchLoader> {
    if batch_size == 0 {
        return Err(Error::InvalidArg("batch_size must be at least 1".into()));
    }
    let mut square = true;
    for id in &manifest.entries {
        let (h, w) = png_io::dimensions(&image_path(&manifest.root, "A", id))?;
        square &= h == w;
    }
    Ok(BatchLoader {
        manifest: manifest.clone(),
        batch_size,
        augment,
        shuffle: true,
        seed,
        norm: Normalization::default(),
        square,
        cache: None,
    })
}

impl BatchLoader {
    pub fn with_normalization(mut self, norm: Normalization) -> Self {
        self.norm = norm;
        self
    }

    /// Keep manifest order (evaluation).
    pub fn sequential(mut self) -> Self {
        self.shuffle = false;
        self
    }

    /// Decode every sample once and keep it in memory.
    pub fn preload(mut self) -> Result<Self> {
        let loaded = par::map_indexed(self.manifest.len(), |i| self.manifest.load_pair(i));
        self.cache = Some(loaded.into_iter().collect::<Result<_>>()?);
        Ok(self)
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.manifest.len().div_ceil(self.batch_size)
    }

    /// Sample order and transform for every position of `epoch`.
    pub fn plan(&self, epoch: u64) -> Vec<(usize, Dihedral)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.manifest.len()).collect();
        if self.shuffle {
            order.shuffle(&mut rng);
        }
        order
            .into_iter()
            .map(|i| {
                let t = if self.augment {
                    Dihedral::sample(&mut rng, self.square)
                } else {
                    Dihedral::Identity
                };
                (i, t)
            })
            .collect()
    }

    fn load(&self, idx: usize, t: Dihedral) -> Result<ImagePair> {
        let pair = match &self.cache {
            Some(c) => c[idx].clone(),
            None => self.manifest.load_pair(idx)?,
        };
        if t == Dihedral::Identity {
            return Ok(pair);
        }
        if t.swaps_axes() && pair.height() != pair.width() {
            return Err(Error::Shape(format!(
                "sample `{}` is not square; {t:?} would change its shape",
                pair.sample_id
            )));
        }
        Ok(ImagePair {
            sample_id: pair.sample_id,
            image_t1: t.apply_image(&pair.image_t1),
            image_t2: t.apply_image(&pair.image_t2),
            mask: pair.mask.map(|m| t.apply_plane(&m)),
        })
    }

    pub fn epoch(&self, epoch: u64) -> impl Iterator<Item = Result<Batch>> + '_ {
        let plan = self.plan(epoch);
        let chunks: Vec<Vec<(usize, Dihedral)>> = plan.chunks(self.batch_size).map(<[_]>::to_vec).collect();
        chunks.into_iter().map(move |chunk| {
            let pairs = par::map_slice(&chunk, |&(i, t)| self.load(i, t));
            let pairs: Vec<ImagePair> = pairs.into_iter().collect::<Result<_>>()?;
            let mut batch = Batch::from_pairs(&pairs, &self.norm)?;
            batch.transforms = chunk.iter().map(|&(_, t)| t).collect();
            Ok(batch)
        })
    }
}
