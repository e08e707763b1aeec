use std::f64::consts::TAU;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripath_autograd::par;

use super::manifest::{image_path, load_manifest, ManifestFile, Split, Splits};
use super::{png_io, DatasetManifest};
use crate::error::{Error, Result};

/// Per-image changed-area band the generator aims for.
pub const SYNTH_MIN_CHANGE: f64 = 0.05;
pub const SYNTH_MAX_CHANGE: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub seed: u64,
    /// Training pairs.
    pub count: usize,
    /// Square image side in pixels.
    pub size: usize,
    pub num_classes: usize,
    pub val_count: usize,
    pub test_count: usize,
    /// `size` must be a multiple of this.
    pub patch_size: usize,
}

impl SynthOptions {
    pub fn new(seed: u64, count: usize, size: usize, num_classes: usize) -> Self {
        Self { seed, count, size, num_classes, val_count: 0, test_count: 0, patch_size: 8 }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArg("count must be positive".into()));
        }
        if self.size == 0 {
            return Err(Error::InvalidArg("size must be positive".into()));
        }
        if self.num_classes == 0 || self.num_classes > 254 {
            return Err(Error::InvalidArg(format!("num_classes must be in 1..=254, got {}", self.num_classes)));
        }
        if self.patch_size == 0 || !self.size.is_multiple_of(self.patch_size) {
            return Err(Error::InvalidArg(format!(
                "size {} is not a multiple of patch size {}",
                self.size, self.patch_size
            )));
        }
        Ok(())
    }
}

/// Generate a dataset under `root` and return its training split.
///
/// The second image equals the first except inside a few rectangles and
/// ellipses; each region is painted with its class texture and labeled with
/// its class. Output bytes depend only on the options.
pub fn synth_dataset(root: impl AsRef<Path>, opts: &SynthOptions) -> Result<DatasetManifest> {
    opts.validate()?;
    let root = root.as_ref();
    let total = opts.count + opts.val_count + opts.test_count;
    let ids: Vec<String> = (0..total).map(|i| format!("s{i:04}")).collect();
    let samples = par::map_indexed(total, |i| generate(opts, i as u64));
    for (id, (t1, t2, mask)) in ids.iter().zip(&samples) {
        png_io::write_rgb(&image_path(root, "A", id), t1)?;
        png_io::write_rgb(&image_path(root, "B", id), t2)?;
        png_io::write_mask(&image_path(root, "label", id), mask)?;
    }
    let (train, rest) = ids.split_at(opts.count);
    let (val, test) = rest.split_at(opts.val_count);
    ManifestFile {
        num_classes: opts.num_classes,
        class_names: (1..=opts.num_classes).map(|c| format!("change_{c}")).collect(),
        splits: Splits { train: train.to_vec(), val: val.to_vec(), test: test.to_vec() },
    }
    .write(root)?;
    load_manifest(root, Split::Train)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.fract() * 6.0).rem_euclid(6.0);
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Class texture: a class color modulated by stripes whose period and
/// orientation depend on the class.
fn texture(class: usize, num_classes: usize, y: usize, x: usize) -> [f64; 3] {
    let color = hsv_to_rgb((class - 1) as f64 / num_classes as f64, 0.85, 0.95);
    let period = 3 + class % 4;
    let phase = match class % 3 {
        0 => y,
        1 => x,
        _ => x + y,
    };
    let stripe = if phase % period < period / 2 + 1 { 1.0 } else { 0.7 };
    color.map(|c| c * stripe)
}

type Sample = (Array3<f64>, Array3<f64>, Array2<u8>);

fn generate(opts: &SynthOptions, index: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index);
    let n = opts.size;

    let mut t1 = Array3::zeros((3, n, n));
    for c in 0..3 {
        let base: f64 = rng.random_range(0.3..0.6);
        let (fx, fy): (f64, f64) = (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0));
        let phi: f64 = rng.random_range(0.0..TAU);
        for y in 0..n {
            for x in 0..n {
                let wave = (TAU * (fx * x as f64 + fy * y as f64) / n as f64 + phi).sin();
                let noise: f64 = rng.random_range(-0.03..0.03);
                t1[[c, y, x]] = (base + 0.12 * wave + noise).clamp(0.0, 1.0);
            }
        }
    }
    // store what a PNG round trip would give back
    t1.mapv_inplace(|v| png_io::to_u8(v) as f64 / 255.0);
    let mut t2 = t1.clone();
    let mut mask = Array2::<u8>::zeros((n, n));

    let area = (n * n) as f64;
    let target: f64 = rng.random_range(0.08..0.20);
    let (lo, hi) = ((n / 6).max(2), (n / 3).max(3));
    let mut changed = 0usize;
    for _ in 0..32 {
        if changed as f64 >= target * area {
            break;
        }
        let class = rng.random_range(1..=opts.num_classes);
        let ellipse = rng.random_bool(0.5);
        let h = rng.random_range(lo..=hi).min(n);
        let w = rng.random_range(lo..=hi).min(n);
        let top = rng.random_range(0..=n - h);
        let left = rng.random_range(0..=n - w);
        let inside = |y: usize, x: usize| {
            if !ellipse {
                return true;
            }
            let dy = (y as f64 + 0.5 - top as f64 - h as f64 / 2.0) / (h as f64 / 2.0);
            let dx = (x as f64 + 0.5 - left as f64 - w as f64 / 2.0) / (w as f64 / 2.0);
            dy * dy + dx * dx <= 1.0
        };
        let fresh = (top..top + h)
            .flat_map(|y| (left..left + w).map(move |x| (y, x)))
            .filter(|&(y, x)| inside(y, x) && mask[[y, x]] == 0)
            .count();
        if (changed + fresh) as f64 > SYNTH_MAX_CHANGE * area {
            continue;
        }
        for y in top..top + h {
            for x in left..left + w {
                if inside(y, x) {
                    let px = texture(class, opts.num_classes, y, x);
                    for c in 0..3 {
                        t2[[c, y, x]] = png_io::to_u8(px[c]) as f64 / 255.0;
                    }
                    mask[[y, x]] = class as u8;
                }
            }
        }
        changed += fresh;
    }
    (t1, t2, mask)
}
