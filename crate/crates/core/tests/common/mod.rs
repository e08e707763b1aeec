//! Plain-loop reference implementations used as test oracles. They share no
//! code with the library kernels.
#![allow(dead_code)]

use ndarray::{Array1, Array2, Array4, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripath::nn::BatchNorm2d;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
    let mut r = rng(seed);
    Array4::from_shape_fn(shape, |_| r.random_range(-1.0..1.0))
}

pub fn random_dyn(shape: &[usize], seed: u64) -> ArrayD<f64> {
    let mut r = rng(seed);
    ArrayD::from_shape_fn(IxDyn(shape), |_| r.random_range(-1.0..1.0))
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Zero-padded stride-1 convolution, `[B, C, H, W]` by `[O, C, k, k]`.
pub fn conv2d(x: &Array4<f64>, w: &Array4<f64>, b: Option<&Array1<f64>>) -> Array4<f64> {
    let (bn, c, h, wd) = x.dim();
    let (o, c2, k, _) = w.dim();
    assert_eq!(c, c2);
    let p = (k / 2) as isize;
    let mut out = Array4::zeros((bn, o, h, wd));
    for n in 0..bn {
        for oc in 0..o {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.map_or(0.0, |b| b[oc]);
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - p;
                                let sx = xx as isize + kx as isize - p;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                    acc += x[[n, ic, sy as usize, sx as usize]] * w[[oc, ic, ky, kx]];
                                }
                            }
                        }
                    }
                    out[[n, oc, y, xx]] = acc;
                }
            }
        }
    }
    out
}

pub fn depthwise3(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>) -> Array4<f64> {
    let (bn, c, h, wd) = x.dim();
    let mut out = Array4::zeros((bn, c, h, wd));
    for n in 0..bn {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b[ch];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                acc += x[[n, ch, sy as usize, sx as usize]] * w[[ch, 0, ky, kx]];
                            }
                        }
                    }
                    out[[n, ch, y, xx]] = acc;
                }
            }
        }
    }
    out
}

pub fn bn_eval(x: &Array4<f64>, bn: &BatchNorm2d) -> Array4<f64> {
    let mean = bn.running_mean.get();
    let var = bn.running_var.get();
    let g = bn.gamma.value();
    let b = bn.beta.value();
    let mut out = x.clone();
    for ((_, c, _, _), v) in out.indexed_iter_mut() {
        *v = (*v - mean[c]) / (var[c] + bn.eps).sqrt() * g[c] + b[c];
    }
    out
}

/// Give a batch-norm layer non-trivial statistics and affine parameters.
pub fn randomize_bn(bn: &mut BatchNorm2d, seed: u64) {
    let mut r = rng(seed);
    let c = bn.gamma.shape()[0];
    bn.running_mean.set(ArrayD::from_shape_fn(IxDyn(&[c]), |_| r.random_range(-0.5..0.5)));
    bn.running_var.set(ArrayD::from_shape_fn(IxDyn(&[c]), |_| r.random_range(0.5..2.0)));
    *bn.gamma.value_mut() = ArrayD::from_shape_fn(IxDyn(&[c]), |_| r.random_range(0.5..1.5));
    *bn.beta.value_mut() = ArrayD::from_shape_fn(IxDyn(&[c]), |_| r.random_range(-0.5..0.5));
}

pub fn as4(t: &ArrayD<f64>) -> Array4<f64> {
    t.clone().into_dimensionality().unwrap()
}

pub fn as1(t: &ArrayD<f64>) -> Array1<f64> {
    t.clone().into_dimensionality().unwrap()
}

pub fn as2(t: &ArrayD<f64>) -> Array2<f64> {
    t.clone().into_dimensionality().unwrap()
}

pub fn map4(x: &Array4<f64>, f: impl Fn(f64) -> f64) -> Array4<f64> {
    x.mapv(f)
}

pub fn concat_channels(a: &Array4<f64>, b: &Array4<f64>) -> Array4<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).unwrap()
}

/// `x W^T + b` over rows.
pub fn linear(x: &Array2<f64>, w: &Array2<f64>, b: Option<&Array1<f64>>) -> Array2<f64> {
    let (n, fin) = x.dim();
    let fout = w.shape()[0];
    Array2::from_shape_fn((n, fout), |(i, o)| {
        let mut acc = b.map_or(0.0, |b| b[o]);
        for k in 0..fin {
            acc += x[[i, k]] * w[[o, k]];
        }
        acc
    })
}

/// Single-head `softmax(Q K^T / sqrt(d)) V` and its weights.
pub fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let d = q.shape()[1] as f64;
    let (tq, tk) = (q.shape()[0], k.shape()[0]);
    let mut a = Array2::zeros((tq, tk));
    for i in 0..tq {
        let scores: Vec<f64> = (0..tk)
            .map(|j| (0..q.shape()[1]).map(|c| q[[i, c]] * k[[j, c]]).sum::<f64>() / d.sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..tk {
            a[[i, j]] = e[j] / z;
        }
    }
    let out = Array2::from_shape_fn((tq, v.shape()[1]), |(i, c)| (0..tk).map(|j| a[[i, j]] * v[[j, c]]).sum());
    (out, a)
}

pub fn max_abs_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A small model and short schedule over a synthetic dataset at `data`.
pub fn tiny_run(data: &std::path::Path, out: &std::path::Path) -> tripath::harness::RunConfig {
    use tripath::backbone::BackboneConfig;
    use tripath::mlha::MlhaConfig;
    use tripath::third_path::ThirdPathConfig;
    let mut cfg = tripath::harness::RunConfig::default();
    cfg.data.root = data.to_path_buf();
    cfg.data.augment = false;
    cfg.output_dir = out.to_path_buf();
    cfg.model.backbone = BackboneConfig {
        patch_size: 4,
        embed_dim: 16,
        depth: 3,
        heads: 2,
        tap_layers: [0, 1, 2],
        lora_rank: 2,
        adapter_dim: 4,
        ..Default::default()
    };
    cfg.model.third_path = ThirdPathConfig { d_model: 16, heads: 2, blocks: 1, out_channels: 16 };
    cfg.model.mlha = MlhaConfig { head_min_channels: 8, ..Default::default() };
    cfg.model.cnn_channels = 16;
    cfg.optim.lr = 1e-3;
    cfg.optim.epochs = 2;
    cfg.optim.batch_size = 2;
    cfg.seed = 3;
    cfg
}

/// Synthetic 16x16 dataset: 4 train, 2 val and 2 test pairs.
pub fn tiny_data(root: &std::path::Path, classes: usize) -> tripath::data::DatasetManifest {
    let mut opts = tripath::data::SynthOptions::new(5, 4, 16, classes);
    opts.val_count = 2;
    opts.test_count = 2;
    opts.patch_size = 4;
    tripath::data::synth_dataset(root, &opts).unwrap()
}
