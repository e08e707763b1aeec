use ndarray::{Array1, ArrayD, Axis, IxDyn};

use crate::par;
use crate::var::{tracks, Tensor, Var};

/// Batch statistics produced by a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    /// Biased (population) variance.
    pub var: Array1<f64>,
    /// Elements per channel.
    pub count: usize,
}

impl Var {
    /// Batch normalization over (N, H, W) of an NCHW tensor using batch
    /// statistics; `gamma`/`beta` are `[C]`.
    pub fn batch_norm_train(&self, gamma: &Var, beta: &Var, eps: f64) -> (Var, BatchStats) {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "batch_norm expects NCHW");
        let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
        let n = b * hw;
        let x = self.value().as_slice().unwrap();
        let stats = par::map_indexed(c, |ch| {
            let mut sum = 0.0;
            for bi in 0..b {
                sum += x[(bi * c + ch) * hw..][..hw].iter().sum::<f64>();
            }
            let mean = sum / n as f64;
            let mut sq = 0.0;
            for bi in 0..b {
                sq += x[(bi * c + ch) * hw..][..hw]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            (mean, sq / n as f64)
        });
        let mean: Array1<f64> = stats.iter().map(|s| s.0).collect();
        let var: Array1<f64> = stats.iter().map(|s| s.1).collect();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv: Vec<f64> = gamma.value().iter().copied().collect();
        let bv: Vec<f64> = beta.value().iter().copied().collect();

        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for p in 0..b * c {
            let ch = p % c;
            let src = &x[p * hw..][..hw];
            let xh = &mut xhat[p * hw..][..hw];
            let dst = &mut out[p * hw..][..hw];
            for i in 0..hw {
                xh[i] = (src[i] - mean[ch]) * inv_std[ch];
                dst[i] = gv[ch] * xh[i] + bv[ch];
            }
        }
        let stats = BatchStats { mean, var, count: n };
        let out = ArrayD::from_shape_vec(IxDyn(&s), out).unwrap();
        if !tracks(&[self, gamma, beta]) {
            return (Var::constant(out), stats);
        }
        let y = Var::from_op(out, vec![self.clone(), gamma.clone(), beta.clone()], move |g| {
            let gs = g.as_slice().unwrap();
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for p in 0..b * c {
                let ch = p % c;
                for i in 0..hw {
                    sum_g[ch] += gs[p * hw + i];
                    sum_gx[ch] += gs[p * hw + i] * xhat[p * hw + i];
                }
            }
            let mut dx = vec![0.0; gs.len()];
            let nf = n as f64;
            for p in 0..b * c {
                let ch = p % c;
                let k = gv[ch] * inv_std[ch] / nf;
                for i in 0..hw {
                    let j = p * hw + i;
                    dx[j] = k * (nf * gs[j] - sum_g[ch] - xhat[j] * sum_gx[ch]);
                }
            }
            vec![
                Some(ArrayD::from_shape_vec(IxDyn(&s), dx).unwrap()),
                Some(Array1::from(sum_gx).into_dyn()),
                Some(Array1::from(sum_g).into_dyn()),
            ]
        });
        (y, stats)
    }

    /// Layer normalization over the last axis with affine `[D]` parameters.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Var {
        let s = self.shape().to_vec();
        let d = *s.last().unwrap();
        let rows = self.value().len() / d;
        let x = self.value().as_slice().unwrap();
        let gv: Vec<f64> = gamma.value().iter().copied().collect();
        let bv: Vec<f64> = beta.value().iter().copied().collect();
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let src = &x[r * d..][..d];
            let mean = src.iter().sum::<f64>() / d as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                let xh = (src[i] - mean) * is;
                xhat[r * d + i] = xh;
                out[r * d + i] = gv[i] * xh + bv[i];
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&s), out).unwrap();
        if !tracks(&[self, gamma, beta]) {
            return Var::constant(out);
        }
        Var::from_op(out, vec![self.clone(), gamma.clone(), beta.clone()], move |g| {
            let gs = g.as_slice().unwrap();
            let mut dx = vec![0.0; gs.len()];
            let mut dgamma = vec![0.0; d];
            let mut dbeta = vec![0.0; d];
            let df = d as f64;
            for r in 0..rows {
                let mut sum_gh = 0.0;
                let mut sum_ghx = 0.0;
                for i in 0..d {
                    let j = r * d + i;
                    let gh = gs[j] * gv[i];
                    sum_gh += gh;
                    sum_ghx += gh * xhat[j];
                    dgamma[i] += gs[j] * xhat[j];
                    dbeta[i] += gs[j];
                }
                for i in 0..d {
                    let j = r * d + i;
                    dx[j] = inv_std[r] / df * (df * gs[j] * gv[i] - sum_gh - xhat[j] * sum_ghx);
                }
            }
            vec![
                Some(ArrayD::from_shape_vec(IxDyn(&s), dx).unwrap()),
                Some(Array1::from(dgamma).into_dyn()),
                Some(Array1::from(dbeta).into_dyn()),
            ]
        })
    }

    pub fn softmax(&self, axis: usize) -> Var {
        let out = softmax(self.value(), axis);
        if !tracks(&[self]) {
            return Var::constant(out);
        }
        let y = out.clone();
        Var::from_op(out, vec![self.clone()], move |g| {
            let gy = g * &y;
            let s = gy.sum_axis(Axis(axis)).insert_axis(Axis(axis));
            vec![Some(&gy - &(&y * &s))]
        })
    }

    pub fn log_softmax(&self, axis: usize) -> Var {
        let m = self
            .value()
            .map_axis(Axis(axis), |lane| lane.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
            .insert_axis(Axis(axis));
        let shifted = self.value() - &m;
        let lse = shifted
            .mapv(f64::exp)
            .sum_axis(Axis(axis))
            .mapv(f64::ln)
            .insert_axis(Axis(axis));
        let out = &shifted - &lse;
        if !tracks(&[self]) {
            return Var::constant(out);
        }
        let p = out.mapv(f64::exp);
        Var::from_op(out, vec![self.clone()], move |g| {
            let s = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
            vec![Some(g - &(&p * &s))]
        })
    }
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Tensor {
    let m = x
        .map_axis(Axis(axis), |lane| lane.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .insert_axis(Axis(axis));
    let e = (x - &m).mapv(f64::exp);
    let s = e.sum_axis(Axis(axis)).insert_axis(Axis(axis));
    e / s
}
