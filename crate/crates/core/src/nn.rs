//! Layer building blocks shared by the encoder and decoder.

use ndarray::{Array1, IxDyn};
use rand::Rng;
use tripath_autograd::{init, Buffer, Module, Param, Var};

/// Whether batch-norm layers use batch statistics (and update their running
/// estimates) or their running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        trainable: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            init::fan_in_uniform(&[cout, cin, kernel, kernel], fan_in, rng),
            trainable,
        );
        let bias = bias.then(|| {
            Param::new(
                format!("{name}.bias"),
                init::fan_in_uniform(&[cout], fan_in, rng),
                trainable,
            )
        });
        Self { weight, bias, stride, pad }
    }

    /// Same-size convolution with odd `kernel`.
    pub fn same<R: Rng>(name: &str, cin: usize, cout: usize, kernel: usize, trainable: bool, rng: &mut R) -> Self {
        Self::new(name, cin, cout, kernel, 1, kernel / 2, true, trainable, rng)
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn zero_(&mut self) {
        self.weight.value_mut().fill(0.0);
        if let Some(b) = &mut self.bias {
            b.value_mut().fill(0.0);
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        let b = self.bias.as_ref().map(Param::var);
        x.conv2d(&self.weight.var(), b.as_ref(), self.stride, self.pad)
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize, trainable: bool) -> Self {
        Self {
            gamma: Param::new(format!("{name}.weight"), init::ones(&[channels]), trainable),
            beta: Param::new(format!("{name}.bias"), init::zeros(&[channels]), trainable),
            running_mean: Buffer::new(format!("{name}.running_mean"), init::zeros(&[channels])),
            running_var: Buffer::new(format!("{name}.running_var"), init::ones(&[channels])),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, x: &Var, phase: Phase) -> Var {
        let c = x.shape()[1];
        match phase {
            Phase::Train => {
                let (y, stats) = x.batch_norm_train(&self.gamma.var(), &self.beta.var(), self.eps);
                let m = self.momentum;
                let n = stats.count as f64;
                let unbiased = if stats.count > 1 { &stats.var * (n / (n - 1.0)) } else { stats.var.clone() };
                let rm = self.running_mean.get() * (1.0 - m) + stats.mean.into_dyn() * m;
                let rv = self.running_var.get() * (1.0 - m) + unbiased.into_dyn() * m;
                self.running_mean.set(rm);
                self.running_var.set(rv);
                y
            }
            Phase::Eval => {
                let mean = self.running_mean.get().into_shape_with_order(IxDyn(&[1, c, 1, 1])).unwrap();
                let inv_std: Array1<f64> = self
                    .running_var
                    .get()
                    .iter()
                    .map(|v| 1.0 / (v + self.eps).sqrt())
                    .collect();
                let inv_std = inv_std.into_dyn().into_shape_with_order(IxDyn(&[1, c, 1, 1])).unwrap();
                let scale = self.gamma.var().reshape(&[1, c, 1, 1]).mul(&Var::constant(inv_std));
                let shift = self.beta.var().reshape(&[1, c, 1, 1]);
                x.sub(&Var::constant(mean)).mul(&scale).add(&shift)
            }
        }
    }
}

impl Module for BatchNorm2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
    fn buffers(&self) -> Vec<&Buffer> {
        vec![&self.running_mean, &self.running_var]
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, fin: usize, fout: usize, bias: bool, trainable: bool, rng: &mut R) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), init::fan_in_uniform(&[fout, fin], fin, rng), trainable),
            bias: bias.then(|| Param::new(format!("{name}.bias"), init::fan_in_uniform(&[fout], fin, rng), trainable)),
        }
    }

    pub fn set_identity(&mut self) {
        let w = self.weight.value_mut();
        w.fill(0.0);
        let n = w.shape()[0].min(w.shape()[1]);
        for i in 0..n {
            w[[i, i]] = 1.0;
        }
        if let Some(b) = &mut self.bias {
            b.value_mut().fill(0.0);
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        let b = self.bias.as_ref().map(Param::var);
        x.linear(&self.weight.var(), b.as_ref())
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize, trainable: bool) -> Self {
        Self {
            gamma: Param::new(format!("{name}.weight"), init::ones(&[dim]), trainable),
            beta: Param::new(format!("{name}.bias"), init::zeros(&[dim]), trainable),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        x.layer_norm(&self.gamma.var(), &self.beta.var(), self.eps)
    }
}

impl Module for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// `GELU(BN(Conv_k(x)))`.
#[derive(Debug, Clone)]
pub struct ConvBnGelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnGelu {
    pub fn new<R: Rng>(name: &str, cin: usize, cout: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::same(&format!("{name}.conv"), cin, cout, kernel, true, rng),
            bn: BatchNorm2d::new(&format!("{name}.bn"), cout, true),
        }
    }

    pub fn forward(&self, x: &Var, phase: Phase) -> Var {
        self.bn.forward(&self.conv.forward(x), phase).gelu()
    }
}

impl Module for ConvBnGelu {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv.params();
        v.extend(self.bn.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }
    fn buffers(&self) -> Vec<&Buffer> {
        self.bn.buffers()
    }
}

/// Fixed 2-D sine-cosine position code, `[h*w, dim]` with `dim % 4 == 0`.
/// The first half of the channels encodes the row, the second the column.
pub fn sincos_2d(h: usize, w: usize, dim: usize) -> ndarray::Array2<f64> {
    assert!(dim.is_multiple_of(4), "position code width must be divisible by 4");
    let quarter = dim / 4;
    let mut out = ndarray::Array2::zeros((h * w, dim));
    for y in 0..h {
        for x in 0..w {
            let t = y * w + x;
            for i in 0..quarter {
                let omega = 1.0 / 10000f64.powf(i as f64 / quarter as f64);
                out[[t, i]] = (y as f64 * omega).sin();
                out[[t, quarter + i]] = (y as f64 * omega).cos();
                out[[t, 2 * quarter + i]] = (x as f64 * omega).sin();
                out[[t, 3 * quarter + i]] = (x as f64 * omega).cos();
            }
        }
    }
    out
}

/// Scaled dot-product attention over `[B, T, D]` inputs split into `heads`.
/// Returns the merged output `[B, Tq, D]` and the attention weights
/// `[B * heads, Tq, Tk]`.
pub fn multi_head_attention(q: &Var, k: &Var, v: &Var, heads: usize) -> (Var, Var) {
    let (b, tq, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let tk = k.shape()[1];
    assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let split = |x: &Var, t: usize| {
        x.reshape(&[b, t, heads, dh])
            .permute(&[0, 2, 1, 3])
            .reshape(&[b * heads, t, dh])
    };
    let (qh, kh, vh) = (split(q, tq), split(k, tk), split(v, tk));
    let scores = qh.matmul(&kh.transpose_last()).scale(1.0 / (dh as f64).sqrt());
    let attn = scores.softmax(2);
    let out = attn
        .matmul(&vh)
        .reshape(&[b, heads, tq, dh])
        .permute(&[0, 2, 1, 3])
        .reshape(&[b, tq, d]);
    (out, attn)
}

/// Flatten `[B, C, H, W]` to tokens `[B, H*W, C]`.
pub fn to_tokens(x: &Var) -> Var {
    let s = x.shape();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    x.reshape(&[b, c, hw]).permute(&[0, 2, 1])
}

/// Inverse of [`to_tokens`].
pub fn from_tokens(x: &Var, h: usize, w: usize) -> Var {
    let (b, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert_eq!(t, h * w, "token count {t} does not match grid {h}x{w}");
    x.permute(&[0, 2, 1]).reshape(&[b, c, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_batch_norm_uses_running_stats() {
        let bn = BatchNorm2d::new("bn", 2, true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Var::constant(init::uniform(&[3, 2, 4, 4], 2.0, &mut rng));
        // initial running stats are (0, 1): eval is nearly the identity
        let y = bn.forward(&x, Phase::Eval);
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in y.value().iter().zip(x.value().iter()) {
            assert!((a - b * scale).abs() < 1e-15);
        }
        bn.forward(&x, Phase::Train);
        let rm = bn.running_mean.get();
        let mean0 = x.value().index_axis(ndarray::Axis(1), 0).mean().unwrap();
        assert!((rm[[0]] - 0.1 * mean0).abs() < 1e-12);
    }

    #[test]
    fn token_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Var::constant(init::uniform(&[2, 3, 4, 5], 1.0, &mut rng));
        let back = from_tokens(&to_tokens(&x), 4, 5);
        assert_eq!(back.value(), x.value());
        assert_eq!(to_tokens(&x).value()[[1, 7, 2]], x.value()[[1, 2, 1, 2]]);
    }

    #[test]
    fn position_code_rows_are_distinct() {
        let p = sincos_2d(4, 4, 16);
        for a in 0..16 {
            for b in (a + 1)..16 {
                let d: f64 = (&p.row(a) - &p.row(b)).mapv(f64::abs).sum();
                assert!(d > 1e-6, "positions {a} and {b} collide");
            }
        }
    }
}
