use ndarray::{ArrayD, IxDyn};

use crate::par;
use crate::var::{tracks, Tensor, Var};

/// Source taps `(i0, i1, frac)` for each output index, half-pixel centers
/// (`align_corners = false`).
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of every `[h, w]` plane of a contiguous buffer.
pub fn resize_planes(x: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = vec![0.0; planes * oh * ow];
    par::for_each_chunk_mut(&mut out, oh * ow, |p, dst| {
        let src = &x[p * h * w..][..h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    });
    out
}

fn resize_planes_backward(g: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut dx = vec![0.0; planes * h * w];
    par::for_each_chunk_mut(&mut dx, h * w, |p, dst| {
        let gp = &g[p * oh * ow..][..oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = gp[oy * ow + ox];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    });
    dx
}

/// Bilinear resize of an NCHW tensor.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 4, "resize expects NCHW");
    let std = x.as_standard_layout();
    let out = resize_planes(std.as_slice().unwrap(), s[0] * s[1], s[2], s[3], oh, ow);
    ArrayD::from_shape_vec(IxDyn(&[s[0], s[1], oh, ow]), out).unwrap()
}

impl Var {
    pub fn upsample_bilinear(&self, oh: usize, ow: usize) -> Var {
        let s = self.shape().to_vec();
        if s[2] == oh && s[3] == ow {
            return self.clone();
        }
        let out = resize_bilinear(self.value(), oh, ow);
        if !tracks(&[self]) {
            return Var::constant(out);
        }
        Var::from_op(out, vec![self.clone()], move |g| {
            let dx = resize_planes_backward(g.as_slice().unwrap(), s[0] * s[1], s[2], s[3], oh, ow);
            vec![Some(ArrayD::from_shape_vec(IxDyn(&s), dx).unwrap())]
        })
    }
}
