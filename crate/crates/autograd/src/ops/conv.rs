use ndarray::{Array2, ArrayD, Axis, IxDyn};

use crate::par;
use crate::var::{tracks, Tensor, Var};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Self {
        assert_eq!(x.len(), 4, "conv2d input must be NCHW, got {x:?}");
        assert_eq!(w.len(), 4, "conv2d weight must be OIHW, got {w:?}");
        assert_eq!(x[1], w[1], "conv2d channel mismatch {x:?} vs {w:?}");
        assert!(stride >= 1);
        let (h, wd, kh, kw) = (x[2], x[3], w[2], w[3]);
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "kernel larger than padded input");
        Self {
            batch: x[0],
            cin: x[1],
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        }
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn l(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate for an output coordinate and kernel tap, if in bounds.
    #[inline]
    fn src(&self, o: usize, k: usize, n: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < n).then_some(p as usize)
    }
}

fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let bl = g.batch * g.l();
    let mut cols = vec![0.0; g.k() * bl];
    par::for_each_chunk_mut(&mut cols, bl, |row, out| {
        let ci = row / (g.kh * g.kw);
        let ky = (row / g.kw) % g.kh;
        let kx = row % g.kw;
        for b in 0..g.batch {
            let plane = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
            let dst = &mut out[b * g.l()..][..g.l()];
            for oy in 0..g.ho {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for ox in 0..g.wo {
                    if let Some(ix) = g.src(ox, kx, g.w) {
                        dst[oy * g.wo + ox] = plane[iy * g.w + ix];
                    }
                }
            }
        }
    });
    cols
}

fn col2im(cols: &[f64], g: &Geometry) -> Vec<f64> {
    let bl = g.batch * g.l();
    let mut x = vec![0.0; g.batch * g.cin * g.h * g.w];
    par::for_each_chunk_mut(&mut x, g.h * g.w, |plane_idx, plane| {
        let b = plane_idx / g.cin;
        let ci = plane_idx % g.cin;
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * bl + b * g.l()..][..g.l()];
                for oy in 0..g.ho {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.wo {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            plane[iy * g.w + ix] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    });
    x
}

/// `[Co, B*L]` matrix to `[B, Co, Ho, Wo]`.
fn unfold_output(m: Array2<f64>, g: &Geometry, cout: usize) -> Tensor {
    m.into_shape_with_order((cout, g.batch, g.ho, g.wo))
        .unwrap()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_dyn()
}

fn fold_grad(t: &Tensor, g: &Geometry, cout: usize) -> Array2<f64> {
    t.view()
        .permuted_axes(IxDyn(&[1, 0, 2, 3]))
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cout, g.batch * g.l()))
        .unwrap()
}

impl Var {
    /// 2-D cross-correlation, NCHW input, OIHW weight, symmetric zero padding.
    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>, stride: usize, pad: usize) -> Var {
        let geo = Geometry::new(self.shape(), weight.shape(), stride, pad);
        let cout = weight.shape()[0];
        let x = self.value().as_slice().expect("contiguous input");
        let cols = Array2::from_shape_vec((geo.k(), geo.batch * geo.l()), im2col(x, &geo)).unwrap();
        let wmat = weight
            .value()
            .clone()
            .into_shape_with_order((cout, geo.k()))
            .unwrap();
        let mut y = wmat.dot(&cols);
        if let Some(b) = bias {
            let bv = b.value().view().into_shape_with_order((cout, 1)).unwrap();
            y += &bv;
        }
        let out = unfold_output(y, &geo, cout);
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        if !tracks(&parents.iter().collect::<Vec<_>>()) {
            return Var::constant(out);
        }
        let (rx, rw) = (self.requires_grad(), weight.requires_grad());
        let has_bias = bias.is_some();
        let wshape = weight.shape().to_vec();
        let xshape = self.shape().to_vec();
        Var::from_op(out, parents, move |g| {
            let gm = fold_grad(g, &geo, cout);
            let dx = rx.then(|| {
                let dcols = wmat.t().dot(&gm);
                let flat = col2im(dcols.as_slice().unwrap(), &geo);
                ArrayD::from_shape_vec(IxDyn(&xshape), flat).unwrap()
            });
            let dw = rw.then(|| {
                gm.dot(&cols.t())
                    .into_shape_with_order(IxDyn(&wshape))
                    .unwrap()
            });
            let mut grads = vec![dx, dw];
            if has_bias {
                grads.push(Some(gm.sum_axis(Axis(1)).into_dyn()));
            }
            grads
        })
    }

    /// Per-channel ("depthwise") convolution with a `[C, 1, k, k]` weight and
    /// same-size output (`k` odd).
    pub fn depthwise_conv2d(&self, weight: &Var, bias: Option<&Var>) -> Var {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(xs.len(), 4, "depthwise input must be NCHW");
        assert_eq!(ws[0], xs[1], "depthwise channel mismatch");
        assert_eq!(ws[1], 1, "depthwise weight must be [C, 1, k, k]");
        assert!(ws[2] % 2 == 1 && ws[2] == ws[3], "depthwise kernel must be odd and square");
        let (b, c, h, w, k) = (xs[0], xs[1], xs[2], xs[3], ws[2]);
        let r = (k / 2) as isize;
        let hw = h * w;
        let x = self.value().as_slice().unwrap().to_vec();
        let wt = weight.value().as_slice().unwrap().to_vec();
        let bias_v: Option<Vec<f64>> = bias.map(|v| v.value().iter().copied().collect());

        let taps = move |y: usize, xx: usize, ky: usize, kx: usize| -> Option<usize> {
            let iy = y as isize + ky as isize - r;
            let ix = xx as isize + kx as isize - r;
            (iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize)
                .then(|| iy as usize * w + ix as usize)
        };

        let mut out = vec![0.0; b * c * hw];
        par::for_each_chunk_mut(&mut out, hw, |p, dst| {
            let ch = p % c;
            let src = &x[p * hw..][..hw];
            let ker = &wt[ch * k * k..][..k * k];
            let b0 = bias_v.as_ref().map_or(0.0, |bv| bv[ch]);
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            if let Some(i) = taps(y, xx, ky, kx) {
                                acc += ker[ky * k + kx] * src[i];
                            }
                        }
                    }
                    dst[y * w + xx] = acc + b0;
                }
            }
        });
        let out = ArrayD::from_shape_vec(IxDyn(&xs), out).unwrap();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bv) = bias {
            parents.push(bv.clone());
        }
        if !tracks(&parents.iter().collect::<Vec<_>>()) {
            return Var::constant(out);
        }
        let has_bias = bias.is_some();
        Var::from_op(out, parents, move |g| {
            let gs = g.as_slice().unwrap();
            let mut dx = vec![0.0; b * c * hw];
            par::for_each_chunk_mut(&mut dx, hw, |p, dst| {
                let ch = p % c;
                let gp = &gs[p * hw..][..hw];
                let ker = &wt[ch * k * k..][..k * k];
                for y in 0..h {
                    for xx in 0..w {
                        let gv = gp[y * w + xx];
                        for ky in 0..k {
                            for kx in 0..k {
                                if let Some(i) = taps(y, xx, ky, kx) {
                                    dst[i] += ker[ky * k + kx] * gv;
                                }
                            }
                        }
                    }
                }
            });
            let partial = par::map_indexed(b * c, |p| {
                let gp = &gs[p * hw..][..hw];
                let src = &x[p * hw..][..hw];
                let mut dk = vec![0.0; k * k];
                for y in 0..h {
                    for xx in 0..w {
                        let gv = gp[y * w + xx];
                        for ky in 0..k {
                            for kx in 0..k {
                                if let Some(i) = taps(y, xx, ky, kx) {
                                    dk[ky * k + kx] += src[i] * gv;
                                }
                            }
                        }
                    }
                }
                (dk, gp.iter().sum::<f64>())
            });
            let mut dw = vec![0.0; c * k * k];
            let mut db = vec![0.0; c];
            for (p, (dk, gsum)) in partial.iter().enumerate() {
                let ch = p % c;
                for (acc, v) in dw[ch * k * k..][..k * k].iter_mut().zip(dk) {
                    *acc += v;
                }
                db[ch] += gsum;
            }
            let mut grads = vec![
                Some(ArrayD::from_shape_vec(IxDyn(&xs), dx).unwrap()),
                Some(ArrayD::from_shape_vec(IxDyn(&ws), dw).unwrap()),
            ];
            if has_bias {
                grads.push(Some(ArrayD::from_shape_vec(IxDyn(&[c]), db).unwrap()));
            }
            grads
        })
    }
}

/// Reference dense convolution by direct summation; used to cross-check the
/// im2col path.
pub fn conv2d_direct(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let g = Geometry::new(x.shape(), w.shape(), stride, pad);
    let cout = w.shape()[0];
    let mut out = ArrayD::zeros(IxDyn(&[g.batch, cout, g.ho, g.wo]));
    for b in 0..g.batch {
        for co in 0..cout {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = bias.map_or(0.0, |bv| bv[[co]]);
                    for ci in 0..g.cin {
                        for ky in 0..g.kh {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for kx in 0..g.kw {
                                if let Some(ix) = g.src(ox, kx, g.w) {
                                    acc += w[[co, ci, ky, kx]] * x[[b, ci, iy, ix]];
                                }
                            }
                        }
                    }
                    out[[b, co, oy, ox]] = acc;
                }
            }
        }
    }
    out
}
