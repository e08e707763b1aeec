use ndarray::{Array2, Array3, ArrayView2, Axis, Ix2, Ix3, IxDyn};

use crate::par;
use crate::var::{tracks, Tensor, Var};

fn as2(t: &Tensor, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    t.view()
        .into_shape_with_order((rows, cols))
        .expect("contiguous 2-D view")
}

fn batched(a: &Array3<f64>, b: &Array3<f64>, ta: bool, tb: bool) -> Array3<f64> {
    let n = a.shape()[0];
    let mats = par::map_indexed(n, |i| {
        let x = a.index_axis(Axis(0), i);
        let y = b.index_axis(Axis(0), i);
        let x = if ta { x.t() } else { x };
        let y = if tb { y.t() } else { y };
        x.dot(&y)
    });
    let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
    ndarray::stack(Axis(0), &views).expect("stack batched products")
}

impl Var {
    /// `[.., m, k] x [k, n]` (shared right operand) or `[b, m, k] x [b, k, n]`.
    pub fn matmul(&self, other: &Var) -> Var {
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let k = *sa.last().unwrap();
        if sb.len() == 2 {
            assert_eq!(sb[0], k, "matmul inner dims {sa:?} x {sb:?}");
            let m = self.value().len() / k;
            let n = sb[1];
            let a2 = as2(self.value(), m, k).to_owned();
            let b2 = other.value().clone().into_dimensionality::<Ix2>().unwrap();
            let mut out_shape = sa.clone();
            *out_shape.last_mut().unwrap() = n;
            let out = a2
                .dot(&b2)
                .into_dyn()
                .into_shape_with_order(IxDyn(&out_shape))
                .unwrap();
            if !tracks(&[self, other]) {
                return Var::constant(out);
            }
            let (ra, rb) = (self.requires_grad(), other.requires_grad());
            return Var::from_op(out, vec![self.clone(), other.clone()], move |g| {
                let g2 = as2(g, m, n);
                let da = ra.then(|| {
                    g2.dot(&b2.t())
                        .into_dyn()
                        .into_shape_with_order(IxDyn(&sa))
                        .unwrap()
                });
                let db = rb.then(|| a2.t().dot(&g2).into_dyn());
                vec![da, db]
            });
        }
        assert_eq!(sa.len(), 3, "batched matmul expects 3-D operands");
        assert_eq!(sb.len(), 3, "batched matmul expects 3-D operands");
        assert_eq!(sa[0], sb[0], "batch mismatch {sa:?} x {sb:?}");
        assert_eq!(sb[1], k, "matmul inner dims {sa:?} x {sb:?}");
        let a3 = self.value().clone().into_dimensionality::<Ix3>().unwrap();
        let b3 = other.value().clone().into_dimensionality::<Ix3>().unwrap();
        let out = batched(&a3, &b3, false, false).into_dyn();
        if !tracks(&[self, other]) {
            return Var::constant(out);
        }
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Var::from_op(out, vec![self.clone(), other.clone()], move |g| {
            let g3 = g.clone().into_dimensionality::<Ix3>().unwrap();
            let da = ra.then(|| batched(&g3, &b3, false, true).into_dyn());
            let db = rb.then(|| batched(&a3, &g3, true, false).into_dyn());
            vec![da, db]
        })
    }

    /// `x W^T + b` over the last axis; `weight` is `[out, in]`.
    pub fn linear(&self, weight: &Var, bias: Option<&Var>) -> Var {
        let sx = self.shape().to_vec();
        let sw = weight.shape().to_vec();
        assert_eq!(sw.len(), 2, "linear weight must be 2-D");
        let (out_f, in_f) = (sw[0], sw[1]);
        assert_eq!(*sx.last().unwrap(), in_f, "linear input width {sx:?} vs {sw:?}");
        let m = self.value().len() / in_f;
        let x2 = as2(self.value(), m, in_f).to_owned();
        let w2: Array2<f64> = weight.value().clone().into_dimensionality::<Ix2>().unwrap();
        let mut y = x2.dot(&w2.t());
        if let Some(b) = bias {
            let bv = b.value().view().into_shape_with_order(out_f).unwrap();
            y += &bv;
        }
        let mut out_shape = sx.clone();
        *out_shape.last_mut().unwrap() = out_f;
        let out = y.into_dyn().into_shape_with_order(IxDyn(&out_shape)).unwrap();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        if !tracks(&parents.iter().collect::<Vec<_>>()) {
            return Var::constant(out);
        }
        let (rx, rw) = (self.requires_grad(), weight.requires_grad());
        let has_bias = bias.is_some();
        Var::from_op(out, parents, move |g| {
            let g2 = as2(g, m, out_f);
            let dx = rx.then(|| {
                g2.dot(&w2)
                    .into_dyn()
                    .into_shape_with_order(IxDyn(&sx))
                    .unwrap()
            });
            let dw = rw.then(|| g2.t().dot(&x2).into_dyn());
            let mut grads = vec![dx, dw];
            if has_bias {
                grads.push(Some(g2.sum_axis(Axis(0)).into_dyn()));
            }
            grads
        })
    }
}
