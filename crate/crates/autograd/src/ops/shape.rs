use ndarray::{ArrayD, Axis, IxDyn, Slice};

use crate::var::{tracks, Tensor, Var};

fn contiguous(t: Tensor) -> Tensor {
    if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().into_owned()
    }
}

impl Var {
    pub fn sum_all(&self) -> Var {
        let out = ArrayD::from_elem(IxDyn(&[]), self.value().sum());
        if !tracks(&[self]) {
            return Var::constant(out);
        }
        let dim = self.value().raw_dim();
        Var::from_op(out, vec![self.clone()], move |g| {
            let gv = *g.iter().next().unwrap();
            vec![Some(ArrayD::from_elem(dim.clone(), gv))]
        })
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Var {
        let mut out = self.value().sum_axis(Axis(axis));
        if keepdim {
            out = out.insert_axis(Axis(axis));
        }
        if !tracks(&[self]) {
            return Var::constant(out);
        }
        let shape = self.shape().to_vec();
        Var::from_op(out, vec![self.clone()], move |g| {
            let g = if keepdim {
                g.clone()
            } else {
                g.clone().insert_axis(Axis(axis))
            };
            vec![Some(g.broadcast(IxDyn(&shape)).unwrap().to_owned())]
        })
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Var {
        let n = self.shape()[axis] as f64;
        self.sum_axis(axis, keepdim).scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let out = self
            .value()
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|e| panic!("reshape {:?} -> {shape:?}: {e}", self.shape()));
        if !tracks(&[self]) {
            return Var::constant(out);
        }
        let orig = self.shape().to_vec();
        Var::from_op(out, vec![self.clone()], move |g| {
            vec![Some(g.clone().into_shape_with_order(IxDyn(&orig)).unwrap())]
        })
    }

    pub fn permute(&self, axes: &[usize]) -> Var {
        let out = contiguous(self.value().clone().permuted_axes(IxDyn(axes)));
        if !tracks(&[self]) {
            return Var::constant(out);
        }
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Var::from_op(out, vec![self.clone()], move |g| {
            vec![Some(contiguous(g.clone().permuted_axes(IxDyn(&inverse))))]
        })
    }

    /// Swap the last two axes.
    pub fn transpose_last(&self) -> Var {
        let n = self.ndim();
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 2, n - 1);
        self.permute(&axes)
    }

    pub fn concat(vars: &[Var], axis: usize) -> Var {
        assert!(!vars.is_empty(), "concat of nothing");
        let views: Vec<_> = vars.iter().map(|v| v.value().view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views)
            .unwrap_or_else(|e| panic!("concat along {axis}: {e}"));
        if !tracks(&vars.iter().collect::<Vec<_>>()) {
            return Var::constant(out);
        }
        let sizes: Vec<usize> = vars.iter().map(|v| v.shape()[axis]).collect();
        Var::from_op(out, vars.to_vec(), move |g| {
            let mut start = 0;
            sizes
                .iter()
                .map(|&n| {
                    let part = g
                        .slice_axis(Axis(axis), Slice::from(start..start + n))
                        .to_owned();
                    start += n;
                    Some(part)
                })
                .collect()
        })
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let out = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        if !tracks(&[self]) {
            return Var::constant(out);
        }
        let shape = self.shape().to_vec();
        Var::from_op(out, vec![self.clone()], move |g| {
            let mut full = ArrayD::zeros(IxDyn(&shape));
            full.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                .assign(g);
            vec![Some(full)]
        })
    }

    /// Select elements of a flat (1-D) variable by index.
    pub fn gather_flat(&self, indices: &[usize]) -> Var {
        assert_eq!(self.ndim(), 1, "gather_flat expects a 1-D variable");
        let src = self.value();
        let out: Vec<f64> = indices.iter().map(|&i| src[i]).collect();
        let out = ArrayD::from_shape_vec(IxDyn(&[indices.len()]), out).unwrap();
        if !tracks(&[self]) {
            return Var::constant(out);
        }
        let n = src.len();
        let idx = indices.to_vec();
        Var::from_op(out, vec![self.clone()], move |g| {
            let mut full = ArrayD::zeros(IxDyn(&[n]));
            for (gi, &i) in g.iter().zip(&idx) {
                full[i] += *gi;
            }
            vec![Some(full)]
        })
    }
}
