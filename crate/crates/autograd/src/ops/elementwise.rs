use ndarray::{Axis, IxDyn};

use crate::var::{tracks, Tensor, Var};

/// Reduce a broadcast gradient back to `shape`.
pub fn sum_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (axis, &n) in shape.iter().enumerate() {
        if n == 1 && g.shape()[axis] != 1 {
            g = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    g.into_shape_with_order(IxDyn(shape))
        .expect("broadcast reduction shape")
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            assert!(
                da == db || da == 1 || db == 1,
                "incompatible broadcast {a:?} vs {b:?}"
            );
            da.max(db)
        })
        .collect()
}

fn expand(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        t.clone()
    } else {
        t.broadcast(IxDyn(shape))
            .expect("broadcast")
            .to_owned()
    }
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        let out = self.value() + other.value();
        if !tracks(&[self, other]) {
            return Var::constant(out);
        }
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Var::from_op(out, vec![self.clone(), other.clone()], move |g| {
            vec![Some(sum_to_shape(g, &sa)), Some(sum_to_shape(g, &sb))]
        })
    }

    pub fn sub(&self, other: &Var) -> Var {
        let out = self.value() - other.value();
        if !tracks(&[self, other]) {
            return Var::constant(out);
        }
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Var::from_op(out, vec![self.clone(), other.clone()], move |g| {
            vec![Some(sum_to_shape(g, &sa)), Some(sum_to_shape(&-g, &sb))]
        })
    }

    pub fn mul(&self, other: &Var) -> Var {
        let out = self.value() * other.value();
        if !tracks(&[self, other]) {
            return Var::constant(out);
        }
        let shape = broadcast_shape(self.shape(), other.shape());
        let a = expand(self.value(), &shape);
        let b = expand(other.value(), &shape);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Var::from_op(out, vec![self.clone(), other.clone()], move |g| {
            vec![
                ra.then(|| sum_to_shape(&(g * &b), &sa)),
                rb.then(|| sum_to_shape(&(g * &a), &sb)),
            ]
        })
    }

    pub fn div(&self, other: &Var) -> Var {
        let out = self.value() / other.value();
        if !tracks(&[self, other]) {
            return Var::constant(out);
        }
        let shape = broadcast_shape(self.shape(), other.shape());
        let b = expand(other.value(), &shape);
        let q = out.clone();
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Var::from_op(out, vec![self.clone(), other.clone()], move |g| {
            let ga = g / &b;
            let gb = -(&ga * &q);
            vec![Some(sum_to_shape(&ga, &sa)), Some(sum_to_shape(&gb, &sb))]
        })
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Var {
        let out = self.value() * k;
        Var::from_op(out, vec![self.clone()], move |g| vec![Some(g * k)])
    }

    pub fn add_scalar(&self, k: f64) -> Var {
        let out = self.value() + k;
        Var::from_op(out, vec![self.clone()], |g| vec![Some(g.clone())])
    }

    /// `k - self`
    pub fn rsub_scalar(&self, k: f64) -> Var {
        let out = self.value().mapv(|x| k - x);
        Var::from_op(out, vec![self.clone()], |g| vec![Some(-g)])
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Var {
        let out = self.value().mapv(f);
        if !tracks(&[self]) {
            return Var::constant(out);
        }
        let x = self.value().clone();
        let y = out.clone();
        Var::from_op(out, vec![self.clone()], move |g| {
            let mut d = g.clone();
            ndarray::Zip::from(&mut d)
                .and(&x)
                .and(&y)
                .for_each(|d, &x, &y| *d *= df(x, y));
            vec![Some(d)]
        })
    }

    pub fn exp(&self) -> Var {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Var {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn powf(&self, p: f64) -> Var {
        self.unary(
            move |x| x.powf(p),
            move |x, _| if p == 0.0 { 0.0 } else { p * x.powf(p - 1.0) },
        )
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Var {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Var {
        self.unary(gelu, |x, _| gelu_grad(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}
