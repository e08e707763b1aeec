//! Composite segmentation objective
//! `alpha * focal + beta * dice + (1 - alpha - beta) * lovasz`
//! over `[B, N+1, H, W]` logits and `[B, H, W]` class-index masks.

use ndarray::{Array3, Array4, ArrayView3};
use serde::{Deserialize, Serialize};
use tripath_autograd::Var;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_focal: f64,
    pub dice_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.4, beta: 0.3, gamma_focal: 2.0, dice_smooth: 1e-6 }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { alpha, beta, ..Self::default() };
        w.validate()?;
        Ok(w)
    }

    pub fn lovasz_weight(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.alpha) || !unit(self.beta) || self.alpha + self.beta > 1.0 {
            return Err(Error::InvalidWeights { alpha: self.alpha, beta: self.beta });
        }
        if !(self.gamma_focal >= 0.0 && self.dice_smooth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma_focal {} must be >= 0 and dice_smooth {} > 0",
                self.gamma_focal, self.dice_smooth
            )));
        }
        Ok(())
    }
}

/// The weighted total and its three terms.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub total: Var,
    pub focal: Var,
    pub dice: Var,
    pub lovasz: Var,
}

fn one_hot(logits: &Var, mask: ArrayView3<'_, u8>) -> Result<Array4<f64>> {
    let s = logits.shape();
    if s.len() != 4 || (s[0], s[2], s[3]) != mask.dim() {
        return Err(Error::ShapeMismatch(format!("logits {s:?} vs mask {:?}", mask.shape())));
    }
    let c = s[1];
    let mut out = Array4::zeros((s[0], c, s[2], s[3]));
    for ((b, y, x), &v) in mask.indexed_iter() {
        if v as usize >= c {
            return Err(Error::LabelOutOfRange { sample: format!("batch item {b}"), value: v as usize, max: c - 1 });
        }
        out[[b, v as usize, y, x]] = 1.0;
    }
    Ok(out)
}

fn constant(a: Array4<f64>) -> Var {
    Var::constant(a.into_dyn())
}

/// Mean over pixels of `-(1 - p_t)^gamma log p_t`.
pub fn focal_loss(logits: &Var, mask: ArrayView3<'_, u8>, gamma: f64) -> Result<Var> {
    let g = constant(one_hot(logits, mask)?);
    let log_pt = logits.log_softmax(1).mul(&g).sum_axis(1, false);
    if gamma == 0.0 {
        return Ok(log_pt.mean_all().neg());
    }
    let weight = log_pt.exp().rsub_scalar(1.0).powf(gamma);
    Ok(weight.mul(&log_pt).mean_all().neg())
}

/// `1 - mean_c (2 sum p_c g_c + s) / (sum p_c + sum g_c + s)` over all classes.
pub fn dice_loss(logits: &Var, mask: ArrayView3<'_, u8>, smooth: f64) -> Result<Var> {
    let g = constant(one_hot(logits, mask)?);
    let p = logits.softmax(1);
    let per_class = |x: &Var| x.sum_axis(3, false).sum_axis(2, false).sum_axis(0, false);
    let inter = per_class(&p.mul(&g));
    let denom = per_class(&p).add(&per_class(&g)).add_scalar(smooth);
    let dice = inter.scale(2.0).add_scalar(smooth).div(&denom);
    Ok(dice.mean_all().rsub_scalar(1.0))
}

/// Gradient of the Lovász extension of the Jaccard loss at a sorted
/// ground-truth indicator.
pub fn lovasz_grad(sorted_fg: &[f64]) -> Vec<f64> {
    let total: f64 = sorted_fg.iter().sum();
    let mut out = Vec::with_capacity(sorted_fg.len());
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &f in sorted_fg {
        cum_fg += f;
        cum_bg += 1.0 - f;
        let jaccard = 1.0 - (total - cum_fg) / (total + cum_bg);
        out.push(jaccard - prev);
        prev = jaccard;
    }
    out
}

/// Lovász-softmax averaged over the classes present in the mask.
pub fn lovasz_loss(logits: &Var, mask: ArrayView3<'_, u8>) -> Result<Var> {
    let g = one_hot(logits, mask)?;
    let c = logits.shape()[1];
    let p = logits.softmax(1);
    let mut terms = Vec::new();
    for class in 0..c {
        let fg: Vec<f64> = g.index_axis(ndarray::Axis(1), class).iter().copied().collect();
        if !fg.iter().any(|&f| f > 0.0) {
            continue;
        }
        let n = fg.len();
        let pc = p.narrow(1, class, 1).reshape(&[n]);
        let fg_t = ndarray::Array1::from(fg.clone()).into_dyn();
        let sign = fg_t.mapv(|f| 1.0 - 2.0 * f);
        let errors = pc.mul(&Var::constant(sign)).add(&Var::constant(fg_t));
        let e = errors.value();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| e[[b]].total_cmp(&e[[a]]).then(a.cmp(&b)));
        let sorted_fg: Vec<f64> = order.iter().map(|&i| fg[i]).collect();
        let grad = ndarray::Array1::from(lovasz_grad(&sorted_fg)).into_dyn();
        terms.push(errors.gather_flat(&order).mul(&Var::constant(grad)).sum_all());
    }
    let count = terms.len() as f64;
    let sum = terms
        .into_iter()
        .reduce(|a, b| a.add(&b))
        .expect("every mask has at least one class");
    Ok(sum.scale(1.0 / count))
}

pub fn total_loss(logits: &Var, mask: ArrayView3<'_, u8>, weights: &LossWeights) -> Result<LossParts> {
    weights.validate()?;
    let focal = focal_loss(logits, mask, weights.gamma_focal)?;
    let dice = dice_loss(logits, mask, weights.dice_smooth)?;
    let lovasz = lovasz_loss(logits, mask)?;
    let total = focal
        .scale(weights.alpha)
        .add(&dice.scale(weights.beta))
        .add(&lovasz.scale(weights.lovasz_weight()));
    Ok(LossParts { total, focal, dice, lovasz })
}

/// Per-pixel argmax over the class axis of `[B, C, H, W]` logits; ties go to
/// the lowest class index.
pub fn argmax_classes(logits: &ndarray::ArrayD<f64>) -> Array3<u8> {
    let s = logits.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let l = logits.view().into_dimensionality::<ndarray::Ix4>().expect("4-D logits");
    Array3::from_shape_fn((b, h, w), |(i, y, x)| {
        let mut best = 0;
        for k in 1..c {
            if l[[i, k, y, x]] > l[[i, best, y, x]] {
                best = k;
            }
        }
        best as u8
    })
}
