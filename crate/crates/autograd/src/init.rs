//! Parameter initializers.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::var::Tensor;

pub fn zeros(shape: &[usize]) -> Tensor {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones(shape: &[usize]) -> Tensor {
    ArrayD::ones(IxDyn(shape))
}

pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    if bound == 0.0 {
        return zeros(shape);
    }
    let dist = Uniform::new(-bound, bound).expect("valid uniform bound");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("valid std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// Default fan-in scaled uniform initialization for dense and conv weights,
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}
