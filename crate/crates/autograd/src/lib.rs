//! A compact reverse-mode automatic differentiation engine over dense `f64`
//! tensors, with the convolution, normalization and attention primitives
//! needed by dense-prediction networks.
//!
//! Graphs are built eagerly: every operation on a [`Var`] computes its value
//! immediately and, when gradient tracking is enabled and any input requires
//! a gradient, records a backward closure. [`Var::backward`] walks the graph
//! in reverse topological order and returns [`Gradients`] keyed both by node
//! and by [`Param`].
//!
//! Heavy kernels (im2col convolution, batched products, resizing) are
//! data-parallel through [`par`]; with the `parallel` feature disabled they
//! run sequentially and produce identical results.

pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod optim;
pub mod par;
mod param;
mod var;

pub use optim::AdamW;
pub use param::{Buffer, Module, Param};
pub use var::{grad_enabled, no_grad, tracks, Gradients, Tensor, Var};
