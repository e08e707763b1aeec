use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::var::{grad_enabled, Tensor, Var};

static NEXT_KEY: AtomicU64 = AtomicU64::new(1);

/// A named model weight. Trainable parameters enter the graph as tracked
/// leaves; frozen ones enter as constants.
#[derive(Debug, Clone)]
pub struct Param {
    key: u64,
    name: String,
    value: Tensor,
    trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        Self {
            key: NEXT_KEY.fetch_add(1, Ordering::Relaxed),
            name: name.into(),
            value,
            trainable,
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn set_value(&mut self, value: Tensor) {
        assert_eq!(value.shape(), self.value.shape(), "shape change for {}", self.name);
        self.value = value;
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    /// Graph handle for the current forward pass.
    pub fn var(&self) -> Var {
        if self.trainable && grad_enabled() {
            Var::param_leaf(self.value.clone(), self.key)
        } else {
            Var::constant(self.value.clone())
        }
    }
}

/// Non-trainable state that a forward pass may update (batch-norm running
/// statistics).
#[derive(Debug)]
pub struct Buffer {
    name: String,
    value: Mutex<Tensor>,
}

impl Clone for Buffer {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            value: Mutex::new(self.get()),
        }
    }
}

impl Buffer {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value: Mutex::new(value),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn get(&self) -> Tensor {
        self.value.lock().expect("buffer lock poisoned").clone()
    }

    pub fn set(&self, value: Tensor) {
        let mut guard = self.value.lock().expect("buffer lock poisoned");
        assert_eq!(guard.shape(), value.shape(), "shape change for buffer {}", self.name);
        *guard = value;
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn buffers(&self) -> Vec<&Buffer> {
        Vec::new()
    }

    fn trainable_params(&self) -> Vec<&Param> {
        self.params().into_iter().filter(|p| p.trainable()).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

impl<M: Module> Module for Option<M> {
    fn params(&self) -> Vec<&Param> {
        self.as_ref().map(Module::params).unwrap_or_default()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.as_mut().map(Module::params_mut).unwrap_or_default()
    }
    fn buffers(&self) -> Vec<&Buffer> {
        self.as_ref().map(Module::buffers).unwrap_or_default()
    }
}

impl<M: Module> Module for Vec<M> {
    fn params(&self) -> Vec<&Param> {
        self.iter().flat_map(Module::params).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.iter_mut().flat_map(Module::params_mut).collect()
    }
    fn buffers(&self) -> Vec<&Buffer> {
        self.iter().flat_map(Module::buffers).collect()
    }
}
