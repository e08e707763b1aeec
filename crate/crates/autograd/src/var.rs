use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};

/// Dense 64-bit tensor used for every value and gradient in the graph.
pub type Tensor = ArrayD<f64>;

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>> + Send + Sync>;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording any backward closures on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node {
    id: usize,
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    param_key: Option<u64>,
}

/// A node in the computation graph. Cheap to clone.
#[derive(Clone)]
pub struct Var(Arc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn next_id() -> usize {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

fn standard(t: Tensor) -> Tensor {
    if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().into_owned()
    }
}

impl Var {
    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Self {
        Var(Arc::new(Node {
            id: next_id(),
            value: standard(value),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
            param_key: None,
        }))
    }

    /// A leaf that accumulates gradients (inputs of gradient checks, Grad-CAM targets).
    pub fn leaf(value: Tensor) -> Self {
        Var(Arc::new(Node {
            id: next_id(),
            value: standard(value),
            requires_grad: grad_enabled(),
            parents: Vec::new(),
            backward: None,
            param_key: None,
        }))
    }

    pub(crate) fn param_leaf(value: Tensor, key: u64) -> Self {
        Var(Arc::new(Node {
            id: next_id(),
            value: standard(value),
            requires_grad: grad_enabled(),
            parents: Vec::new(),
            backward: None,
            param_key: Some(key),
        }))
    }

    pub fn scalar(x: f64) -> Self {
        Self::constant(ArrayD::from_elem(IxDyn(&[]), x))
    }

    /// Record an operation. `backward` maps the output gradient to one
    /// optional gradient per parent, in order.
    pub fn from_op<F>(value: Tensor, parents: Vec<Var>, backward: F) -> Self
    where
        F: Fn(&Tensor) -> Vec<Option<Tensor>> + Send + Sync + 'static,
    {
        if !tracks(&parents.iter().collect::<Vec<_>>()) {
            return Self::constant(value);
        }
        Var(Arc::new(Node {
            id: next_id(),
            value: standard(value),
            requires_grad: true,
            parents,
            backward: Some(Box::new(backward)),
            param_key: None,
        }))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn ndim(&self) -> usize {
        self.0.value.ndim()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.0.value.len(), 1, "item() on non-scalar {:?}", self.shape());
        *self.0.value.iter().next().unwrap()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    /// Identity that forces gradient tracking from this point on, so the
    /// gradient with respect to this node is available after `backward`.
    pub fn tracked(&self) -> Var {
        if !grad_enabled() {
            return self.clone();
        }
        Var(Arc::new(Node {
            id: next_id(),
            value: self.0.value.clone(),
            requires_grad: true,
            parents: vec![self.clone()],
            backward: Some(Box::new(|g: &Tensor| vec![Some(g.clone())])),
            param_key: None,
        }))
    }

    /// Reverse-mode pass seeded with ones of the output shape.
    pub fn backward(&self) -> Gradients {
        self.backward_with(ArrayD::ones(self.0.value.raw_dim()))
    }

    pub fn backward_with(&self, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.shape(), "seed shape must match output");
        let mut grads = Gradients::default();
        if !self.0.requires_grad {
            return grads;
        }
        let order = topo_order(self);
        grads.by_node.insert(self.0.id, seed);
        for node in order.iter().rev() {
            let Some(g) = grads.by_node.get(&node.0.id) else {
                continue;
            };
            if let Some(key) = node.0.param_key {
                accumulate(&mut grads.by_param, key as usize, g.clone());
            }
            let Some(bw) = node.0.backward.as_ref() else {
                continue;
            };
            let parent_grads = bw(g);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                if let (true, Some(pg)) = (parent.0.requires_grad, pg) {
                    debug_assert_eq!(pg.shape(), parent.shape(), "gradient shape mismatch");
                    accumulate(&mut grads.by_node, parent.0.id, pg);
                }
            }
        }
        grads
    }
}

fn accumulate(map: &mut HashMap<usize, Tensor>, key: usize, g: Tensor) {
    match map.get_mut(&key) {
        Some(acc) => *acc += &g,
        None => {
            map.insert(key, g);
        }
    }
}

/// Whether an op over `inputs` should record a backward closure.
pub fn tracks(inputs: &[&Var]) -> bool {
    grad_enabled() && inputs.iter().any(|v| v.requires_grad())
}

fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    let mut stack: Vec<(Var, bool)> = vec![(root.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if !visited.insert(v.0.id) {
            continue;
        }
        stack.push((v.clone(), true));
        for p in &v.0.parents {
            if p.0.requires_grad && !visited.contains(&p.0.id) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Result of a backward pass: gradients per graph node and per parameter.
#[derive(Default)]
pub struct Gradients {
    by_node: HashMap<usize, Tensor>,
    by_param: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        self.by_node.get(&v.id())
    }

    pub fn param(&self, key: u64) -> Option<&Tensor> {
        self.by_param.get(&(key as usize))
    }

    pub fn insert_param(&mut self, key: u64, g: Tensor) {
        self.by_param.insert(key as usize, g);
    }

    pub fn param_count(&self) -> usize {
        self.by_param.len()
    }
}
