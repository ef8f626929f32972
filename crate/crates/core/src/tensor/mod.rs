//! Dense float64 tensors with tape-free, dynamically built reverse-mode
//! differentiation.
//!
//! Every op that has at least one input requiring gradients records its
//! inputs on the result; [`Tensor::backward`] walks that graph in reverse
//! topological order. Leaves keep their gradient between calls (accumulate
//! with `+=`) until [`Tensor::zero_grad`]; interior gradients are released as
//! soon as they have been propagated.

mod gemm;
mod ops;

use std::cell::Cell;
use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub(crate) use gemm::gemm;
use ops::Op;

thread_local! {
    static NO_GRAD_DEPTH: Cell<usize> = const { Cell::new(0) };
}

/// Run `f` with graph recording disabled on the current thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Reset;
    impl Drop for Reset {
        fn drop(&mut self) {
            NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
        }
    }
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let _reset = Reset;
    f()
}

fn recording() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    op: Option<Op>,
}

/// Reference-counted handle to an immutable tensor value plus its gradient
/// buffer. Cloning is cheap.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            op,
        }))
    }

    /// Result of an op: records `op` only when some input needs a gradient.
    pub(crate) fn derived(shape: Vec<usize>, data: Vec<f64>, parents: &[&Tensor], op: impl FnOnce() -> Op) -> Self {
        let needs = recording() && parents.iter().any(|p| p.requires_grad());
        if needs {
            Self::from_parts(shape, data, true, Some(op()))
        } else {
            Self::from_parts(shape, data, false, None)
        }
    }

    /// A constant (no gradient) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "{} values do not fill shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    /// A trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.with_requires_grad(true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(Vec::new(), vec![v], false, None)
    }

    /// Fresh leaf sharing this tensor's values, detached from any graph.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self::from_parts(self.0.shape.clone(), self.0.data.clone(), requires_grad, None)
    }

    pub fn detach(&self) -> Self {
        self.with_requires_grad(false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Add into the gradient buffer through `f`, allocating zeros first.
    pub(crate) fn accumulate(&self, f: impl FnOnce(&mut [f64])) {
        if !self.0.requires_grad {
            return;
        }
        let mut guard = self.0.grad.lock().expect("grad lock poisoned");
        let buf = guard.get_or_insert_with(|| vec![0.0; self.0.data.len()]);
        f(buf);
    }

    fn take_grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").take()
    }

    /// Reverse-mode sweep from a scalar.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward on a tensor that is not connected to any trainable leaf".into(),
            ));
        }
        let order = self.topological_order();
        self.accumulate(|g| g[0] += 1.0);
        for node in order.iter().rev() {
            let Some(op) = &node.0.op else { continue };
            let Some(g) = node.take_grad() else { continue };
            op.backward(&node.0.data, &g);
        }
        Ok(())
    }

    /// Post-order over nodes requiring gradients; each node appears once.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(Arc::as_ptr(&t.0)) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for p in op.parents() {
                    if p.requires_grad() && !seen.contains(&Arc::as_ptr(&p.0)) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests;
