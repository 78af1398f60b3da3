//! Reverse-mode tensor: an immutable f64 buffer plus an optional backward
//! edge into the computation graph it was produced by.
//!
//! Tensors are reference-counted handles; cloning is cheap and shares the
//! underlying buffer. Graph recording is per-thread: operations record a
//! [`GradFn`] edge only while grad mode is enabled and at least one operand
//! requires gradients. Dropping the result of a loss computation frees the
//! whole recorded graph; leaf tensors (parameters) survive and keep their
//! accumulated gradients until [`Tensor::zero_grad`].

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::autodiff::ops::GradFn;
use crate::error::{CoreError, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// True while operations on this thread should record backward edges.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// RAII guard that disables graph recording on the current thread.
///
/// Used for rollout collection and deterministic evaluation, where building
/// a graph would only waste memory.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|c| c.replace(false));
        NoGradGuard { prev }
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|c| c.set(prev));
    }
}

pub(crate) struct TensorInner {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    /// Row-major values. Mutated only through `set_values` on leaves, never
    /// while a recorded graph referencing this tensor is alive.
    pub(crate) values: RefCell<Vec<f64>>,
    pub(crate) grad: RefCell<Option<Vec<f64>>>,
    pub(crate) requires_grad: bool,
    pub(crate) grad_fn: Option<GradFn>,
}

/// N-dimensional array of f64 participating in reverse-mode differentiation.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<TensorInner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("values", &self.inner.values.borrow())
            .finish()
    }
}

impl Tensor {
    fn new_inner(
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        grad_fn: Option<GradFn>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            inner: Rc::new(TensorInner {
                id: next_id(),
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// Builds a constant tensor, rejecting NaN/Inf values and shape/length
    /// disagreement.
    pub fn from_shape(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(CoreError::dim(
                "from_shape",
                format!("shape {:?} needs {} values, got {}", shape, expect, values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(CoreError::numeric(
                "from_shape",
                format!("non-finite value {v} rejected"),
            ));
        }
        Ok(Tensor::new_inner(shape, values, false, None))
    }

    /// Constant scalar (shape `[]`).
    pub fn scalar(v: f64) -> Result<Tensor> {
        Tensor::from_shape(vec![], vec![v])
    }

    /// Constant 1-D vector.
    pub fn vector(values: Vec<f64>) -> Result<Tensor> {
        let n = values.len();
        Tensor::from_shape(vec![n], values)
    }

    /// Constant 2-D matrix in row-major order.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor> {
        Tensor::from_shape(vec![rows, cols], values)
    }

    /// All-zero tensor.
    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new_inner(shape, vec![0.0; n], false, None)
    }

    /// Marks a fresh copy of this tensor as a differentiable leaf.
    pub fn requires_grad(&self) -> Tensor {
        Tensor::new_inner(
            self.inner.shape.clone(),
            self.inner.values.borrow().clone(),
            true,
            None,
        )
    }

    /// Leaf parameter from raw values.
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        Ok(Tensor::from_shape(shape, values)?.requires_grad())
    }

    pub(crate) fn from_op(shape: Vec<usize>, values: Vec<f64>, grad_fn: GradFn) -> Result<Tensor> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(CoreError::numeric(
                grad_fn.op_name(),
                format!("produced non-finite value {v}"),
            ));
        }
        let record = grad_enabled() && grad_fn.parents().iter().any(|p| p.inner.requires_grad);
        if record {
            Ok(Tensor::new_inner(shape, values, true, Some(grad_fn)))
        } else {
            Ok(Tensor::new_inner(shape, values, false, None))
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    /// Copies the values out.
    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.inner.values.borrow()[0]
    }

    pub(crate) fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.values.borrow())
    }

    /// Overwrites the values of a leaf tensor in place (optimizer updates,
    /// checkpoint restore). Must not be called while a recorded graph
    /// containing this tensor is alive.
    pub fn set_values(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(CoreError::dim(
                "set_values",
                format!("expected {} values, got {}", self.len(), values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(CoreError::numeric(
                "set_values",
                format!("non-finite value {v} rejected"),
            ));
        }
        self.inner.values.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// Gradient accumulated by the most recent backward pass, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Clears the accumulated gradient.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => {
                *slot = Some(contribution.to_vec());
            }
        }
    }

    /// Scales the accumulated gradient in place (gradient-norm clipping).
    pub fn scale_grad(&self, factor: f64) {
        if let Some(g) = self.inner.grad.borrow_mut().as_mut() {
            for gi in g.iter_mut() {
                *gi *= factor;
            }
        }
    }
}

impl Drop for TensorInner {
    fn drop(&mut self) {
        // Recurrent graphs form chains tens of thousands of nodes deep; the
        // default field-recursive drop would overflow the stack. Detach each
        // node's backward edge and walk the graph with an explicit worklist
        // instead, so every node drops with its edge already severed.
        let mut pending: Vec<GradFn> = self.grad_fn.take().into_iter().collect();
        while let Some(grad_fn) = pending.pop() {
            for parent in grad_fn.take_parents() {
                let Tensor { inner } = parent;
                if let Some(mut sole) = Rc::into_inner(inner) {
                    if let Some(edge) = sole.grad_fn.take() {
                        pending.push(edge);
                    }
                }
            }
        }
    }
}

/// Runs reverse-mode accumulation from a scalar loss.
///
/// Every tensor on the recorded graph that requires gradients receives its
/// additive share; fan-out contributions accumulate. Intermediate node
/// gradients are consumed as the sweep passes them, so only leaves hold
/// gradients afterwards.
pub fn backward(loss: &Tensor) -> Result<()> {
    if !loss.is_scalar() {
        return Err(CoreError::contract(
            "backward",
            format!("loss must be scalar, got shape {:?}", loss.shape()),
        ));
    }
    let order = topo_order(loss);
    loss.accumulate_grad(&[1.0]);
    for node in order.iter().rev() {
        let Some(grad_fn) = &node.inner.grad_fn else {
            continue;
        };
        // Consume this node's gradient; intermediates never outlive the sweep.
        let upstream = node.inner.grad.borrow_mut().take();
        let Some(upstream) = upstream else { continue };
        grad_fn.backward(node, &upstream);
    }
    Ok(())
}

/// Post-order over the recorded graph: every node appears after all of its
/// recorded parents, so reverse iteration is a valid backward schedule.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(grad_fn) = &node.inner.grad_fn {
            for parent in grad_fn.parents() {
                if parent.inner.requires_grad && !visited.contains(&parent.id()) {
                    stack.push((parent.clone(), false));
                }
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_shape_rejects_non_finite() {
        assert!(Tensor::from_shape(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::from_shape(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn from_shape_rejects_length_mismatch() {
        let err = Tensor::from_shape(vec![2, 2], vec![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, CoreError::Dimension { .. }));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap().requires_grad();
        let err = backward(&x).unwrap_err();
        assert!(matches!(err, CoreError::Contract { .. }));
    }

    #[test]
    fn no_grad_guard_suppresses_recording() {
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap().requires_grad();
        let y = {
            let _guard = NoGradGuard::new();
            x.sum().unwrap()
        };
        assert!(!y.inner.requires_grad);
        assert!(y.inner.grad_fn.is_none());
        // Recording resumes once the guard is dropped.
        let z = x.sum().unwrap();
        assert!(z.inner.requires_grad);
    }
}
