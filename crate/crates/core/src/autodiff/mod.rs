//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive pushes one node holding its output value and a closure
//! mapping the output gradient to gradients for each parent. Nodes are
//! appended in evaluation order, so a node's parents always have smaller
//! indices and a single reverse sweep visits each node once.

mod broadcast;
mod conv;
mod elementwise;
mod matmul;
mod norm;
mod reduce;
mod resample;
mod shape;

pub use broadcast::broadcast_shape;
pub(crate) use matmul::gemm_nn;
pub use elementwise::{ElementwiseOp, EXP_CLAMP};
pub use resample::Resample;

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Records primitive applications for one forward pass.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

/// A value living on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: true }
    }

    /// A tape that keeps values but never records backward rules.
    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    pub fn leaf_shared(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.recording,
        });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Appends an op result. `backward` is built lazily so that no closure is
    /// allocated when no parent needs a gradient.
    pub(crate) fn push<F>(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: F,
    ) -> Result<Var<'_, T>>
    where
        F: FnOnce() -> BackwardFn<T>,
    {
        self.push_shared(op, Arc::new(value), parents, backward)
    }

    /// [`Tape::push`] for a value the backward closure also holds.
    pub(crate) fn push_shared<F>(
        &self,
        op: &'static str,
        value: Arc<Tensor<T>>,
        parents: &[Var<'_, T>],
        backward: F,
    ) -> Result<Var<'_, T>>
    where
        F: FnOnce() -> BackwardFn<T>,
    {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.recording && parents.iter().any(|p| nodes[p.id].requires_grad);
        let backward = requires_grad.then(backward);
        nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            backward,
            requires_grad,
        });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Back-propagates from a scalar loss. Gradients are retained for leaves
    /// that require them; intermediate gradients are released as soon as they
    /// have been propagated.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(g) = grads[id].take() else { continue };
            let parent_grads = backward(&g);
            assert_eq!(parent_grads.len(), node.parents.len(), "backward arity");
            for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                assert!(pid < id, "tape is not topologically ordered");
                let Some(pg) = pg else { continue };
                if !nodes[pid].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[pid].value.shape());
                match &mut grads[pid] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub(crate) fn take_id(&mut self, id: usize) -> Option<Tensor<T>> {
        self.grads.get_mut(id).and_then(Option::take)
    }
}

pub(crate) fn var_from_id<T>(tape: &Tape<T>, id: usize) -> Var<'_, T> {
    Var { tape, id }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

/// Dot product with eight interleaved accumulators; the summation order is
/// fixed, so results are deterministic.
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let split = n / 8 * 8;
    for (x, y) in a[..split].chunks_exact(8).zip(b[..split].chunks_exact(8)) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in a[split..].iter().zip(&b[split..]) {
        s += x * y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_unit_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([3], &[1.0, 2.0, 3.0]).unwrap(), true);
        let loss = x.sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2], &[1.0, 2.0]).unwrap(), true);
        let loss = x.mul(x).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones([2]), true);
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones([2]), true);
        let c = tape.constant(Tensor::ones([2]));
        let loss = x.mul(c).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::<f32>::inference();
        let x = tape.leaf(Tensor::ones([2]), true);
        let y = x.exp().unwrap();
        assert!(!y.requires_grad());
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::from_f64([4], &[0.3, -1.2, 2.0, 0.7]).unwrap(), true);
            let y = x.silu().unwrap().mul(x.exp().unwrap()).unwrap().sum().unwrap();
            tape.backward(y).unwrap().get(x).unwrap().clone()
        };
        assert_eq!(run().data(), run().data());
    }
}
