//! Wengert-list tape and the variable handles recorded on it.
//!
//! Every differentiable operation computes its value eagerly and appends a
//! node describing how to route gradients back to its inputs. Inputs are
//! always recorded before the operation that consumes them, so a reverse walk
//! over the node list is a valid topological order.

use std::cell::{Ref, RefCell};

use crate::ops::{self, Op};
use crate::tensor::{Result, Tensor, TensorError};

pub type NodeId = usize;

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<f64>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records operations for one forward pass. Single-threaded; independent
/// tapes may live on separate threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that accumulates a gradient on [`Var::backward`].
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.leaf(t.clone(), true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.leaf(t, false)
    }

    pub fn leaf(&self, t: Tensor, requires_grad: bool) -> Var<'_> {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, requires_grad)
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.get(v.id)?.as_ref()?;
        let shape = self.nodes.borrow()[v.id].shape.clone();
        Some(Tensor::new(shape, g.clone()).expect("gradient shape matches node"))
    }

    pub fn zero_grad(&self) {
        for g in self.grads.borrow_mut().iter_mut() {
            *g = None;
        }
    }

    pub(crate) fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.grads.borrow_mut().push(None);
        Var { tape: self, id }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    /// Reverse sweep from `loss`, accumulating into leaf gradients.
    fn backward_from(&self, loss: NodeId) -> Result<()> {
        let nodes = self.nodes.borrow();
        let shape = &nodes[loss].shape;
        if nodes[loss].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(shape.clone()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss + 1];
        adj[loss] = Some(vec![1.0]);
        let mut grads = self.grads.borrow_mut();
        for id in (0..=loss).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            ops::backward(&nodes, id, &g, &mut adj);
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes()[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes()[self.id].requires_grad
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is valid")
    }

    /// Borrowed access to the flat value.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.nodes()[self.id].value)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    /// Tape-cut copy: same value, no gradient flows back through it.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    /// Propagates gradients from this scalar into every reachable leaf.
    /// Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }
}
