use crate::error::{Result, TensorError};
use crate::ops::{self, Op};
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
}

impl Node {
    pub(crate) fn requires_grad(&self) -> bool {
        self.value.requires_grad()
    }
}

/// Records operations in execution order. Nodes are only ever appended, so
/// the node list is already a topological order and backward simply walks
/// it in reverse.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives a gradient (images, targets, masks).
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        t.set_grad(None);
        self.push(t, Op::Leaf)
    }

    /// A leaf whose gradient is populated by [`Tape::backward`].
    pub fn param(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(true);
        t.set_grad(None);
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad()
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records `value` as the output of `op`; the result requires a gradient
    /// iff any of `inputs` does.
    pub(crate) fn record(&mut self, mut value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad());
        value.set_requires_grad(rg);
        self.push(value, op)
    }

    /// Back-propagates from a scalar `loss`, filling the gradient slot of
    /// every recorded tensor that requires one. Gradients from an earlier
    /// call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        if !lv.requires_grad() {
            return Err(TensorError::Detached);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad() {
                continue;
            }
            ops::backward(&node.op, &node.value, &g, &self.nodes, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads.into_iter().chain(std::iter::repeat(None))) {
            if node.requires_grad() {
                let len = node.value.len();
                node.value.set_grad(Some(g.unwrap_or_else(|| vec![0.0; len])));
            } else {
                node.value.set_grad(None);
            }
        }
        Ok(())
    }
}

/// Adds `delta` into the gradient buffer of `v` if it requires one.
pub(crate) fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    v: Var,
    f: impl FnOnce(&mut [f64]),
) {
    let node = &nodes[v.0];
    if !node.requires_grad() {
        return;
    }
    let len = node.value.len();
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(g);
}
