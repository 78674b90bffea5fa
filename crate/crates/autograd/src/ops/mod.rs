//! Differentiable operations and their reverse-mode rules.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod shape;

pub use shape::WindowDirection;

use crate::tape::{Node, NodeId};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Ln,
    Softplus,
    Powf(f64),
}

pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Minimum(NodeId, NodeId),
    Maximum(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Unary(NodeId, Unary),
    MatMul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    DwConv1d {
        x: NodeId,
        kernel: NodeId,
        t: usize,
        d: usize,
        w: usize,
    },
    Conv1d {
        x: NodeId,
        weight: NodeId,
        t: usize,
        cin: usize,
        cout: usize,
        k: usize,
    },
    Softmax {
        x: NodeId,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: NodeId,
        cols: usize,
        denom: Vec<f64>,
        clamped: Vec<bool>,
    },
    GroupNorm {
        x: NodeId,
        cols: usize,
        groups: usize,
        denom: Vec<f64>,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    MeanRows {
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    SumAll(NodeId),
    BroadcastRows {
        x: NodeId,
        rows: usize,
    },
    Reshape(NodeId),
    Narrow {
        x: NodeId,
        outer: usize,
        axis_len: usize,
        start: usize,
        len: usize,
        inner: usize,
    },
    Gather {
        x: NodeId,
        index: Vec<usize>,
    },
    Window {
        x: NodeId,
        source: Vec<Option<usize>>,
    },
    ConcatRows {
        parts: Vec<(NodeId, usize)>,
    },
}

/// Adds `f`'s contribution into the adjoint of `id`, allocating on first use.
pub(crate) fn accumulate(
    nodes: &[Node],
    adj: &mut [Option<Vec<f64>>],
    id: NodeId,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = adj[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(slot);
}

pub(crate) fn backward(nodes: &[Node], id: NodeId, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::Add(..)
        | Op::Sub(..)
        | Op::Mul(..)
        | Op::Div(..)
        | Op::Minimum(..)
        | Op::Maximum(..)
        | Op::Scale(..)
        | Op::AddScalar(..)
        | Op::Unary(..) => elementwise::backward(nodes, node, g, adj),
        Op::MatMul { .. } => linalg::backward(nodes, node, g, adj),
        Op::DwConv1d { .. } | Op::Conv1d { .. } => conv::backward(nodes, node, g, adj),
        Op::Softmax { .. } | Op::LayerNorm { .. } | Op::GroupNorm { .. } => {
            norm::backward(nodes, node, g, adj)
        }
        Op::MaxPool2 { .. }
        | Op::MeanRows { .. }
        | Op::SumAll(..)
        | Op::BroadcastRows { .. }
        | Op::Reshape(..)
        | Op::Narrow { .. }
        | Op::Gather { .. }
        | Op::Window { .. }
        | Op::ConcatRows { .. } => shape::backward(nodes, node, g, adj),
    }
}
