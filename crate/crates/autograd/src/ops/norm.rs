use super::{accumulate, Op};
use crate::tape::{Node, Var};
use crate::tensor::{Result, TensorError};

use crate::NORM_EPS;

impl<'t> Var<'t> {
    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let x = &nodes[self.id];
        if axis >= x.shape.len() {
            return Err(TensorError::Config {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {:?}", x.shape),
            });
        }
        if x.value.iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let outer: usize = x.shape[..axis].iter().product();
        let len = x.shape[axis];
        let inner: usize = x.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; x.value.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len)
                    .map(|j| x.value[at(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (x.value[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        let (shape, rg) = (x.shape.clone(), x.requires_grad);
        drop(nodes);
        Ok(self.tape.push(
            shape,
            out,
            Op::Softmax {
                x: self.id,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Row-wise layer normalization without affine parameters.
    ///
    /// Uses the `(n−1)`-denominator standard deviation, so every non-constant
    /// row is mapped to mean 0 and L2 norm exactly `√(n−1)`. Rows whose
    /// standard deviation falls below [`NORM_EPS`] are divided by the epsilon
    /// instead; for those the norm property holds only approximately.
    pub fn layernorm(self) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let x = &nodes[self.id];
        let cols = *x.shape.last().unwrap_or(&0);
        if cols < 2 {
            return Err(TensorError::Config {
                op: "layernorm",
                msg: format!("need at least 2 features per row, got {cols}"),
            });
        }
        let rows = x.value.len() / cols;
        let mut out = vec![0.0; x.value.len()];
        let mut denom = Vec::with_capacity(rows);
        let mut clamped = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x.value[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let ss: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum();
            let std = (ss / (cols - 1) as f64).sqrt();
            let (den, clamp) = if std < NORM_EPS {
                (NORM_EPS, true)
            } else {
                (std, false)
            };
            for (o, v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = (v - mean) / den;
            }
            denom.push(den);
            clamped.push(clamp);
        }
        let (shape, rg) = (x.shape.clone(), x.requires_grad);
        drop(nodes);
        Ok(self.tape.push(
            shape,
            out,
            Op::LayerNorm {
                x: self.id,
                cols,
                denom,
                clamped,
            },
            rg,
        ))
    }

    /// Group normalization over the channels of each row (no affine).
    ///
    /// Channels are split into `groups` contiguous groups; each
    /// (row, group) block is standardized with its biased variance.
    pub fn groupnorm(self, groups: usize) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let x = &nodes[self.id];
        let cols = *x.shape.last().unwrap_or(&0);
        if groups == 0 || cols % groups != 0 {
            return Err(TensorError::Config {
                op: "groupnorm",
                msg: format!("{cols} channels are not divisible into {groups} groups"),
            });
        }
        let size = cols / groups;
        let blocks = x.value.len() / size;
        let mut out = vec![0.0; x.value.len()];
        let mut denom = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let blk = &x.value[b * size..(b + 1) * size];
            let mean = blk.iter().sum::<f64>() / size as f64;
            let var = blk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / size as f64;
            let den = (var + NORM_EPS).sqrt();
            for (o, v) in out[b * size..(b + 1) * size].iter_mut().zip(blk) {
                *o = (v - mean) / den;
            }
            denom.push(den);
        }
        let (shape, rg) = (x.shape.clone(), x.requires_grad);
        drop(nodes);
        Ok(self.tape.push(
            shape,
            out,
            Op::GroupNorm {
                x: self.id,
                cols,
                groups,
                denom,
            },
            rg,
        ))
    }
}

pub(super) fn backward(nodes: &[Node], node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let y = &node.value;
    match &node.op {
        &Op::Softmax {
            x,
            outer,
            len,
            inner,
        } => accumulate(nodes, adj, x, |dx| {
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..len {
                        dx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
        }),
        Op::LayerNorm {
            x,
            cols,
            denom,
            clamped,
        } => {
            let n = *cols;
            accumulate(nodes, adj, *x, |dx| {
                for (r, (&den, &clamp)) in denom.iter().zip(clamped).enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let yr = &y[r * n..(r + 1) * n];
                    let gmean = gr.iter().sum::<f64>() / n as f64;
                    let gy = if clamp {
                        0.0
                    } else {
                        gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / (n - 1) as f64
                    };
                    for j in 0..n {
                        dx[r * n + j] += (gr[j] - gmean - yr[j] * gy) / den;
                    }
                }
            });
        }
        Op::GroupNorm {
            x,
            cols,
            groups,
            denom,
        } => {
            let size = cols / groups;
            accumulate(nodes, adj, *x, |dx| {
                for (b, &den) in denom.iter().enumerate() {
                    let gb = &g[b * size..(b + 1) * size];
                    let yb = &y[b * size..(b + 1) * size];
                    let gmean = gb.iter().sum::<f64>() / size as f64;
                    let gy = gb.iter().zip(yb).map(|(a, b)| a * b).sum::<f64>() / size as f64;
                    for j in 0..size {
                        dx[b * size + j] += (gb[j] - gmean - yb[j] * gy) / den;
                    }
                }
            });
        }
        _ => unreachable!("not a normalization"),
    }
}
