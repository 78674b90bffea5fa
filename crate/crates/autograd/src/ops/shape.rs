use super::{accumulate, Op};
use crate::tape::{Node, Var};
use crate::tensor::{numel, Result, TensorError};

use crate::MASKED_LOGIT;

/// Which neighbours a bin window collects around instant `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowDirection {
    /// Bin `b` reads instant `t − b`.
    Leftward,
    /// Bin `b` reads instant `t + b`.
    Rightward,
}

fn require_2d(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::Config {
            op,
            msg: format!("expected a 2-D tensor, got {shape:?}"),
        }),
    }
}

impl<'t> Var<'t> {
    fn record(self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(shape, value, op, rg)
    }

    /// Temporal max-pooling with window 2 and stride 2 over the rows of a
    /// `T×D` tensor. For odd `T` the trailing row is carried through.
    pub fn maxpool_stride2(self) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let x = &nodes[self.id];
        let (t, d) = require_2d("maxpool_stride2", &x.shape)?;
        let out_t = t.div_ceil(2);
        let mut value = Vec::with_capacity(out_t * d);
        let mut argmax = Vec::with_capacity(out_t * d);
        for o in 0..out_t {
            for c in 0..d {
                let i0 = (2 * o) * d + c;
                let best = if 2 * o + 1 < t {
                    let i1 = i0 + d;
                    if x.value[i1] > x.value[i0] {
                        i1
                    } else {
                        i0
                    }
                } else {
                    i0
                };
                value.push(x.value[best]);
                argmax.push(best);
            }
        }
        drop(nodes);
        Ok(self.record(vec![out_t, d], value, Op::MaxPool2 { x: self.id, argmax }))
    }

    /// Mean over the rows of a `T×D` tensor, giving `1×D`.
    pub fn avgpool_all(self) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let x = &nodes[self.id];
        let (rows, cols) = require_2d("avgpool_all", &x.shape)?;
        let mut value = vec![0.0; cols];
        for r in 0..rows {
            for (v, &s) in value.iter_mut().zip(&x.value[r * cols..(r + 1) * cols]) {
                *v += s;
            }
        }
        value.iter_mut().for_each(|v| *v /= rows as f64);
        drop(nodes);
        Ok(self.record(
            vec![1, cols],
            value,
            Op::MeanRows {
                x: self.id,
                rows,
                cols,
            },
        ))
    }

    /// Sum of all elements as a scalar of shape `[1]`.
    pub fn sum(self) -> Var<'t> {
        let s = self.with_data(|d| d.iter().sum::<f64>());
        self.record(vec![1], vec![s], Op::SumAll(self.id))
    }

    /// Replicates a `1×D` row `rows` times.
    pub fn broadcast_rows(self, rows: usize) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let x = &nodes[self.id];
        let (r, cols) = require_2d("broadcast_rows", &x.shape)?;
        if r != 1 || rows == 0 {
            return Err(TensorError::Config {
                op: "broadcast_rows",
                msg: format!("cannot broadcast {:?} to {rows} rows", x.shape),
            });
        }
        let value = x.value.repeat(rows);
        drop(nodes);
        Ok(self.record(
            vec![rows, cols],
            value,
            Op::BroadcastRows { x: self.id, rows },
        ))
    }

    /// Adds a `1×D` row (or length-`D` vector) to every row of a `T×D` tensor.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (t, row) = self.prepare_row("add_row", row)?;
        self.add(row.broadcast_rows(t)?)
    }

    /// Multiplies every row of a `T×D` tensor by a `1×D` row.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (t, row) = self.prepare_row("mul_row", row)?;
        self.mul(row.broadcast_rows(t)?)
    }

    fn prepare_row(self, op: &'static str, row: Var<'t>) -> Result<(usize, Var<'t>)> {
        let shape = self.shape();
        let (t, d) = require_2d(op, &shape)?;
        let rshape = row.shape();
        if rshape.iter().product::<usize>() != d {
            return Err(TensorError::ShapeMismatch {
                op,
                left: shape,
                right: rshape,
            });
        }
        let row = if rshape.len() == 2 {
            row
        } else {
            row.reshape(vec![1, d])?
        };
        Ok((t, row))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        let len = self.numel();
        if numel(&shape) != len || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape { shape, len });
        }
        let value = self.with_data(|d| d.to_vec());
        Ok(self.record(shape, value, Op::Reshape(self.id)))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let x = &nodes[self.id];
        if axis >= x.shape.len() || len == 0 || start + len > x.shape[axis] {
            return Err(TensorError::Config {
                op: "narrow",
                msg: format!("[{start}, {}) on axis {axis} of {:?}", start + len, x.shape),
            });
        }
        let outer: usize = x.shape[..axis].iter().product();
        let inner: usize = x.shape[axis + 1..].iter().product();
        let axis_len = x.shape[axis];
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            value.extend_from_slice(&x.value[base..base + len * inner]);
        }
        let mut shape = x.shape.clone();
        shape[axis] = len;
        drop(nodes);
        Ok(self.record(
            shape,
            value,
            Op::Narrow {
                x: self.id,
                outer,
                axis_len,
                start,
                len,
                inner,
            },
        ))
    }

    /// Picks flat elements by index into a 1-D tensor.
    pub fn gather(self, index: &[usize]) -> Result<Var<'t>> {
        if index.is_empty() {
            return Err(TensorError::Config {
                op: "gather",
                msg: "empty index".into(),
            });
        }
        let n = self.numel();
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(TensorError::Config {
                op: "gather",
                msg: format!("index {bad} out of range for {n} elements"),
            });
        }
        let value = self.with_data(|d| index.iter().map(|&i| d[i]).collect());
        Ok(self.record(
            vec![index.len()],
            value,
            Op::Gather {
                x: self.id,
                index: index.to_vec(),
            },
        ))
    }

    /// Collects `bins + 1` neighbours of every instant.
    ///
    /// `self` is `T×C`; the result is `T×C×(bins+1)` where entry `[t, c, b]`
    /// is `self[t ∓ b, c]`. Positions outside `[0, T)` hold [`MASKED_LOGIT`]
    /// and receive no gradient.
    pub fn bin_window(self, bins: usize, dir: WindowDirection) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let x = &nodes[self.id];
        let (t, c) = require_2d("bin_window", &x.shape)?;
        let width = bins + 1;
        let mut value = Vec::with_capacity(t * c * width);
        let mut source = Vec::with_capacity(t * c * width);
        for ti in 0..t {
            for ci in 0..c {
                for b in 0..width {
                    let src = match dir {
                        WindowDirection::Leftward => ti.checked_sub(b),
                        WindowDirection::Rightward => Some(ti + b).filter(|&s| s < t),
                    };
                    match src {
                        Some(s) => {
                            value.push(x.value[s * c + ci]);
                            source.push(Some(s * c + ci));
                        }
                        None => {
                            value.push(MASKED_LOGIT);
                            source.push(None);
                        }
                    }
                }
            }
        }
        drop(nodes);
        Ok(self.record(vec![t, c, width], value, Op::Window { x: self.id, source }))
    }

    /// Stacks 2-D tensors with equal column counts along the rows.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or(TensorError::Config {
            op: "concat_rows",
            msg: "nothing to concatenate".into(),
        })?;
        let tape = first.tape;
        let nodes = tape.nodes();
        let cols = require_2d("concat_rows", &nodes[first.id].shape)?.1;
        let mut value = Vec::new();
        let mut meta = Vec::with_capacity(parts.len());
        let mut rows = 0;
        let mut rg = false;
        for p in parts {
            let n = &nodes[p.id];
            let (r, c) = require_2d("concat_rows", &n.shape)?;
            if c != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: nodes[first.id].shape.clone(),
                    right: n.shape.clone(),
                });
            }
            value.extend_from_slice(&n.value);
            meta.push((p.id, n.value.len()));
            rows += r;
            rg |= n.requires_grad;
        }
        drop(nodes);
        Ok(tape.push(vec![rows, cols], value, Op::ConcatRows { parts: meta }, rg))
    }
}

pub(super) fn backward(nodes: &[Node], node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::MaxPool2 { x, argmax } => accumulate(nodes, adj, *x, |dx| {
            for (&src, &gv) in argmax.iter().zip(g) {
                dx[src] += gv;
            }
        }),
        &Op::MeanRows { x, rows, cols } => accumulate(nodes, adj, x, |dx| {
            for r in 0..rows {
                for c in 0..cols {
                    dx[r * cols + c] += g[c] / rows as f64;
                }
            }
        }),
        &Op::SumAll(x) => accumulate(nodes, adj, x, |dx| dx.iter_mut().for_each(|d| *d += g[0])),
        &Op::BroadcastRows { x, rows } => accumulate(nodes, adj, x, |dx| {
            let cols = dx.len();
            for r in 0..rows {
                for c in 0..cols {
                    dx[c] += g[r * cols + c];
                }
            }
        }),
        &Op::Reshape(x) => accumulate(nodes, adj, x, |dx| {
            dx.iter_mut().zip(g).for_each(|(d, g)| *d += g)
        }),
        &Op::Narrow {
            x,
            outer,
            axis_len,
            start,
            len,
            inner,
        } => accumulate(nodes, adj, x, |dx| {
            for o in 0..outer {
                let base = (o * axis_len + start) * inner;
                let src = &g[o * len * inner..(o + 1) * len * inner];
                for (d, s) in dx[base..base + len * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }),
        Op::Gather { x, index } => accumulate(nodes, adj, *x, |dx| {
            for (&i, &gv) in index.iter().zip(g) {
                dx[i] += gv;
            }
        }),
        Op::Window { x, source } => accumulate(nodes, adj, *x, |dx| {
            for (src, &gv) in source.iter().zip(g) {
                if let Some(s) = src {
                    dx[*s] += gv;
                }
            }
        }),
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for &(id, len) in parts {
                accumulate(nodes, adj, id, |dx| {
                    for (d, s) in dx.iter_mut().zip(&g[offset..offset + len]) {
                        *d += s;
                    }
                });
                offset += len;
            }
        }
        _ => unreachable!("not a shape op"),
    }
}
