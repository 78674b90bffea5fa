use super::{accumulate, Op};
use crate::tape::{Node, Var};
use crate::tensor::{Result, TensorError};

fn check_odd(op: &'static str, k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(TensorError::Config {
            op,
            msg: format!("kernel size must be odd, got {k}"),
        });
    }
    Ok(())
}

impl<'t> Var<'t> {
    /// Depth-wise temporal convolution with "same" zero padding.
    ///
    /// `self` is `T×D`, `kernel` is `w×D`; each channel is convolved with its
    /// own column of the kernel.
    pub fn dwconv1d(self, kernel: Var<'t>) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let (x, k) = (&nodes[self.id], &nodes[kernel.id]);
        if x.shape.len() != 2 || k.shape.len() != 2 || x.shape[1] != k.shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "dwconv1d",
                left: x.shape.clone(),
                right: k.shape.clone(),
            });
        }
        let (t, d, w) = (x.shape[0], x.shape[1], k.shape[0]);
        check_odd("dwconv1d", w)?;
        let pad = (w - 1) / 2;
        let mut out = vec![0.0; t * d];
        for j in 0..w {
            let krow = &k.value[j * d..(j + 1) * d];
            for ti in 0..t {
                let src = ti + j;
                if src < pad || src - pad >= t {
                    continue;
                }
                let xrow = &x.value[(src - pad) * d..(src - pad + 1) * d];
                let orow = &mut out[ti * d..(ti + 1) * d];
                for c in 0..d {
                    orow[c] += xrow[c] * krow[c];
                }
            }
        }
        let rg = x.requires_grad || k.requires_grad;
        drop(nodes);
        Ok(self.tape.push(
            vec![t, d],
            out,
            Op::DwConv1d {
                x: self.id,
                kernel: kernel.id,
                t,
                d,
                w,
            },
            rg,
        ))
    }

    /// Dense temporal convolution with "same" zero padding.
    ///
    /// `self` is `T×Cin`, `weight` is `k×Cin×Cout`; output is `T×Cout`.
    pub fn conv1d(self, weight: Var<'t>) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let (x, wt) = (&nodes[self.id], &nodes[weight.id]);
        if x.shape.len() != 2 || wt.shape.len() != 3 || x.shape[1] != wt.shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                left: x.shape.clone(),
                right: wt.shape.clone(),
            });
        }
        let (t, cin, k, cout) = (x.shape[0], x.shape[1], wt.shape[0], wt.shape[2]);
        check_odd("conv1d", k)?;
        let pad = (k - 1) / 2;
        let mut out = vec![0.0; t * cout];
        for j in 0..k {
            let wj = &wt.value[j * cin * cout..(j + 1) * cin * cout];
            for ti in 0..t {
                let src = ti + j;
                if src < pad || src - pad >= t {
                    continue;
                }
                let xrow = &x.value[(src - pad) * cin..(src - pad + 1) * cin];
                let orow = &mut out[ti * cout..(ti + 1) * cout];
                for (i, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (o, &wv) in orow.iter_mut().zip(&wj[i * cout..(i + 1) * cout]) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let rg = x.requires_grad || wt.requires_grad;
        drop(nodes);
        Ok(self.tape.push(
            vec![t, cout],
            out,
            Op::Conv1d {
                x: self.id,
                weight: weight.id,
                t,
                cin,
                cout,
                k,
            },
            rg,
        ))
    }
}

pub(super) fn backward(nodes: &[Node], node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    match node.op {
        Op::DwConv1d { x, kernel, t, d, w } => {
            let pad = (w - 1) / 2;
            let (vx, vk) = (&nodes[x].value, &nodes[kernel].value);
            accumulate(nodes, adj, x, |dx| {
                for j in 0..w {
                    for ti in 0..t {
                        let src = ti + j;
                        if src < pad || src - pad >= t {
                            continue;
                        }
                        let s = src - pad;
                        for c in 0..d {
                            dx[s * d + c] += g[ti * d + c] * vk[j * d + c];
                        }
                    }
                }
            });
            accumulate(nodes, adj, kernel, |dk| {
                for j in 0..w {
                    for ti in 0..t {
                        let src = ti + j;
                        if src < pad || src - pad >= t {
                            continue;
                        }
                        let s = src - pad;
                        for c in 0..d {
                            dk[j * d + c] += g[ti * d + c] * vx[s * d + c];
                        }
                    }
                }
            });
        }
        Op::Conv1d {
            x,
            weight,
            t,
            cin,
            cout,
            k,
        } => {
            let pad = (k - 1) / 2;
            let (vx, vw) = (&nodes[x].value, &nodes[weight].value);
            accumulate(nodes, adj, x, |dx| {
                for j in 0..k {
                    let wj = &vw[j * cin * cout..(j + 1) * cin * cout];
                    for ti in 0..t {
                        let src = ti + j;
                        if src < pad || src - pad >= t {
                            continue;
                        }
                        let s = src - pad;
                        let grow = &g[ti * cout..(ti + 1) * cout];
                        for i in 0..cin {
                            let wrow = &wj[i * cout..(i + 1) * cout];
                            dx[s * cin + i] +=
                                grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            });
            accumulate(nodes, adj, weight, |dw| {
                for j in 0..k {
                    let dwj = &mut dw[j * cin * cout..(j + 1) * cin * cout];
                    for ti in 0..t {
                        let src = ti + j;
                        if src < pad || src - pad >= t {
                            continue;
                        }
                        let s = src - pad;
                        let grow = &g[ti * cout..(ti + 1) * cout];
                        for i in 0..cin {
                            let xv = vx[s * cin + i];
                            if xv == 0.0 {
                                continue;
                            }
                            for (o, &gv) in dwj[i * cout..(i + 1) * cout].iter_mut().zip(grow) {
                                *o += xv * gv;
                            }
                        }
                    }
                }
            });
        }
        _ => unreachable!("not a convolution"),
    }
}
