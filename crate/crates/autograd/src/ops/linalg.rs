use super::{accumulate, Op};
use crate::tape::{Node, Var};
use crate::tensor::{Result, TensorError};

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl<'t> Var<'t> {
    /// Matrix product of two 2-D tensors.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let (a, b) = (&nodes[self.id], &nodes[other.id]);
        if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: a.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut value = vec![0.0; m * n];
        gemm(&a.value, &b.value, &mut value, m, k, n);
        let rg = a.requires_grad || b.requires_grad;
        drop(nodes);
        Ok(self.tape.push(
            vec![m, n],
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            rg,
        ))
    }
}

pub(super) fn backward(nodes: &[Node], node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let Op::MatMul { a, b, m, k, n } = node.op else {
        unreachable!()
    };
    let (va, vb) = (&nodes[a].value, &nodes[b].value);
    // dA = G · Bᵀ
    accumulate(nodes, adj, a, |d| {
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &vb[p * n..(p + 1) * n];
                d[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    });
    // dB = Aᵀ · G
    accumulate(nodes, adj, b, |d| {
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let av = va[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, &gv) in d[p * n..(p + 1) * n].iter_mut().zip(grow) {
                    *o += av * gv;
                }
            }
        }
    });
}
