use super::{accumulate, Op, Unary};
use crate::tape::{Node, Var};
use crate::tensor::{Result, TensorError};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'t> Var<'t> {
    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let nodes = self.tape.nodes();
        let (a, b) = (&nodes[self.id], &nodes[other.id]);
        if a.shape != b.shape {
            return Err(TensorError::ShapeMismatch {
                op: name,
                left: a.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let value = a
            .value
            .iter()
            .zip(&b.value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = a.shape.clone();
        let rg = a.requires_grad || b.requires_grad;
        drop(nodes);
        Ok(self.tape.push(shape, value, op(self.id, other.id), rg))
    }

    fn unary(self, kind: Unary, f: impl Fn(f64) -> f64) -> Var<'t> {
        let nodes = self.tape.nodes();
        let a = &nodes[self.id];
        let value = a.value.iter().map(|&x| f(x)).collect();
        let (shape, rg) = (a.shape.clone(), a.requires_grad);
        drop(nodes);
        self.tape.push(shape, value, Op::Unary(self.id, kind), rg)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "minimum",
            Op::Minimum,
            |a, b| if a <= b { a } else { b },
        )
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "maximum",
            Op::Maximum,
            |a, b| if a >= b { a } else { b },
        )
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let nodes = self.tape.nodes();
        let a = &nodes[self.id];
        let value = a.value.iter().map(|&x| x * s).collect();
        let (shape, rg) = (a.shape.clone(), a.requires_grad);
        drop(nodes);
        self.tape.push(shape, value, Op::Scale(self.id, s), rg)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let nodes = self.tape.nodes();
        let a = &nodes[self.id];
        let value = a.value.iter().map(|&x| x + s).collect();
        let (shape, rg) = (a.shape.clone(), a.requires_grad);
        drop(nodes);
        self.tape.push(shape, value, Op::AddScalar(self.id), rg)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Unary::Relu, |x| x.max(0.0))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Unary::Sigmoid, sigmoid)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp, f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Unary::Ln, f64::ln)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Unary::Softplus, softplus)
    }

    /// `x^p` for nonnegative `x`.
    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(Unary::Powf(p), move |x| x.powf(p))
    }
}

pub(super) fn backward(nodes: &[Node], node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    match node.op {
        Op::Add(a, b) => {
            accumulate(nodes, adj, a, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g)
            });
            accumulate(nodes, adj, b, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g)
            });
        }
        Op::Sub(a, b) => {
            accumulate(nodes, adj, a, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g)
            });
            accumulate(nodes, adj, b, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d -= g)
            });
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            accumulate(nodes, adj, a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * vb[i];
                }
            });
            accumulate(nodes, adj, b, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * va[i];
                }
            });
        }
        Op::Div(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            accumulate(nodes, adj, a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] / vb[i];
                }
            });
            accumulate(nodes, adj, b, |d| {
                for i in 0..d.len() {
                    d[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                }
            });
        }
        Op::Minimum(a, b) | Op::Maximum(a, b) => {
            let pick_a = matches!(node.op, Op::Minimum(..));
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let takes_a = |i: usize| {
                if pick_a {
                    va[i] <= vb[i]
                } else {
                    va[i] >= vb[i]
                }
            };
            accumulate(nodes, adj, a, |d| {
                for i in 0..d.len() {
                    if takes_a(i) {
                        d[i] += g[i];
                    }
                }
            });
            accumulate(nodes, adj, b, |d| {
                for i in 0..d.len() {
                    if !takes_a(i) {
                        d[i] += g[i];
                    }
                }
            });
        }
        Op::Scale(a, s) => {
            accumulate(nodes, adj, a, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g)
            });
        }
        Op::AddScalar(a) => {
            accumulate(nodes, adj, a, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g)
            });
        }
        Op::Unary(a, kind) => {
            let x = &nodes[a].value;
            let y = &node.value;
            accumulate(nodes, adj, a, |d| {
                for i in 0..d.len() {
                    let local = match kind {
                        Unary::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Sigmoid => y[i] * (1.0 - y[i]),
                        Unary::Exp => y[i],
                        Unary::Ln => 1.0 / x[i],
                        Unary::Softplus => sigmoid(x[i]),
                        Unary::Powf(p) => {
                            if p == 0.0 {
                                0.0
                            } else {
                                p * x[i].powf(p - 1.0)
                            }
                        }
                    };
                    d[i] += g[i] * local;
                }
            });
        }
        _ => unreachable!("not an elementwise op"),
    }
}
