//! Central finite-difference verification of reverse-mode gradients.
//!
//! The numeric side never calls [`Var::backward`]; it only re-evaluates the
//! scalar function on perturbed copies of the inputs.

use crate::tape::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const SCALE_FLOOR: f64 = 1e-3;

/// Outcome of a gradient check.
///
/// The error for one input tensor is `max|analytic − numeric|` divided by the
/// largest gradient magnitude seen on either side for that tensor, floored at
/// [`SCALE_FLOOR`] so structurally zero gradients are not judged on rounding
/// noise alone; the report keeps the worst input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub rel_error: f64,
    pub max_abs_diff: f64,
    pub worst_input: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_error < tol
    }
}

/// Compares the tape gradient of `f` with central differences at step `h`.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
        let loss = f(&tape, &vars)?;
        loss.backward()?;
        vars.iter()
            .map(|v| {
                v.grad()
                    .map(Tensor::into_data)
                    .unwrap_or_else(|| vec![0.0; v.numel()])
            })
            .collect::<Vec<_>>()
    };

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        if out.numel() != 1 {
            return Err(TensorError::NonScalarLoss(out.shape()));
        }
        Ok(out.item())
    };

    let mut report = GradCheck {
        rel_error: 0.0,
        max_abs_diff: 0.0,
        worst_input: 0,
    };
    let mut probe = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff = diff.max((numeric - grad[i]).abs());
            scale = scale.max(numeric.abs()).max(grad[i].abs());
        }
        let rel = diff / scale.max(SCALE_FLOOR);
        if rel >= report.rel_error {
            report = GradCheck {
                rel_error: rel,
                max_abs_diff: diff,
                worst_input: k,
            };
        }
    }
    Ok(report)
}
