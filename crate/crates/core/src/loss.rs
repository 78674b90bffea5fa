//! Training objective: quality-weighted focal loss plus interval IoU loss.
//!
//! ```text
//! L = (Σ_pos σ_IoU·L_foc + Σ_pos L_IoU) / N_pos + Σ_neg L_foc / N_neg
//! ```
//!
//! `σ_IoU` is the temporal IoU between each positive's decoded prediction
//! and its target; it enters as a constant weight. Either quotient is
//! dropped when its count is zero.

use serde::{Deserialize, Serialize};
use tridet_autograd::{Tape, Tensor, Var};

use crate::assign::AssignmentResult;
use crate::error::{Error, Result};
use crate::eval::tiou;
use crate::model::LevelPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IouKind {
    #[default]
    Giou,
    Iou,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f64,
    /// Positive-class weight; `None` gives every sample weight 1.
    pub alpha: Option<f64>,
    pub iou: IouKind,
    /// Scale positive classification terms by the current σ_IoU.
    pub quality_weighting: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: Some(0.25),
            iou: IouKind::Giou,
            quality_weighting: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("loss.gamma must be nonnegative"));
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config("loss.alpha must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Per-term totals of one loss evaluation. `focal_pos` already carries the
/// σ_IoU weights; `focal_pos`, `focal_neg` and `iou` are unnormalized sums.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub focal_pos: f64,
    pub focal_neg: f64,
    pub iou: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl LossBreakdown {
    /// Recombines the terms; equals `total` up to rounding.
    pub fn recombined(&self) -> f64 {
        guarded(self.focal_pos + self.iou, self.n_pos) + guarded(self.focal_neg, self.n_neg)
    }

    /// Sums terms and counts of several videos and recomputes the total.
    pub fn merge(parts: &[LossBreakdown]) -> LossBreakdown {
        let mut out = LossBreakdown::default();
        for p in parts {
            out.focal_pos += p.focal_pos;
            out.focal_neg += p.focal_neg;
            out.iou += p.iou;
            out.n_pos += p.n_pos;
            out.n_neg += p.n_neg;
        }
        out.total = out.recombined();
        out
    }
}

fn guarded(x: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        x / n as f64
    }
}

fn alpha_t(alpha: Option<f64>, y: f64) -> f64 {
    match alpha {
        Some(a) => a * y + (1.0 - a) * (1.0 - y),
        None => 1.0,
    }
}

/// Binary focal loss of one logit, via stable log-sigmoid terms.
pub fn focal_loss(logit: f64, target: f64, gamma: f64, alpha: Option<f64>) -> f64 {
    let z = logit * (2.0 * target - 1.0);
    let softplus_neg = (-z).max(0.0) + (-z.abs()).exp().ln_1p();
    let one_minus_pt = (-softplus_neg - z).exp();
    let modulation = if gamma == 0.0 {
        1.0
    } else {
        one_minus_pt.powf(gamma)
    };
    alpha_t(alpha, target) * modulation * softplus_neg
}

/// Elementwise focal loss on the tape; `targets` has the logits' shape.
pub fn focal_loss_var<'t>(
    logits: Var<'t>,
    targets: &Tensor,
    gamma: f64,
    alpha: Option<f64>,
) -> Result<Var<'t>> {
    let tape = logits.tape();
    let sign = tape.constant(targets.map(|y| 2.0 * y - 1.0));
    let z = logits.mul(sign)?;
    let nll = z.neg().softplus();
    let mut loss = if gamma == 0.0 {
        nll
    } else {
        z.neg().sigmoid().powf(gamma).mul(nll)?
    };
    if alpha.is_some() {
        loss = loss.mul(tape.constant(targets.map(|y| alpha_t(alpha, y))))?;
    }
    Ok(loss)
}

/// 1-D GIoU (or IoU) loss between two intervals.
pub fn iou_loss(pred: (f64, f64), gt: (f64, f64), kind: IouKind) -> f64 {
    let inter = (pred.1.min(gt.1) - pred.0.max(gt.0)).max(0.0);
    let union = (pred.1 - pred.0) + (gt.1 - gt.0) - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    match kind {
        IouKind::Iou => 1.0 - iou,
        IouKind::Giou => {
            let hull = pred.1.max(gt.1) - pred.0.min(gt.0);
            let penalty = if hull > 0.0 {
                (hull - union) / hull
            } else {
                0.0
            };
            1.0 - iou + penalty
        }
    }
}

/// Interval loss for intervals `[t − d_st, t + d_et]` against
/// `[t − a, t + b]`, all vectors of equal length with `a + b > 0` and
/// nonnegative entries. Returns the per-sample losses.
pub fn iou_loss_var<'t>(
    d_st: Var<'t>,
    d_et: Var<'t>,
    a: Var<'t>,
    b: Var<'t>,
    kind: IouKind,
) -> Result<Var<'t>> {
    let inter = d_st.minimum(a)?.add(d_et.minimum(b)?)?;
    let union = d_st.add(d_et)?.add(a)?.add(b)?.sub(inter)?;
    let iou = inter.div(union)?;
    let loss = iou.neg().add_scalar(1.0);
    Ok(match kind {
        IouKind::Iou => loss,
        IouKind::Giou => {
            let hull = d_st.maximum(a)?.add(d_et.maximum(b)?)?;
            loss.add(hull.sub(union)?.div(hull)?)?
        }
    })
}

/// Source of the σ_IoU weights.
#[derive(Debug, Clone, Copy)]
pub enum Quality<'a> {
    /// Computed from the current predictions.
    Current,
    /// Supplied per positive, in assignment order.
    Fixed(&'a [f64]),
}

/// σ_IoU of every positive under the current predictions.
pub fn quality_weights(preds: &[LevelPrediction<'_>], assign: &AssignmentResult) -> Vec<f64> {
    let values: Vec<(Tensor, Tensor)> = preds
        .iter()
        .map(|p| (p.d_st.value(), p.d_et.value()))
        .collect();
    assign
        .positives
        .iter()
        .map(|p| {
            let ch = if assign.multilabel { p.class } else { 0 };
            let (ds, de) = &values[p.level];
            let t = p.t as f64;
            tiou(
                (t - ds.get(p.t, ch), t + de.get(p.t, ch)),
                (t - p.target.0, t + p.target.1),
            )
        })
        .collect()
}

/// Total objective for one video.
pub fn total_loss<'t>(
    preds: &[LevelPrediction<'t>],
    assign: &AssignmentResult,
    cfg: &LossConfig,
    quality: Quality<'_>,
) -> Result<(Var<'t>, LossBreakdown)> {
    if preds.len() != assign.level_lengths.len() {
        return Err(Error::config(format!(
            "{} prediction levels but {} assigned levels",
            preds.len(),
            assign.level_lengths.len()
        )));
    }
    let c = assign.num_classes;
    for (l, p) in preds.iter().enumerate() {
        let want = [assign.level_lengths[l], c];
        if p.cls.shape() != want {
            return Err(Error::config(format!(
                "level {} logits have shape {:?}, expected {want:?}",
                l + 1,
                p.cls.shape()
            )));
        }
    }
    let tape: &'t Tape = preds[0].cls.tape();
    let rows = assign.total_instants();
    let channels = preds[0].d_st.shape()[1];
    let sigma: Vec<f64> = match quality {
        _ if !cfg.quality_weighting => vec![1.0; assign.positives.len()],
        Quality::Current => quality_weights(preds, assign),
        Quality::Fixed(w) => {
            if w.len() != assign.positives.len() {
                return Err(Error::config("one quality weight per positive is required"));
            }
            w.to_vec()
        }
    };

    let mut targets = Tensor::zeros(vec![rows, c]);
    let mut positive = vec![false; rows * c];
    let mut weight = vec![0.0; rows * c];
    for (p, &s) in assign.positives.iter().zip(&sigma) {
        let r = assign.row(p.level, p.t);
        targets.data_mut()[r * c + p.class] = 1.0;
        if assign.multilabel {
            positive[r * c + p.class] = true;
            weight[r * c + p.class] = s;
        } else {
            positive[r * c..(r + 1) * c].fill(true);
            weight[r * c..(r + 1) * c].fill(s);
        }
    }
    let n_pos = assign.positives.len();
    let n_neg = if assign.multilabel {
        rows * c - n_pos
    } else {
        rows - n_pos
    };
    let pos_norm = guarded(1.0, n_pos);
    let neg_norm = guarded(1.0, n_neg);
    for (w, &pos) in weight.iter_mut().zip(&positive) {
        *w = if pos { *w * pos_norm } else { neg_norm };
    }

    let logits = Var::concat_rows(&preds.iter().map(|p| p.cls).collect::<Vec<_>>())?;
    let focal = focal_loss_var(logits, &targets, cfg.gamma, cfg.alpha)?;
    let fv = focal.value();
    let (mut focal_pos, mut focal_neg) = (0.0, 0.0);
    for (i, &f) in fv.data().iter().enumerate() {
        if positive[i] {
            focal_pos += f * weight[i] / pos_norm;
        } else {
            focal_neg += f;
        }
    }
    let mut total = focal
        .mul(tape.constant(Tensor::new(vec![rows, c], weight)?))?
        .sum();

    let mut iou = 0.0;
    if n_pos > 0 {
        let d_st = Var::concat_rows(&preds.iter().map(|p| p.d_st).collect::<Vec<_>>())?;
        let d_et = Var::concat_rows(&preds.iter().map(|p| p.d_et).collect::<Vec<_>>())?;
        let idx: Vec<usize> = assign
            .positives
            .iter()
            .map(|p| {
                assign.row(p.level, p.t) * channels + if assign.multilabel { p.class } else { 0 }
            })
            .collect();
        let a = tape.constant(Tensor::vector(
            assign.positives.iter().map(|p| p.target.0).collect(),
        )?);
        let b = tape.constant(Tensor::vector(
            assign.positives.iter().map(|p| p.target.1).collect(),
        )?);
        let per = iou_loss_var(d_st.gather(&idx)?, d_et.gather(&idx)?, a, b, cfg.iou)?;
        iou = per.value().data().iter().sum();
        total = total.add(per.sum().scale(pos_norm))?;
    }
    let breakdown = LossBreakdown {
        total: total.item(),
        focal_pos,
        focal_neg,
        iou,
        n_pos,
        n_neg,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {:?}", breakdown)));
    }
    Ok((total, breakdown))
}
