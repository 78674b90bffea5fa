//! Temporal IoU and mean average precision.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assign::ActionSegment;
use crate::error::{Error, Result};
use crate::inference::{selection_order, Detection};

/// `|a ∩ b| / |a ∪ b|`, zero when the union is empty.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// One label per instant.
    #[default]
    Single,
    /// Overlapping actions of different classes (detection-mAP).
    Multilabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub protocol: Protocol,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            protocol: Protocol::Single,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::config("eval.iou_thresholds must not be empty"));
        }
        for (i, &th) in self.iou_thresholds.iter().enumerate() {
            if !(th > 0.0 && th <= 1.0) {
                return Err(Error::config(format!(
                    "eval.iou_thresholds[{i}] = {th} lies outside (0, 1]"
                )));
            }
            if i > 0 && th <= self.iou_thresholds[i - 1] {
                return Err(Error::config(
                    "eval.iou_thresholds must be strictly increasing",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision-recall points of ranked detections of one class.
///
/// `dets` pairs each detection with its video index and must already be in
/// ranking order. Each detection claims the unmatched ground truth of its
/// video with the highest IoU (earlier start on ties) when that IoU reaches
/// `threshold`.
pub fn pr_curve(
    dets: &[(usize, Detection)],
    gts: &[Vec<ActionSegment>],
    threshold: f64,
) -> Vec<PrPoint> {
    let total: usize = gts.iter().map(Vec::len).sum();
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(dets.len());
    for (rank, (video, d)) in dets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts[*video].iter().enumerate() {
            if used[*video][j] {
                continue;
            }
            let iou = tiou(d.interval(), (g.start, g.end));
            let better = match best {
                None => true,
                Some((k, b)) => iou > b || (iou == b && g.start < gts[*video][k].start),
            };
            if better {
                best = Some((j, iou));
            }
        }
        if let Some((j, iou)) = best {
            if iou >= threshold {
                used[*video][j] = true;
                tp += 1;
            }
        }
        points.push(PrPoint {
            recall: if total == 0 {
                0.0
            } else {
                tp as f64 / total as f64
            },
            precision: tp as f64 / (rank + 1) as f64,
        });
    }
    points
}

/// All-point interpolated area under a PR curve.
pub fn interpolated_ap(points: &[PrPoint]) -> f64 {
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (p, &e) in points.iter().zip(&envelope) {
        ap += (p.recall - prev) * e;
        prev = p.recall;
    }
    ap
}

/// AP of one class over several videos. Detections are ranked here by the
/// Soft-NMS selection order, with the video index breaking exact ties.
pub fn average_precision(
    dets: &[(usize, Detection)],
    gts: &[Vec<ActionSegment>],
    threshold: f64,
) -> f64 {
    let mut ranked = dets.to_vec();
    ranked.sort_by(|a, b| selection_order(&a.1, &b.1).then(a.0.cmp(&b.0)));
    interpolated_ap(&pr_curve(&ranked, gts, threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// `(threshold, mAP)` pairs.
    pub per_threshold: Vec<(f64, f64)>,
    pub average: f64,
}

impl MapReport {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.per_threshold
            .iter()
            .find(|(t, _)| (t - threshold).abs() < 1e-9)
            .map(|&(_, m)| m)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,mAP\n");
        for (t, m) in &self.per_threshold {
            writeln!(s, "{t:.2},{m:.6}").expect("write to string");
        }
        writeln!(s, "average,{:.6}", self.average).expect("write to string");
        s
    }
}

/// Per-threshold mAP over classes that have ground truth, plus the mean
/// over thresholds.
pub fn mean_ap(
    dets: &[Vec<Detection>],
    gts: &[Vec<ActionSegment>],
    num_classes: usize,
    cfg: &EvalConfig,
) -> Result<MapReport> {
    cfg.validate()?;
    if dets.len() != gts.len() {
        return Err(Error::config(format!(
            "{} detection lists for {} videos",
            dets.len(),
            gts.len()
        )));
    }
    let per_class: Vec<(Vec<(usize, Detection)>, Vec<Vec<ActionSegment>>)> = (1..=num_classes)
        .map(|c| {
            let d = dets
                .iter()
                .enumerate()
                .flat_map(|(v, ds)| ds.iter().filter(|d| d.class == c).map(move |d| (v, *d)))
                .collect();
            let g = gts
                .iter()
                .map(|gs| gs.iter().filter(|g| g.class == c).copied().collect())
                .collect();
            (d, g)
        })
        .filter(|(_, g): &(_, Vec<Vec<ActionSegment>>)| g.iter().any(|v| !v.is_empty()))
        .collect();
    let per_threshold: Vec<(f64, f64)> = cfg
        .iou_thresholds
        .iter()
        .map(|&th| {
            let m = if per_class.is_empty() {
                0.0
            } else {
                per_class
                    .iter()
                    .map(|(d, g)| average_precision(d, g, th))
                    .sum::<f64>()
                    / per_class.len() as f64
            };
            (th, m)
        })
        .collect();
    let average = per_threshold.iter().map(|&(_, m)| m).sum::<f64>() / per_threshold.len() as f64;
    Ok(MapReport {
        per_threshold,
        average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(s: f64, e: f64) -> ActionSegment {
        ActionSegment {
            start: s,
            end: e,
            class: 1,
        }
    }

    fn det(s: f64, e: f64, score: f64) -> (usize, Detection) {
        (
            0,
            Detection {
                start: s,
                end: e,
                class: 1,
                score,
            },
        )
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou((0.0, 10.0), (0.0, 10.0)), 1.0);
        assert!((tiou((0.0, 10.0), (5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert_eq!(tiou((1.0, 1.0), (1.0, 1.0)), 0.0);
    }

    #[test]
    fn hand_walked_ap() {
        let gts = vec![vec![seg(0.0, 10.0), seg(20.0, 30.0)]];
        let dets = vec![
            det(0.0, 10.0, 0.9),
            det(40.0, 50.0, 0.8),
            det(20.0, 30.0, 0.7),
        ];
        let ap = average_precision(&dets, &gts, 0.5);
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_counts_as_false_positive() {
        let gts = vec![vec![seg(0.0, 10.0)]];
        let dets = vec![det(0.0, 10.0, 0.9), det(0.0, 10.0, 0.8)];
        let pr = pr_curve(&dets, &gts, 0.5);
        assert_eq!(pr[1].precision, 0.5);
        assert_eq!(average_precision(&dets, &gts, 0.5), 1.0);
    }

    #[test]
    fn csv_has_average_row() {
        let r = MapReport {
            per_threshold: vec![(0.5, 1.0)],
            average: 1.0,
        };
        assert_eq!(
            r.to_csv(),
            "threshold,mAP\n0.50,1.000000\naverage,1.000000\n"
        );
    }
}
