//! Score thresholding, per-level decoding and Soft-NMS.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::tiou;
use crate::heads::decode_segment;
use crate::model::LevelValues;

/// A candidate or final detection in base-instant units; `class` is
/// 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub start: f64,
    pub end: f64,
    pub class: usize,
    pub score: f64,
}

impl Detection {
    pub fn interval(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

/// Selection order: score descending, then start, end and class ascending.
pub fn selection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.total_cmp(&b.start))
        .then(a.end.total_cmp(&b.end))
        .then(a.class.cmp(&b.class))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Scores must exceed this to become candidates.
    pub score_threshold: f64,
    pub pre_nms_top_k: usize,
    pub nms_sigma: f64,
    pub score_floor: f64,
    pub max_detections: usize,
    /// Let detections of different classes suppress each other.
    pub class_agnostic: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            score_threshold: 1e-3,
            pre_nms_top_k: 2000,
            nms_sigma: 0.5,
            score_floor: 1e-3,
            max_detections: 200,
            class_agnostic: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.score_threshold) {
            return Err(Error::config(
                "inference.score_threshold must lie in [0, 1)",
            ));
        }
        if !(self.nms_sigma > 0.0) {
            return Err(Error::config("inference.nms_sigma must be positive"));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(Error::config("inference.score_floor must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Keeps every (level, instant, class) whose score exceeds the threshold,
/// retains the `pre_nms_top_k` best and decodes them. Segments are clipped
/// to `[0, duration]` when a duration is given.
pub fn gather_candidates(
    levels: &[LevelValues],
    cfg: &InferenceConfig,
    duration: Option<f64>,
) -> Vec<Detection> {
    let mut dets = Vec::new();
    for (l, lv) in levels.iter().enumerate() {
        let c = lv.cls.cols();
        let channels = lv.d_st.cols();
        for t in 0..lv.cls.rows() {
            for k in 0..c {
                let score = sigmoid(lv.cls.get(t, k));
                if score <= cfg.score_threshold {
                    continue;
                }
                let ch = if channels == 1 { 0 } else { k };
                let (mut start, mut end) =
                    decode_segment(t, l + 1, lv.d_st.get(t, ch), lv.d_et.get(t, ch));
                if let Some(d) = duration {
                    start = start.clamp(0.0, d);
                    end = end.clamp(0.0, d);
                }
                dets.push(Detection {
                    start,
                    end,
                    class: k + 1,
                    score,
                });
            }
        }
    }
    dets.sort_by(selection_order);
    dets.truncate(cfg.pre_nms_top_k);
    dets
}

/// Gaussian Soft-NMS. Repeatedly emits the best remaining detection and
/// decays each remaining detection it may suppress by `exp(−IoU²/σ)`;
/// detections below `floor` are discarded.
pub fn soft_nms(dets: &[Detection], cfg: &InferenceConfig) -> Vec<Detection> {
    let mut pool: Vec<Detection> = dets
        .iter()
        .copied()
        .filter(|d| d.score >= cfg.score_floor)
        .collect();
    let mut out = Vec::new();
    while !pool.is_empty() && out.len() < cfg.max_detections {
        let best = (0..pool.len())
            .min_by(|&i, &j| selection_order(&pool[i], &pool[j]))
            .expect("non-empty pool");
        let chosen = pool.swap_remove(best);
        out.push(chosen);
        for d in &mut pool {
            if cfg.class_agnostic || d.class == chosen.class {
                let iou = tiou(chosen.interval(), d.interval());
                d.score *= (-(iou * iou) / cfg.nms_sigma).exp();
            }
        }
        pool.retain(|d| d.score >= cfg.score_floor);
    }
    out
}

/// Candidate gathering followed by Soft-NMS.
pub fn detect(
    levels: &[LevelValues],
    cfg: &InferenceConfig,
    duration: Option<f64>,
) -> Vec<Detection> {
    soft_nms(&gather_candidates(levels, cfg, duration), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(start: f64, end: f64, score: f64) -> Detection {
        Detection {
            start,
            end,
            class: 1,
            score,
        }
    }

    #[test]
    fn disjoint_detections_untouched() {
        let out = soft_nms(
            &[det(0.0, 1.0, 0.9), det(2.0, 3.0, 0.8)],
            &InferenceConfig::default(),
        );
        assert_eq!(out, vec![det(0.0, 1.0, 0.9), det(2.0, 3.0, 0.8)]);
    }

    #[test]
    fn duplicate_decays_by_closed_form() {
        let out = soft_nms(
            &[det(0.0, 4.0, 0.8), det(0.0, 4.0, 0.9)],
            &InferenceConfig::default(),
        );
        assert_eq!(out[0].score, 0.9);
        assert!((out[1].score - 0.8 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((out[1].score - 0.10827).abs() < 1e-5);
    }

    #[test]
    fn other_classes_do_not_suppress() {
        let mut b = det(0.0, 4.0, 0.8);
        b.class = 2;
        let out = soft_nms(&[det(0.0, 4.0, 0.9), b], &InferenceConfig::default());
        assert_eq!(out[1].score, 0.8);
    }
}
