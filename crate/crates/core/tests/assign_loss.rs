mod common;

use common::{check_params_with_step, rng, uniform};
use proptest::prelude::*;
use rand::Rng;
use tridet_core::assign::{
    center_sample, forced_instant, targets, ActionSegment, AssignConfig, AssignmentResult,
};
use tridet_core::autograd::{Tape, Tensor};
use tridet_core::data::{generate_synthetic, SyntheticSpec};
use tridet_core::heads::{decode_segment, HeadConfig, RegressionKind};
use tridet_core::loss::{focal_loss, iou_loss, total_loss, IouKind, LossConfig, Quality};
use tridet_core::model::{Detector, LevelPrediction, ModelConfig, VideoFeatures};
use tridet_core::pyramid::PyramidConfig;
use tridet_core::sgp::SgpConfig;

fn assign_cfg(bins: usize, classes: usize, multilabel: bool) -> AssignConfig {
    AssignConfig {
        radius: 1.5,
        num_bins: bins,
        num_classes: classes,
        multilabel,
    }
}

fn lengths(t: usize, levels: usize) -> Vec<usize> {
    (0..levels).map(|l| t.div_ceil(1 << l)).collect()
}

fn assert_round_trip(segments: &[ActionSegment], a: &AssignmentResult, tol: f64) {
    for p in &a.positives {
        let (s, e) = decode_segment(p.t, p.level + 1, p.target.0, p.target.1);
        let seg = &segments[p.segment];
        assert!(
            (s - seg.start).abs() <= tol && (e - seg.end).abs() <= tol,
            "positive {p:?} decodes to [{s}, {e}] for {seg:?}"
        );
        assert!(p.target.0 >= 0.0 && p.target.1 >= 0.0);
    }
}

#[test]
fn positives_and_forced_instants_decode_back_to_their_segments() {
    for seed in 0..50 {
        let data = generate_synthetic(&SyntheticSpec {
            num_videos: 1,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let video = &data.annotations.videos[0];
        let levels = lengths(video.duration as usize, 5);
        let a = center_sample(&video.segments, &levels, &assign_cfg(16, 3, false)).unwrap();
        assert_eq!(a.clipped, 0);
        assert_round_trip(&video.segments, &a, 0.5);
        for seg in &video.segments {
            let (level, t) = forced_instant(seg, &levels, 16);
            let (ds, de) = targets(seg, level, t);
            let (s, e) = decode_segment(t, level + 1, ds, de);
            assert!(
                (s - seg.start).abs() <= 0.5 && (e - seg.end).abs() <= 0.5,
                "seed {seed}: {seg:?}"
            );
        }
        for k in 0..video.segments.len() {
            assert!(
                a.positives.iter().any(|p| p.segment == k),
                "seed {seed}: segment {k} unassigned"
            );
        }
    }
}

#[test]
fn near_duplicate_segments_both_get_a_positive() {
    let segs = [
        ActionSegment::new(92.29633953135644, 136.36518291343018, 2).unwrap(),
        ActionSegment::new(94.187125027626, 134.8895376615714, 2).unwrap(),
    ];
    let a = center_sample(&segs, &lengths(256, 5), &assign_cfg(16, 3, false)).unwrap();
    let forced: Vec<_> = a.positives.iter().filter(|p| p.segment == 0).collect();
    assert!(!forced.is_empty() && forced.iter().all(|p| p.forced));
    assert!(a.positives.iter().any(|p| p.segment == 1 && !p.forced));
    assert_round_trip(&segs, &a, 0.5);
}

#[test]
fn empty_annotation_is_all_background() {
    let a = center_sample(&[], &lengths(64, 3), &assign_cfg(16, 2, false)).unwrap();
    assert!(a.positives.is_empty());
    assert_eq!(a.total_instants(), 64 + 32 + 16);
}

#[test]
fn focal_loss_closed_forms() {
    assert!((focal_loss(0.0, 1.0, 0.0, None) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(
        (focal_loss(0.0, 1.0, 2.0, Some(0.25)) - 0.25 * 0.25 * std::f64::consts::LN_2).abs()
            < 1e-15
    );
    assert!(focal_loss(40.0, 1.0, 2.0, Some(0.25)) < 1e-30);
    assert!(focal_loss(-40.0, 0.0, 2.0, Some(0.25)) < 1e-30);
    assert!(focal_loss(-800.0, 1.0, 0.0, None).is_finite());
}

#[test]
fn iou_loss_interval_arithmetic() {
    assert_eq!(iou_loss((3.0, 9.0), (3.0, 9.0), IouKind::Giou), 0.0);
    assert!((iou_loss((0.0, 10.0), (5.0, 15.0), IouKind::Giou) - 2.0 / 3.0).abs() < 1e-15);
    assert!((iou_loss((0.0, 10.0), (5.0, 15.0), IouKind::Iou) - 2.0 / 3.0).abs() < 1e-15);
    // Hull [0, 3] has length 3, not 4; the penalty is (3 − 2)/3.
    assert!((iou_loss((0.0, 1.0), (2.0, 3.0), IouKind::Giou) - 4.0 / 3.0).abs() < 1e-15);
    assert!((iou_loss((0.0, 1.0), (3.0, 4.0), IouKind::Giou) - 1.5).abs() < 1e-15);
    assert_eq!(iou_loss((0.0, 1.0), (2.0, 3.0), IouKind::Iou), 1.0);
}

/// Builds constant level predictions on `tape` from per-level row-major data.
fn constant_preds<'t>(
    tape: &'t Tape,
    levels: &[(Tensor, Tensor, Tensor)],
) -> Vec<LevelPrediction<'t>> {
    levels
        .iter()
        .map(|(c, s, e)| LevelPrediction {
            cls: tape.constant(c.clone()),
            d_st: tape.constant(s.clone()),
            d_et: tape.constant(e.clone()),
        })
        .collect()
}

fn oracle_levels(a: &AssignmentResult, confidence: f64) -> Vec<(Tensor, Tensor, Tensor)> {
    let c = a.num_classes;
    let ch = if a.multilabel { c } else { 1 };
    a.level_lengths
        .iter()
        .enumerate()
        .map(|(l, &n)| {
            let mut cls = Tensor::full(vec![n, c], -confidence);
            let mut ds = Tensor::full(vec![n, ch], 1.0);
            let mut de = Tensor::full(vec![n, ch], 1.0);
            for p in a.positives.iter().filter(|p| p.level == l) {
                cls.data_mut()[p.t * c + p.class] = confidence;
                let k = if a.multilabel { p.class } else { 0 };
                ds.data_mut()[p.t * ch + k] = p.target.0;
                de.data_mut()[p.t * ch + k] = p.target.1;
            }
            (cls, ds, de)
        })
        .collect()
}

fn sample_assignment(multilabel: bool) -> (Vec<ActionSegment>, AssignmentResult) {
    let segs = vec![
        ActionSegment::new(4.0, 14.0, 1).unwrap(),
        ActionSegment::new(10.0, 30.0, 2).unwrap(),
        ActionSegment::new(40.0, 44.0, 1).unwrap(),
    ];
    let a = center_sample(&segs, &lengths(64, 3), &assign_cfg(8, 2, multilabel)).unwrap();
    (segs, a)
}

#[test]
fn perfect_predictions_drive_the_loss_to_zero() {
    for multilabel in [false, true] {
        let (_, a) = sample_assignment(multilabel);
        let tape = Tape::new();
        let preds = constant_preds(&tape, &oracle_levels(&a, 40.0));
        let (total, br) = total_loss(&preds, &a, &LossConfig::default(), Quality::Current).unwrap();
        assert!(total.item() < 1e-12, "multilabel={multilabel}: {br:?}");
        assert!(br.n_pos > 0);
    }
}

#[test]
fn zero_quality_removes_only_the_positive_classification_term() {
    let (_, a) = sample_assignment(false);
    let mut levels = oracle_levels(&a, 0.3);
    for (_, ds, _) in &mut levels {
        ds.data_mut().iter_mut().for_each(|d| *d += 0.7);
    }
    let tape = Tape::new();
    let preds = constant_preds(&tape, &levels);
    let zeros = vec![0.0; a.positives.len()];
    let (total, br) =
        total_loss(&preds, &a, &LossConfig::default(), Quality::Fixed(&zeros)).unwrap();
    assert_eq!(br.focal_pos, 0.0);
    assert!(br.iou > 0.0);
    let expect = br.iou / br.n_pos as f64 + br.focal_neg / br.n_neg as f64;
    assert!((total.item() - expect).abs() < 1e-12);
    assert!((br.recombined() - total.item()).abs() < 1e-12);
}

fn tiny_model(
    regression: RegressionKind,
    classes: usize,
    multilabel: bool,
    detach: bool,
) -> ModelConfig {
    ModelConfig {
        pyramid: PyramidConfig {
            num_levels: 2,
            input_dim: 3,
            sgp: SgpConfig {
                dim: 4,
                window: 3,
                scale_factor: 1.5,
                groups: 2,
                ffn_mult: 2,
            },
        },
        head: HeadConfig {
            num_bins: 3,
            num_classes: classes,
            depth: 2,
            multilabel,
            regression,
            detach_boundaries: detach,
            ..HeadConfig::default()
        },
        ..ModelConfig::default()
    }
}

fn tiny_assignment(det: &Detector, t: usize, multilabel: bool) -> AssignmentResult {
    let segs = [
        ActionSegment::new(1.0, 4.0, 1).unwrap(),
        ActionSegment::new(3.5, 7.0, 2).unwrap(),
    ];
    center_sample(
        &segs,
        &det.level_lengths(t),
        &assign_cfg(det.cfg.head.num_bins, 2, multilabel),
    )
    .unwrap()
}

#[test]
fn end_to_end_loss_gradients_match_finite_differences() {
    for multilabel in [false, true] {
        for seed in 0..10 {
            let det = Detector::new(
                &tiny_model(RegressionKind::Trident, 2, multilabel, false),
                seed,
            )
            .unwrap();
            let x = uniform(&[8, 3], seed + 100);
            let a = tiny_assignment(&det, 8, multilabel);
            let q: Vec<f64> = (0..a.positives.len())
                .map(|i| 0.3 + 0.1 * i as f64)
                .collect();
            let r = check_params_with_step(&det.params, &[x], 1e-6, |tape, p, v| {
                let video = VideoFeatures::single(v[0].value()).unwrap();
                // Route the feature input through the tape so it is checked too.
                let preds = det.forward_from(p, tape, &video, Some(v[0])).unwrap();
                total_loss(&preds, &a, &LossConfig::default(), Quality::Fixed(&q))
                    .unwrap()
                    .0
            });
            assert!(r.passes(1e-4), "multilabel={multilabel} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn quality_weights_carry_no_gradient() {
    let det = Detector::new(&tiny_model(RegressionKind::Trident, 2, false, true), 3).unwrap();
    let video = VideoFeatures::single(uniform(&[8, 3], 1)).unwrap();
    let a = tiny_assignment(&det, 8, false);
    let grads = |fixed: Option<&[f64]>| {
        let tape = Tape::new();
        let p = det.params.bind(&tape);
        let preds = det.forward(&p, &tape, &video).unwrap();
        let q = fixed.map_or(Quality::Current, Quality::Fixed);
        total_loss(&preds, &a, &LossConfig::default(), q)
            .unwrap()
            .0
            .backward()
            .unwrap();
        p.gradients()
    };
    let sigma = {
        let tape = Tape::new();
        let p = det.params.bind(&tape);
        tridet_core::loss::quality_weights(&det.forward(&p, &tape, &video).unwrap(), &a)
    };
    assert!(sigma.iter().any(|&s| s > 0.0));
    assert_eq!(grads(None), grads(Some(&sigma)));
}

#[test]
fn single_class_multilabel_matches_single_label() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let segs: Vec<ActionSegment> = (0..3)
            .map(|k| {
                let s = 20.0 * k as f64 + r.random_range(0.0..5.0);
                ActionSegment::new(s, s + r.random_range(3.0..14.0), 1).unwrap()
            })
            .collect();
        let levels = lengths(64, 3);
        let single = center_sample(&segs, &levels, &assign_cfg(8, 1, false)).unwrap();
        let multi = center_sample(&segs, &levels, &assign_cfg(8, 1, true)).unwrap();
        let data: Vec<_> = levels
            .iter()
            .enumerate()
            .map(|(l, &n)| {
                let s = seed * 10 + l as u64;
                (
                    uniform(&[n, 1], s).map(|x| 3.0 * x),
                    uniform(&[n, 1], s + 3).map(|x| 4.0 + 3.0 * x),
                    uniform(&[n, 1], s + 6).map(|x| 4.0 + 3.0 * x),
                )
            })
            .collect();
        let tape = Tape::new();
        let preds = constant_preds(&tape, &data);
        let cfg = LossConfig::default();
        let (a, _) = total_loss(&preds, &single, &cfg, Quality::Current).unwrap();
        let (b, _) = total_loss(&preds, &multi, &cfg, Quality::Current).unwrap();
        assert!(
            (a.item() - b.item()).abs() < 1e-12,
            "seed {seed}: {} vs {}",
            a.item(),
            b.item()
        );
    }
}

#[test]
fn loss_breakdown_recombines() {
    let det = Detector::new(&tiny_model(RegressionKind::Direct, 2, false, true), 5).unwrap();
    let video = VideoFeatures::single(uniform(&[8, 3], 2)).unwrap();
    let a = tiny_assignment(&det, 8, false);
    let tape = Tape::new();
    let p = det.params.bind(&tape);
    let preds = det.forward(&p, &tape, &video).unwrap();
    let (total, br) = total_loss(&preds, &a, &LossConfig::default(), Quality::Current).unwrap();
    assert!(total.item() >= 0.0);
    assert!((br.recombined() - total.item()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_segments_round_trip(
        raw in prop::collection::vec((0.0f64..200.0, 1.0f64..60.0, 1usize..4), 0..6),
        multilabel in any::<bool>(),
    ) {
        let segs: Vec<ActionSegment> = raw
            .iter()
            .map(|&(s, len, c)| ActionSegment::new(s, (s + len).min(256.0), c).unwrap())
            .collect();
        let levels = lengths(256, 5);
        let a = center_sample(&segs, &levels, &assign_cfg(16, 3, multilabel)).unwrap();
        prop_assert_eq!(a.clipped, 0);
        assert_round_trip(&segs, &a, 0.5);
        for (k, seg) in segs.iter().enumerate() {
            if a.positives.iter().any(|p| p.segment == k) {
                continue;
            }
            // Unassigned only if every representable instant is taken.
            let ch = if multilabel { seg.class - 1 } else { 0 };
            for (l, &n) in levels.iter().enumerate() {
                let s = (1u64 << l) as f64;
                for t in 0..n {
                    let (ds, de) = targets(seg, l, t);
                    let x = t as f64 * s;
                    if x >= seg.start && x <= seg.end && (l == levels.len() - 1 || ds.max(de) <= 16.0) {
                        let taken = a.positives.iter().any(|p| {
                            p.level == l && p.t == t && (if multilabel { p.class } else { 0 }) == ch
                        });
                        prop_assert!(taken, "segment {} left out although ({}, {}) is free", k, l, t);
                    }
                }
            }
        }
        let mut keys: Vec<_> = a.positives.iter().map(|p| (p.level, p.t, if multilabel { p.class } else { 0 })).collect();
        let n = keys.len();
        keys.dedup();
        prop_assert_eq!(keys.len(), n);
    }

    #[test]
    fn loss_is_finite_and_nonnegative(seed in 0u64..10_000, scale in 0.1f64..30.0) {
        let (_, a) = sample_assignment(seed % 2 == 0);
        let levels: Vec<_> = oracle_levels(&a, 1.0)
            .into_iter()
            .enumerate()
            .map(|(l, (c, s, e))| {
                let k = seed * 7 + l as u64;
                (
                    uniform(c.shape(), k).map(|x| x * scale),
                    uniform(s.shape(), k + 1).map(|x| (x * scale).abs()),
                    uniform(e.shape(), k + 2).map(|x| (x * scale).abs()),
                )
            })
            .collect();
        let tape = Tape::new();
        let (total, br) = total_loss(&constant_preds(&tape, &levels), &a, &LossConfig::default(), Quality::Current).unwrap();
        prop_assert!(total.item().is_finite() && total.item() >= 0.0);
        prop_assert!((br.recombined() - total.item()).abs() < 1e-9 * (1.0 + total.item()));
    }
}
