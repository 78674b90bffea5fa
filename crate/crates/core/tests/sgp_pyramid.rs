mod common;

use common::{check_params, rng, uniform};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use tridet_core::autograd::{Tape, Tensor};
use tridet_core::params::ParamStore;
use tridet_core::pyramid::{
    build_pyramid, fuse_decoupled, resample_nearest, PyramidConfig, StreamEncoder,
};
use tridet_core::sequence::{FeatureSequence, Level, Stream};
use tridet_core::sgp::{round_odd, SgpConfig, SgpLayer};
use tridet_core::Error;

fn cfg(dim: usize) -> SgpConfig {
    SgpConfig {
        dim,
        window: 3,
        scale_factor: 1.5,
        groups: 2,
        ffn_mult: 2,
    }
}

fn layer(dim: usize, seed: u64) -> (ParamStore, SgpLayer) {
    let mut store = ParamStore::new();
    let l = SgpLayer::new(&mut store, &mut rng(seed), "sgp", &cfg(dim)).unwrap();
    (store, l)
}

fn run_layer(store: &ParamStore, l: &SgpLayer, x: &Tensor, sgp_only: bool) -> Tensor {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let v = tape.constant(x.clone());
    let y = if sgp_only {
        l.sgp_forward(&p, v)
    } else {
        l.forward(&p, v)
    };
    y.unwrap().value()
}

#[test]
fn zero_weights_give_identity() {
    let (mut store, l) = layer(8, 0);
    store.zero_all();
    let x = uniform(&[9, 8], 1);
    assert_eq!(run_layer(&store, &l, &x, true), x);
    assert_eq!(run_layer(&store, &l, &x, false), x);
}

#[test]
fn single_instant_runs() {
    let (store, l) = layer(8, 2);
    let x = uniform(&[1, 8], 3);
    let y = run_layer(&store, &l, &x, false);
    assert_eq!(y.shape(), &[1, 8]);
    assert!(y.is_finite());
}

#[test]
fn width_mismatch_is_config_error() {
    let (store, l) = layer(8, 2);
    let tape = Tape::new();
    let p = store.bind(&tape);
    let err = l
        .forward(&p, tape.constant(uniform(&[4, 6], 0)))
        .unwrap_err();
    assert!(matches!(err, Error::Config(_) | Error::Tensor(_)), "{err}");
}

#[test]
fn sgp_branch_gradients_match_finite_differences() {
    for seed in 0..10 {
        let (store, l) = layer(8, seed);
        let x = uniform(&[9, 8], 100 + seed);
        let r = check_params(&store, &[x], |_, p, v| {
            l.sgp_forward(p, v[0]).unwrap().sum()
        });
        assert!(r.passes(1e-5), "seed {seed}: {r:?}");
    }
}

#[test]
fn full_layer_gradients_match_finite_differences() {
    for seed in 0..10 {
        let (store, l) = layer(8, seed);
        let x = uniform(&[9, 8], 200 + seed);
        let w = uniform(&[9, 8], 300 + seed);
        let r = check_params(&store, &[x, w], |_, p, v| {
            l.forward(p, v[0]).unwrap().mul(v[1]).unwrap().sum()
        });
        assert!(r.passes(1e-5), "seed {seed}: {r:?}");
    }
}

#[test]
fn six_layer_stack_stays_finite() {
    let mut store = ParamStore::new();
    let mut r = rng(4);
    let layers: Vec<SgpLayer> = (0..6)
        .map(|i| {
            SgpLayer::new(&mut store, &mut r, &format!("l{i}"), &SgpConfig::default()).unwrap()
        })
        .collect();
    let data = (0..64 * 32)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            z
        })
        .collect();
    let tape = Tape::new();
    let p = store.bind(&tape);
    let mut h = tape.constant(Tensor::new(vec![64, 32], data).unwrap());
    for l in &layers {
        h = l.forward(&p, h).unwrap();
    }
    assert!(h.value().is_finite());
}

#[test]
fn wide_kernel_uses_round_odd_of_scaled_window() {
    for (k, w, expected) in [
        (1.0, 3, 3),
        (1.3, 11, 15),
        (1.5, 3, 5),
        (5.0, 3, 15),
        (1.5, 1, 3),
    ] {
        let c = SgpConfig {
            window: w,
            scale_factor: k,
            ..SgpConfig::default()
        };
        let mut store = ParamStore::new();
        let l = SgpLayer::new(&mut store, &mut rng(0), "s", &c).unwrap();
        assert_eq!(l.wide_window(), expected, "k={k} w={w}");
        assert_eq!(l.wide_window(), round_odd(k * w as f64));
    }
}

fn encoder(levels: usize) -> (ParamStore, StreamEncoder) {
    let mut store = ParamStore::new();
    let c = PyramidConfig {
        num_levels: levels,
        input_dim: 5,
        sgp: cfg(8),
    };
    let e = StreamEncoder::new(&mut store, &mut rng(7), "t", &c).unwrap();
    (store, e)
}

#[test]
fn pyramid_halves_and_tracks_strides() {
    let (store, enc) = encoder(4);
    let x = FeatureSequence::temporal(uniform(&[64, 5], 0)).unwrap();
    let levels = build_pyramid(&store, &enc, &x).unwrap();
    let lens: Vec<usize> = levels.iter().map(FeatureSequence::len).collect();
    assert_eq!(lens, vec![64, 32, 16, 8]);
    for (l, lvl) in levels.iter().enumerate() {
        assert_eq!(lvl.stride, 1 << l);
        assert!(lvl.features.is_finite());
    }
}

#[test]
fn base_stride_scales_every_level() {
    let (store, enc) = encoder(3);
    let x = FeatureSequence::new(uniform(&[20, 5], 0), 4, Stream::TemporalLevel).unwrap();
    let strides: Vec<usize> = build_pyramid(&store, &enc, &x)
        .unwrap()
        .iter()
        .map(|l| l.stride)
        .collect();
    assert_eq!(strides, vec![4, 8, 16]);
}

#[test]
fn single_level_is_one_layer_over_embedding() {
    let (store, enc) = encoder(1);
    let x = uniform(&[10, 5], 1);
    let levels =
        build_pyramid(&store, &enc, &FeatureSequence::temporal(x.clone()).unwrap()).unwrap();
    let tape = Tape::new();
    let p = store.bind(&tape);
    let e = enc.embed(&p, tape.constant(x)).unwrap();
    let direct = enc.layers()[0].forward(&p, e).unwrap().value();
    assert_eq!(levels.len(), 1);
    assert_eq!(levels[0].features, direct);
}

#[test]
fn short_input_names_minimum_length() {
    let (store, enc) = encoder(4);
    let x = FeatureSequence::temporal(uniform(&[7, 5], 0)).unwrap();
    let err = build_pyramid(&store, &enc, &x).unwrap_err();
    assert!(err.to_string().contains("at least 8"), "{err}");
}

fn levels_of<'t>(tape: &'t Tape, tensors: &[Tensor]) -> Vec<Level<'t>> {
    tensors
        .iter()
        .enumerate()
        .map(|(l, t)| Level {
            features: tape.constant(t.clone()),
            stride: 1 << l,
        })
        .collect()
}

#[test]
fn fusion_examples() {
    let tape = Tape::new();
    let t = [uniform(&[8, 4], 0), uniform(&[4, 4], 1)];
    let temporal = levels_of(&tape, &t);

    let zeros = levels_of(
        &tape,
        &[Tensor::zeros(vec![8, 4]), Tensor::zeros(vec![4, 4])],
    );
    let (cls, reg) = fuse_decoupled(&temporal, Some(&zeros)).unwrap();
    for l in 0..2 {
        assert_eq!(cls[l].features.value(), t[l]);
        assert_eq!(reg[l].features.value(), t[l]);
    }

    let (cls, reg) = fuse_decoupled(&temporal, Some(&temporal)).unwrap();
    for l in 0..2 {
        assert_eq!(cls[l].features.id(), temporal[l].features.id());
        assert_eq!(reg[l].features.value(), t[l].map(|x| 2.0 * x));
    }

    let (cls, reg) = fuse_decoupled(&temporal, None).unwrap();
    for l in 0..2 {
        assert_eq!(cls[l].features.id(), temporal[l].features.id());
        assert_eq!(reg[l].features.id(), temporal[l].features.id());
    }
}

#[test]
fn fusion_mismatch_names_level() {
    let tape = Tape::new();
    let temporal = levels_of(&tape, &[uniform(&[8, 4], 0), uniform(&[4, 4], 1)]);
    let spatial = levels_of(&tape, &[uniform(&[8, 4], 0), uniform(&[5, 4], 1)]);
    match fuse_decoupled(&temporal, Some(&spatial)) {
        Err(Error::Fusion { level, .. }) => assert_eq!(level, 2),
        other => panic!("expected fusion error, got {other:?}"),
    }
}

#[test]
fn resample_examples() {
    let x = FeatureSequence::new(
        Tensor::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap(),
        1,
        Stream::SpatialLevel,
    )
    .unwrap();
    assert_eq!(resample_nearest(&x, 4).unwrap().features, x.features);
    assert_eq!(
        resample_nearest(&x, 2).unwrap().features.data(),
        &[0.0, 2.0]
    );
    let one = FeatureSequence::new(
        Tensor::from_rows(&[[5.0, 6.0]]).unwrap(),
        1,
        Stream::SpatialLevel,
    )
    .unwrap();
    assert_eq!(
        resample_nearest(&one, 3).unwrap().features.data(),
        &[5.0, 6.0, 5.0, 6.0, 5.0, 6.0]
    );
    assert!(matches!(resample_nearest(&x, 0), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn layer_preserves_shape(t in 1usize..20, seed in 0u64..1000) {
        let (store, l) = layer(8, seed);
        let x = uniform(&[t, 8], seed);
        let y = run_layer(&store, &l, &x, false);
        prop_assert_eq!(y.shape(), &[t, 8]);
    }

    #[test]
    fn stride_law_holds(t in 16usize..80, levels in 1usize..5) {
        let (store, enc) = encoder(levels);
        let x = FeatureSequence::temporal(uniform(&[t, 5], t as u64)).unwrap();
        let out = build_pyramid(&store, &enc, &x).unwrap();
        for (l, lvl) in out.iter().enumerate() {
            prop_assert_eq!(lvl.stride, out[0].stride << l);
            prop_assert_eq!(lvl.len(), t.div_ceil(1 << l));
        }
    }
}
