mod common;

use common::{rng, uniform};
use proptest::prelude::*;
use rand::Rng;
use tridet_core::autograd::Tensor;
use tridet_core::data::{
    decode_feature_file, encode_feature_file, generate_synthetic, read_annotations,
    read_feature_file, write_annotations, write_feature_file, AnnotationSet, FeatureFileError,
    SyntheticSpec,
};
use tridet_core::sequence::{FeatureSequence, Stream};
use tridet_core::Error;

fn f32_grid(t: usize, d: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let data = (0..t * d)
        .map(|_| r.random_range(-100.0f32..100.0) as f64)
        .collect();
    Tensor::new(vec![t, d], data).unwrap()
}

#[test]
fn feature_file_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.tdf");
    let seq = FeatureSequence::new(f32_grid(17, 9, 1), 4, Stream::SpatialLevel).unwrap();
    write_feature_file(&seq, &path).unwrap();
    let back = read_feature_file(&path).unwrap();
    assert_eq!(back, seq);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 21 + 4 * 17 * 9);
}

#[test]
fn header_layout_is_bit_exact() {
    let seq = FeatureSequence::new(
        Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap(),
        3,
        Stream::TemporalLevel,
    )
    .unwrap();
    let bytes = encode_feature_file(&seq);
    let mut want = b"TDF1".to_vec();
    for v in [1u32, 1, 2, 3] {
        want.extend_from_slice(&v.to_le_bytes());
    }
    want.push(0);
    want.extend_from_slice(&1.0f32.to_le_bytes());
    want.extend_from_slice(&(-2.5f32).to_le_bytes());
    assert_eq!(bytes, want);
}

#[test]
fn double_precision_rounds_to_single() {
    let x = uniform(&[5, 3], 2);
    let seq = FeatureSequence::temporal(x.clone()).unwrap();
    let back = decode_feature_file(&encode_feature_file(&seq)).unwrap();
    for (a, b) in x.data().iter().zip(back.features.data()) {
        assert_eq!(*b, *a as f32 as f64);
    }
}

#[test]
fn truncated_payload_names_both_sizes() {
    let seq = FeatureSequence::temporal(f32_grid(4, 3, 0)).unwrap();
    let bytes = encode_feature_file(&seq);
    let err = decode_feature_file(&bytes[..bytes.len() - 5]).unwrap_err();
    assert_eq!(
        err,
        FeatureFileError::Truncated {
            expected: 48,
            actual: 43
        }
    );
    assert!(
        err.to_string().contains("truncated payload")
            && err.to_string().contains("48")
            && err.to_string().contains("43")
    );
}

#[test]
fn malformed_headers_have_distinct_errors() {
    let seq = FeatureSequence::temporal(f32_grid(2, 2, 0)).unwrap();
    let good = encode_feature_file(&seq);

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(
        decode_feature_file(&bad),
        Err(FeatureFileError::BadMagic(_))
    ));

    let mut bad = good.clone();
    bad[4] = 2;
    assert_eq!(
        decode_feature_file(&bad),
        Err(FeatureFileError::UnsupportedVersion(2))
    );

    assert_eq!(
        decode_feature_file(&good[..10]),
        Err(FeatureFileError::TruncatedHeader(10))
    );

    let mut bad = good.clone();
    bad[20] = 7;
    assert_eq!(
        decode_feature_file(&bad),
        Err(FeatureFileError::UnknownStream(7))
    );

    let mut bad = good.clone();
    bad.push(0);
    assert!(matches!(
        decode_feature_file(&bad),
        Err(FeatureFileError::TrailingBytes { .. })
    ));
}

#[test]
fn empty_feature_file_is_rejected() {
    let mut bytes = b"TDF1".to_vec();
    for v in [1u32, 0, 4, 1] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.push(0);
    assert_eq!(
        decode_feature_file(&bytes),
        Err(FeatureFileError::Empty { t: 0, d: 4 })
    );
}

#[test]
fn missing_feature_file_is_an_io_error() {
    let err = read_feature_file(std::path::Path::new("/nonexistent/x.tdf")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

const MINIMAL: &str = r#"{
  "classes": ["jump", "run"],
  "videos": [
    {"id": "v1", "duration": 100, "segments": [{"start": 10, "end": 20.5, "label": "run"}]}
  ]
}"#;

#[test]
fn minimal_annotation_parses() {
    let set = AnnotationSet::from_json(MINIMAL).unwrap();
    assert_eq!(set.num_classes(), 2);
    assert_eq!(set.videos[0].id, "v1");
    let s = set.videos[0].segments[0];
    assert_eq!((s.start, s.end, s.class), (10.0, 20.5, 2));
}

#[test]
fn annotation_errors_name_the_problem() {
    let unknown = MINIMAL.replace("\"run\"}", "\"swim\"}");
    let err = AnnotationSet::from_json(&unknown).unwrap_err().to_string();
    assert!(err.contains("swim") && err.contains("v1"), "{err}");

    let beyond = MINIMAL.replace("\"end\": 20.5", "\"end\": 120");
    let err = AnnotationSet::from_json(&beyond).unwrap_err().to_string();
    assert!(err.contains("v1") && err.contains("duration"), "{err}");

    let reversed = MINIMAL.replace("\"start\": 10", "\"start\": 30");
    let err = AnnotationSet::from_json(&reversed).unwrap_err().to_string();
    assert!(err.contains("v1") && err.contains("start"), "{err}");

    assert!(AnnotationSet::from_json("{").is_err());
}

#[test]
fn frame_rate_converts_seconds_to_instants() {
    let text = MINIMAL
        .replace("\"duration\": 100,", "\"duration\": 10, \"fps\": 4,")
        .replace("\"end\": 20.5", "\"end\": 2.5")
        .replace("\"start\": 10", "\"start\": 1");
    let set = AnnotationSet::from_json(&text).unwrap();
    assert_eq!(set.videos[0].duration, 40.0);
    assert_eq!(
        (
            set.videos[0].segments[0].start,
            set.videos[0].segments[0].end
        ),
        (4.0, 10.0)
    );
}

#[test]
fn annotations_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    let set = generate_synthetic(&SyntheticSpec::default())
        .unwrap()
        .annotations;
    write_annotations(&set, &path).unwrap();
    assert_eq!(read_annotations(&path).unwrap(), set);
}

#[test]
fn synthetic_generation_is_deterministic() {
    let spec = SyntheticSpec {
        multilabel: true,
        seed: 9,
        ..SyntheticSpec::default()
    };
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a, b);
    for (x, y) in a.features.iter().zip(&b.features) {
        assert!(x
            .features
            .data()
            .iter()
            .zip(y.features.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let c = generate_synthetic(&SyntheticSpec { seed: 10, ..spec }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn noise_free_features_are_linearly_separable() {
    let spec = SyntheticSpec {
        snr: f64::INFINITY,
        num_videos: 4,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let mut prototypes: Vec<Option<Vec<f64>>> = vec![None; spec.num_classes];
    for (seq, video) in data.features.iter().zip(&data.annotations.videos) {
        let mut label = vec![0usize; spec.length];
        for s in &video.segments {
            for l in &mut label[s.start as usize..s.end as usize] {
                *l = s.class;
            }
        }
        for (t, &c) in label.iter().enumerate() {
            let row = seq.features.row(t);
            if c == 0 {
                assert!(
                    row.iter().all(|&v| v == 0.0),
                    "background instant {t} is not zero"
                );
            } else {
                let p = prototypes[c - 1].get_or_insert_with(|| row.to_vec());
                assert_eq!(p.as_slice(), row);
            }
        }
    }
    // Probe `w_c = prototype_c`, bias `−|w_c|²/2`: positive exactly on class c.
    for (seq, video) in data.features.iter().zip(&data.annotations.videos) {
        for (c, p) in prototypes.iter().enumerate() {
            let Some(p) = p else { continue };
            let bias = -0.5 * p.iter().map(|v| v * v).sum::<f64>();
            for t in 0..spec.length {
                let inside = video
                    .segments
                    .iter()
                    .any(|s| s.class == c + 1 && (s.start as usize..s.end as usize).contains(&t));
                let score: f64 = seq
                    .features
                    .row(t)
                    .iter()
                    .zip(p)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + bias;
                if inside {
                    assert!(score > 0.0);
                } else if video
                    .segments
                    .iter()
                    .all(|s| !(s.start as usize..s.end as usize).contains(&t))
                {
                    assert!(score < 0.0);
                }
            }
        }
    }
}

#[test]
fn infeasible_synthetic_spec_is_rejected() {
    let spec = SyntheticSpec {
        length: 64,
        max_segments: 5,
        max_length: 40,
        ..SyntheticSpec::default()
    };
    assert!(generate_synthetic(&spec).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_sequence_round_trips(t in 1usize..20, d in 1usize..12, stride in 1usize..8, seed in 0u64..10_000, spatial in any::<bool>()) {
        let stream = if spatial { Stream::SpatialLevel } else { Stream::TemporalLevel };
        let seq = FeatureSequence::new(f32_grid(t, d, seed), stride, stream).unwrap();
        prop_assert_eq!(decode_feature_file(&encode_feature_file(&seq)).unwrap(), seq);
    }

    #[test]
    fn synthetic_annotations_are_valid(seed in 0u64..10_000, multilabel in any::<bool>()) {
        let spec = SyntheticSpec { num_videos: 3, seed, multilabel, ..SyntheticSpec::default() };
        let data = generate_synthetic(&spec).unwrap();
        data.annotations.validate().unwrap();
        for v in &data.annotations.videos {
            prop_assert!(v.segments.iter().all(|s| s.start >= 8.0 && s.end <= 248.0));
            prop_assert!(v.segments.len() >= spec.min_segments);
        }
        let reparsed = AnnotationSet::from_json(&data.annotations.to_json()).unwrap();
        prop_assert_eq!(reparsed, data.annotations);
    }
}
