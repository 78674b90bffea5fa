//! Deterministic synthetic detection datasets.
//!
//! Each class owns a fixed Gaussian prototype. An instant inside a segment
//! carries the sum of the prototypes of every segment covering it; every
//! instant additionally carries Gaussian noise scaled by `1/snr`. Segments
//! are half-open integer intervals `[start, end)` kept at least `margin`
//! instants away from both ends of the video.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use tridet_autograd::Tensor;

use super::annotations::{AnnotationSet, VideoAnnotation};
use crate::assign::ActionSegment;
use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub length: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Signal-to-noise ratio; `f64::INFINITY` gives noise-free features.
    pub snr: f64,
    /// Allow segments of different classes to overlap.
    pub multilabel: bool,
    /// Smallest gap between segments that may not overlap.
    pub gap: usize,
    /// Instants kept free at both ends of every video.
    pub margin: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_videos: 8,
            length: 256,
            dim: 32,
            num_classes: 3,
            min_segments: 2,
            max_segments: 5,
            min_length: 8,
            max_length: 40,
            snr: 2.0,
            multilabel: false,
            gap: 4,
            margin: 8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(format!("synthetic.{m}")));
        if self.num_videos == 0 || self.dim == 0 || self.num_classes == 0 {
            return fail("num_videos, dim and num_classes must be positive");
        }
        if self.min_segments > self.max_segments
            || self.min_length == 0
            || self.min_length > self.max_length
        {
            return fail("segment count and length ranges must be non-empty");
        }
        if !(self.snr > 0.0) {
            return fail("snr must be positive");
        }
        let usable = self.length.saturating_sub(2 * self.margin);
        let needed =
            self.max_segments * self.max_length + self.max_segments.saturating_sub(1) * self.gap;
        if needed > usable {
            return Err(Error::config(format!(
                "synthetic: {} segments of length {} with gap {} need {needed} instants, only {usable} available",
                self.max_segments, self.max_length, self.gap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub features: Vec<FeatureSequence>,
    pub annotations: AnnotationSet,
}

/// Places `lengths.len()` disjoint segments in `[lo, hi)`, separated by at
/// least `gap`, in random order and with random spacing.
fn place(
    rng: &mut ChaCha8Rng,
    lengths: &[usize],
    lo: usize,
    hi: usize,
    gap: usize,
) -> Vec<(usize, usize)> {
    let k = lengths.len();
    if k == 0 {
        return Vec::new();
    }
    let fixed: usize = lengths.iter().sum::<usize>() + (k - 1) * gap;
    let slack = hi - lo - fixed;
    let mut cuts: Vec<usize> = (0..k).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(k);
    let mut pos = lo;
    let mut used = 0;
    for (i, &len) in lengths.iter().enumerate() {
        pos += cuts[i] - used;
        used = cuts[i];
        out.push((pos, pos + len));
        pos += len + gap;
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    let noise_scale = if spec.snr.is_finite() {
        1.0 / spec.snr
    } else {
        0.0
    };
    let (lo, hi) = (spec.margin, spec.length - spec.margin);

    let mut features = Vec::with_capacity(spec.num_videos);
    let mut videos = Vec::with_capacity(spec.num_videos);
    for v in 0..spec.num_videos {
        let k = rng.random_range(spec.min_segments..=spec.max_segments);
        let classes: Vec<usize> = (0..k)
            .map(|_| rng.random_range(1..=spec.num_classes))
            .collect();
        let mut segments = Vec::with_capacity(k);
        if spec.multilabel {
            for c in 1..=spec.num_classes {
                let lengths: Vec<usize> = classes
                    .iter()
                    .filter(|&&x| x == c)
                    .map(|_| rng.random_range(spec.min_length..=spec.max_length))
                    .collect();
                for (s, e) in place(&mut rng, &lengths, lo, hi, spec.gap) {
                    segments.push(ActionSegment {
                        start: s as f64,
                        end: e as f64,
                        class: c,
                    });
                }
            }
        } else {
            let lengths: Vec<usize> = (0..k)
                .map(|_| rng.random_range(spec.min_length..=spec.max_length))
                .collect();
            for ((s, e), &c) in place(&mut rng, &lengths, lo, hi, spec.gap)
                .into_iter()
                .zip(&classes)
            {
                segments.push(ActionSegment {
                    start: s as f64,
                    end: e as f64,
                    class: c,
                });
            }
        }
        segments.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.class.cmp(&b.class)));

        let mut data = vec![0.0; spec.length * spec.dim];
        for seg in &segments {
            let proto = &prototypes[seg.class - 1];
            for t in seg.start as usize..seg.end as usize {
                for (x, p) in data[t * spec.dim..(t + 1) * spec.dim].iter_mut().zip(proto) {
                    *x += p;
                }
            }
        }
        for x in &mut data {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += noise_scale * z;
        }
        features.push(FeatureSequence::temporal(Tensor::new(
            vec![spec.length, spec.dim],
            data,
        )?)?);
        videos.push(VideoAnnotation {
            id: format!("video_{v:03}"),
            duration: spec.length as f64,
            segments,
        });
    }
    let annotations = AnnotationSet {
        classes: (1..=spec.num_classes)
            .map(|c| format!("class_{c}"))
            .collect(),
        videos,
    };
    annotations.validate()?;
    Ok(SyntheticDataset {
        features,
        annotations,
    })
}
