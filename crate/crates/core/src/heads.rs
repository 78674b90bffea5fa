//! Classification head, Trident boundary head and the direct-regression
//! comparison head.
//!
//! The Trident head predicts a start response `F_s`, an end response `F_e`
//! and a center offset `F_c` for every instant. The start distance at
//! instant `t` is the expectation of bin index `b` under
//! `softmax_b(F_s[t−b] + F_c[t,0,b])`; the end distance uses `F_e[t+b]` and
//! `F_c[t,1,b]`. Bin positions that fall outside the sequence are masked.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tridet_autograd::{Tensor, Var, WindowDirection, MASKED_LOGIT};

use crate::error::{Error, Result};
use crate::layers::{Affine, Conv};
use crate::params::{gaussian, Bound, ParamStore};
use crate::sequence::Level;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionKind {
    #[default]
    Trident,
    /// Per-instant ReLU regression of the two boundary distances.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Bin count `B`; each boundary distribution has `B + 1` bins.
    pub num_bins: usize,
    pub num_classes: usize,
    /// Layers per head: `depth − 1` temporal convolutions with ReLU, then a
    /// pointwise projection.
    pub depth: usize,
    pub kernel: usize,
    /// One set of head weights for all levels, or one per level.
    pub shared: bool,
    pub multilabel: bool,
    pub regression: RegressionKind,
    /// Initial foreground probability encoded in the classifier bias.
    pub prior_prob: f64,
    /// Standard deviation of the classifier output projection at init; kept
    /// small so initial scores sit at the prior.
    pub cls_init_std: f64,
    /// Standard deviation of the start/end output projections at init.
    pub boundary_init_std: f64,
    /// Stop gradients from the start/end branches into the shared features.
    pub detach_boundaries: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            num_bins: 16,
            num_classes: 1,
            depth: 3,
            kernel: 3,
            shared: true,
            multilabel: false,
            regression: RegressionKind::Trident,
            prior_prob: 0.01,
            cls_init_std: 0.01,
            boundary_init_std: 0.1,
            detach_boundaries: true,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bins < 1 {
            return Err(Error::config("head.num_bins must be at least 1"));
        }
        if self.num_classes < 1 {
            return Err(Error::config("head.num_classes must be at least 1"));
        }
        if self.depth < 1 {
            return Err(Error::config("head.depth must be at least 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!(
                "head.kernel must be odd, got {}",
                self.kernel
            )));
        }
        if !(self.prior_prob > 0.0 && self.prior_prob < 1.0) {
            return Err(Error::config("head.prior_prob must lie in (0, 1)"));
        }
        for (key, v) in [
            ("cls_init_std", self.cls_init_std),
            ("boundary_init_std", self.boundary_init_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "head.{key} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }

    /// Number of regression channels: `C` in multilabel mode, else 1.
    pub fn regression_channels(&self) -> usize {
        if self.multilabel {
            self.num_classes
        } else {
            1
        }
    }
}

/// Stack of temporal convolutions ending in a pointwise projection.
#[derive(Debug, Clone)]
pub struct ConvHead {
    hidden: Vec<Conv>,
    out: Affine,
}

impl ConvHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        output: usize,
        cfg: &HeadConfig,
    ) -> Self {
        let hidden = (0..cfg.depth - 1)
            .map(|i| Conv::new(store, rng, &format!("{name}.conv{i}"), dim, dim, cfg.kernel))
            .collect();
        let out = Affine::new(store, rng, &format!("{name}.out"), dim, output);
        Self { hidden, out }
    }

    pub fn output(&self) -> &Affine {
        &self.out
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.out.input {
            return Err(Error::config(format!(
                "head expects T×{} features, got {shape:?}",
                self.out.input
            )));
        }
        let mut h = x;
        for conv in &self.hidden {
            h = conv.forward(p, h)?.relu();
        }
        self.out.forward(p, h)
    }
}

/// One head instance per level, or a single shared instance.
#[derive(Debug, Clone)]
struct PerLevel(Vec<ConvHead>);

impl PerLevel {
    fn new(levels: usize, shared: bool, mut make: impl FnMut(Option<usize>) -> ConvHead) -> Self {
        if shared {
            Self(vec![make(None)])
        } else {
            Self((0..levels).map(|l| make(Some(l))).collect())
        }
    }

    fn at(&self, level: usize) -> &ConvHead {
        if self.0.len() == 1 {
            &self.0[0]
        } else {
            &self.0[level]
        }
    }
}

fn head_name(base: &str, level: Option<usize>) -> String {
    match level {
        Some(l) => format!("{base}.level{l}"),
        None => base.to_string(),
    }
}

/// Per-instant class logits, `T_l × C`. Scores are the sigmoid of these.
#[derive(Debug, Clone)]
pub struct ClassificationHead {
    heads: PerLevel,
}

impl ClassificationHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        dim: usize,
        levels: usize,
        cfg: &HeadConfig,
    ) -> Self {
        let bias = -((1.0 - cfg.prior_prob) / cfg.prior_prob).ln();
        let heads = PerLevel::new(levels, cfg.shared, |l| {
            let h = ConvHead::new(
                store,
                rng,
                &head_name("cls_head", l),
                dim,
                cfg.num_classes,
                cfg,
            );
            *store.get_mut(h.out.weight) = gaussian(rng, &[dim, cfg.num_classes], cfg.cls_init_std);
            store.get_mut(h.out.bias).data_mut().fill(bias);
            h
        });
        Self { heads }
    }

    pub fn head(&self, level: usize) -> &ConvHead {
        self.heads.at(level)
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, level: usize, x: Var<'t>) -> Result<Var<'t>> {
        self.heads.at(level).forward(p, x)
    }
}

/// Raw Trident branch outputs for one level.
///
/// `start` and `end` are `T×C'` and `offsets` is `T×C'×2×(B+1)` where
/// `C'` is the number of regression channels (`C` when multilabel, else 1).
/// Index 0 of the third axis holds the start-side offsets.
#[derive(Debug, Clone, Copy)]
pub struct TridentOutputs<'t> {
    pub start: Var<'t>,
    pub end: Var<'t>,
    pub offsets: Var<'t>,
}

/// Values of [`TridentOutputs`] detached from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct TridentValues {
    pub start: Tensor,
    pub end: Tensor,
    pub offsets: Tensor,
    pub num_bins: usize,
}

impl TridentOutputs<'_> {
    pub fn values(&self, num_bins: usize) -> TridentValues {
        TridentValues {
            start: self.start.value(),
            end: self.end.value(),
            offsets: self.offsets.value(),
            num_bins,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TridentHead {
    start: PerLevel,
    end: PerLevel,
    offset: PerLevel,
    bins: usize,
    channels: usize,
    detach: bool,
}

impl TridentHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        dim: usize,
        levels: usize,
        cfg: &HeadConfig,
    ) -> Self {
        let channels = cfg.regression_channels();
        let bins = cfg.num_bins;
        let boundary =
            |store: &mut ParamStore, rng: &mut ChaCha8Rng, base: &str, l: Option<usize>| {
                let h = ConvHead::new(store, rng, &head_name(base, l), dim, channels, cfg);
                *store.get_mut(h.out.weight) =
                    gaussian(rng, &[dim, channels], cfg.boundary_init_std);
                h
            };
        let start = PerLevel::new(levels, cfg.shared, |l| {
            boundary(store, rng, "start_head", l)
        });
        let end = PerLevel::new(levels, cfg.shared, |l| boundary(store, rng, "end_head", l));
        let offset = PerLevel::new(levels, cfg.shared, |l| {
            ConvHead::new(
                store,
                rng,
                &head_name("offset_head", l),
                dim,
                channels * 2 * (bins + 1),
                cfg,
            )
        });
        Self {
            start,
            end,
            offset,
            bins,
            channels,
            detach: cfg.detach_boundaries,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn start_head(&self, level: usize) -> &ConvHead {
        self.start.at(level)
    }

    pub fn end_head(&self, level: usize) -> &ConvHead {
        self.end.at(level)
    }

    /// Runs the three branches. The start and end branches see a
    /// tape-detached copy of the features (unless disabled in the config);
    /// the center-offset branch does not.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        level: usize,
        x: Var<'t>,
    ) -> Result<TridentOutputs<'t>> {
        let t = x.shape()[0];
        let detached = if self.detach { x.detach() } else { x };
        let start = self.start.at(level).forward(p, detached)?;
        let end = self.end.at(level).forward(p, detached)?;
        let offsets = self.offset.at(level).forward(p, x)?.reshape(vec![
            t,
            self.channels,
            2,
            self.bins + 1,
        ])?;
        Ok(TridentOutputs {
            start,
            end,
            offsets,
        })
    }

    /// Boundary distances `(d_st, d_et)`, each `T×C'`, in level units.
    pub fn distances<'t>(&self, out: &TridentOutputs<'t>) -> Result<(Var<'t>, Var<'t>)> {
        trident_distances(out, self.bins)
    }
}

/// Expected bin index of each boundary distribution.
pub fn trident_distances<'t>(out: &TridentOutputs<'t>, bins: usize) -> Result<(Var<'t>, Var<'t>)> {
    let shape = out.offsets.shape();
    let (t, c) = (shape[0], shape[1]);
    let tape = out.start.tape();
    let index = tape.constant(Tensor::new(
        vec![bins + 1, 1],
        (0..=bins).map(|b| b as f64).collect(),
    )?);
    let side = |resp: Var<'t>, dir: WindowDirection, k: usize| -> Result<Var<'t>> {
        let window = resp.bin_window(bins, dir)?;
        let centre = out.offsets.narrow(2, k, 1)?.reshape(vec![t, c, bins + 1])?;
        let probs = window.add(centre)?.softmax(2)?;
        Ok(probs
            .reshape(vec![t * c, bins + 1])?
            .matmul(index)?
            .reshape(vec![t, c])?)
    };
    Ok((
        side(out.start, WindowDirection::Leftward, 0)?,
        side(out.end, WindowDirection::Rightward, 1)?,
    ))
}

/// Direct-regression comparison head: two ReLU distances per instant.
#[derive(Debug, Clone)]
pub struct DirectRegressionHead {
    heads: PerLevel,
    channels: usize,
}

impl DirectRegressionHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        dim: usize,
        levels: usize,
        cfg: &HeadConfig,
    ) -> Self {
        let channels = cfg.regression_channels();
        let heads = PerLevel::new(levels, cfg.shared, |l| {
            ConvHead::new(
                store,
                rng,
                &head_name("reg_head", l),
                dim,
                2 * channels,
                cfg,
            )
        });
        Self { heads, channels }
    }

    pub fn head(&self, level: usize) -> &ConvHead {
        self.heads.at(level)
    }

    /// `(d_st, d_et)`, each `T×C'`, nonnegative.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        level: usize,
        x: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let t = x.shape()[0];
        let c = self.channels;
        let out = self
            .heads
            .at(level)
            .forward(p, x)?
            .relu()
            .reshape(vec![t, 2, c])?;
        Ok((
            out.narrow(1, 0, 1)?.reshape(vec![t, c])?,
            out.narrow(1, 1, 1)?.reshape(vec![t, c])?,
        ))
    }
}

/// Probabilities over the `B + 1` relative bins of one boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BinDistribution {
    pub probs: Vec<f64>,
}

impl BinDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        Self {
            probs: weights.into_iter().map(|w| w / z).collect(),
        }
    }

    /// `Σ b · P[b]`
    pub fn expectation(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(b, p)| b as f64 * p)
            .sum()
    }
}

/// Combined start and end logits `F + F_c` over the bin windows of instant
/// `t` for regression channel `channel`; masked bins carry the mask value.
pub fn window_logits(out: &TridentValues, t: usize, channel: usize) -> (Vec<f64>, Vec<f64>) {
    let bins = out.num_bins;
    let len = out.start.rows();
    let c = out.start.cols();
    let side = |resp: &Tensor, k: usize, leftward: bool| {
        let base = ((t * c + channel) * 2 + k) * (bins + 1);
        let centre = &out.offsets.data()[base..base + bins + 1];
        (0..=bins)
            .map(|b| {
                let src = if leftward {
                    t.checked_sub(b)
                } else {
                    Some(t + b).filter(|&s| s < len)
                };
                match src {
                    Some(s) => resp.get(s, channel) + centre[b],
                    None => MASKED_LOGIT + centre[b],
                }
            })
            .collect()
    };
    (side(&out.start, 0, true), side(&out.end, 1, false))
}

/// Start and end bin distributions of instant `t`.
pub fn boundary_distributions(
    out: &TridentValues,
    t: usize,
    channel: usize,
) -> (BinDistribution, BinDistribution) {
    let (s, e) = window_logits(out, t, channel);
    (
        BinDistribution::from_logits(&s),
        BinDistribution::from_logits(&e),
    )
}

/// Boundary distances `(d_st, d_et)` of instant `t` for regression channel
/// `channel`.
pub fn decode_offsets(out: &TridentValues, t: usize, channel: usize) -> (f64, f64) {
    let (s, e) = window_logits(out, t, channel);
    (expected_bin(&s), expected_bin(&e))
}

/// `Σ b · softmax(logits)[b]`, evaluated as `Σ b·w_b / Σ w_b` with
/// `w_b = exp(l_b − max l)` so equal logits give exactly `B/2`.
pub fn expected_bin(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (b, l) in logits.iter().enumerate() {
        let w = (l - max).exp();
        num += b as f64 * w;
        den += w;
    }
    num / den
}

/// Maps level-`l` distances (1-based level) back to base instants:
/// `ŝ = (t − d_st)·2^(l−1)`, `ê = (t + d_et)·2^(l−1)`.
pub fn decode_segment(t: usize, level: usize, d_st: f64, d_et: f64) -> (f64, f64) {
    assert!(level >= 1, "levels are 1-based");
    let scale = (1u64 << (level - 1)) as f64;
    ((t as f64 - d_st) * scale, (t as f64 + d_et) * scale)
}

/// Convenience for callers that work with a whole level at once.
pub fn level_distances<'t>(
    head: &TridentHead,
    p: &Bound<'t>,
    level_index: usize,
    level: &Level<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let out = head.forward(p, level_index, level.features)?;
    head.distances(&out)
}
