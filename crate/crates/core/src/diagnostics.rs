//! Numerical checks of the rank-loss argument.
//!
//! Softmax attention outputs are convex combinations of value rows, so a
//! stack of attention layers can only pull features together. The checks
//! here measure that collapse with the mean cosine to the temporal mean,
//! and verify the geometric facts behind it: the largest pairwise angle of
//! a point set in an origin-free cone does not grow under row-stochastic
//! mixing, and plain layer normalization maps every row onto a sphere of
//! radius `√(D−1)`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use tridet_autograd::{Tape, Tensor};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::sgp::{SgpConfig, SgpLayer};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Mean cosine between every row and the mean row.
pub fn cosine_similarity_metric(x: &Tensor) -> Result<f64> {
    let (t, d) = (x.rows(), x.cols());
    if t == 0 {
        return Err(Error::Degenerate(
            "cosine metric needs at least one instant".into(),
        ));
    }
    let mut mean = vec![0.0; d];
    for i in 0..t {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / t as f64;
        }
    }
    let mean_norm = norm(&mean);
    if mean_norm < 1e-12 {
        return Err(Error::Degenerate("temporal mean feature is zero".into()));
    }
    let mut total = 0.0;
    for i in 0..t {
        let r = x.row(i);
        let n = norm(r);
        if n == 0.0 {
            return Err(Error::Degenerate(format!("instant {i} has a zero feature")));
        }
        total += dot(r, &mean) / (n * mean_norm);
    }
    Ok(total / t as f64)
}

/// Angle between two nonzero vectors, accurate near 0 and π.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// Points in `R^d`. The orthant flag asserts that every coordinate is
/// positive, so the convex hull excludes the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Vec<f64>>,
    positive_orthant: bool,
}

impl PointSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let d = points.first().map_or(0, Vec::len);
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::Degenerate(
                "points must share a positive dimension".into(),
            ));
        }
        if points.iter().any(|p| norm(p) == 0.0) {
            return Err(Error::Degenerate(
                "point set contains the zero vector".into(),
            ));
        }
        let positive_orthant = points.iter().flatten().all(|&v| v > 0.0);
        Ok(Self {
            points,
            positive_orthant,
        })
    }

    /// `n` points with coordinates uniform in `(0.01, 1)`.
    pub fn random_positive(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Self {
        let points = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0.01..1.0)).collect())
            .collect();
        Self::new(points).expect("positive points are valid")
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn positive_orthant(&self) -> bool {
        self.positive_orthant
    }

    /// Rows `M·P` for a row-stochastic `M`.
    pub fn mix(&self, weights: &[Vec<f64>]) -> Result<PointSet> {
        let d = self.points[0].len();
        let points = weights
            .iter()
            .map(|w| {
                let mut out = vec![0.0; d];
                for (wj, p) in w.iter().zip(&self.points) {
                    for (o, v) in out.iter_mut().zip(p) {
                        *o += wj * v;
                    }
                }
                out
            })
            .collect();
        PointSet::new(points)
    }
}

/// Largest pairwise angle.
pub fn max_angle(points: &PointSet) -> Result<f64> {
    let p = &points.points;
    if p.len() < 2 {
        return Err(Error::Degenerate(
            "max angle needs at least two points".into(),
        ));
    }
    let mut best = 0.0f64;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            best = best.max(angle(&p[i], &p[j]));
        }
    }
    Ok(best)
}

/// Random row-stochastic matrix with exponential row weights.
pub fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let w: Vec<f64> = (0..cols)
                .map(|_| -rng.random::<f64>().max(1e-300).ln())
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest observed `max_angle(mixed) − max_angle(original)`.
    pub worst_excess: f64,
}

impl AngleReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub const ANGLE_TOLERANCE: f64 = 1e-9;

/// Mixes `points` with `trials` random row-stochastic matrices and counts
/// every increase of the maximum angle beyond [`ANGLE_TOLERANCE`].
pub fn convex_combination_angle_test(
    points: &PointSet,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AngleReport> {
    if !points.positive_orthant() {
        return Err(Error::Degenerate(
            "mixing test requires a positive-orthant point set (hull must exclude the origin)"
                .into(),
        ));
    }
    let n = points.points.len();
    let base = max_angle(points)?;
    let mut report = AngleReport {
        trials,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
    };
    for _ in 0..trials {
        let mixed = points.mix(&random_stochastic(rng, n, n))?;
        let excess = max_angle(&mixed)? - base;
        report.worst_excess = report.worst_excess.max(excess);
        if excess > ANGLE_TOLERANCE {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Two-point case: any two convex combinations of `a` and `b` are no
/// further apart in angle than `a` and `b`.
pub fn two_point_mixing_test(trials: usize, dim: usize, rng: &mut ChaCha8Rng) -> AngleReport {
    let mut report = AngleReport {
        trials,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
    };
    for _ in 0..trials {
        let set = PointSet::random_positive(rng, 2, dim);
        let base = angle(&set.points[0], &set.points[1]);
        let mixed = set
            .mix(&random_stochastic(rng, 2, 2))
            .expect("positive mix");
        let excess = angle(&mixed.points[0], &mixed.points[1]) - base;
        report.worst_excess = report.worst_excess.max(excess);
        if excess > ANGLE_TOLERANCE {
            report.violations += 1;
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    pub rows: usize,
    pub dim: usize,
    pub max_deviation: f64,
}

pub const MODULUS_TOLERANCE: f64 = 1e-9;

impl ModulusReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= MODULUS_TOLERANCE
    }
}

/// Layer-normalizes `rows` Gaussian rows of width `dim` and reports the
/// largest deviation of a row norm from `√(dim − 1)`.
pub fn layernorm_modulus_test(
    rows: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ModulusReport> {
    let data: Vec<f64> = (0..rows * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            3.0 * z + 1.0
        })
        .collect();
    let tape = Tape::new();
    let y = tape
        .constant(Tensor::new(vec![rows, dim], data)?)
        .layernorm()?
        .value();
    let target = ((dim - 1) as f64).sqrt();
    let max_deviation = (0..rows)
        .map(|r| (norm(y.row(r)) - target).abs())
        .fold(0.0, f64::max);
    Ok(ModulusReport {
        rows,
        dim,
        max_deviation,
    })
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

/// Random orthogonal `d×d` matrix (Gram–Schmidt on Gaussian columns).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut data = vec![0.0; d * d];
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            data[i * d + j] = *v;
        }
    }
    Tensor::new(vec![d, d], data).expect("square")
}

/// Single-head local self-attention without output projection:
/// `out_i = Σ_{|j−i| ≤ r} softmax_j(q_i·k_j/√d) v_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSelfAttention {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub window: usize,
}

/// Output of [`LocalSelfAttention::forward`]: attended rows, value rows,
/// and the attention weights of each output over its window.
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub output: Tensor,
    pub values: Tensor,
    /// `weights[i]` lists `(j, a_ij)` for every key in the window of `i`.
    pub weights: Vec<Vec<(usize, f64)>>,
}

impl LocalSelfAttention {
    pub fn new(wq: Tensor, wk: Tensor, wv: Tensor, window: usize) -> Result<Self> {
        if window % 2 == 0 {
            return Err(Error::config(format!(
                "attention window must be odd, got {window}"
            )));
        }
        let d = wq.rows();
        for w in [&wq, &wk, &wv] {
            if w.shape() != [d, d] {
                return Err(Error::config(
                    "attention projections must be square and equal-sized",
                ));
            }
        }
        Ok(Self { wq, wk, wv, window })
    }

    /// Gaussian queries and keys with variance `1/d`, orthogonal values.
    pub fn random(rng: &mut ChaCha8Rng, dim: usize, window: usize) -> Result<Self> {
        let std = 1.0 / (dim as f64).sqrt();
        let wq = Tensor::new(vec![dim, dim], gaussian_matrix(rng, dim, dim, std))?;
        let wk = Tensor::new(vec![dim, dim], gaussian_matrix(rng, dim, dim, std))?;
        Self::new(wq, wk, random_orthogonal(rng, dim), window)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Attended> {
        let d = self.wq.rows();
        if x.shape().len() != 2 || x.cols() != d {
            return Err(Error::config(format!(
                "attention expects T×{d} input, got {:?}",
                x.shape()
            )));
        }
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let q = xv.matmul(tape.constant(self.wq.clone()))?.value();
        let k = xv.matmul(tape.constant(self.wk.clone()))?.value();
        let v = xv.matmul(tape.constant(self.wv.clone()))?.value();
        let t = x.rows();
        let r = self.window / 2;
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = vec![0.0; t * d];
        let mut weights = Vec::with_capacity(t);
        for i in 0..t {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(t - 1);
            let logits: Vec<f64> = (lo..=hi).map(|j| dot(q.row(i), k.row(j)) * scale).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let w: Vec<(usize, f64)> = (lo..=hi).zip(e.iter().map(|x| x / z)).collect();
            for &(j, a) in &w {
                for (o, vj) in out[i * d..(i + 1) * d].iter_mut().zip(v.row(j)) {
                    *o += a * vj;
                }
            }
            weights.push(w);
        }
        Ok(Attended {
            output: Tensor::new(vec![t, d], out)?,
            values: v,
            weights,
        })
    }
}

/// `u + noise·ε` per instant with a random unit direction `u`.
pub fn similar_sequence(rng: &mut ChaCha8Rng, t: usize, dim: usize, noise: f64) -> Tensor {
    let u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&u);
    let data = (0..t)
        .flat_map(|_| u.iter().map(|x| x / n).collect::<Vec<_>>())
        .map(|x| {
            let e: f64 = StandardNormal.sample(rng);
            x + noise * e
        })
        .collect();
    Tensor::new(vec![t, dim], data).expect("valid shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankLossConfig {
    pub depth: usize,
    pub seeds: usize,
    pub root_seed: u64,
    pub length: usize,
    pub dim: usize,
    pub attention_window: usize,
    pub noise: f64,
    pub sgp: SgpConfig,
}

impl Default for RankLossConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            seeds: 20,
            root_seed: 0,
            length: 64,
            dim: 32,
            attention_window: 9,
            noise: 0.1,
            sgp: SgpConfig::default(),
        }
    }
}

impl RankLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sgp.dim != self.dim {
            return Err(Error::config(
                "diagnostics.rank_loss.sgp.dim must equal dim",
            ));
        }
        if self.seeds == 0 || self.length == 0 {
            return Err(Error::config(
                "diagnostics.rank_loss needs seeds ≥ 1 and length ≥ 1",
            ));
        }
        self.sgp.validate()
    }
}

/// `S_c` after each layer of one stack; entry 0 is the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTrace {
    pub variant: String,
    pub seed: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankLossReport {
    pub attention: Vec<SimilarityTrace>,
    pub sgp: Vec<SimilarityTrace>,
}

fn mean_trace(traces: &[SimilarityTrace]) -> Vec<f64> {
    let n = traces.len() as f64;
    let len = traces.first().map_or(0, |t| t.values.len());
    (0..len)
        .map(|i| traces.iter().map(|t| t.values[i]).sum::<f64>() / n)
        .collect()
}

impl RankLossReport {
    pub fn mean_attention(&self) -> Vec<f64> {
        mean_trace(&self.attention)
    }

    pub fn mean_sgp(&self) -> Vec<f64> {
        mean_trace(&self.sgp)
    }

    /// Attention ends more collapsed than SGP, and its mean trace never
    /// decreases with depth.
    pub fn ordering_holds(&self) -> bool {
        let a = self.mean_attention();
        let s = self.mean_sgp();
        let monotone = a.windows(2).all(|w| w[1] >= w[0]);
        monotone && a.last() > s.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer_index,S_c,variant,seed\n");
        for tr in self.attention.iter().chain(&self.sgp) {
            for (i, v) in tr.values.iter().enumerate() {
                writeln!(s, "{i},{v:.12},{},{}", tr.variant, tr.seed).expect("write to string");
            }
        }
        s
    }
}

/// Per seed: draws one highly self-similar sequence and random-weight
/// attention and SGP stacks of `depth` layers, then traces `S_c` through
/// both stacks.
pub fn rank_loss_experiment(cfg: &RankLossConfig) -> Result<RankLossReport> {
    cfg.validate()?;
    let mut attention = Vec::with_capacity(cfg.seeds);
    let mut sgp = Vec::with_capacity(cfg.seeds);
    for i in 0..cfg.seeds {
        let seed = cfg.root_seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = similar_sequence(&mut rng, cfg.length, cfg.dim, cfg.noise);
        let s0 = cosine_similarity_metric(&input)?;

        let mut x = input.clone();
        let mut values = vec![s0];
        for _ in 0..cfg.depth {
            x = LocalSelfAttention::random(&mut rng, cfg.dim, cfg.attention_window)?
                .forward(&x)?
                .output;
            values.push(cosine_similarity_metric(&x)?);
        }
        attention.push(SimilarityTrace {
            variant: "attention".into(),
            seed,
            values,
        });

        let mut store = ParamStore::new();
        let layers = (0..cfg.depth)
            .map(|l| SgpLayer::new(&mut store, &mut rng, &format!("diag{l}"), &cfg.sgp))
            .collect::<Result<Vec<_>>>()?;
        let tape = Tape::new();
        let p = store.bind(&tape);
        let mut h = tape.constant(input);
        let mut values = vec![s0];
        for layer in &layers {
            h = layer.forward(&p, h)?;
            values.push(cosine_similarity_metric(&h.value())?);
        }
        sgp.push(SimilarityTrace {
            variant: "sgp".into(),
            seed,
            values,
        });
    }
    Ok(RankLossReport { attention, sgp })
}
