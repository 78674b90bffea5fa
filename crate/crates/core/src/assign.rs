//! Center-sampling label assignment and regression targets.
//!
//! Level `l` (0-based index here) has scale `s = 2^l` base instants per
//! step. Instant `t` at that level sits at base position `t·s`.
//! It becomes a positive for segment `k` when
//!
//! * it lies within `radius·s` of the segment center,
//! * it lies inside the segment, and
//! * its larger boundary distance `m = max(t·s − s_k, e_k − t·s)` falls in
//!   the level's range `(s·B/2, s·B]`; the first level has no lower bound
//!   and the last level no upper bound (its targets are clipped to `B`).
//!
//! Competing segments resolve to the shorter one. A segment that wins no
//! instant is forced onto its nearest instant at the first level whose bin
//! range can represent it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth action in base-instant units; `class` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSegment {
    pub start: f64,
    pub end: f64,
    pub class: usize,
}

impl ActionSegment {
    pub fn new(start: f64, end: f64, class: usize) -> Result<Self> {
        let seg = Self { start, end, class };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite()
            && self.end.is_finite()
            && 0.0 <= self.start
            && self.start < self.end)
        {
            return Err(Error::Annotation(format!(
                "segment [{}, {}] must satisfy 0 ≤ start < end",
                self.start, self.end
            )));
        }
        if self.class == 0 {
            return Err(Error::Annotation(
                "segment class 0 is reserved for background".into(),
            ));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignConfig {
    pub radius: f64,
    pub num_bins: usize,
    pub num_classes: usize,
    /// Assign per (instant, class) instead of per instant.
    pub multilabel: bool,
}

impl AssignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::config("assignment.radius must be positive"));
        }
        if self.num_bins < 1 || self.num_classes < 1 {
            return Err(Error::config(
                "assignment needs at least one bin and one class",
            ));
        }
        Ok(())
    }
}

/// A positive sample. `class` is 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positive {
    pub level: usize,
    pub t: usize,
    pub class: usize,
    pub segment: usize,
    /// `(d*_st, d*_et)` in level units.
    pub target: (f64, f64),
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub level_lengths: Vec<usize>,
    pub num_classes: usize,
    pub multilabel: bool,
    /// Sorted by (level, t, class).
    pub positives: Vec<Positive>,
    /// Positives whose targets were clipped to the bin range.
    pub clipped: usize,
}

impl AssignmentResult {
    pub fn total_instants(&self) -> usize {
        self.level_lengths.iter().sum()
    }

    /// Row of `(level, t)` once all levels are stacked.
    pub fn row(&self, level: usize, t: usize) -> usize {
        self.level_lengths[..level].iter().sum::<usize>() + t
    }

    /// Foreground label of `(level, t)` in the single-label view (1-based;
    /// 0 is background).
    pub fn label(&self, level: usize, t: usize) -> usize {
        self.positives
            .iter()
            .find(|p| p.level == level && p.t == t)
            .map_or(0, |p| p.class + 1)
    }
}

pub fn level_scale(level: usize) -> f64 {
    (1u64 << level) as f64
}

/// Targets of instant `t` at `level` for `seg`, in level units, unclipped.
pub fn targets(seg: &ActionSegment, level: usize, t: usize) -> (f64, f64) {
    let s = level_scale(level);
    (t as f64 - seg.start / s, seg.end / s - t as f64)
}

#[derive(Clone, Copy)]
struct Slot {
    segment: usize,
    length: f64,
    forced: bool,
}

pub fn center_sample(
    segments: &[ActionSegment],
    level_lengths: &[usize],
    cfg: &AssignConfig,
) -> Result<AssignmentResult> {
    cfg.validate()?;
    if level_lengths.is_empty() {
        return Err(Error::config("assignment needs at least one pyramid level"));
    }
    for seg in segments {
        seg.validate()?;
        if seg.class > cfg.num_classes {
            return Err(Error::Annotation(format!(
                "segment class {} exceeds the {} configured classes",
                seg.class, cfg.num_classes
            )));
        }
    }
    let channels = if cfg.multilabel { cfg.num_classes } else { 1 };
    let channel_of = |seg: &ActionSegment| if cfg.multilabel { seg.class - 1 } else { 0 };
    let b = cfg.num_bins as f64;
    let last = level_lengths.len() - 1;
    let mut slots: Vec<Vec<Option<Slot>>> = level_lengths
        .iter()
        .map(|&n| vec![None; n * channels])
        .collect();

    let claim =
        |slots: &mut Vec<Vec<Option<Slot>>>, level: usize, idx: usize, k: usize, forced: bool| {
            let length = segments[k].length();
            let slot = &mut slots[level][idx];
            let wins = match slot {
                None => true,
                Some(cur) => length < cur.length || (length == cur.length && k < cur.segment),
            };
            if wins {
                *slot = Some(Slot {
                    segment: k,
                    length,
                    forced,
                });
            }
        };

    for (k, seg) in segments.iter().enumerate() {
        let ch = channel_of(seg);
        let centre = seg.center();
        for (level, &n) in level_lengths.iter().enumerate() {
            let s = level_scale(level);
            let lo = if level == 0 { 0.0 } else { s * b / 2.0 };
            let hi = if level == last { f64::INFINITY } else { s * b };
            let radius = cfg.radius * s;
            let first = ((centre - radius) / s).ceil().max(0.0) as usize;
            let stop = (((centre + radius) / s).floor() + 1.0).max(0.0) as usize;
            for t in first..stop.min(n) {
                let x = t as f64 * s;
                if (x - centre).abs() > radius || x < seg.start || x > seg.end {
                    continue;
                }
                let m = (x - seg.start).max(seg.end - x);
                if m > lo && m <= hi {
                    claim(&mut slots, level, t * channels + ch, k, false);
                }
            }
        }
    }

    let mut won = vec![false; segments.len()];
    for level in &slots {
        for slot in level.iter().flatten() {
            won[slot.segment] = true;
        }
    }
    for (k, seg) in segments.iter().enumerate() {
        if won[k] {
            continue;
        }
        let ch = channel_of(seg);
        let (level, t) = forced_instant(seg, level_lengths, cfg.num_bins);
        if slots[level][t * channels + ch].is_none() {
            claim(&mut slots, level, t * channels + ch, k, true);
            continue;
        }
        // The preferred instant belongs to a shorter segment; take the
        // nearest free instant inside the segment whose targets fit the bin
        // range, starting at the preferred level.
        let order = std::iter::once(level).chain((0..level_lengths.len()).filter(|&l| l != level));
        let free = order.into_iter().find_map(|l| {
            let s = level_scale(l);
            let mut cands: Vec<usize> = (0..level_lengths[l])
                .filter(|&t| {
                    let x = t as f64 * s;
                    let (a, e) = targets(seg, l, t);
                    x >= seg.start
                        && x <= seg.end
                        && (l == last || a.max(e) <= b)
                        && slots[l][t * channels + ch].is_none()
                })
                .collect();
            cands.sort_by(|&i, &j| {
                let di = (i as f64 * s - seg.center()).abs();
                let dj = (j as f64 * s - seg.center()).abs();
                di.total_cmp(&dj).then(i.cmp(&j))
            });
            cands.first().map(|&t| (l, t))
        });
        match free {
            Some((l, t)) => claim(&mut slots, l, t * channels + ch, k, true),
            None => log::debug!("segment {k} has no free instant; it stays unassigned"),
        }
    }

    let mut positives = Vec::new();
    let mut clipped = 0;
    for (level, row) in slots.iter().enumerate() {
        for (idx, slot) in row.iter().enumerate() {
            let Some(slot) = slot else { continue };
            let seg = &segments[slot.segment];
            let (a, e) = targets(seg, level, idx / channels);
            let target = (a.clamp(0.0, b), e.clamp(0.0, b));
            if a > b || e > b {
                clipped += 1;
                log::debug!(
                    "clipped targets ({a:.2}, {e:.2}) to {b} bins at level {}",
                    level + 1
                );
            }
            positives.push(Positive {
                level,
                t: idx / channels,
                class: seg.class - 1,
                segment: slot.segment,
                target,
                forced: slot.forced,
            });
        }
    }
    Ok(AssignmentResult {
        level_lengths: level_lengths.to_vec(),
        num_classes: cfg.num_classes,
        multilabel: cfg.multilabel,
        positives,
        clipped,
    })
}

/// Nearest instant to the segment center at the first level whose bin range
/// covers both of its targets (the last level if none does).
pub fn forced_instant(
    seg: &ActionSegment,
    level_lengths: &[usize],
    num_bins: usize,
) -> (usize, usize) {
    let b = num_bins as f64;
    let nearest = |level: usize| {
        let s = level_scale(level);
        ((seg.center() / s).round().max(0.0) as usize).min(level_lengths[level] - 1)
    };
    for level in 0..level_lengths.len() {
        let t = nearest(level);
        let (a, e) = targets(seg, level, t);
        if a.max(e) <= b {
            return (level, t);
        }
    }
    let level = level_lengths.len() - 1;
    (level, nearest(level))
}
