//! Brute-force oracles for post-processing and evaluation, written without
//! reference to the library implementations.

use rand::Rng;
use tridet_core::assign::ActionSegment;
use tridet_core::eval::tiou;
use tridet_core::inference::Detection;

use super::rng;

pub fn det(start: f64, end: f64, class: usize, score: f64) -> Detection {
    Detection {
        start,
        end,
        class,
        score,
    }
}

pub fn seg(start: f64, end: f64, class: usize) -> ActionSegment {
    ActionSegment::new(start, end, class).unwrap()
}

/// Reference Soft-NMS written independently of the library: keeps an
/// `alive` mask over the original array and fully re-sorts each round.
pub fn reference_soft_nms(
    dets: &[Detection],
    sigma: f64,
    floor: f64,
    max: usize,
    agnostic: bool,
) -> Vec<Detection> {
    let overlap = |a: &Detection, b: &Detection| {
        let hull = a.end.max(b.end) - a.start.min(b.start);
        let gap = (a.start.max(b.start) - a.end.min(b.end)).max(0.0);
        let union = hull - gap;
        let inter = (a.end - a.start) + (b.end - b.start) - union;
        if union > 0.0 {
            inter.max(0.0) / union
        } else {
            0.0
        }
    };
    let mut scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let mut alive: Vec<bool> = scores.iter().map(|&s| s >= floor).collect();
    let mut out = Vec::new();
    while out.len() < max {
        let mut order: Vec<usize> = (0..dets.len()).filter(|&i| alive[i]).collect();
        if order.is_empty() {
            break;
        }
        order.sort_by(|&i, &j| {
            scores[j]
                .partial_cmp(&scores[i])
                .unwrap()
                .then(dets[i].start.partial_cmp(&dets[j].start).unwrap())
                .then(dets[i].end.partial_cmp(&dets[j].end).unwrap())
                .then(dets[i].class.cmp(&dets[j].class))
        });
        let top = order[0];
        alive[top] = false;
        out.push(Detection {
            score: scores[top],
            ..dets[top]
        });
        for &i in &order[1..] {
            if agnostic || dets[i].class == dets[top].class {
                let o = overlap(&dets[top], &dets[i]);
                scores[i] *= (-o * o / sigma).exp();
                if scores[i] < floor {
                    alive[i] = false;
                }
            }
        }
    }
    out
}

pub fn random_candidates(seed: u64, n: usize, classes: usize) -> Vec<Detection> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let s = r.random_range(0.0..100.0);
            let len = r.random_range(0.5..30.0);
            // A coarse score grid makes exact ties common.
            let score = if r.random_bool(0.3) {
                r.random_range(1..10) as f64 / 10.0
            } else {
                r.random_range(0.0..1.0)
            };
            det(s, s + len, r.random_range(1..=classes), score)
        })
        .collect()
}

/// Independent AP: greedy matching over an explicit IoU matrix, then the
/// sum over true positives of the best precision at that rank or later,
/// divided by the ground-truth count.
pub fn reference_ap(dets: &[(usize, Detection)], gts: &[Vec<ActionSegment>], th: f64) -> f64 {
    let total: usize = gts.iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (&dets[i].1, &dets[j].1);
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.start.partial_cmp(&b.start).unwrap())
            .then(a.end.partial_cmp(&b.end).unwrap())
            .then(a.class.cmp(&b.class))
            .then(dets[i].0.cmp(&dets[j].0))
    });
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut hits = Vec::new();
    for &i in &idx {
        let (v, d) = &dets[i];
        let ious: Vec<f64> = gts[*v]
            .iter()
            .map(|g| tiou((d.start, d.end), (g.start, g.end)))
            .collect();
        let mut best: Option<usize> = None;
        for j in 0..ious.len() {
            if taken[*v][j] {
                continue;
            }
            best = match best {
                Some(k) if ious[k] > ious[j] => Some(k),
                Some(k) if ious[k] == ious[j] && gts[*v][k].start <= gts[*v][j].start => Some(k),
                _ => Some(j),
            };
        }
        let hit = matches!(best, Some(j) if ious[j] >= th);
        if let (true, Some(j)) = (hit, best) {
            taken[*v][j] = true;
        }
        hits.push(hit);
    }
    let mut precision = Vec::new();
    let mut tp = 0.0;
    for (k, &h) in hits.iter().enumerate() {
        if h {
            tp += 1.0;
        }
        precision.push(tp / (k + 1) as f64);
    }
    let mut ap = 0.0;
    for k in 0..hits.len() {
        if hits[k] {
            ap += precision[k..].iter().cloned().fold(0.0, f64::max);
        }
    }
    ap / total as f64
}

pub fn random_instance(
    seed: u64,
    videos: usize,
    classes: usize,
) -> (Vec<Vec<Detection>>, Vec<Vec<ActionSegment>>) {
    let mut r = rng(seed);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..videos {
        let g: Vec<ActionSegment> = (0..r.random_range(0..6))
            .map(|_| {
                let s = r.random_range(0.0..200.0);
                seg(
                    s,
                    s + r.random_range(2.0..40.0),
                    r.random_range(1..=classes),
                )
            })
            .collect();
        let mut d = Vec::new();
        for gt in &g {
            for _ in 0..r.random_range(0..3) {
                let j = r.random_range(-5.0..5.0);
                d.push(det(
                    gt.start + j,
                    gt.end + r.random_range(-5.0..5.0),
                    gt.class,
                    r.random_range(0.0..1.0),
                ));
            }
        }
        for _ in 0..r.random_range(0..8) {
            let s = r.random_range(0.0..200.0);
            d.push(det(
                s,
                s + r.random_range(1.0..30.0),
                r.random_range(1..=classes),
                r.random_range(0.0..1.0),
            ));
        }
        dets.push(d);
        gts.push(g);
    }
    (dets, gts)
}

pub fn reference_map(
    dets: &[Vec<Detection>],
    gts: &[Vec<ActionSegment>],
    classes: usize,
    th: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for c in 1..=classes {
        let g: Vec<Vec<ActionSegment>> = gts
            .iter()
            .map(|v| v.iter().filter(|s| s.class == c).copied().collect())
            .collect();
        if g.iter().all(Vec::is_empty) {
            continue;
        }
        let d: Vec<(usize, Detection)> = dets
            .iter()
            .enumerate()
            .flat_map(|(v, ds)| ds.iter().filter(|x| x.class == c).map(move |x| (v, *x)))
            .collect();
        sum += reference_ap(&d, &g, th);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
