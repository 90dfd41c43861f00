//! Reference implementations written independently of the library code paths.

use maskdistill::{BinaryMask, FeaturePack};

/// Head-averaged affinities with explicit loops; returned in f64.
pub fn naive_affinities(p: &FeaturePack) -> (Vec<f64>, Vec<f64>) {
    let n = p.grid_h * p.grid_w;
    let (heads, d) = (p.heads, p.head_dim);
    let key = |h: usize, j: usize, t: usize| p.k_patch[(h * n + j) * d + t] as f64;
    let mut a_cls = vec![0f64; n];
    let mut a_patch = vec![0f64; n * n];
    for j in 0..n {
        let mut acc = 0f64;
        for h in 0..heads {
            let mut dot = 0f64;
            for t in 0..d {
                dot += p.q_cls[h * d + t] as f64 * key(h, j, t);
            }
            acc += dot;
        }
        a_cls[j] = acc / heads as f64;
    }
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0f64;
            for h in 0..heads {
                let mut dot = 0f64;
                for t in 0..d {
                    dot += key(h, i, t) * key(h, j, t);
                }
                acc += dot;
            }
            a_patch[i * n + j] = acc / heads as f64;
        }
    }
    (a_cls, a_patch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveDistill {
    pub source: usize,
    pub proposals: Vec<usize>,
    pub refined: Vec<usize>,
    pub patch_bits: Vec<bool>,
    pub pixels: Vec<bool>,
    pub bbox: [u32; 4],
}

/// The whole distillation in one function: rank counting for top-k, linear
/// argmax, sign filters, fixpoint connectivity, loop upsampling, loop bbox.
pub fn naive_distill(p: &FeaturePack, k_fraction: f64, source_component: bool) -> NaiveDistill {
    let n = p.grid_h * p.grid_w;
    let (cls64, patch64) = naive_affinities(p);
    // stored precision is f32
    let a_cls: Vec<f32> = cls64.iter().map(|&v| v as f32).collect();
    let a_patch: Vec<f32> = patch64.iter().map(|&v| v as f32).collect();

    let mut count = (k_fraction * n as f64).floor() as usize;
    if count < 1 {
        count = 1;
    }
    let mut proposals = Vec::new();
    for j in 0..n {
        let better = (0..n)
            .filter(|&i| a_cls[i] > a_cls[j] || (a_cls[i] == a_cls[j] && i < j))
            .count();
        if better < count {
            proposals.push(j);
        }
    }
    let mut source = 0;
    for j in 0..n {
        if a_cls[j] > a_cls[source] {
            source = j;
        }
    }
    let mut refined: Vec<usize> = proposals
        .iter()
        .copied()
        .filter(|&j| a_patch[source * n + j] > 0.0)
        .collect();
    if !refined.contains(&source) {
        refined.push(source);
        refined.sort();
    }
    let mut bits = vec![false; n];
    for j in 0..n {
        let mut s = 0f64;
        for &i in &refined {
            s += a_patch[i * n + j] as f64;
        }
        bits[j] = s > 0.0;
    }
    bits[source] = true;
    if source_component {
        let (h, w) = (p.grid_h, p.grid_w);
        let mut reach = vec![false; n];
        reach[source] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for r in 0..h {
                for c in 0..w {
                    let q = r * w + c;
                    if reach[q] || !bits[q] {
                        continue;
                    }
                    if (r > 0 && reach[q - w])
                        || (r + 1 < h && reach[q + w])
                        || (c > 0 && reach[q - 1])
                        || (c + 1 < w && reach[q + 1])
                    {
                        reach[q] = true;
                        changed = true;
                    }
                }
            }
        }
        bits = reach;
    }
    let s = p.patch_size;
    let (ih, iw) = (p.grid_h * s, p.grid_w * s);
    let mut pixels = vec![false; ih * iw];
    let (mut x0, mut y0, mut x1, mut y1) = (iw, ih, 0, 0);
    for y in 0..ih {
        for x in 0..iw {
            let on = bits[(y / s) * p.grid_w + x / s];
            pixels[y * iw + x] = on;
            if on {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    NaiveDistill {
        source,
        proposals,
        refined,
        patch_bits: bits,
        pixels,
        bbox: [x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32],
    }
}

/// Maximum total profit over all permutations of the zero-padded square matrix.
pub fn brute_force_assignment(profit: &[Vec<f64>]) -> f64 {
    let n = profit.len().max(profit[0].len());
    let at = |r: usize, c: usize| profit.get(r).and_then(|row| row.get(c)).copied().unwrap_or(0.0);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::NEG_INFINITY;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    best = best.max(perm.iter().enumerate().map(|(r, &k)| at(r, k)).sum());
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.max(perm.iter().enumerate().map(|(r, &k)| at(r, k)).sum());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

pub struct Scored<'a> {
    pub image: usize,
    pub score: f64,
    pub mask: &'a BinaryMask,
}

fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let mut inter = 0u32;
    let mut union = 0u32;
    for (x, y) in a.bits().iter().zip(b.bits()) {
        inter += (*x && *y) as u32;
        union += (*x || *y) as u32;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Class-agnostic AP at one IoU threshold, from first principles: greedy
/// matching in score order (highest IoU, later ground truth on equal IoU),
/// then the mean over recall levels r = 0, 0.01, .., 1 of the best precision
/// achieved at recall >= r. Scores are assumed distinct.
pub fn brute_force_ap(preds: &[Scored], gts: &[(usize, &BinaryMask)], threshold: f64) -> f64 {
    let total_gt = gts.len();
    if total_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.partial_cmp(&preds[a].score).unwrap());
    let mut taken = vec![false; gts.len()];
    let mut hits = Vec::new();
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, (img, m)) in gts.iter().enumerate() {
            if *img != preds[d].image || taken[g] {
                continue;
            }
            let v = iou(preds[d].mask, m);
            if v >= threshold && best.is_none_or(|(_, b)| v >= b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        hits.push(best.is_some());
    }
    let mut points = Vec::new();
    let mut tp = 0;
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        points.push((tp as f64 / (k + 1) as f64, tp as f64 / total_gt as f64));
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(_, rec)| *rec >= r)
            .map(|(p, _)| *p)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}
