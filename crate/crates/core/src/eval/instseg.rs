//! COCO-style mask average precision.
//!
//! Follows the pycocotools `segm` procedure for a single area range: per
//! image and category, detections sorted by descending score (stable) and
//! capped at 100; each detection greedily takes the unmatched ground truth of
//! highest IoU at or above the threshold; precision/recall accumulated over a
//! score-sorted detection list, precision made monotone, and sampled at 101
//! recall points. Precision is `tp / (tp + fp)` without an epsilon term.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::hungarian::hungarian_match;
use crate::mask::BinaryMask;
use crate::store::manifest::Candidate;

pub const MAX_DETECTIONS: usize = 100;

fn linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    let step = (stop - start) / (num - 1) as f64;
    let mut v: Vec<f64> = (0..num).map(|i| i as f64 * step + start).collect();
    v[num - 1] = stop;
    v
}

/// `0.50, 0.55, ..., 0.95`
pub fn iou_thresholds() -> Vec<f64> {
    linspace(0.5, 0.95, 10)
}

/// `0.00, 0.01, ..., 1.00`
pub fn recall_thresholds() -> Vec<f64> {
    linspace(0.0, 1.0, 101)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Every prediction against every ground-truth object.
    Multi,
    /// Only the most confident prediction per image against the ground-truth
    /// object with the largest box IoU to it.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassMode {
    Agnostic,
    Semantic,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Multi => "multi",
            Protocol::Single => "single",
        })
    }
}

impl fmt::Display for ClassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassMode::Agnostic => "agnostic",
            ClassMode::Semantic => "semantic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApTriple {
    /// Mean over IoU thresholds 0.50:0.05:0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub class: u32,
    pub num_gt: usize,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApResult {
    pub protocol: Protocol,
    pub class_mode: ClassMode,
    #[serde(flatten)]
    pub summary: ApTriple,
    /// Precision at each of the 10 IoU thresholds, averaged over classes.
    pub ap_per_threshold: Vec<f64>,
    pub per_class: Vec<ClassAp>,
}

struct Item {
    score: f64,
    /// Category id used for matching (0 in agnostic mode).
    category: Option<u32>,
    mask: BinaryMask,
}

struct ImageSet {
    preds: Vec<Item>,
    gts: Vec<Item>,
}

/// Groups both sides by image id (sorted), decoding masks once.
fn group(
    preds: &[Candidate],
    gts: &[Candidate],
    category_of_pred: impl Fn(&Candidate) -> Result<Option<u32>>,
    category_of_gt: impl Fn(&Candidate) -> Result<Option<u32>>,
) -> Result<BTreeMap<String, ImageSet>> {
    let mut out: BTreeMap<String, ImageSet> = BTreeMap::new();
    for p in preds {
        let item = Item {
            score: p.score,
            category: category_of_pred(p)?,
            mask: p.mask()?,
        };
        out.entry(p.image_id.clone())
            .or_insert_with(|| ImageSet { preds: vec![], gts: vec![] })
            .preds
            .push(item);
    }
    for g in gts {
        let item = Item {
            score: g.score,
            category: category_of_gt(g)?,
            mask: g.mask()?,
        };
        out.entry(g.image_id.clone())
            .or_insert_with(|| ImageSet { preds: vec![], gts: vec![] })
            .gts
            .push(item);
    }
    for (id, set) in &out {
        let shapes: BTreeSet<(usize, usize)> =
            set.preds.iter().chain(&set.gts).map(|i| i.mask.shape()).collect();
        if shapes.len() > 1 {
            return Err(Error::validation(format!("{id}: masks differ in shape {shapes:?}")));
        }
    }
    Ok(out)
}

/// Highest-score prediction (first on ties) and the ground truth with the
/// largest box IoU to it (first on ties). Without predictions, the first
/// ground truth is kept.
pub fn reduce_single(preds: &[Candidate], gts: &[Candidate]) -> (Vec<Candidate>, Vec<Candidate>) {
    let mut by_image: BTreeMap<&str, (Vec<&Candidate>, Vec<&Candidate>)> = BTreeMap::new();
    for p in preds {
        by_image.entry(&p.image_id).or_default().0.push(p);
    }
    for g in gts {
        by_image.entry(&g.image_id).or_default().1.push(g);
    }
    let mut out_p = Vec::new();
    let mut out_g = Vec::new();
    for (_, (ps, gs)) in by_image {
        let best = ps.iter().copied().fold(None::<&Candidate>, |acc, p| match acc {
            Some(b) if b.score >= p.score => Some(b),
            _ => Some(p),
        });
        match best {
            Some(b) => {
                out_p.push(b.clone());
                let mut pick: Option<(&Candidate, f64)> = None;
                for g in &gs {
                    let iou = b.bbox.iou(&g.bbox);
                    if pick.is_none_or(|(_, v)| iou > v) {
                        pick = Some((g, iou));
                    }
                }
                if let Some((g, _)) = pick {
                    out_g.push(g.clone());
                }
            }
            None => {
                if let Some(g) = gs.first() {
                    out_g.push((*g).clone());
                }
            }
        }
    }
    (out_p, out_g)
}

/// Matches per threshold for the detections of one image and category.
/// Returns `(score, matched[t])` per kept detection and the ground-truth count.
fn evaluate_image(
    preds: &[&Item],
    gts: &[&Item],
    thresholds: &[f64],
) -> Result<(Vec<(f64, Vec<bool>)>, usize)> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order.truncate(MAX_DETECTIONS);
    let ious: Vec<Vec<f64>> = order
        .iter()
        .map(|&d| gts.iter().map(|g| preds[d].mask.iou(&g.mask)).collect())
        .collect::<Result<_>>()?;
    let mut out: Vec<(f64, Vec<bool>)> = order
        .iter()
        .map(|&d| (preds[d].score, vec![false; thresholds.len()]))
        .collect();
    for (t, &thr) in thresholds.iter().enumerate() {
        let mut gt_taken = vec![false; gts.len()];
        for (d, row) in ious.iter().enumerate() {
            let mut best_iou = thr.min(1.0 - 1e-10);
            let mut best: Option<usize> = None;
            for (g, &iou) in row.iter().enumerate() {
                if gt_taken[g] || iou < best_iou {
                    continue;
                }
                best_iou = iou;
                best = Some(g);
            }
            if let Some(g) = best {
                gt_taken[g] = true;
                out[d].1[t] = true;
            }
        }
    }
    Ok((out, gts.len()))
}

/// Interpolated AP at each threshold from detections pooled over images.
/// `None` when there is no ground truth.
fn accumulate(mut dets: Vec<(f64, Vec<bool>)>, num_gt: usize, n_thr: usize) -> Option<Vec<f64>> {
    if num_gt == 0 {
        return None;
    }
    dets.sort_by(|a, b| b.0.total_cmp(&a.0));
    let rec_thrs = recall_thresholds();
    let mut out = Vec::with_capacity(n_thr);
    for t in 0..n_thr {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut recall = Vec::with_capacity(dets.len());
        let mut precision = Vec::with_capacity(dets.len());
        for d in &dets {
            if d.1[t] {
                tp += 1;
            } else {
                fp += 1;
            }
            recall.push(tp as f64 / num_gt as f64);
            precision.push(tp as f64 / (tp + fp) as f64);
        }
        for i in (1..precision.len()).rev() {
            if precision[i] > precision[i - 1] {
                precision[i - 1] = precision[i];
            }
        }
        let mut sum = 0.0;
        for &r in &rec_thrs {
            let at = recall.partition_point(|&x| x < r);
            if at < precision.len() {
                sum += precision[at];
            }
        }
        out.push(sum / rec_thrs.len() as f64);
    }
    Some(out)
}

/// Cluster-to-class matching for semantic mode: Hungarian on pixel
/// intersections between per-image label unions of predictions and ground truth.
pub fn match_instance_labels(preds: &[Candidate], gts: &[Candidate]) -> Result<BTreeMap<u32, u32>> {
    let pred_labels: Vec<u32> = preds
        .iter()
        .map(|p| p.label.ok_or_else(|| Error::validation(format!("{}: unlabeled prediction", p.image_id))))
        .collect::<Result<BTreeSet<_>>>()?
        .into_iter()
        .collect();
    let gt_labels: Vec<u32> = gts
        .iter()
        .map(|g| g.label.ok_or_else(|| Error::validation(format!("{}: unlabeled ground truth", g.image_id))))
        .collect::<Result<BTreeSet<_>>>()?
        .into_iter()
        .collect();
    if pred_labels.is_empty() || gt_labels.is_empty() {
        return Ok(BTreeMap::new());
    }
    let mut unions: BTreeMap<(&str, bool, u32), BinaryMask> = BTreeMap::new();
    for (is_pred, rec) in preds.iter().map(|p| (true, p)).chain(gts.iter().map(|g| (false, g))) {
        let m = rec.mask()?;
        let key = (rec.image_id.as_str(), is_pred, rec.label.unwrap());
        let entry = unions.entry(key).or_insert_with(|| BinaryMask::zeros(m.height(), m.width()));
        if entry.shape() != m.shape() {
            return Err(Error::validation(format!("{}: masks differ in shape", rec.image_id)));
        }
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(y, x) {
                    entry.set(y, x, true);
                }
            }
        }
    }
    let mut profit = vec![vec![0f64; gt_labels.len()]; pred_labels.len()];
    for ((img, is_pred, pl), pm) in &unions {
        if !is_pred {
            continue;
        }
        let pi = pred_labels.binary_search(pl).unwrap();
        for (gi, gl) in gt_labels.iter().enumerate() {
            if let Some(gm) = unions.get(&(img, false, *gl)) {
                profit[pi][gi] += pm.intersection(gm)? as f64;
            }
        }
    }
    let a = hungarian_match(&profit)?;
    Ok(pred_labels
        .iter()
        .zip(&a.row_to_col)
        .filter_map(|(&p, c)| c.map(|c| (p, gt_labels[c])))
        .collect())
}

/// Mask AP for one protocol and class mode. In semantic mode `label_map`
/// sends prediction labels to ground-truth classes; unmapped predictions are
/// ignored.
pub fn mask_ap(
    preds: &[Candidate],
    gts: &[Candidate],
    protocol: Protocol,
    class_mode: ClassMode,
    label_map: Option<&BTreeMap<u32, u32>>,
) -> Result<ApResult> {
    if class_mode == ClassMode::Semantic {
        if let Some(p) = preds.iter().find(|p| p.label.is_none()) {
            return Err(Error::validation(format!(
                "{}: semantic evaluation needs labeled predictions",
                p.image_id
            )));
        }
        if let Some(g) = gts.iter().find(|g| g.label.is_none()) {
            return Err(Error::validation(format!(
                "{}: semantic evaluation needs labeled ground truth",
                g.image_id
            )));
        }
        if label_map.is_none() {
            return Err(Error::validation("semantic evaluation needs a label assignment"));
        }
    }
    let (preds, gts) = match protocol {
        Protocol::Multi => (preds.to_vec(), gts.to_vec()),
        Protocol::Single => reduce_single(preds, gts),
    };
    let semantic = class_mode == ClassMode::Semantic;
    let images = group(
        &preds,
        &gts,
        |p| {
            Ok(if semantic {
                label_map.and_then(|m| m.get(&p.label.unwrap()).copied())
            } else {
                Some(0)
            })
        },
        |g| Ok(Some(if semantic { g.label.unwrap() } else { 0 })),
    )?;
    let categories: BTreeSet<u32> = images
        .values()
        .flat_map(|s| s.gts.iter().filter_map(|g| g.category))
        .collect();
    let thresholds = iou_thresholds();
    let mut per_class = Vec::new();
    let mut per_threshold_sum = vec![0f64; thresholds.len()];
    for &cat in &categories {
        let mut dets = Vec::new();
        let mut num_gt = 0;
        for set in images.values() {
            let ps: Vec<&Item> = set.preds.iter().filter(|p| p.category == Some(cat)).collect();
            let gs: Vec<&Item> = set.gts.iter().filter(|g| g.category == Some(cat)).collect();
            let (d, n) = evaluate_image(&ps, &gs, &thresholds)?;
            dets.extend(d);
            num_gt += n;
        }
        if let Some(aps) = accumulate(dets, num_gt, thresholds.len()) {
            for (s, a) in per_threshold_sum.iter_mut().zip(&aps) {
                *s += a;
            }
            per_class.push(ClassAp {
                class: cat,
                num_gt,
                ap: aps.iter().sum::<f64>() / aps.len() as f64,
                ap50: aps[0],
                ap75: aps[5],
            });
        }
    }
    let k = per_class.len();
    let ap_per_threshold: Vec<f64> = if k == 0 {
        vec![0.0; thresholds.len()]
    } else {
        per_threshold_sum.iter().map(|s| s / k as f64).collect()
    };
    let mean = |f: fn(&ClassAp) -> f64| {
        if k == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / k as f64
        }
    };
    let summary = ApTriple {
        ap: mean(|c| c.ap),
        ap50: mean(|c| c.ap50),
        ap75: mean(|c| c.ap75),
    };
    Ok(ApResult {
        protocol,
        class_mode,
        summary,
        ap_per_threshold,
        per_class,
    })
}
