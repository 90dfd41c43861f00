//! Clustering mIoU: pixel confusion between predicted clusters and
//! ground-truth classes, Hungarian matching on intersection counts, then
//! per-class IoU after relabeling.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::hungarian::{hungarian_match, Assignment};
use crate::pseudo_gt::SegmentationMap;

pub const DEFAULT_IGNORE_LABEL: u32 = 255;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemsegOptions {
    /// Number of prediction labels (0 included); inferred when `None`.
    pub n_pred: Option<usize>,
    /// Number of ground-truth classes (background included); inferred when `None`.
    pub n_gt: Option<usize>,
    /// Ground-truth value whose pixels are skipped.
    pub ignore_label: Option<u32>,
}

/// `counts[p][g]`: pixels predicted as `p` whose ground truth is `g`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub n_pred: usize,
    pub n_gt: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn pred_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn gt_totals(&self) -> Vec<u64> {
        (0..self.n_gt).map(|g| self.counts.iter().map(|r| r[g]).sum()).collect()
    }
}

/// Pairs maps by image id; both sides must cover the same ids with equal shapes.
pub fn align_maps<'a>(
    pred: &'a [SegmentationMap],
    gt: &'a [SegmentationMap],
) -> Result<Vec<(&'a SegmentationMap, &'a SegmentationMap)>> {
    let mut p: Vec<&SegmentationMap> = pred.iter().collect();
    let mut g: Vec<&SegmentationMap> = gt.iter().collect();
    p.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    g.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if p.len() != g.len() {
        return Err(Error::validation(format!(
            "{} predicted maps but {} ground-truth maps",
            p.len(),
            g.len()
        )));
    }
    for (a, b) in p.iter().zip(&g) {
        if a.image_id != b.image_id {
            return Err(Error::validation(format!(
                "image ids differ: {} vs {}",
                a.image_id, b.image_id
            )));
        }
        if (a.height, a.width) != (b.height, b.width) || a.labels.len() != b.labels.len() {
            return Err(Error::validation(format!(
                "{}: prediction {}x{} vs ground truth {}x{}",
                a.image_id, a.height, a.width, b.height, b.width
            )));
        }
    }
    Ok(p.into_iter().zip(g).collect())
}

pub fn confusion_matrix(
    pred: &[SegmentationMap],
    gt: &[SegmentationMap],
    opts: &SemsegOptions,
) -> Result<ConfusionMatrix> {
    let pairs = align_maps(pred, gt)?;
    let ignore = opts.ignore_label;
    let n_pred = opts.n_pred.unwrap_or_else(|| {
        pred.iter()
            .flat_map(|m| m.labels.iter().copied().chain([m.num_clusters]))
            .max()
            .map_or(1, |l| l as usize + 1)
    });
    let n_gt = opts.n_gt.unwrap_or_else(|| {
        gt.iter()
            .flat_map(|m| m.labels.iter().copied())
            .filter(|&l| Some(l) != ignore)
            .max()
            .map_or(1, |l| l as usize + 1)
    });
    let mut counts = vec![vec![0u64; n_gt]; n_pred];
    for (p, g) in pairs {
        for (&pl, &gl) in p.labels.iter().zip(&g.labels) {
            if Some(gl) == ignore {
                continue;
            }
            if pl as usize >= n_pred || gl as usize >= n_gt {
                return Err(Error::validation(format!(
                    "{}: label pair ({pl}, {gl}) outside {n_pred} x {n_gt}",
                    p.image_id
                )));
            }
            counts[pl as usize][gl as usize] += 1;
        }
    }
    Ok(ConfusionMatrix {
        n_pred,
        n_gt,
        counts,
    })
}

/// Hungarian matching of predicted labels to classes on intersection counts.
pub fn match_clusters(cm: &ConfusionMatrix) -> Result<Assignment> {
    let profit: Vec<Vec<f64>> = cm
        .counts
        .iter()
        .map(|r| r.iter().map(|&c| c as f64).collect())
        .collect();
    hungarian_match(&profit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassIou {
    pub class: usize,
    /// `None` when the class is absent from both prediction and ground truth.
    pub iou: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemsegReport {
    pub miou: f64,
    pub per_class: Vec<ClassIou>,
    /// Ground-truth class of each prediction label; unmatched labels map to 0.
    pub assignment: Vec<usize>,
    /// Classes excluded from the mean because no pixel mentions them.
    pub absent_classes: Vec<usize>,
    /// Classes no prediction label was matched to (scored, not excluded).
    pub unmatched_gt_classes: Vec<usize>,
    pub evaluated_pixels: u64,
}

/// Per-class IoU after relabeling every prediction label through `assignment`.
pub fn miou_from_confusion(cm: &ConfusionMatrix, assignment: &Assignment) -> Result<SemsegReport> {
    if assignment.row_to_col.len() != cm.n_pred {
        return Err(Error::validation(format!(
            "assignment covers {} labels, confusion has {}",
            assignment.row_to_col.len(),
            cm.n_pred
        )));
    }
    let relabel: Vec<usize> = assignment.row_to_col.iter().map(|c| c.unwrap_or(0)).collect();
    // relabeled[c][g]: pixels relabeled to class c whose truth is g
    let mut relabeled = vec![vec![0u64; cm.n_gt]; cm.n_gt];
    for (p, row) in cm.counts.iter().enumerate() {
        for (g, &v) in row.iter().enumerate() {
            relabeled[relabel[p]][g] += v;
        }
    }
    let mut per_class = Vec::with_capacity(cm.n_gt);
    let mut absent = Vec::new();
    for c in 0..cm.n_gt {
        let tp = relabeled[c][c];
        let fp = relabeled[c].iter().sum::<u64>() - tp;
        let fn_ = relabeled.iter().map(|r| r[c]).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        let iou = (denom > 0).then(|| tp as f64 / denom as f64);
        if iou.is_none() {
            absent.push(c);
        }
        per_class.push(ClassIou {
            class: c,
            iou,
            tp,
            fp,
            fn_,
        });
    }
    let scored: Vec<f64> = per_class.iter().filter_map(|c| c.iou).collect();
    let miou = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    let matched = assignment.col_to_row(cm.n_gt);
    Ok(SemsegReport {
        miou,
        per_class,
        assignment: relabel,
        absent_classes: absent,
        unmatched_gt_classes: (0..cm.n_gt).filter(|&c| matched[c].is_none()).collect(),
        evaluated_pixels: cm.total(),
    })
}

/// mIoU of `pred` against `gt` under a given cluster-to-class assignment.
pub fn miou(
    pred: &[SegmentationMap],
    gt: &[SegmentationMap],
    assignment: &Assignment,
    opts: &SemsegOptions,
) -> Result<SemsegReport> {
    miou_from_confusion(&confusion_matrix(pred, gt, opts)?, assignment)
}

/// Confusion, Hungarian matching and mIoU in one call.
pub fn evaluate_semseg(
    pred: &[SegmentationMap],
    gt: &[SegmentationMap],
    opts: &SemsegOptions,
) -> Result<SemsegReport> {
    let cm = confusion_matrix(pred, gt, opts)?;
    let assignment = match_clusters(&cm)?;
    miou_from_confusion(&cm, &assignment)
}
