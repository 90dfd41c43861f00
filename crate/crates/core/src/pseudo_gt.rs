//! Per-image semantic maps from labeled candidates: confidence filtering with
//! a most-confident fallback, then per-pixel overlap resolution by score.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::store::manifest::Candidate;
use crate::store::pgm::GrayImage;

pub const DEFAULT_TAU: f64 = 0.9;

/// Per-pixel cluster labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub num_clusters: u32,
}

impl SegmentationMap {
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.height * self.width {
            return Err(Error::validation(format!(
                "{}: {} labels for a {}x{} map",
                self.image_id,
                self.labels.len(),
                self.height,
                self.width
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l > self.num_clusters) {
            return Err(Error::validation(format!(
                "{}: label {l} exceeds cluster count {}",
                self.image_id, self.num_clusters
            )));
        }
        Ok(())
    }

    pub fn to_gray(&self) -> Result<GrayImage> {
        self.validate()?;
        if self.num_clusters > 255 {
            return Err(Error::validation(format!(
                "{}: {} clusters do not fit an 8-bit label image",
                self.image_id, self.num_clusters
            )));
        }
        Ok(GrayImage {
            height: self.height,
            width: self.width,
            pixels: self.labels.iter().map(|&l| l as u8).collect(),
        })
    }

    /// `num_clusters` defaults to the largest label present.
    pub fn from_gray(image_id: impl Into<String>, img: &GrayImage, num_clusters: Option<u32>) -> Result<Self> {
        let labels: Vec<u32> = img.pixels.iter().map(|&p| p as u32).collect();
        let map = SegmentationMap {
            image_id: image_id.into(),
            height: img.height,
            width: img.width,
            num_clusters: num_clusters.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0)),
            labels,
        };
        map.validate()?;
        Ok(map)
    }

    /// One binary mask per nonzero label, ascending by label.
    pub fn label_masks(&self) -> Vec<(u32, BinaryMask)> {
        let mut present: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        present.sort_unstable();
        present.dedup();
        present
            .into_iter()
            .map(|l| {
                let bits = self.labels.iter().map(|&v| v == l).collect();
                (l, BinaryMask::from_bits(self.height, self.width, bits).unwrap())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum OverlapMode {
    /// The highest-score mask owns each contested pixel.
    #[default]
    PerPixel,
    /// Drop whole masks whose IoU with a more confident kept mask exceeds the
    /// threshold, then resolve the remainder per pixel.
    MaskNms { iou_threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoGtConfig {
    pub tau: f64,
    pub overlap: OverlapMode,
    /// Cluster count C; inferred from the largest label when absent.
    pub num_clusters: Option<u32>,
}

impl Default for PseudoGtConfig {
    fn default() -> Self {
        PseudoGtConfig {
            tau: DEFAULT_TAU,
            overlap: OverlapMode::PerPixel,
            num_clusters: None,
        }
    }
}

pub fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::parameter(format!("tau {tau} must lie in [0, 1]")));
    }
    Ok(())
}

/// Keeps records scoring strictly above `tau`; if none do, keeps only the
/// highest-scoring one (first in manifest order on ties).
pub fn filter_by_confidence(records: &[Candidate], tau: f64) -> Vec<Candidate> {
    let kept: Vec<Candidate> = records.iter().filter(|r| r.score > tau).cloned().collect();
    if !kept.is_empty() || records.is_empty() {
        return kept;
    }
    let mut best = &records[0];
    for r in &records[1..] {
        if r.score > best.score {
            best = r;
        }
    }
    vec![best.clone()]
}

/// Whole-mask suppression by descending score; survivors keep manifest order.
pub fn suppress_overlapping(records: &[Candidate], iou_threshold: f64) -> Result<Vec<Candidate>> {
    let masks = records.iter().map(Candidate::mask).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].score.total_cmp(&records[a].score));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let mut keep = true;
        for &j in &kept {
            if masks[i].iou(&masks[j])? > iou_threshold {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| records[i].clone()).collect())
}

/// Paints labeled masks so that the most confident record owns every pixel it
/// covers; earlier records win score ties. Uncovered pixels are background.
pub fn resolve_overlaps(records: &[Candidate], num_clusters: u32) -> Result<SegmentationMap> {
    let first = records
        .first()
        .ok_or_else(|| Error::validation("no records to resolve"))?;
    let (h, w) = first.shape();
    let mut labels = vec![0u32; h * w];
    let mut order: Vec<usize> = (0..records.len()).collect();
    // ascending score, later manifest position first among ties so the
    // earliest record is painted last
    order.sort_by(|&a, &b| records[a].score.total_cmp(&records[b].score).then(b.cmp(&a)));
    for i in order {
        let r = &records[i];
        if r.image_id != first.image_id {
            return Err(Error::validation(format!(
                "records from {} and {} resolved together",
                first.image_id, r.image_id
            )));
        }
        if r.shape() != (h, w) {
            return Err(Error::validation(format!(
                "{}: mask shape {:?} differs from {:?}",
                r.image_id,
                r.shape(),
                (h, w)
            )));
        }
        let label = r
            .label
            .ok_or_else(|| Error::validation(format!("{}: record has no label", r.image_id)))?;
        if label == 0 || label > num_clusters {
            return Err(Error::validation(format!(
                "{}: label {label} outside 1..={num_clusters}",
                r.image_id
            )));
        }
        let mask = r.mask()?;
        for (dst, &on) in labels.iter_mut().zip(mask.bits()) {
            if on {
                *dst = label;
            }
        }
    }
    Ok(SegmentationMap {
        image_id: first.image_id.clone(),
        height: h,
        width: w,
        labels,
        num_clusters,
    })
}

/// Groups records by image id (manifest order kept within an image).
pub fn group_by_image(records: &[Candidate]) -> BTreeMap<&str, Vec<Candidate>> {
    let mut groups: BTreeMap<&str, Vec<Candidate>> = BTreeMap::new();
    for r in records {
        groups.entry(r.image_id.as_str()).or_default().push(r.clone());
    }
    groups
}

/// Cluster count used for the maps: configured, or the largest label present.
pub fn cluster_count(records: &[Candidate], config: &PseudoGtConfig) -> u32 {
    config
        .num_clusters
        .unwrap_or_else(|| records.iter().filter_map(|r| r.label).max().unwrap_or(0))
}

/// Records kept for one image after filtering and optional mask suppression.
pub fn kept_records(records: &[Candidate], config: &PseudoGtConfig) -> Result<Vec<Candidate>> {
    let kept = filter_by_confidence(records, config.tau);
    match config.overlap {
        OverlapMode::PerPixel => Ok(kept),
        OverlapMode::MaskNms { iou_threshold } => suppress_overlapping(&kept, iou_threshold),
    }
}

/// One map per image id, sorted by image id.
pub fn build_pseudo_ground_truth(records: &[Candidate], config: &PseudoGtConfig) -> Result<Vec<SegmentationMap>> {
    check_tau(config.tau)?;
    let c = cluster_count(records, config);
    let groups: Vec<(&str, Vec<Candidate>)> = group_by_image(records).into_iter().collect();
    groups
        .par_iter()
        .map(|(_, recs)| resolve_overlaps(&kept_records(recs, config)?, c))
        .collect()
}
