//! Whole-stage drivers over the file formats. Each stage reads its inputs from
//! disk, runs in parallel over images, and produces output in canonical
//! image-id order.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::{collect_embeddings, kmeans_fit, label_candidates, KMeansModel, KMeansParams, Points};
use crate::distill::{distill, DistillConfig};
use crate::error::{Error, Result};
use crate::eval::instseg::{mask_ap, match_instance_labels, reduce_single, ApResult, ClassMode, Protocol};
use crate::eval::semseg::{evaluate_semseg, SemsegOptions, SemsegReport};
use crate::loss::{gradient_check, hard_mining_ce, GradientCheck, LossInput, Normalization};
use crate::pseudo_gt::{build_pseudo_ground_truth, PseudoGtConfig, SegmentationMap};
use crate::store::logits::read_logits;
use crate::store::manifest::Candidate;
use crate::store::pack::{read_feature_pack, PACK_EXTENSION};
use crate::store::pgm::{read_index, read_pgm, resolve_entry, write_index, write_pgm, IndexEntry};

pub const INDEX_FILE: &str = "index.jsonl";

/// A per-record failure that did not stop the stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub record: String,
    pub error: String,
}

/// Pack files (`*.mdfp`) in a directory, sorted by file name.
pub fn list_packs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == PACK_EXTENSION) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn record_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Distills every pack in `dir`. Failing packs are reported and skipped;
/// candidates come back sorted by image id.
pub fn distill_dir(dir: &Path, config: &DistillConfig) -> Result<(Vec<Candidate>, Vec<RecordError>)> {
    let paths = list_packs(dir)?;
    let results: Vec<std::result::Result<Candidate, RecordError>> = paths
        .par_iter()
        .map(|p| {
            read_feature_pack(p)
                .and_then(|pack| distill(&pack, config))
                .map(|d| d.candidate)
                .map_err(|e| RecordError {
                    record: record_name(p),
                    error: e.to_string(),
                })
        })
        .collect();
    let mut candidates = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(c) => candidates.push(c),
            Err(e) => errors.push(e),
        }
    }
    candidates.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok((candidates, errors))
}

/// CLS embeddings of every pack in `dir` that carries one, keyed by file stem.
pub fn load_embeddings(dir: &Path) -> Result<HashMap<String, Vec<f32>>> {
    let paths = list_packs(dir)?;
    let packs = paths
        .par_iter()
        .map(read_feature_pack)
        .collect::<Result<Vec<_>>>()?;
    Ok(packs
        .into_iter()
        .filter_map(|p| p.cls_embed.map(|e| (p.image_id, e)))
        .collect())
}

/// Fits K-means on the records' embeddings and labels the records. The
/// returned model has `f32` centroids, matching its sidecar exactly.
pub fn cluster_records(
    records: &[Candidate],
    embeddings: &HashMap<String, Vec<f32>>,
    params: &KMeansParams,
) -> Result<(Vec<Candidate>, KMeansModel)> {
    let rows = collect_embeddings(records, embeddings)?;
    let points = Points::from_rows(&rows)?;
    let model = kmeans_fit(&points, params)?.to_f32_precision();
    let labeled = label_candidates(records, embeddings, &model)?;
    Ok((labeled, model))
}

fn check_image_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::validation(format!("image id {id:?} is not a usable file name")));
    }
    Ok(())
}

/// Builds pseudo-ground-truth maps and writes `<image_id>.pgm` files plus
/// `index.jsonl` into `out_dir`.
pub fn build_pgt_dir(records: &[Candidate], config: &PseudoGtConfig, out_dir: &Path) -> Result<Vec<IndexEntry>> {
    let maps = build_pseudo_ground_truth(records, config)?;
    std::fs::create_dir_all(out_dir)?;
    let entries = maps
        .par_iter()
        .map(|m| {
            check_image_id(&m.image_id)?;
            let name = format!("{}.pgm", m.image_id);
            write_pgm(&m.to_gray()?, out_dir.join(&name))?;
            Ok(IndexEntry {
                image_id: m.image_id.clone(),
                path: name,
                num_clusters: Some(m.num_clusters),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_index(&entries, out_dir.join(INDEX_FILE))?;
    Ok(entries)
}

/// Loads every map listed in an index file.
pub fn load_maps(index_path: &Path) -> Result<Vec<SegmentationMap>> {
    let entries = read_index(index_path)?;
    entries
        .par_iter()
        .map(|e| {
            let img = read_pgm(resolve_entry(index_path, e))
                .map_err(|err| prefix_error(&e.image_id, err))?;
            SegmentationMap::from_gray(e.image_id.clone(), &img, e.num_clusters)
        })
        .collect()
}

fn prefix_error(id: &str, err: Error) -> Error {
    match err {
        Error::Format(m) => Error::Format(format!("{id}: {m}")),
        Error::Corruption(m) => Error::Corruption(format!("{id}: {m}")),
        other => other,
    }
}

pub fn eval_semseg_files(pred_index: &Path, gt_index: &Path, opts: &SemsegOptions) -> Result<SemsegReport> {
    let pred = load_maps(pred_index)?;
    let gt = load_maps(gt_index)?;
    evaluate_semseg(&pred, &gt, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstsegReport {
    /// Prediction label -> ground-truth class, per protocol, for semantic mode.
    pub label_maps: BTreeMap<String, BTreeMap<u32, u32>>,
    pub results: Vec<ApResult>,
}

/// Mask AP for every requested protocol and class mode. In semantic mode the
/// label assignment is computed on the protocol's reduced record sets.
pub fn eval_instseg(
    preds: &[Candidate],
    gts: &[Candidate],
    protocols: &[Protocol],
    class_modes: &[ClassMode],
) -> Result<InstsegReport> {
    let mut label_maps = BTreeMap::new();
    let mut results = Vec::new();
    for &protocol in protocols {
        for &mode in class_modes {
            let map = if mode == ClassMode::Semantic {
                let map = match protocol {
                    Protocol::Multi => match_instance_labels(preds, gts)?,
                    Protocol::Single => {
                        let (p, g) = reduce_single(preds, gts);
                        match_instance_labels(&p, &g)?
                    }
                };
                label_maps.insert(protocol.to_string(), map.clone());
                Some(map)
            } else {
                None
            };
            results.push(mask_ap(preds, gts, protocol, mode, map.as_ref())?);
        }
    }
    Ok(InstsegReport {
        label_maps,
        results,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCheckOptions {
    pub top_fraction: f64,
    pub normalization: Normalization,
    pub class_count: Option<usize>,
    pub epsilon: f64,
}

impl Default for LossCheckOptions {
    fn default() -> Self {
        LossCheckOptions {
            top_fraction: crate::loss::DEFAULT_TOP_FRACTION,
            normalization: Normalization::default(),
            class_count: None,
            epsilon: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheckReport {
    pub n_pixels: usize,
    pub n_classes: usize,
    pub hard_pixels: usize,
    pub loss: f64,
    #[serde(flatten)]
    pub gradient: GradientCheck,
}

/// Loss and finite-difference gradient agreement for an MDLC file.
pub fn loss_check_file(path: &Path, opts: &LossCheckOptions) -> Result<LossCheckReport> {
    let file = read_logits(path)?;
    let input = LossInput {
        n_classes: file.n_classes,
        logits: file.logits.iter().map(|&v| v as f64).collect(),
        targets: file.targets.iter().map(|&t| t as usize).collect(),
        top_fraction: opts.top_fraction,
        class_count: opts.class_count,
        normalization: opts.normalization,
    };
    let out = hard_mining_ce(&input)?;
    let gradient = gradient_check(&input, opts.epsilon)?;
    Ok(LossCheckReport {
        n_pixels: input.n_pixels(),
        n_classes: input.n_classes,
        hard_pixels: out.selected.len(),
        loss: out.loss,
        gradient,
    })
}
