//! Single-object mask distillation from the affinity graphs.
//!
//! Steps: top-k proposals from the CLS affinities, the argmax source patch,
//! proposals refined to those positively related to the source, a mask of
//! patches whose summed affinity to the refined set is positive, optional
//! restriction to the source's connected component, then nearest-neighbour
//! upsampling to pixels. All ties break toward the lowest index.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affinity::AffinityGraph;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
pub use crate::mask::mask_to_bbox;
use crate::store::manifest::Candidate;
use crate::store::pack::FeaturePack;

pub const DEFAULT_K_FRACTION: f64 = 0.4;

/// Which part of the thresholded patch mask is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentMode {
    All,
    /// Only the 4-connected component containing the source patch.
    #[default]
    SourceComponent,
}

impl FromStr for ComponentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ComponentMode::All),
            "source-component" => Ok(ComponentMode::SourceComponent),
            other => Err(Error::parameter(format!("unknown component mode {other:?}"))),
        }
    }
}

impl fmt::Display for ComponentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComponentMode::All => "all",
            ComponentMode::SourceComponent => "source-component",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub k_fraction: f64,
    pub component_mode: ComponentMode,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            k_fraction: DEFAULT_K_FRACTION,
            component_mode: ComponentMode::default(),
        }
    }
}

/// Binary mask over the patch grid together with the sets it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    pub grid_h: usize,
    pub grid_w: usize,
    pub bits: Vec<bool>,
    pub source: usize,
    /// Top-k proposal set, ascending.
    pub proposals: Vec<usize>,
    /// Proposals related to the source (always contains it), ascending.
    pub refined: Vec<usize>,
}

fn check_k_fraction(k_fraction: f64) -> Result<()> {
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(Error::parameter(format!(
            "k_fraction {k_fraction} must lie in (0, 1]"
        )));
    }
    Ok(())
}

/// Number of proposals kept for `n` patches: `max(1, floor(k_fraction * n))`.
pub fn proposal_count(n: usize, k_fraction: f64) -> usize {
    ((k_fraction * n as f64).floor() as usize).clamp(1, n.max(1))
}

/// Indices of the largest CLS affinities, returned in ascending index order.
pub fn select_top_k(a_cls: &[f32], k_fraction: f64) -> Result<Vec<usize>> {
    check_k_fraction(k_fraction)?;
    if a_cls.is_empty() {
        return Err(Error::parameter("affinity vector is empty"));
    }
    let mut order: Vec<usize> = (0..a_cls.len()).collect();
    // stable sort keeps lower indices first among equal values
    order.sort_by(|&a, &b| a_cls[b].total_cmp(&a_cls[a]));
    order.truncate(proposal_count(a_cls.len(), k_fraction));
    order.sort_unstable();
    Ok(order)
}

/// Argmax of the CLS affinities, lowest index on ties.
pub fn find_source(a_cls: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in a_cls.iter().enumerate().skip(1) {
        if v > a_cls[best] {
            best = j;
        }
    }
    best
}

/// Keeps proposals with strictly positive affinity to the source; the source
/// itself is always included.
pub fn refine_proposals(proposals: &[usize], source: usize, graph: &AffinityGraph) -> Vec<usize> {
    let row = graph.patch_row(source);
    let mut refined: Vec<usize> = proposals
        .iter()
        .copied()
        .filter(|&j| row[j] > 0.0 || j == source)
        .collect();
    if let Err(at) = refined.binary_search(&source) {
        refined.insert(at, source);
    }
    refined
}

/// `bits[j]` is set when the affinities from the refined set to `j` sum to a
/// strictly positive value; the source is always set.
pub fn build_patch_mask(refined: &[usize], graph: &AffinityGraph, source: usize) -> Vec<bool> {
    let n = graph.num_patches();
    let mut sums = vec![0f64; n];
    for &i in refined {
        for (s, &a) in sums.iter_mut().zip(graph.patch_row(i)) {
            *s += a as f64;
        }
    }
    let mut bits: Vec<bool> = sums.iter().map(|&s| s > 0.0).collect();
    bits[source] = true;
    bits
}

/// Applies the component mode to a patch mask.
pub fn extract_component(mask: &PatchMask, mode: ComponentMode) -> PatchMask {
    match mode {
        ComponentMode::All => mask.clone(),
        ComponentMode::SourceComponent => {
            let (h, w) = (mask.grid_h, mask.grid_w);
            let mut keep = vec![false; h * w];
            let mut queue = VecDeque::from([mask.source]);
            keep[mask.source] = true;
            while let Some(p) = queue.pop_front() {
                let (r, c) = (p / w, p % w);
                let mut visit = |q: usize| {
                    if mask.bits[q] && !keep[q] {
                        keep[q] = true;
                        queue.push_back(q);
                    }
                };
                if r > 0 {
                    visit(p - w);
                }
                if r + 1 < h {
                    visit(p + w);
                }
                if c > 0 {
                    visit(p - 1);
                }
                if c + 1 < w {
                    visit(p + 1);
                }
            }
            PatchMask {
                bits: keep,
                ..mask.clone()
            }
        }
    }
}

/// Nearest-neighbour upsampling of the patch grid to `grid * patch_size` pixels.
pub fn upsample_mask(mask: &PatchMask, patch_size: usize) -> BinaryMask {
    BinaryMask::from_fn(
        mask.grid_h * patch_size,
        mask.grid_w * patch_size,
        |y, x| mask.bits[(y / patch_size) * mask.grid_w + x / patch_size],
    )
}

/// Result of distilling one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Distilled {
    pub patch_mask: PatchMask,
    pub candidate: Candidate,
}

/// Runs the full distillation for one pack. The candidate carries score 1.0
/// and no label.
pub fn distill(pack: &FeaturePack, config: &DistillConfig) -> Result<Distilled> {
    check_k_fraction(config.k_fraction)?;
    pack.validate()?;
    let graph = AffinityGraph::from_pack(pack);
    distill_graph(&graph, pack, config)
}

/// Distillation on a precomputed graph.
pub fn distill_graph(
    graph: &AffinityGraph,
    pack: &FeaturePack,
    config: &DistillConfig,
) -> Result<Distilled> {
    let proposals = select_top_k(&graph.a_cls, config.k_fraction)?;
    let source = find_source(&graph.a_cls);
    let refined = refine_proposals(&proposals, source, graph);
    let bits = build_patch_mask(&refined, graph, source);
    let patch_mask = extract_component(
        &PatchMask {
            grid_h: pack.grid_h,
            grid_w: pack.grid_w,
            bits,
            source,
            proposals,
            refined,
        },
        config.component_mode,
    );
    let pixels = upsample_mask(&patch_mask, pack.patch_size);
    let bbox = mask_to_bbox(&pixels)?;
    let mut candidate = Candidate::from_mask(pack.image_id.clone(), &pixels, 1.0, None);
    candidate.bbox = bbox;
    Ok(Distilled {
        patch_mask,
        candidate,
    })
}
