//! CLS→patch and patch↔patch affinity graphs.
//!
//! Both are raw dot products averaged over attention heads: no softmax, no
//! temperature. Dot products accumulate in `f64` in a fixed order (head, then
//! feature dimension) and are stored as `f32`.

use rayon::prelude::*;

use crate::store::pack::FeaturePack;

/// `a_cls[j]` is the head-averaged affinity of the CLS query to patch `j`;
/// `a_patch` is the `N × N` head-averaged key Gram matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    n: usize,
    pub a_cls: Vec<f32>,
    pub a_patch: Vec<f32>,
}

impl AffinityGraph {
    pub fn from_pack(pack: &FeaturePack) -> Self {
        AffinityGraph {
            n: pack.num_patches(),
            a_cls: cls_affinity(pack),
            a_patch: patch_affinity(pack),
        }
    }

    pub fn num_patches(&self) -> usize {
        self.n
    }

    pub fn patch(&self, i: usize, j: usize) -> f32 {
        self.a_patch[i * self.n + j]
    }

    pub fn patch_row(&self, i: usize) -> &[f32] {
        &self.a_patch[i * self.n..(i + 1) * self.n]
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn cls_affinity(pack: &FeaturePack) -> Vec<f32> {
    let heads = pack.heads as f64;
    (0..pack.num_patches())
        .map(|j| {
            let sum: f64 = (0..pack.heads)
                .map(|h| dot(pack.q_cls_head(h), pack.key(h, j)))
                .sum();
            (sum / heads) as f32
        })
        .collect()
}

pub fn patch_affinity(pack: &FeaturePack) -> Vec<f32> {
    let n = pack.num_patches();
    let heads = pack.heads as f64;
    let mut out = vec![0f32; n * n];
    out.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, cell) in row.iter_mut().enumerate() {
            let sum: f64 = (0..pack.heads)
                .map(|h| dot(pack.key(h, i), pack.key(h, j)))
                .sum();
            *cell = (sum / heads) as f32;
        }
    });
    out
}
