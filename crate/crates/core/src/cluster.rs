//! K-means pseudo-labeling of masked-image CLS embeddings.
//!
//! Lloyd iterations from k-means++ seeds, best of several restarts by inertia.
//! Centroid updates accumulate in point order so results are deterministic for
//! a fixed seed regardless of thread count.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::manifest::Candidate;
use crate::store::write_atomic;

pub const MODEL_MAGIC: &[u8; 4] = b"MDKM";

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub restarts: usize,
    /// L2-normalize every point before fitting and assigning.
    pub normalize: bool,
}

impl KMeansParams {
    pub fn new(k: usize) -> Self {
        KMeansParams {
            k,
            seed: 0,
            max_iter: 300,
            restarts: 10,
            normalize: false,
        }
    }
}

/// Row-major point matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::validation(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Points { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(Error::validation("embedding rows differ in dimension"));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().map(|&v| v as f64))
            .collect();
        Points::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn normalized(&self) -> Points {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Points {
            dim: self.dim,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub k: usize,
    pub dim: usize,
    /// `[k × dim]`, row-major.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations_run: usize,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
    pub normalize: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; lower index on ties.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

impl KMeansModel {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Labels in `0..k` by nearest centroid (squared Euclidean, lower index on ties).
    pub fn assign(&self, points: &Points) -> Result<Vec<usize>> {
        if points.dim != self.dim {
            return Err(Error::validation(format!(
                "points have dimension {}, model expects {}",
                points.dim, self.dim
            )));
        }
        let prepared;
        let points = if self.normalize {
            prepared = points.normalized();
            &prepared
        } else {
            points
        };
        Ok((0..points.len())
            .into_par_iter()
            .map(|i| nearest(points.row(i), &self.centroids, self.dim).0)
            .collect())
    }

    /// Copy with centroids rounded to `f32`, i.e. exactly what the sidecar stores.
    pub fn to_f32_precision(&self) -> KMeansModel {
        KMeansModel {
            centroids: self.centroids.iter().map(|&c| c as f32 as f64).collect(),
            ..self.clone()
        }
    }

    /// Sidecar layout: `b"MDKM" | u32 k | u32 d | f32 centroids[k * d]`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.centroids.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for &c in &self.centroids {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out
    }

    /// Restores centroids only; fit statistics are not part of the sidecar.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::format("model: missing MDKM magic"));
        }
        let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if k == 0 || dim == 0 || Some(bytes.len()) != k.checked_mul(dim).map(|n| 12 + 4 * n) {
            return Err(Error::corruption(format!(
                "model: {} bytes do not hold {k}x{dim} centroids",
                bytes.len()
            )));
        }
        let centroids: Vec<f64> = bytes[12..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("model: non-finite centroid"));
        }
        Ok(KMeansModel {
            k,
            dim,
            centroids,
            inertia: 0.0,
            seed: 0,
            iterations_run: 0,
            inertia_history: Vec::new(),
            normalize: false,
        })
    }
}

pub fn write_model(model: &KMeansModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &model.to_bytes())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<KMeansModel> {
    KMeansModel::from_bytes(&std::fs::read(path)?)
}

/// k-means++ seeding: first centre uniform, the rest drawn proportional to
/// squared distance from the nearest chosen centre.
fn kmeans_pp(points: &Points, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len();
    let dim = points.dim;
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(points.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &centroids[start..start + dim]));
        }
    }
    centroids
}

struct Run {
    centroids: Vec<f64>,
    inertia: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn lloyd(points: &Points, mut centroids: Vec<f64>, k: usize, max_iter: usize) -> Run {
    let n = points.len();
    let dim = points.dim;
    let mut labels: Vec<usize> = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let assigned: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(points.row(i), &centroids, dim))
            .collect();
        let inertia: f64 = assigned.iter().map(|a| a.1).sum();
        history.push(inertia);
        let changed = assigned.iter().zip(&labels).any(|(a, &l)| a.0 != l);
        labels.iter_mut().zip(&assigned).for_each(|(l, a)| *l = a.0);
        if !changed || iterations >= max_iter {
            return Run {
                centroids,
                inertia,
                iterations,
                history,
            };
        }
        iterations += 1;

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            }
        }
        // re-seed empty clusters with the point farthest from its centroid
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let mut far = (0, -1.0);
            for i in 0..n {
                let l = labels[i];
                let d = sq_dist(points.row(i), &centroids[l * dim..(l + 1) * dim]);
                if d > far.1 {
                    far = (i, d);
                }
            }
            let (i, _) = far;
            centroids[c * dim..(c + 1) * dim].copy_from_slice(points.row(i));
            labels[i] = c;
        }
    }
}

pub fn kmeans_fit(points: &Points, params: &KMeansParams) -> Result<KMeansModel> {
    let n = points.len();
    if params.k == 0 || n < params.k {
        return Err(Error::parameter(format!(
            "k-means needs 1 <= k <= n, got k={} with n={n}",
            params.k
        )));
    }
    if params.restarts == 0 {
        return Err(Error::parameter("restarts must be at least 1"));
    }
    if points.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite embedding value"));
    }
    let prepared;
    let points = if params.normalize {
        prepared = points.normalized();
        &prepared
    } else {
        points
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<Run> = None;
    for _ in 0..params.restarts {
        let init = kmeans_pp(points, params.k, &mut rng);
        let run = lloyd(points, init, params.k, params.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(KMeansModel {
        k: params.k,
        dim: points.dim,
        centroids: best.centroids,
        inertia: best.inertia,
        seed: params.seed,
        iterations_run: best.iterations,
        inertia_history: best.history,
        normalize: params.normalize,
    })
}

pub fn kmeans_assign(model: &KMeansModel, points: &Points) -> Result<Vec<usize>> {
    model.assign(points)
}

/// Embedding key for the `nth` record (manifest order) of an image:
/// `"{image_id}.{nth}"` is tried first, then the bare image id when the image
/// has a single record.
pub fn embedding_for<'a>(
    embeddings: &'a HashMap<String, Vec<f32>>,
    image_id: &str,
    nth: usize,
    records_of_image: usize,
) -> Option<&'a Vec<f32>> {
    embeddings
        .get(&format!("{image_id}.{nth}"))
        .or_else(|| (records_of_image == 1).then(|| embeddings.get(image_id)).flatten())
}

/// Gathers one embedding per record, in manifest order.
pub fn collect_embeddings(
    records: &[Candidate],
    embeddings: &HashMap<String, Vec<f32>>,
) -> Result<Vec<Vec<f32>>> {
    let mut per_image: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *per_image.entry(&r.image_id).or_default() += 1;
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    records
        .iter()
        .map(|r| {
            let nth = seen.entry(&r.image_id).or_default();
            let found = embedding_for(embeddings, &r.image_id, *nth, per_image[r.image_id.as_str()]);
            *nth += 1;
            found
                .cloned()
                .ok_or_else(|| Error::Lookup(format!("no masked-image embedding for {}", r.image_id)))
        })
        .collect()
}

/// Sets each record's label to its nearest centroid plus one (0 is background).
pub fn label_candidates(
    records: &[Candidate],
    embeddings: &HashMap<String, Vec<f32>>,
    model: &KMeansModel,
) -> Result<Vec<Candidate>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let rows = collect_embeddings(records, embeddings)?;
    let labels = model.assign(&Points::from_rows(&rows)?)?;
    Ok(records
        .iter()
        .zip(labels)
        .map(|(r, l)| Candidate {
            label: Some(l as u32 + 1),
            ..r.clone()
        })
        .collect())
}
