//! Synthetic feature packs and scenes.

use std::collections::HashMap;

use maskdistill::pseudo_gt::SegmentationMap;
use maskdistill::{BinaryMask, Candidate, FeaturePack};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn gaussian(rng: &mut impl Rng, n: usize, sigma: f64) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * sigma) as f32
        })
        .collect()
}

/// Pack with i.i.d. standard normal features.
pub fn random_pack(
    rng: &mut impl Rng,
    image_id: &str,
    grid_h: usize,
    grid_w: usize,
    heads: usize,
    head_dim: usize,
    embed_dim: Option<usize>,
) -> FeaturePack {
    let patch_size = rng.gen_range(1..=4);
    let n = grid_h * grid_w;
    FeaturePack {
        image_id: image_id.to_string(),
        img_h: grid_h * patch_size,
        img_w: grid_w * patch_size,
        patch_size,
        grid_h,
        grid_w,
        heads,
        head_dim,
        q_cls: gaussian(rng, heads * head_dim, 1.0),
        k_patch: gaussian(rng, heads * n * head_dim, 1.0),
        cls_embed: embed_dim.map(|d| gaussian(rng, d, 1.0)),
    }
}

/// Random pack with a random grid of at most `max_n` patches.
pub fn random_pack_upto(rng: &mut impl Rng, image_id: &str, max_n: usize, max_heads: usize) -> FeaturePack {
    let grid_h = rng.gen_range(1..=max_n.min(8));
    let grid_w = rng.gen_range(1..=(max_n / grid_h).max(1));
    let heads = rng.gen_range(1..=max_heads);
    let head_dim = rng.gen_range(1..=8);
    random_pack(rng, image_id, grid_h, grid_w, heads, head_dim, Some(4))
}

/// Every feature multiplied by `c`.
pub fn scale_pack(pack: &FeaturePack, c: f32) -> FeaturePack {
    let mut p = pack.clone();
    p.q_cls.iter_mut().for_each(|v| *v *= c);
    p.k_patch.iter_mut().for_each(|v| *v *= c);
    if let Some(e) = p.cls_embed.as_mut() {
        e.iter_mut().for_each(|v| *v *= c);
    }
    p
}

/// Axis-aligned rectangle on the patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.h && c >= self.col && c < self.col + self.w
    }

    pub fn pixel_mask(&self, patch_size: usize, img_h: usize, img_w: usize) -> BinaryMask {
        BinaryMask::from_fn(img_h, img_w, |y, x| self.contains(y / patch_size, x / patch_size))
    }
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch_size: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub key_noise: f64,
    pub embed_noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            grid_h: 6,
            grid_w: 8,
            patch_size: 4,
            heads: 2,
            head_dim: 8,
            embed_dim: 8,
            num_classes: 4,
            key_noise: 0.3,
            embed_noise: 0.2,
        }
    }
}

/// One image holding one salient object.
#[derive(Debug, Clone)]
pub struct Scene {
    pub pack: FeaturePack,
    pub object: Rect,
    pub class: u32,
    pub gt_map: SegmentationMap,
    pub gt_instance: Candidate,
}

/// Fixed class centres in embedding space, well apart.
pub fn class_centres(rng: &mut impl Rng, num_classes: usize, dim: usize, spread: f64) -> Vec<Vec<f32>> {
    (0..num_classes).map(|_| gaussian(rng, dim, spread)).collect()
}

/// Object keys cluster around a direction `u`, background keys around `-u/2`,
/// and the CLS query points along `u`.
pub fn object_scene(
    rng: &mut impl Rng,
    image_id: &str,
    cfg: &SceneConfig,
    centres: &[Vec<f32>],
) -> Scene {
    let (gh, gw, d) = (cfg.grid_h, cfg.grid_w, cfg.head_dim);
    let h = rng.gen_range(2..=gh - 1);
    let w = rng.gen_range(2..=gw - 1);
    let object = Rect {
        row: rng.gen_range(0..=gh - h),
        col: rng.gen_range(0..=gw - w),
        h,
        w,
    };
    let class = rng.gen_range(0..cfg.num_classes);
    let n = gh * gw;
    let noise = Normal::new(0.0, cfg.key_noise).unwrap();
    let mut q_cls = Vec::with_capacity(cfg.heads * d);
    let mut k_patch = Vec::with_capacity(cfg.heads * n * d);
    let mut dirs = Vec::new();
    for _ in 0..cfg.heads {
        let u = gaussian(rng, d, 1.0);
        let norm = u.iter().map(|v| v * v).sum::<f32>().sqrt();
        let u: Vec<f32> = u.iter().map(|v| v / norm).collect();
        q_cls.extend(u.iter().map(|v| 2.0 * v));
        dirs.push(u);
    }
    for u in &dirs {
        for j in 0..n {
            let base = if object.contains(j / gw, j % gw) { 1.0 } else { -0.5 };
            for &ut in u {
                k_patch.push(base * ut + noise.sample(rng) as f32);
            }
        }
    }
    let mut embed = centres[class].clone();
    for (e, z) in embed.iter_mut().zip(gaussian(rng, cfg.embed_dim, cfg.embed_noise)) {
        *e += z;
    }
    let (img_h, img_w) = (gh * cfg.patch_size, gw * cfg.patch_size);
    let pack = FeaturePack {
        image_id: image_id.to_string(),
        img_h,
        img_w,
        patch_size: cfg.patch_size,
        grid_h: gh,
        grid_w: gw,
        heads: cfg.heads,
        head_dim: d,
        q_cls,
        k_patch,
        cls_embed: Some(embed),
    };
    let mask = object.pixel_mask(cfg.patch_size, img_h, img_w);
    let label = class as u32 + 1;
    let labels = mask.bits().iter().map(|&on| if on { label } else { 0 }).collect();
    Scene {
        pack,
        object,
        class: label,
        gt_map: SegmentationMap {
            image_id: image_id.to_string(),
            height: img_h,
            width: img_w,
            labels,
            num_clusters: cfg.num_classes as u32,
        },
        gt_instance: Candidate::from_mask(image_id, &mask, 1.0, Some(label)),
    }
}

/// Images made of vertically stacked, touching objects whose detections carry
/// noisy embeddings drawn around one of two sub-centres of their class.
#[derive(Debug, Clone)]
pub struct TouchingCorpus {
    pub gt: Vec<Candidate>,
    pub detections: Vec<Candidate>,
    pub embeddings: HashMap<String, Vec<f32>>,
}

pub fn touching_corpus(
    rng: &mut impl Rng,
    images: usize,
    num_classes: usize,
    dim: usize,
    noise: f64,
) -> TouchingCorpus {
    let (img_h, img_w) = (12usize, 12usize);
    let centres: Vec<[Vec<f32>; 2]> = (0..num_classes)
        .map(|_| {
            let c = gaussian(rng, dim, 4.0);
            let offset = gaussian(rng, dim, 1.5);
            let a: Vec<f32> = c.iter().zip(&offset).map(|(x, o)| x + o).collect();
            let b: Vec<f32> = c.iter().zip(&offset).map(|(x, o)| x - o).collect();
            [a, b]
        })
        .collect();
    let mut out = TouchingCorpus {
        gt: Vec::new(),
        detections: Vec::new(),
        embeddings: HashMap::new(),
    };
    for i in 0..images {
        let id = format!("img{i:03}");
        let parts = rng.gen_range(2..=3);
        let mut cuts = vec![0usize, img_w];
        while cuts.len() < parts + 1 {
            let c = rng.gen_range(2..img_w - 1);
            if cuts.iter().all(|&x| x.abs_diff(c) >= 2) {
                cuts.push(c);
            }
        }
        cuts.sort();
        for (nth, win) in cuts.windows(2).enumerate() {
            let (x0, x1) = (win[0], win[1]);
            let class = rng.gen_range(0..num_classes);
            let gt = BinaryMask::from_fn(img_h, img_w, |y, x| (2..img_h - 2).contains(&y) && (x0..x1).contains(&x));
            // detections lose or gain one row at random
            let dy0 = rng.gen_range(1..=3);
            let det = BinaryMask::from_fn(img_h, img_w, |y, x| (dy0..img_h - 2).contains(&y) && (x0..x1).contains(&x));
            out.gt.push(Candidate::from_mask(&id, &gt, 1.0, Some(class as u32 + 1)));
            let score = rng.gen_range(0.6..1.0);
            out.detections.push(Candidate::from_mask(&id, &det, score, None));
            let sub = &centres[class][rng.gen_range(0..2)];
            let e: Vec<f32> = sub
                .iter()
                .zip(gaussian(rng, dim, noise))
                .map(|(c, z)| c + z)
                .collect();
            out.embeddings.insert(format!("{id}.{nth}"), e);
        }
    }
    out
}
