//! Regenerates the committed five-image fixture under `tests/fixtures/synthetic5`.
//!
//! cargo run -p maskdistill-core --example make_fixture

#[path = "../tests/support/synth.rs"]
#[allow(dead_code)]
mod synth;

#[path = "../tests/support/pipeline.rs"]
#[allow(dead_code)]
mod pipeline;

use std::path::PathBuf;

use maskdistill::store::manifest::write_manifest;
use maskdistill::store::pack::write_feature_pack;
use maskdistill::store::pgm::{write_index, write_pgm, IndexEntry};
use maskdistill::{BinaryMask, Candidate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> maskdistill::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic5");
    if root.exists() {
        std::fs::remove_dir_all(&root)?;
    }
    std::fs::create_dir_all(root.join("packs"))?;
    std::fs::create_dir_all(root.join("gt"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = synth::SceneConfig::default();
    let centres = synth::class_centres(&mut rng, cfg.num_classes, cfg.embed_dim, 3.0);
    let mut gt_instances = Vec::new();
    let mut detections = Vec::new();
    let mut index = Vec::new();
    for i in 0..5 {
        let id = format!("scene{i}");
        let scene = synth::object_scene(&mut rng, &id, &cfg, &centres);
        write_feature_pack(&scene.pack, root.join("packs").join(format!("{id}.mdfp")))?;
        let name = format!("{id}.pgm");
        write_pgm(&scene.gt_map.to_gray()?, root.join("gt").join(&name))?;
        index.push(IndexEntry {
            image_id: id.clone(),
            path: name,
            num_clusters: Some(cfg.num_classes as u32),
        });
        let gt_mask = scene.gt_instance.mask()?;
        gt_instances.push(scene.gt_instance);

        // a confident hit on the object plus a weaker box elsewhere
        let label = scene.class % cfg.num_classes as u32 + 1;
        detections.push(Candidate::from_mask(&id, &gt_mask, rng.gen_range(0.85..1.0), Some(label)));
        let (h, w) = gt_mask.shape();
        let (y0, x0) = (rng.gen_range(0..h / 2), rng.gen_range(0..w / 2));
        let spurious = BinaryMask::from_fn(h, w, |y, x| (y0..y0 + h / 3).contains(&y) && (x0..x0 + w / 3).contains(&x));
        let label = rng.gen_range(1..=cfg.num_classes as u32);
        detections.push(Candidate::from_mask(&id, &spurious, rng.gen_range(0.3..0.95), Some(label)));
    }
    write_index(&index, root.join("gt/index.jsonl"))?;
    write_manifest(&gt_instances, root.join("gt_instances.jsonl"))?;
    write_manifest(&detections, root.join("detections.jsonl"))?;

    pipeline::run(&root, &root.join("golden"))?;
    Ok(())
}
