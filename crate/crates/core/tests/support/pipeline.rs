//! The fixture pipeline end to end: distill, cluster, pseudo-ground-truth, eval.

use std::path::Path;

use maskdistill::cluster::{write_model, KMeansParams};
use maskdistill::distill::DistillConfig;
use maskdistill::eval::{ClassMode, Protocol, SemsegOptions};
use maskdistill::pseudo_gt::PseudoGtConfig;
use maskdistill::stages;
use maskdistill::store::manifest::{read_manifest, write_manifest};
use maskdistill::store::write_atomic;

pub const CLUSTERS: usize = 4;
pub const SEED: u64 = 0;
pub const GT_CLASSES: usize = 5;

pub const OUTPUTS: &[&str] = &[
    "manifest.jsonl",
    "labeled.jsonl",
    "model.mdkm",
    "pgt/index.jsonl",
    "pgt/scene0.pgm",
    "pgt/scene1.pgm",
    "pgt/scene2.pgm",
    "pgt/scene3.pgm",
    "pgt/scene4.pgm",
    "semseg.json",
    "instseg.json",
];

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> maskdistill::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn run(fixture: &Path, out: &Path) -> maskdistill::Result<()> {
    std::fs::create_dir_all(out)?;
    let packs = fixture.join("packs");
    let (records, errors) = stages::distill_dir(&packs, &DistillConfig::default())?;
    assert!(errors.is_empty(), "{errors:?}");
    write_manifest(&records, out.join("manifest.jsonl"))?;

    let embeddings = stages::load_embeddings(&packs)?;
    let mut params = KMeansParams::new(CLUSTERS);
    params.seed = SEED;
    let (labeled, model) = stages::cluster_records(&records, &embeddings, &params)?;
    write_manifest(&labeled, out.join("labeled.jsonl"))?;
    write_model(&model, out.join("model.mdkm"))?;

    let cfg = PseudoGtConfig {
        num_clusters: Some(CLUSTERS as u32),
        ..PseudoGtConfig::default()
    };
    stages::build_pgt_dir(&read_manifest(out.join("labeled.jsonl"))?, &cfg, &out.join("pgt"))?;

    let opts = SemsegOptions {
        n_pred: Some(CLUSTERS + 1),
        n_gt: Some(GT_CLASSES),
        ignore_label: None,
    };
    let semseg = stages::eval_semseg_files(&out.join("pgt/index.jsonl"), &fixture.join("gt/index.jsonl"), &opts)?;
    write_json(&semseg, &out.join("semseg.json"))?;

    let gts = read_manifest(fixture.join("gt_instances.jsonl"))?;
    let inst = stages::eval_instseg(
        &labeled,
        &gts,
        &[Protocol::Multi, Protocol::Single],
        &[ClassMode::Agnostic, ClassMode::Semantic],
    )?;
    write_json(&inst, &out.join("instseg.json"))?;
    Ok(())
}
