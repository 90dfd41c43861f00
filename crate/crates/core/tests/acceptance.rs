//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach stdout.

mod support;

use std::collections::HashMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use maskdistill::affinity::AffinityGraph;
use maskdistill::cluster::KMeansParams;
use maskdistill::distill::{distill, ComponentMode, DistillConfig};
use maskdistill::eval::hungarian_match;
use maskdistill::eval::{evaluate_semseg, mask_ap, ClassMode, Protocol, SemsegOptions};
use maskdistill::loss::{gradient_check, hard_mining_ce, LossInput};
use maskdistill::pseudo_gt::{build_pseudo_ground_truth, group_by_image, kept_records, PseudoGtConfig, SegmentationMap};
use maskdistill::stages::cluster_records;
use maskdistill::store::manifest::read_manifest;
use maskdistill::{BinaryMask, Candidate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{oracles, pipeline, synth};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn affinity_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let pack = synth::random_pack_upto(&mut rng, &format!("p{i}"), 64, 8);
        let graph = AffinityGraph::from_pack(&pack);
        let (cls, patch) = oracles::naive_affinities(&pack);
        for (got, want) in graph.a_cls.iter().zip(&cls).chain(graph.a_patch.iter().zip(&patch)) {
            let err = (*got as f64 - want).abs() / want.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(err);
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    check(worst <= 1e-5, || format!("max relative error {worst:e}"))?;
    Ok(format!("100 packs, max relative error {worst:.2e}, {:.2?}", start.elapsed()))
}

fn distill_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let start = Instant::now();
    for i in 0..100 {
        let pack = synth::random_pack_upto(&mut rng, &format!("p{i}"), 36, 6);
        let k_fraction = [0.1, 0.25, 0.4, 0.7, 1.0][i % 5];
        for mode in [ComponentMode::SourceComponent, ComponentMode::All] {
            let cfg = DistillConfig {
                k_fraction,
                component_mode: mode,
            };
            let got = distill(&pack, &cfg).map_err(|e| e.to_string())?;
            let want = oracles::naive_distill(&pack, k_fraction, mode == ComponentMode::SourceComponent);
            let pm = &got.patch_mask;
            let mask = got.candidate.mask().map_err(|e| e.to_string())?;
            let b = got.candidate.bbox;
            let same = pm.source == want.source
                && pm.proposals == want.proposals
                && pm.refined == want.refined
                && pm.bits == want.patch_bits
                && mask.bits() == want.pixels.as_slice()
                && [b.x, b.y, b.w, b.h] == want.bbox
                && got.candidate.score == 1.0
                && got.candidate.label.is_none();
            check(same, || format!("pack {i} ({mode}) differs from the reference"))?;
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("100 packs x 2 component modes bit-identical, {:.2?}", start.elapsed()))
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let packs: Vec<_> = (0..50)
        .map(|i| synth::random_pack_upto(&mut rng, &format!("p{i:02}"), 48, 6))
        .collect();
    let run = |c: f32| -> Result<(Vec<(usize, Vec<bool>, Vec<usize>)>, Vec<Option<u32>>), String> {
        let scaled: Vec<_> = packs.iter().map(|p| synth::scale_pack(p, c)).collect();
        let mut out = Vec::new();
        let mut records = Vec::new();
        let mut embeddings = HashMap::new();
        for p in &scaled {
            let d = distill(p, &DistillConfig::default()).map_err(|e| e.to_string())?;
            out.push((d.patch_mask.source, d.candidate.mask().unwrap().bits().to_vec(), d.patch_mask.proposals));
            records.push(d.candidate);
            embeddings.insert(p.image_id.clone(), p.cls_embed.clone().unwrap());
        }
        let mut params = KMeansParams::new(4);
        params.seed = 7;
        let (labeled, _) = cluster_records(&records, &embeddings, &params).map_err(|e| e.to_string())?;
        Ok((out, labeled.iter().map(|r| r.label).collect()))
    };
    let base = run(1.0)?;
    for c in [0.01, 100.0] {
        let other = run(c)?;
        check(other.0 == base.0, || format!("masks, sources or proposals change at c={c}"))?;
        check(other.1 == base.1, || format!("cluster labels change at c={c}"))?;
    }
    Ok("50 packs, c in {0.01, 1, 100}: masks, sources, proposals and labels identical".into())
}

fn hungarian_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for m in 0..200 {
        let rows = rng.gen_range(1..=7);
        let cols = rng.gen_range(1..=7);
        let profit: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.gen_range(0..50) as f64).collect())
            .collect();
        let got = hungarian_match(&profit).map_err(|e| e.to_string())?;
        let want = oracles::brute_force_assignment(&profit);
        let realized: f64 = got
            .row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| profit[r][c]))
            .sum();
        check(got.total_profit == want && realized == want, || {
            format!("matrix {m} ({rows}x{cols}): {} / {realized} vs {want}", got.total_profit)
        })?;
    }
    Ok("200 matrices up to 7x7, profit equal to exhaustive search".into())
}

fn seg_map(id: &str, h: usize, w: usize, labels: &[u32], classes: u32) -> SegmentationMap {
    SegmentationMap {
        image_id: id.into(),
        height: h,
        width: w,
        labels: labels.to_vec(),
        num_clusters: classes,
    }
}

fn miou_exactness() -> Outcome {
    let ious = |pred: &SegmentationMap, gt: &SegmentationMap| -> Result<(f64, Vec<Option<f64>>), String> {
        let r = evaluate_semseg(std::slice::from_ref(pred), std::slice::from_ref(gt), &SemsegOptions::default()).map_err(|e| e.to_string())?;
        Ok((r.miou, r.per_class.iter().map(|c| c.iou).collect()))
    };

    let gt = seg_map("a", 2, 2, &[1, 0, 1, 0], 1);
    let pred = seg_map("a", 2, 2, &[1, 1, 0, 0], 1);
    let (m, per) = ious(&pred, &gt)?;
    check(per == vec![Some(1.0 / 3.0), Some(1.0 / 3.0)] && m == 1.0 / 3.0, || {
        format!("2x2: {per:?}, mIoU {m}")
    })?;

    #[rustfmt::skip]
    let gt = seg_map("b", 4, 4, &[
        1, 1, 2, 2,
        1, 1, 2, 2,
        0, 0, 0, 0,
        0, 0, 0, 0,
    ], 2);
    #[rustfmt::skip]
    let pred = seg_map("b", 4, 4, &[
        2, 2, 1, 1,
        2, 0, 1, 1,
        0, 0, 0, 1,
        0, 0, 0, 0,
    ], 2);
    let (m, per) = ious(&pred, &gt)?;
    let want = [7.0 / 9.0, 3.0 / 4.0, 4.0 / 5.0];
    check(per == want.map(Some).to_vec(), || format!("4x4 per-class {per:?}"))?;
    let want_m = (want[0] + want[1] + want[2]) / 3.0;
    check(m == want_m, || format!("4x4 mIoU {m} vs {want_m}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for i in 0..20 {
        let labels: Vec<u32> = (0..48).map(|_| rng.gen_range(0..5)).collect();
        let map = seg_map(&format!("r{i}"), 6, 8, &labels, 4);
        let (m, _) = ious(&map, &map)?;
        check(m == 1.0, || format!("pred = gt gives {m}"))?;
    }
    Ok("2x2 IoU 1/3, 4x4 IoUs 7/9, 3/4, 4/5, pred = gt mIoU 1.0".into())
}

fn ap50(preds: &[Candidate], gts: &[Candidate]) -> Result<(f64, f64, f64), String> {
    let r = mask_ap(preds, gts, Protocol::Multi, ClassMode::Agnostic, None).map_err(|e| e.to_string())?;
    Ok((r.summary.ap, r.summary.ap50, r.summary.ap75))
}

fn rect(h: usize, w: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, |y, x| (y0..y1).contains(&y) && (x0..x1).contains(&x))
}

fn mask_ap_fixtures() -> Outcome {
    let gt_mask = rect(8, 8, 2, 2, 6, 6);
    let gt = vec![Candidate::from_mask("i", &gt_mask, 1.0, None)];

    let perfect = vec![Candidate::from_mask("i", &gt_mask, 0.7, None)];
    let got = ap50(&perfect, &gt)?;
    check(got == (1.0, 1.0, 1.0), || format!("perfect match gives {got:?}"))?;

    // 5-pixel ground truth, 3-pixel prediction inside it
    let g = rect(8, 8, 0, 0, 1, 5);
    let p = rect(8, 8, 0, 0, 1, 3);
    let iou = p.iou(&g).unwrap();
    let got = ap50(&[Candidate::from_mask("i", &p, 0.9, None)], &[Candidate::from_mask("i", &g, 1.0, None)])?;
    check(iou == 0.6 && got.1 == 1.0 && got.2 == 0.0, || format!("IoU {iou}: {got:?}"))?;

    let dup = vec![
        Candidate::from_mask("i", &gt_mask, 0.9, None),
        Candidate::from_mask("i", &gt_mask, 0.8, None),
    ];
    let got = ap50(&dup, &gt)?;
    check(got.1 == 1.0, || format!("duplicate detection gives AP50 {}", got.1))?;

    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst: f64 = 0.0;
    for s in 0..50 {
        let images = rng.gen_range(1..=2);
        let n_gt = rng.gen_range(1..=4);
        let n_pred = rng.gen_range(0..=6);
        let random_rect = |rng: &mut ChaCha8Rng| {
            let (y0, x0) = (rng.gen_range(0..7), rng.gen_range(0..7));
            rect(8, 8, y0, x0, rng.gen_range(y0 + 1..=8), rng.gen_range(x0 + 1..=8))
        };
        let gts: Vec<(usize, BinaryMask)> = (0..n_gt).map(|_| (rng.gen_range(0..images), random_rect(&mut rng))).collect();
        let mut scores: Vec<f64> = (0..n_pred).map(|k| (k as f64 + 1.0) / 7.0).collect();
        scores.shuffle(&mut rng);
        let preds: Vec<(usize, BinaryMask, f64)> = scores
            .into_iter()
            .map(|score| {
                // most predictions jitter a ground truth, some are random
                if rng.gen_bool(0.7) {
                    let (img, g) = &gts[rng.gen_range(0..n_gt)];
                    let mut m = g.clone();
                    for _ in 0..rng.gen_range(0..6) {
                        let (y, x) = (rng.gen_range(0..8), rng.gen_range(0..8));
                        m.set(y, x, !m.get(y, x));
                    }
                    if m.is_empty() {
                        m = g.clone();
                    }
                    (*img, m, score)
                } else {
                    (rng.gen_range(0..images), random_rect(&mut rng), score)
                }
            })
            .collect();
        let id = |i: usize| format!("s{s}_{i}");
        let gt_c: Vec<Candidate> = gts.iter().map(|(i, m)| Candidate::from_mask(id(*i), m, 1.0, None)).collect();
        let pred_c: Vec<Candidate> = preds.iter().map(|(i, m, sc)| Candidate::from_mask(id(*i), m, *sc, None)).collect();
        let got = ap50(&pred_c, &gt_c)?.1;
        let scored: Vec<oracles::Scored> = preds
            .iter()
            .map(|(i, m, sc)| oracles::Scored {
                image: *i,
                score: *sc,
                mask: m,
            })
            .collect();
        let refs: Vec<(usize, &BinaryMask)> = gts.iter().map(|(i, m)| (*i, m)).collect();
        let want = oracles::brute_force_ap(&scored, &refs, 0.5);
        worst = worst.max((got - want).abs());
        check((got - want).abs() <= 1e-9, || format!("scene {s}: AP50 {got} vs reference {want}"))?;
    }
    Ok(format!("3 hand-built cases exact, 50 random scenes max |dAP50| {worst:.1e}"))
}

fn loss_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut accepted = 0;
    let mut tried = 0;
    let mut worst: f64 = 0.0;
    while accepted < 50 {
        tried += 1;
        check(tried < 1000, || "could not draw 50 selection-stable instances".into())?;
        let n = rng.gen_range(4..=24);
        let classes = rng.gen_range(2..=6);
        let logits: Vec<f64> = (0..n * classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let mut input = LossInput::new(classes, logits, targets);
        input.top_fraction = [0.2, 0.5, 1.0][tried % 3];
        let g = gradient_check(&input, 1e-4).map_err(|e| e.to_string())?;
        if !g.selection_stable {
            continue;
        }
        accepted += 1;
        worst = worst.max(g.relative_error);
        check(g.relative_error < 1e-4, || format!("relative error {:e}", g.relative_error))?;
    }
    for classes in 2..=6 {
        let input = LossInput::new(classes, vec![0.25; 10 * classes], (0..10).map(|i| i % classes).collect());
        let out = hard_mining_ce(&input).map_err(|e| e.to_string())?;
        let want = (classes as f64).ln() / classes as f64;
        check((out.loss - want).abs() <= 1e-15, || format!("uniform logits: {} vs {want}", out.loss))?;
    }
    Ok(format!("50 stable instances, max relative error {worst:.1e}; uniform case ln(C+1)/|C|"))
}

fn fixture_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic5")
}

fn pipeline_determinism() -> Outcome {
    let fixture = fixture_dir();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline::run(&fixture, a.path()).map_err(|e| e.to_string())?;
    pipeline::run(&fixture, b.path()).map_err(|e| e.to_string())?;
    for name in pipeline::OUTPUTS {
        let golden = std::fs::read(fixture.join("golden").join(name)).map_err(|e| format!("{name}: {e}"))?;
        for dir in [a.path(), b.path()] {
            let got = std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
            check(got == golden, || format!("{name} differs between runs"))?;
        }
    }

    let detections = read_manifest(fixture.join("detections.jsonl")).map_err(|e| e.to_string())?;
    let images: Vec<String> = {
        let mut ids: Vec<String> = detections.iter().map(|d| d.image_id.clone()).collect();
        ids.dedup();
        ids
    };
    let mut previous: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    for tau in [0.0, 0.5, 0.9, 0.99] {
        let cfg = PseudoGtConfig {
            tau,
            num_clusters: Some(4),
            ..PseudoGtConfig::default()
        };
        let kept = kept_per_image(&detections, &cfg)?;
        let counts: Vec<usize> = images.iter().map(|id| kept.iter().filter(|r| &r.image_id == id).count()).collect();
        check(counts.iter().all(|&c| c > 0), || format!("tau {tau}: an image lost every mask {counts:?}"))?;
        if let Some(prev) = &previous {
            check(counts.iter().zip(prev).all(|(c, p)| c <= p), || format!("tau {tau}: counts grew {prev:?} -> {counts:?}"))?;
        }
        build_pseudo_ground_truth(&detections, &cfg).map_err(|e| e.to_string())?;
        trace.push(counts.iter().sum::<usize>());
        previous = Some(counts);
    }
    Ok(format!(
        "{} outputs byte-identical across two runs and the golden copy; kept masks over tau {trace:?}",
        pipeline::OUTPUTS.len()
    ))
}

fn kept_per_image(records: &[Candidate], cfg: &PseudoGtConfig) -> Result<Vec<Candidate>, String> {
    let mut kept = Vec::new();
    for recs in group_by_image(records).values() {
        kept.extend(kept_records(recs, cfg).map_err(|e| e.to_string())?);
    }
    Ok(kept)
}

/// Each label of a pseudo-ground-truth map becomes one instance, scored by the
/// best kept record carrying that label.
fn derived_instances(labeled: &[Candidate], tau: f64, k: u32) -> Result<Vec<Candidate>, String> {
    let cfg = PseudoGtConfig {
        tau,
        num_clusters: Some(k),
        ..PseudoGtConfig::default()
    };
    let kept = kept_per_image(labeled, &cfg)?;
    let maps = build_pseudo_ground_truth(labeled, &cfg).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for map in &maps {
        for (label, mask) in map.label_masks() {
            let score = kept
                .iter()
                .filter(|r| r.image_id == map.image_id && r.label == Some(label))
                .map(|r| r.score)
                .fold(0.0, f64::max);
            out.push(Candidate::from_mask(&map.image_id, &mask, score, None));
        }
    }
    Ok(out)
}

fn overclustering() -> Outcome {
    let mut sums = [0.0; 2];
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let corpus = synth::touching_corpus(&mut rng, 60, 4, 8, 1.0);
        for (slot, k) in [4usize, 8].into_iter().enumerate() {
            let mut params = KMeansParams::new(k);
            params.seed = seed;
            let (labeled, _) = cluster_records(&corpus.detections, &corpus.embeddings, &params).map_err(|e| e.to_string())?;
            let instances = derived_instances(&labeled, 0.5, k as u32)?;
            sums[slot] += ap50(&instances, &corpus.gt)?.1;
        }
    }
    let (k4, k8) = (sums[0] / 5.0, sums[1] / 5.0);
    check(k8 >= k4, || format!("AP50 k=8 {k8:.4} < k=4 {k4:.4}"))?;
    Ok(format!("mean AP50 over 5 seeds: k=4 {k4:.4}, k=8 {k8:.4}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("affinity oracle", affinity_oracle),
        ("distillation oracle", distill_oracle),
        ("scale invariance", scale_invariance),
        ("hungarian oracle", hungarian_oracle),
        ("miou exactness", miou_exactness),
        ("mask ap fixtures", mask_ap_fixtures),
        ("loss gradient", loss_gradient),
        ("pipeline determinism", pipeline_determinism),
        ("overclustering direction", overclustering),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
