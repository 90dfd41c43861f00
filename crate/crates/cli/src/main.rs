//! `maskdistill`: one subcommand per pipeline stage, communicating through
//! feature packs, JSON-lines manifests, PGM maps and JSON reports.

mod config;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use maskdistill::cluster::{write_model, KMeansParams};
use maskdistill::distill::{ComponentMode, DistillConfig, DEFAULT_K_FRACTION};
use maskdistill::eval::{ClassMode, Protocol, SemsegOptions};
use maskdistill::loss::{Normalization, DEFAULT_TOP_FRACTION};
use maskdistill::pseudo_gt::{check_tau, OverlapMode, PseudoGtConfig, DEFAULT_TAU};
use maskdistill::stages::{self, LossCheckOptions, RecordError};
use maskdistill::store::manifest::{read_manifest, write_manifest};
use maskdistill::store::write_atomic;
use maskdistill::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "maskdistill", version, about = "Object-mask distillation and pseudo-label pipeline")]
struct Cli {
    /// TOML file with stage parameters; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MASKDISTILL_THREADS")]
    threads: Option<usize>,
    /// Seed for every randomized step (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distill one class-agnostic mask per feature pack.
    Distill {
        /// Directory of .mdfp packs.
        packs: PathBuf,
        /// Output manifest.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        k_fraction: Option<f64>,
        #[arg(long, value_parser = parse_component_mode)]
        component_mode: Option<ComponentMode>,
    },
    /// Label manifest records by K-means over their embeddings.
    Cluster {
        manifest: PathBuf,
        /// Pack directory (CLS embeddings keyed by image id) or a JSON-lines
        /// file of {"key": .., "embedding": [..]} rows.
        #[arg(long)]
        embeddings: PathBuf,
        /// Labeled output manifest.
        #[arg(short, long)]
        out: PathBuf,
        /// Centroid sidecar (default: the output path with an .mdkm extension).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// L2-normalize embeddings before clustering.
        #[arg(long)]
        normalize: bool,
    },
    /// Build per-image pseudo-ground-truth maps from a labeled manifest.
    BuildPgt {
        manifest: PathBuf,
        #[arg(short, long)]
        out_dir: PathBuf,
        /// Confidence threshold in [0, 1] (default 0.9).
        #[arg(long)]
        tau: Option<f64>,
        /// Cluster count (default: largest label present).
        #[arg(long)]
        num_clusters: Option<u32>,
        /// Drop whole masks overlapping a more confident one above this IoU.
        #[arg(long)]
        mask_nms: Option<f64>,
    },
    /// Hungarian-matched mIoU between two PGM index files.
    EvalSemseg {
        pred_index: PathBuf,
        gt_index: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        n_pred: Option<usize>,
        #[arg(long)]
        n_gt: Option<usize>,
        /// Ground-truth label excluded from scoring, e.g. 255.
        #[arg(long)]
        ignore_label: Option<u32>,
    },
    /// COCO-style mask AP between two manifests.
    EvalInstseg {
        preds: PathBuf,
        gts: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "multi,single")]
        protocol: Vec<ProtocolArg>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "agnostic")]
        class_mode: Vec<ClassModeArg>,
    },
    /// Hard-pixel-mining loss and a finite-difference gradient check on an MDLC file.
    LossCheck {
        logits: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        top_fraction: Option<f64>,
        #[arg(long, value_parser = parse_normalization)]
        normalization: Option<Normalization>,
        #[arg(long)]
        class_count: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Multi,
    Single,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassModeArg {
    Agnostic,
    Semantic,
}

fn parse_component_mode(s: &str) -> Result<ComponentMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_normalization(s: &str) -> Result<Normalization, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Config(String),
    Core(Error),
    Records { failed: Vec<RecordError>, succeeded: usize },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Format(_) => "format",
        Error::Corruption(_) => "corruption",
        Error::Validation(_) => "validation",
        Error::Parameter(_) => "parameter",
        Error::EmptyMask => "empty-mask",
        Error::Lookup(_) => "lookup",
        Error::Io(_) => "io",
    }
}

/// Writes a pretty JSON report to `path`, or to stdout.
fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    match path {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Deserialize)]
struct EmbeddingRow {
    key: String,
    embedding: Vec<f32>,
}

fn load_embedding_table(path: &Path) -> Result<HashMap<String, Vec<f32>>, Error> {
    if path.is_dir() {
        return stages::load_embeddings(path);
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.insert(row.key, row.embedding);
    }
    Ok(out)
}

fn check_fraction(name: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} {v} must lie in (0, 1]")).into())
    }
}

fn run(command: Command, cfg: &RunConfig, seed: u64) -> Result<(), Failure> {
    match command {
        Command::Distill {
            packs,
            out,
            k_fraction,
            component_mode,
        } => {
            let dc = DistillConfig {
                k_fraction: k_fraction.or(cfg.distill.k_fraction).unwrap_or(DEFAULT_K_FRACTION),
                component_mode: component_mode.or(cfg.distill.component_mode).unwrap_or_default(),
            };
            check_fraction("k-fraction", dc.k_fraction)?;
            let (records, errors) = stages::distill_dir(&packs, &dc)?;
            write_manifest(&records, &out)?;
            info!("distilled {} packs into {}", records.len(), out.display());
            for e in &errors {
                warn!("{}: {}", e.record, e.error);
            }
            emit(&json!({ "records": records.len(), "errors": errors.len() }), None)?;
            if !errors.is_empty() {
                return Err(Failure::Records {
                    failed: errors,
                    succeeded: records.len(),
                });
            }
        }
        Command::Cluster {
            manifest,
            embeddings,
            out,
            model,
            k,
            restarts,
            max_iter,
            normalize,
        } => {
            let k = k
                .or(cfg.cluster.k)
                .ok_or_else(|| Failure::Core(Error::Parameter("cluster count k is required".into())))?;
            let mut params = KMeansParams::new(k);
            params.seed = seed;
            if let Some(r) = restarts.or(cfg.cluster.restarts) {
                params.restarts = r;
            }
            if let Some(m) = max_iter.or(cfg.cluster.max_iter) {
                params.max_iter = m;
            }
            params.normalize = normalize || cfg.cluster.normalize.unwrap_or(false);
            let records = read_manifest(&manifest)?;
            let table = load_embedding_table(&embeddings)?;
            let (labeled, fitted) = stages::cluster_records(&records, &table, &params)?;
            let model_path = model.unwrap_or_else(|| out.with_extension("mdkm"));
            write_manifest(&labeled, &out)?;
            write_model(&fitted, &model_path)?;
            emit(
                &json!({
                    "records": labeled.len(),
                    "k": fitted.k,
                    "seed": seed,
                    "inertia": fitted.inertia,
                    "iterations": fitted.iterations_run,
                    "model": model_path,
                }),
                None,
            )?;
        }
        Command::BuildPgt {
            manifest,
            out_dir,
            tau,
            num_clusters,
            mask_nms,
        } => {
            let tau = tau.or(cfg.pgt.tau).unwrap_or(DEFAULT_TAU);
            check_tau(tau)?;
            let overlap = match mask_nms.or(cfg.pgt.mask_nms) {
                Some(iou_threshold) => OverlapMode::MaskNms { iou_threshold },
                None => OverlapMode::PerPixel,
            };
            let pc = PseudoGtConfig {
                tau,
                overlap,
                num_clusters: num_clusters.or(cfg.pgt.num_clusters),
            };
            let records = read_manifest(&manifest)?;
            let entries = stages::build_pgt_dir(&records, &pc, &out_dir)?;
            emit(&json!({ "maps": entries.len(), "tau": tau }), None)?;
        }
        Command::EvalSemseg {
            pred_index,
            gt_index,
            report,
            n_pred,
            n_gt,
            ignore_label,
        } => {
            let opts = SemsegOptions {
                n_pred: n_pred.or(cfg.eval.n_pred),
                n_gt: n_gt.or(cfg.eval.n_gt),
                ignore_label: ignore_label.or(cfg.eval.ignore_label),
            };
            let r = stages::eval_semseg_files(&pred_index, &gt_index, &opts)?;
            emit(&r, report.as_deref())?;
        }
        Command::EvalInstseg {
            preds,
            gts,
            report,
            protocol,
            class_mode,
        } => {
            let protocols: Vec<Protocol> = protocol
                .iter()
                .map(|p| match p {
                    ProtocolArg::Multi => Protocol::Multi,
                    ProtocolArg::Single => Protocol::Single,
                })
                .collect();
            let modes: Vec<ClassMode> = class_mode
                .iter()
                .map(|m| match m {
                    ClassModeArg::Agnostic => ClassMode::Agnostic,
                    ClassModeArg::Semantic => ClassMode::Semantic,
                })
                .collect();
            let r = stages::eval_instseg(&read_manifest(&preds)?, &read_manifest(&gts)?, &protocols, &modes)?;
            emit(&r, report.as_deref())?;
        }
        Command::LossCheck {
            logits,
            report,
            top_fraction,
            normalization,
            class_count,
            epsilon,
        } => {
            let defaults = LossCheckOptions::default();
            let opts = LossCheckOptions {
                top_fraction: top_fraction.or(cfg.loss.top_fraction).unwrap_or(DEFAULT_TOP_FRACTION),
                normalization: normalization.or(cfg.loss.normalization).unwrap_or_default(),
                class_count: class_count.or(cfg.loss.class_count),
                epsilon: epsilon.or(cfg.loss.epsilon).unwrap_or(defaults.epsilon),
            };
            let r = stages::loss_check_file(&logits, &opts)?;
            emit(&r, report.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = (|| {
        let cfg = match &cli.config {
            Some(p) => config::load(p).map_err(Failure::Config)?,
            None => RunConfig::default(),
        };
        if let Some(n) = cli.threads.or(cfg.threads) {
            if n == 0 {
                return Err(Failure::Core(Error::Parameter("threads must be at least 1".into())));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::Config(e.to_string()))?;
        }
        let seed = cli.seed.or(cfg.seed).unwrap_or(0);
        run(cli.command, &cfg, seed)
    })();

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Records { failed, succeeded }) => {
            let summary = json!({ "failed": failed.len(), "succeeded": succeeded, "errors": failed });
            eprintln!("{summary}");
            ExitCode::from(1)
        }
        Err(Failure::Config(message)) => {
            eprintln!("{}", json!({ "error": "config", "message": message }));
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("{}", json!({ "error": error_kind(&e), "message": e.to_string() }));
            ExitCode::from(2)
        }
    }
}
