//! Optional TOML run configuration. Command-line flags take precedence over
//! file values, which take precedence over built-in defaults.

use std::path::Path;

use maskdistill::distill::ComponentMode;
use maskdistill::loss::Normalization;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub pgt: PgtSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub loss: LossSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DistillSection {
    pub k_fraction: Option<f64>,
    pub component_mode: Option<ComponentMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ClusterSection {
    pub k: Option<usize>,
    pub restarts: Option<usize>,
    pub max_iter: Option<usize>,
    pub normalize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PgtSection {
    pub tau: Option<f64>,
    pub num_clusters: Option<u32>,
    /// Enables whole-mask suppression at this IoU.
    pub mask_nms: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalSection {
    pub n_pred: Option<usize>,
    pub n_gt: Option<usize>,
    pub ignore_label: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LossSection {
    pub top_fraction: Option<f64>,
    pub normalization: Option<Normalization>,
    pub class_count: Option<usize>,
    pub epsilon: Option<f64>,
}

pub fn load(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
