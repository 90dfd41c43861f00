//! Cross-entropy restricted to the hardest pixels, with its exact gradient.
//!
//! ```text
//! ce_i  = -log softmax(logits_i)[target_i]
//! T     = the max(1, floor(top_fraction * n)) pixels with the largest ce (lower index on ties)
//! loss  = sum_{i in T} ce_i / (|T| * |C|)
//! dloss/dlogits_i = (softmax_i - onehot_i) / (|T| * |C|)   for i in T, 0 otherwise
//! ```
//!
//! `|C|` defaults to the number of logit columns (clusters plus background).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by `|T| * |C|`.
    #[default]
    ClassAndPixel,
    /// Divide by `|T|` only.
    Pixel,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class-and-pixel" => Ok(Normalization::ClassAndPixel),
            "pixel" => Ok(Normalization::Pixel),
            other => Err(Error::parameter(format!("unknown normalization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossInput {
    pub n_classes: usize,
    /// `[n_pixels × n_classes]`, row-major.
    pub logits: Vec<f64>,
    pub targets: Vec<usize>,
    pub top_fraction: f64,
    /// `|C|` in the normalizer; `None` means `n_classes`.
    pub class_count: Option<usize>,
    pub normalization: Normalization,
}

impl LossInput {
    pub fn new(n_classes: usize, logits: Vec<f64>, targets: Vec<usize>) -> Self {
        LossInput {
            n_classes,
            logits,
            targets,
            top_fraction: DEFAULT_TOP_FRACTION,
            class_count: None,
            normalization: Normalization::default(),
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.targets.len()
    }

    fn validate(&self) -> Result<()> {
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::parameter(format!(
                "top_fraction {} must lie in (0, 1]",
                self.top_fraction
            )));
        }
        if self.n_classes == 0 || self.targets.is_empty() {
            return Err(Error::validation("loss needs at least one pixel and one class"));
        }
        if self.logits.len() != self.n_pixels() * self.n_classes {
            return Err(Error::validation(format!(
                "{} logits for {} pixels x {} classes",
                self.logits.len(),
                self.n_pixels(),
                self.n_classes
            )));
        }
        if let Some(t) = self.targets.iter().find(|&&t| t >= self.n_classes) {
            return Err(Error::validation(format!(
                "target {t} outside 0..{}",
                self.n_classes
            )));
        }
        if self.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite logit"));
        }
        if self.class_count == Some(0) {
            return Err(Error::parameter("class_count must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Same shape as the logits.
    pub grad: Vec<f64>,
    /// Hard pixel set, ascending.
    pub selected: Vec<usize>,
    pub per_pixel_ce: Vec<f64>,
}

/// Numerically stable softmax and `-log p[target]` for one row.
fn softmax_ce(row: &[f64], target: usize) -> (Vec<f64>, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let ce = sum.ln() - (row[target] - max);
    (exps.into_iter().map(|e| e / sum).collect(), ce)
}

/// Size of the hard set for `n` pixels.
pub fn hard_set_size(n: usize, top_fraction: f64) -> usize {
    ((top_fraction * n as f64).floor() as usize).clamp(1, n.max(1))
}

/// Indices of the `count` largest values, lower index first on ties; ascending.
pub fn select_hardest(ce: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ce.len()).collect();
    order.sort_by(|&a, &b| ce[b].total_cmp(&ce[a]));
    order.truncate(count);
    order.sort_unstable();
    order
}

pub fn hard_mining_ce(input: &LossInput) -> Result<LossOutput> {
    input.validate()?;
    let c = input.n_classes;
    let rows: Vec<(Vec<f64>, f64)> = input
        .logits
        .chunks(c)
        .zip(&input.targets)
        .map(|(row, &t)| softmax_ce(row, t))
        .collect();
    let per_pixel_ce: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let selected = select_hardest(&per_pixel_ce, hard_set_size(input.n_pixels(), input.top_fraction));
    let norm = match input.normalization {
        Normalization::ClassAndPixel => {
            selected.len() as f64 * input.class_count.unwrap_or(c) as f64
        }
        Normalization::Pixel => selected.len() as f64,
    };
    let mut grad = vec![0f64; input.logits.len()];
    let mut total = 0.0;
    for &i in &selected {
        total += per_pixel_ce[i];
        let probs = &rows[i].0;
        for (k, g) in grad[i * c..(i + 1) * c].iter_mut().enumerate() {
            let onehot = if k == input.targets[i] { 1.0 } else { 0.0 };
            *g = (probs[k] - onehot) / norm;
        }
    }
    Ok(LossOutput {
        loss: total / norm,
        grad,
        selected,
        per_pixel_ce,
    })
}

/// Largest absolute and norm-relative gaps between the analytic gradient and
/// central differences of the loss with step `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    pub max_abs_error: f64,
    pub relative_error: f64,
    /// False if some perturbation changed the hard set.
    pub selection_stable: bool,
}

pub fn gradient_check(input: &LossInput, eps: f64) -> Result<GradientCheck> {
    let base = hard_mining_ce(input)?;
    let mut probe = input.clone();
    let mut max_abs: f64 = 0.0;
    let mut diff_sq = 0.0;
    let mut ana_sq = 0.0;
    let mut num_sq = 0.0;
    let mut stable = true;
    for idx in 0..input.logits.len() {
        let orig = probe.logits[idx];
        probe.logits[idx] = orig + eps;
        let plus = hard_mining_ce(&probe)?;
        probe.logits[idx] = orig - eps;
        let minus = hard_mining_ce(&probe)?;
        probe.logits[idx] = orig;
        stable &= plus.selected == base.selected && minus.selected == base.selected;
        let numeric = (plus.loss - minus.loss) / (2.0 * eps);
        let d = base.grad[idx] - numeric;
        max_abs = max_abs.max(d.abs());
        diff_sq += d * d;
        ana_sq += base.grad[idx] * base.grad[idx];
        num_sq += numeric * numeric;
    }
    let scale = ana_sq.sqrt().max(num_sq.sqrt());
    Ok(GradientCheck {
        max_abs_error: max_abs,
        relative_error: if scale > 0.0 { diff_sq.sqrt() / scale } else { 0.0 },
        selection_stable: stable,
    })
}
