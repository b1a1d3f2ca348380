//! Asset-consistency regularization.
//!
//! `R_P` pulls each clip's predictions toward a moving average of the
//! predictions for its asset; `R_E` does the same for penultimate
//! embeddings with a mean-squared error. Targets are constants with respect
//! to the model (no gradient flows into the moving averages).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    #[default]
    None,
    Rp,
    Re,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::Rp => "rp",
            RegKind::Re => "re",
        }
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(RegKind::None),
            "rp" => Ok(RegKind::Rp),
            "re" => Ok(RegKind::Re),
            _ => Err(Error::Config(format!("unknown regularizer {s:?} (expected none, rp, re)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegConfig {
    pub kind: RegKind,
    pub alpha: f64,
    pub eps_ema: f64,
    /// Embedding EMA rate; falls back to `eps_ema`.
    pub eps_ema_embed: Option<f64>,
    /// Never update the moving averages (targets stay at their initial draw).
    pub freeze_targets: bool,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            kind: RegKind::None,
            alpha: 0.1,
            eps_ema: 1e-3,
            eps_ema_embed: None,
            freeze_targets: false,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("reg.alpha must be >= 0, got {}", self.alpha)));
        }
        for eps in [Some(self.eps_ema), self.eps_ema_embed].into_iter().flatten() {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::Config(format!("EMA rate must be in [0, 1], got {eps}")));
            }
        }
        Ok(())
    }

    pub fn embed_rate(&self) -> f64 {
        self.eps_ema_embed.unwrap_or(self.eps_ema)
    }

    /// (α, ε) used with each loss when training with `R_P` on the bird-sound benchmark.
    pub fn rp_preset(kind: LossKind) -> Self {
        let (alpha, eps) = match kind {
            LossKind::BceFull => (1e-1, 1e-2),
            LossKind::An => (1e-1, 1e-3),
            LossKind::Wan | LossKind::Ls => (1e-2, 1e-3),
            LossKind::Role | LossKind::Em => (1e-1, 1e-4),
            LossKind::LlR => (1e-1, 1e-2),
            LossKind::LlCt => (1e-2, 1e-2),
            LossKind::LlCp => (1e-2, 1e-4),
        };
        Self {
            kind: RegKind::Rp,
            alpha,
            eps_ema: eps,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetTargets {
    pub y_bar: Vec<f64>,
    pub d_bar: Vec<f64>,
}

/// Per-asset moving averages of predictions and embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTargetStore {
    pub eps_ema: f64,
    pub eps_ema_embed: f64,
    pub entries: BTreeMap<u64, AssetTargets>,
}

/// Prediction targets start at U(0.4, 0.6); embedding means start at zero.
pub fn init_pseudo_targets(asset_ids: &[u64], m: usize, e: usize, seed: u64) -> PseudoTargetStore {
    let mut r = rng::stream(seed, rng::STREAM_PSEUDO_INIT);
    let mut ids = asset_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let entries = ids
        .into_iter()
        .map(|id| {
            let y_bar = (0..m).map(|_| r.random_range(0.4..=0.6)).collect();
            (id, AssetTargets { y_bar, d_bar: vec![0.0; e] })
        })
        .collect();
    PseudoTargetStore {
        eps_ema: 1e-3,
        eps_ema_embed: 1e-3,
        entries,
    }
}

impl PseudoTargetStore {
    pub fn get(&self, asset_id: u64) -> Option<&AssetTargets> {
        self.entries.get(&asset_id)
    }

    pub fn update_predictions(&mut self, asset_id: u64, p: &[f64]) {
        let eps = self.eps_ema;
        if let Some(t) = self.entries.get_mut(&asset_id) {
            ema_update(&mut t.y_bar, p, eps);
        }
    }

    pub fn update_embedding(&mut self, asset_id: u64, d: &[f64]) {
        let eps = self.eps_ema_embed;
        if let Some(t) = self.entries.get_mut(&asset_id) {
            ema_update(&mut t.d_bar, d, eps);
        }
    }
}

/// `ȳ ← (1 − ε)·ȳ + ε·p`, elementwise.
pub fn ema_update(y_bar: &mut [f64], p: &[f64], eps: f64) {
    for (y, &x) in y_bar.iter_mut().zip(p) {
        *y = (1.0 - eps) * *y + eps * x;
    }
}

/// Soft-target cross-entropy `−(1/M) Σ [ȳ ln p + (1 − ȳ) ln(1 − p)]` and its
/// gradient in `p` (ȳ held constant).
pub fn rp_term(p: &[f64], y_bar: &[f64]) -> (f64, Vec<f64>) {
    let m = p.len() as f64;
    let mut value = 0.0;
    let grad = p
        .iter()
        .zip(y_bar)
        .map(|(&p, &y)| {
            value -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            (-y / p + (1.0 - y) / (1.0 - p)) / m
        })
        .collect();
    (value / m, grad)
}

/// Batch-mean `R_P` with its gradient in the logits. `targets` holds one ȳ row per example.
pub fn rp_batch(probs: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
    let b = probs.nrows() as f64;
    let mut grad = Array2::zeros(probs.dim());
    let mut value = 0.0;
    for (i, (p, y)) in probs.rows().into_iter().zip(targets.rows()).enumerate() {
        let (v, g) = rp_term(p.as_slice().expect("standard layout"), y.as_slice().expect("standard layout"));
        value += v;
        for (c, gc) in g.into_iter().enumerate() {
            let pc = p[c];
            grad[[i, c]] = gc * pc * (1.0 - pc) / b;
        }
    }
    (value / b, grad)
}

/// `R_E = (1/E) Σ (d − d̄)²` and its gradient `2(d − d̄)/E`.
pub fn re_term(d: &[f64], d_bar: &[f64]) -> Result<(f64, Vec<f64>)> {
    if d.len() != d_bar.len() {
        return Err(Error::Dimension(format!(
            "embedding has {} entries, running mean has {}",
            d.len(),
            d_bar.len()
        )));
    }
    let e = d.len().max(1) as f64;
    let value = d.iter().zip(d_bar).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / e;
    let grad = d.iter().zip(d_bar).map(|(a, b)| 2.0 * (a - b) / e).collect();
    Ok((value, grad))
}

/// Batch-mean `R_E` with its gradient in the embeddings.
pub fn re_batch(emb: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let b = emb.nrows() as f64;
    let mut grad = Array2::zeros(emb.dim());
    let mut value = 0.0;
    for (i, (d, t)) in emb.rows().into_iter().zip(targets.rows()).enumerate() {
        let (v, g) = re_term(&d.to_vec(), &t.to_vec())?;
        value += v;
        for (j, gj) in g.into_iter().enumerate() {
            grad[[i, j]] = gj / b;
        }
    }
    Ok((value / b, grad))
}

/// `base + α · reg` for both value and gradient.
pub fn attach_regularizer(
    base: (f64, &Array2<f64>),
    reg: (f64, &Array2<f64>),
    alpha: f64,
) -> Result<(f64, Array2<f64>)> {
    if base.1.dim() != reg.1.dim() {
        return Err(Error::Dimension(format!(
            "loss gradient {:?} vs regularizer gradient {:?}",
            base.1.dim(),
            reg.1.dim()
        )));
    }
    Ok((base.0 + alpha * reg.0, base.1 + &(reg.1 * alpha)))
}
