//! Single-positive multi-label losses.
//!
//! Every loss is evaluated per (example, class) term from the clamped
//! probability `p = σ(z)`, averaged over the `M` classes and then over the
//! batch. Gradients are returned with respect to the logits, using
//! `dp/dz = p(1 − p)`.
//!
//! Known negatives (from label priors) go through the prior combinator:
//! unknown terms are scaled by `a ∈ {0, 1}` and known negatives contribute
//! `b · L⁻`. With the defaults `a = 1, b = 1` a fully labeled batch trains
//! as plain binary cross-entropy.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{LabelState, TriStateLabelVector};
use crate::rng;

/// Lower clamp applied to every probability before any log.
pub const P_MIN: f64 = 1e-7;
/// ROLE estimates are kept inside `[EST_MIN, 1 − EST_MIN]` after each update.
pub const EST_MIN: f64 = 1e-4;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(P_MIN, 1.0 - P_MIN)
}

/// `L⁺(p) = −ln p` and its derivative in `p`.
pub fn term_bce_pos(p: f64) -> (f64, f64) {
    (-p.ln(), -1.0 / p)
}

/// `L⁻(p) = −ln(1 − p)` and its derivative in `p`.
pub fn term_bce_neg(p: f64) -> (f64, f64) {
    (-(1.0 - p).ln(), 1.0 / (1.0 - p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "bce-full")]
    BceFull,
    #[serde(rename = "an")]
    An,
    #[serde(rename = "wan")]
    Wan,
    #[serde(rename = "ls")]
    Ls,
    #[serde(rename = "role")]
    Role,
    #[serde(rename = "em")]
    Em,
    #[serde(rename = "ll-r")]
    LlR,
    #[serde(rename = "ll-ct")]
    LlCt,
    #[serde(rename = "ll-cp")]
    LlCp,
}

impl LossKind {
    pub const ALL: [LossKind; 9] = [
        LossKind::BceFull,
        LossKind::An,
        LossKind::Wan,
        LossKind::Ls,
        LossKind::Role,
        LossKind::Em,
        LossKind::LlR,
        LossKind::LlCt,
        LossKind::LlCp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::BceFull => "bce-full",
            LossKind::An => "an",
            LossKind::Wan => "wan",
            LossKind::Ls => "ls",
            LossKind::Role => "role",
            LossKind::Em => "em",
            LossKind::LlR => "ll-r",
            LossKind::LlCt => "ll-ct",
            LossKind::LlCp => "ll-cp",
        }
    }

    pub fn is_large_loss(self) -> bool {
        matches!(self, LossKind::LlR | LossKind::LlCt | LossKind::LlCp)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        let norm = match norm.as_str() {
            "bce" | "full" => "bce-full",
            "bce-an" => "an",
            other => other,
        }
        .to_string();
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown loss kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    /// WAN weight on unknown terms.
    pub gamma: f64,
    /// Label-smoothing amount.
    pub eps_ls: f64,
    /// Entropy weight for EM.
    pub alpha_em: f64,
    /// ROLE expected-positive regularizer weight.
    pub lambda_role: f64,
    /// Large-loss schedule step, in percent per epoch.
    pub delta_rel: f64,
    /// ROLE expected number of positives per example.
    pub expected_positives_k: usize,
    /// Prior combinator: weight (0 or 1) on unknown terms.
    pub a: u8,
    /// Prior combinator: weight on known-negative terms.
    pub b: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::An,
            gamma: 1.0 / 99.0,
            eps_ls: 0.1,
            alpha_em: 0.2,
            lambda_role: 1.0,
            delta_rel: 0.1,
            expected_positives_k: 1,
            a: 1,
            b: 1.0,
        }
    }
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.eps_ls) {
            return bad(format!("eps_ls must be in [0, 1), got {}", self.eps_ls));
        }
        if !(self.alpha_em > 0.0) {
            return bad(format!("alpha_em must be > 0, got {}", self.alpha_em));
        }
        if !(self.delta_rel >= 0.0) {
            return bad(format!("delta_rel must be >= 0, got {}", self.delta_rel));
        }
        if !(self.b >= 0.0) {
            return bad(format!("b must be >= 0, got {}", self.b));
        }
        if self.a > 1 {
            return bad(format!("a must be 0 or 1, got {}", self.a));
        }
        if !(self.lambda_role >= 0.0) {
            return bad(format!("lambda_role must be >= 0, got {}", self.lambda_role));
        }
        Ok(())
    }

    /// Named hyperparameter presets: `<dataset>-<regime>-<kind>`, e.g.
    /// `l48-targetonly-wan`, `coco-checklist-ls`. A bare `<dataset>-<regime>`
    /// resolves to assume-negative.
    pub fn preset(name: &str) -> Option<LossSpec> {
        let (prefix, kind) = LossKind::ALL
            .into_iter()
            .find_map(|k| {
                name.strip_suffix(k.name())
                    .and_then(|p| p.strip_suffix('-'))
                    .map(|p| (p, k))
            })
            .unwrap_or((name, LossKind::An));
        let mut s = LossSpec::new(kind);
        // (γ, ε, α_em, λ, Δ) per dataset in the target-only tables.
        let (gamma, eps, alpha, lambda, delta) = match prefix.split('-').next()? {
            "l48" => (1.0 / 99.0, 0.1, 0.2, 1.0, 0.1),
            "coco" => (1.0 / 79.0, 0.1, 0.1, 1.0, if kind == LossKind::LlR { 0.4 } else { 0.2 }),
            _ => return None,
        };
        s.gamma = gamma;
        s.eps_ls = eps;
        s.alpha_em = alpha;
        s.lambda_role = lambda;
        s.delta_rel = delta;
        let regime = prefix.split_once('-')?.1;
        // (a, b, method hyperparameter) for the prior regimes.
        let prior = match (prefix, kind) {
            ("coco-geo", LossKind::Wan) => Some((0, 0.01, 0.1)),
            ("coco-geo", LossKind::Ls) => Some((0, 0.05, 0.2)),
            ("coco-geo", LossKind::Role) => Some((0, 0.01, 0.1)),
            ("coco-geo", LossKind::Em) => Some((1, 0.01, 0.1)),
            ("coco-checklist", LossKind::Wan) => Some((1, 0.01, 0.1)),
            ("coco-checklist", LossKind::Ls) => Some((1, 0.5, 0.1)),
            ("coco-checklist", LossKind::Role) => Some((1, 1.0, 1.0)),
            ("coco-checklist", LossKind::Em) => Some((1, 0.02, 0.1)),
            ("l48-geo", LossKind::Wan) => Some((1, 0.5, 0.05)),
            ("l48-geo", LossKind::Ls) => Some((1, 0.2, 0.1)),
            ("l48-geo", LossKind::Role) => Some((0, 0.05, 0.5)),
            ("l48-geo", LossKind::Em) => Some((0, 0.01, 0.1)),
            ("l48-checklist", LossKind::Wan) => Some((0, 0.5, 1.0 / 99.0)),
            ("l48-checklist", LossKind::Ls) => Some((1, 1.0, 0.1)),
            ("l48-checklist", LossKind::Role) => Some((0, 0.05, 2.0)),
            ("l48-checklist", LossKind::Em) => Some((1, 0.01, 0.02)),
            _ => None,
        };
        match regime {
            "targetonly" | "full" => {}
            "geo" | "checklist" => {
                if let Some((a, b, h)) = prior {
                    s.a = a;
                    s.b = b;
                    match kind {
                        LossKind::Wan => s.gamma = h,
                        LossKind::Ls => s.eps_ls = h,
                        LossKind::Role => s.lambda_role = h,
                        LossKind::Em => s.alpha_em = h,
                        _ => {}
                    }
                }
            }
            _ => return None,
        }
        Some(s)
    }

    pub fn preset_names() -> Vec<String> {
        let mut out = Vec::new();
        for ds in ["l48", "coco"] {
            for regime in ["targetonly", "geo", "checklist"] {
                for k in LossKind::ALL {
                    if k == LossKind::BceFull && regime != "targetonly" {
                        continue;
                    }
                    out.push(format!("{ds}-{regime}-{}", k.name()));
                }
            }
        }
        out
    }
}

/// Permanently flipped (example, class) pairs for LL-Cp.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipStore(BTreeSet<(usize, usize)>);

impl FlipStore {
    pub fn contains(&self, example: usize, class: usize) -> bool {
        self.0.contains(&(example, class))
    }

    pub fn insert(&mut self, example: usize, class: usize) -> bool {
        self.0.insert((example, class))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.0.iter()
    }
}

/// Jointly trained per-(example, class) label estimates for ROLE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleState {
    pub estimates: Array2<f64>,
    /// Entries fixed by observed labels: 1 for positives, 0 for known negatives.
    pub pinned: Array2<i8>,
    m1: Array2<f64>,
    m2: Array2<f64>,
    steps: Array2<u32>,
}

impl RoleState {
    /// Estimates drawn from U(0.4, 0.6), with observed labels pinned.
    pub fn init(labels: &[TriStateLabelVector], m: usize, seed: u64) -> Self {
        let n = labels.len();
        let mut r = rng::stream(seed, rng::STREAM_ROLE_INIT);
        let estimates = Array2::from_shape_fn((n, m), |_| r.random_range(0.4..=0.6));
        let pinned = Array2::from_shape_fn((n, m), |(i, c)| match labels[i].get(c) {
            LabelState::Positive => 1,
            LabelState::Negative => 0,
            LabelState::Unknown => -1,
        });
        let mut s = Self {
            estimates,
            pinned,
            m1: Array2::zeros((n, m)),
            m2: Array2::zeros((n, m)),
            steps: Array2::zeros((n, m)),
        };
        s.apply_pins();
        s
    }

    fn apply_pins(&mut self) {
        ndarray::Zip::from(&mut self.estimates)
            .and(&self.pinned)
            .for_each(|e, &p| {
                if p >= 0 {
                    *e = f64::from(p);
                }
            });
    }

    pub fn rows(&self) -> usize {
        self.estimates.nrows()
    }

    /// One Adam step on the given rows. Returns how many entries had to be
    /// clamped back into `[EST_MIN, 1 − EST_MIN]`.
    pub fn step(&mut self, rows: &[usize], grad: &Array2<f64>, lr: f64) -> usize {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let mut clamped = 0;
        for (r, &i) in rows.iter().enumerate() {
            for c in 0..self.estimates.ncols() {
                if self.pinned[[i, c]] >= 0 {
                    continue;
                }
                let g = grad[[r, c]];
                self.steps[[i, c]] += 1;
                let t = self.steps[[i, c]] as i32;
                let m1 = B1 * self.m1[[i, c]] + (1.0 - B1) * g;
                let m2 = B2 * self.m2[[i, c]] + (1.0 - B2) * g * g;
                self.m1[[i, c]] = m1;
                self.m2[[i, c]] = m2;
                let mhat = m1 / (1.0 - B1.powi(t));
                let vhat = m2 / (1.0 - B2.powi(t));
                let e = self.estimates[[i, c]] - lr * mhat / (vhat.sqrt() + EPS);
                let ec = e.clamp(EST_MIN, 1.0 - EST_MIN);
                if ec != e {
                    clamped += 1;
                }
                self.estimates[[i, c]] = ec;
            }
        }
        clamped
    }
}

/// Loss-side mutable state owned by the trainer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossState {
    pub flips: FlipStore,
    pub role: Option<RoleState>,
}

/// One batch of predictions with their (tri-state) labels.
#[derive(Debug, Clone)]
pub struct BatchContext {
    /// Epoch counter, starting at 1.
    pub epoch: usize,
    /// Row index of each example in the training set (keys ROLE and LL-Cp state).
    pub example_ids: Vec<usize>,
    pub labels: Vec<TriStateLabelVector>,
    /// Clamped probabilities, shape (B, M).
    pub probs: Array2<f64>,
}

impl BatchContext {
    pub fn new(epoch: usize, example_ids: Vec<usize>, labels: Vec<TriStateLabelVector>, probs: Array2<f64>) -> Self {
        Self {
            epoch,
            example_ids,
            labels,
            probs: probs.mapv(clamp_prob),
        }
    }

    pub fn from_logits(
        epoch: usize,
        example_ids: Vec<usize>,
        labels: Vec<TriStateLabelVector>,
        logits: &Array2<f64>,
    ) -> Self {
        Self::new(epoch, example_ids, labels, logits.mapv(sigmoid))
    }

    pub fn batch_size(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    fn check(&self) -> Result<()> {
        let (b, m) = self.probs.dim();
        if self.labels.len() != b || self.example_ids.len() != b {
            return Err(Error::Dimension(format!(
                "batch has {b} prediction rows, {} label rows and {} ids",
                self.labels.len(),
                self.example_ids.len()
            )));
        }
        if let Some(l) = self.labels.iter().find(|l| l.len() != m) {
            return Err(Error::Dimension(format!("label vector of length {} for M = {m}", l.len())));
        }
        if self.epoch == 0 {
            return Err(Error::Config("epoch counter starts at 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// d value / d logits, shape (B, M).
    pub grad_z: Array2<f64>,
    /// d value / d ROLE estimates for the batch rows (ROLE only).
    pub grad_estimates: Option<Array2<f64>>,
    /// Number of terms selected as large losses in this batch.
    pub selected: usize,
    /// Number of new permanent flips recorded in this batch.
    pub flipped: usize,
    /// Set when the large-loss schedule asked for a fraction above 1.
    pub schedule_clamped: bool,
}

/// Large-loss selection schedule: fraction `(t − 1) · Δ / 100`, clamped to
/// `[0, 1]`. Returns the fraction and whether clamping occurred.
pub fn ll_fraction(epoch: usize, delta_rel: f64) -> (f64, bool) {
    let raw = epoch.saturating_sub(1) as f64 * delta_rel / 100.0;
    (raw.clamp(0.0, 1.0), raw > 1.0)
}

/// Marks the `⌊fraction · n⌋` largest losses; ties go to the lower index.
pub fn ll_select(losses: &[f64], epoch: usize, delta_rel: f64) -> Vec<bool> {
    let (fraction, _) = ll_fraction(epoch, delta_rel);
    ll_select_fraction(losses, fraction)
}

pub fn ll_select_fraction(losses: &[f64], fraction: f64) -> Vec<bool> {
    let n = losses.len();
    let k = ((fraction * n as f64) + 1e-9).floor() as usize;
    let mut mask = vec![false; n];
    if k == 0 {
        return mask;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| losses[j].total_cmp(&losses[i]).then(i.cmp(&j)));
    for &i in &order[..k.min(n)] {
        mask[i] = true;
    }
    mask
}

/// Evaluates an SPML loss on a batch.
///
/// `state` carries the LL-Cp flip store (updated in place) and, for ROLE, the
/// label-estimate table (read only; the caller applies `grad_estimates`).
pub fn spml_loss(spec: &LossSpec, ctx: &BatchContext, state: &mut LossState) -> Result<LossOutput> {
    ctx.check()?;
    if spec.kind == LossKind::Role {
        let role = state.role.as_ref().ok_or(Error::MissingState {
            kind: "role",
            what: "a ROLE estimate table",
        })?;
        return role_step(role, ctx, spec);
    }
    let (b, m) = ctx.probs.dim();
    let norm = (b * m) as f64;
    let a = f64::from(spec.a);
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros((b, m));

    // Resolve label states, applying permanent flips.
    let mut states = Vec::with_capacity(b * m);
    for (i, labels) in ctx.labels.iter().enumerate() {
        for c in 0..m {
            let mut s = labels.get(c);
            if s == LabelState::Unknown && spec.kind == LossKind::LlCp && state.flips.contains(ctx.example_ids[i], c) {
                s = LabelState::Positive;
            }
            if s == LabelState::Unknown && spec.kind == LossKind::BceFull {
                return Err(Error::Config(format!(
                    "bce-full requires fully labeled data (example {}, class {c} is unknown)",
                    ctx.example_ids[i]
                )));
            }
            states.push(s);
        }
    }

    let mut selected = vec![false; b * m];
    let mut schedule_clamped = false;
    if spec.kind.is_large_loss() {
        let candidates: Vec<usize> = (0..b * m).filter(|&f| states[f] == LabelState::Unknown).collect();
        let losses: Vec<f64> = candidates
            .iter()
            .map(|&f| term_bce_neg(ctx.probs[[f / m, f % m]]).0)
            .collect();
        let (fraction, clamped) = ll_fraction(ctx.epoch, spec.delta_rel);
        schedule_clamped = clamped;
        for (&f, sel) in candidates.iter().zip(ll_select_fraction(&losses, fraction)) {
            selected[f] = sel;
        }
    }

    let mut n_selected = 0;
    let mut n_flipped = 0;
    for i in 0..b {
        for c in 0..m {
            let f = i * m + c;
            let p = ctx.probs[[i, c]];
            let (lp, dlp) = term_bce_pos(p);
            let (ln, dln) = term_bce_neg(p);
            let (v, dv) = match states[f] {
                LabelState::Positive if spec.kind == LossKind::Ls => {
                    let (w1, w2) = ((1.0 - spec.eps_ls) / 2.0, spec.eps_ls / 2.0);
                    (w1 * lp + w2 * ln, w1 * dlp + w2 * dln)
                }
                LabelState::Positive => (lp, dlp),
                LabelState::Negative => (spec.b * ln, spec.b * dln),
                LabelState::Unknown => {
                    let (v, dv) = match spec.kind {
                        LossKind::BceFull | LossKind::An => (ln, dln),
                        LossKind::Wan => (spec.gamma * ln, spec.gamma * dln),
                        LossKind::Ls => {
                            let (w1, w2) = ((1.0 - spec.eps_ls) / 2.0, spec.eps_ls / 2.0);
                            (w1 * ln + w2 * lp, w1 * dln + w2 * dlp)
                        }
                        LossKind::Em => {
                            let v = -spec.alpha_em * (p * lp + (1.0 - p) * ln);
                            let dv = spec.alpha_em * (p.ln() - (1.0 - p).ln());
                            (v, dv)
                        }
                        LossKind::LlR | LossKind::LlCt | LossKind::LlCp if selected[f] => {
                            n_selected += 1;
                            match spec.kind {
                                LossKind::LlR => (0.0, 0.0),
                                LossKind::LlCp => {
                                    if state.flips.insert(ctx.example_ids[i], c) {
                                        n_flipped += 1;
                                    }
                                    (lp, dlp)
                                }
                                _ => (lp, dlp),
                            }
                        }
                        LossKind::LlR | LossKind::LlCt | LossKind::LlCp => (ln, dln),
                        LossKind::Role => unreachable!("handled above"),
                    };
                    (a * v, a * dv)
                }
            };
            value += v;
            grad[[i, c]] = dv * p * (1.0 - p) / norm;
        }
    }
    Ok(LossOutput {
        value: value / norm,
        grad_z: grad,
        grad_estimates: None,
        selected: n_selected,
        flipped: n_flipped,
        schedule_clamped,
    })
}

/// Expected-positive regularizer `λ · mean_i (mean_c ỹ_ic − k/M)²` over the given rows.
pub fn role_regularizer(estimates: &Array2<f64>, lambda: f64, k: usize) -> f64 {
    let (b, m) = estimates.dim();
    if b == 0 {
        return 0.0;
    }
    let target = k as f64 / m as f64;
    let sum: f64 = estimates
        .rows()
        .into_iter()
        .map(|row| (row.mean().unwrap_or(0.0) - target).powi(2))
        .sum();
    lambda * sum / b as f64
}

/// ROLE objective on a batch.
///
/// Unknown entries contribute `½·[BCE(p, stop ỹ) + BCE(ỹ, stop p)]` (scaled by
/// the combinator weight `a`), observed positives `L⁺(p)`, known negatives
/// `b · L⁻(p)`; everything is averaged over (B, M). The expected-positive
/// regularizer is added on the estimate rows. Gradients are returned for
/// both the logits and the estimates; pinned estimates get zero gradient.
pub fn role_step(role: &RoleState, ctx: &BatchContext, spec: &LossSpec) -> Result<LossOutput> {
    ctx.check()?;
    let (b, m) = ctx.probs.dim();
    if role.estimates.ncols() != m {
        return Err(Error::Dimension(format!(
            "ROLE table has {} classes, batch has {m}",
            role.estimates.ncols()
        )));
    }
    if let Some(&i) = ctx.example_ids.iter().find(|&&i| i >= role.rows()) {
        return Err(Error::Dimension(format!("example {i} has no ROLE row ({} rows)", role.rows())));
    }
    let norm = (b * m) as f64;
    let a = f64::from(spec.a);
    let rows = role.estimates.select(ndarray::Axis(0), &ctx.example_ids);
    let mut value = 0.0;
    let mut grad_z = Array2::<f64>::zeros((b, m));
    let mut grad_e = Array2::<f64>::zeros((b, m));
    for i in 0..b {
        for c in 0..m {
            let p = ctx.probs[[i, c]];
            let (v, dv_dp) = match ctx.labels[i].get(c) {
                LabelState::Positive => term_bce_pos(p),
                LabelState::Negative => {
                    let (v, d) = term_bce_neg(p);
                    (spec.b * v, spec.b * d)
                }
                LabelState::Unknown => {
                    let y = rows[[i, c]];
                    let fwd = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                    let bwd = -(p * y.ln() + (1.0 - p) * (1.0 - y).ln());
                    let d_p = 0.5 * (-y / p + (1.0 - y) / (1.0 - p));
                    let d_y = 0.5 * (-p / y + (1.0 - p) / (1.0 - y));
                    if role.pinned[[ctx.example_ids[i], c]] < 0 {
                        grad_e[[i, c]] += a * d_y / norm;
                    }
                    (a * 0.5 * (fwd + bwd), a * d_p)
                }
            };
            value += v;
            grad_z[[i, c]] = dv_dp * p * (1.0 - p) / norm;
        }
    }
    value /= norm;
    value += role_regularizer(&rows, spec.lambda_role, spec.expected_positives_k);
    let target = spec.expected_positives_k as f64 / m as f64;
    for i in 0..b {
        let mean = rows.row(i).mean().unwrap_or(0.0);
        let g = spec.lambda_role * 2.0 * (mean - target) / (m as f64 * b as f64);
        for c in 0..m {
            if role.pinned[[ctx.example_ids[i], c]] < 0 {
                grad_e[[i, c]] += g;
            }
        }
    }
    Ok(LossOutput {
        value,
        grad_z,
        grad_estimates: Some(grad_e),
        selected: 0,
        flipped: 0,
        schedule_clamped: false,
    })
}

/// Binary cross-entropy on a fully labeled batch.
pub fn loss_bce_full(ctx: &BatchContext) -> Result<(f64, Array2<f64>)> {
    ctx.check()?;
    let (b, m) = ctx.probs.dim();
    let norm = (b * m) as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros((b, m));
    for i in 0..b {
        for c in 0..m {
            let y = match ctx.labels[i].get(c) {
                LabelState::Positive => 1.0,
                LabelState::Negative => 0.0,
                LabelState::Unknown => {
                    return Err(Error::Config(format!(
                        "bce-full requires fully labeled data (example {}, class {c} is unknown)",
                        ctx.example_ids[i]
                    )))
                }
            };
            let p = ctx.probs[[i, c]];
            value -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            grad[[i, c]] = (p - y) / norm;
        }
    }
    Ok((value / norm, grad))
}
