//! Deterministic training loop, validation-based model selection,
//! hyperparameter sweeps and the gradient-check harness.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::labelspace::{Dataset, LabelState, TriStateLabelVector};
use crate::losses::{sigmoid, spml_loss, BatchContext, FlipStore, LossKind, LossSpec, LossState, RoleState};
use crate::model::{adam_step, backward, forward, mlp_init, AdamConfig, AdamState, ModelParams};
use crate::regularizers::{
    init_pseudo_targets, re_batch, re_term, rp_batch, PseudoTargetStore, RegConfig, RegKind,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub loss: LossSpec,
    pub reg: RegConfig,
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub model_seed: u64,
    /// Learning-rate multiplier on the last layer. `None` means 10 for the
    /// large-loss variants and 1 otherwise.
    pub last_layer_lr_mult: Option<f64>,
    /// Adam learning rate for the ROLE estimate table.
    pub role_lr: f64,
    /// Seed for shuffling and all training-time state initialization.
    pub seed: u64,
    /// Validate every this many epochs (0 disables validation).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            base_lr: 3e-3,
            loss: LossSpec::default(),
            reg: RegConfig::default(),
            hidden: vec![128],
            model_seed: 0,
            last_layer_lr_mult: None,
            role_lr: 1e-2,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.base_lr > 0.0) || !(self.role_lr > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        self.loss.validate()?;
        self.reg.validate()
    }

    pub fn last_layer_multiplier(&self) -> f64 {
        self.last_layer_lr_mult
            .unwrap_or(if self.loss.kind.is_large_loss() { 10.0 } else { 1.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train_loss: Vec<f64>,
    /// Validation mAP per epoch (`None` on epochs without validation).
    pub val_map: Vec<Option<f64>>,
    pub best_epoch: usize,
    pub test_report: Option<EvalReport>,
    pub config: TrainConfig,
    pub wall_clock_secs: f64,
    pub seed: u64,
    /// Estimate entries clamped back into range by ROLE updates.
    pub role_clamped: usize,
    /// Batches where the large-loss schedule exceeded fraction 1.
    pub schedule_clamped_batches: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation mAP (final epoch when
    /// no validation ran).
    pub best: ModelParams,
    pub last: ModelParams,
    pub loss_state: LossState,
    pub pseudo_targets: Option<PseudoTargetStore>,
    pub record: RunRecord,
}

/// Trains a model from scratch. Single-threaded and bitwise deterministic for
/// fixed (config, data).
pub fn train(config: &TrainConfig, train_set: &Dataset, val_set: Option<&Dataset>) -> Result<TrainOutcome> {
    config.validate()?;
    let n = train_set.clips.len();
    if n == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    if config.loss.kind.is_large_loss() || config.loss.kind != LossKind::BceFull {
        // Single-positive losses need at least one positive per example.
        if let Some(c) = train_set.clips.iter().find(|c| c.labels.counts().positive == 0) {
            return Err(Error::Config(format!(
                "loss {} needs a positive label in every example (clip {} has none)",
                config.loss.kind, c.clip_id
            )));
        }
    }
    let start = Instant::now();
    let m = train_set.meta.m;
    let mut dims = vec![train_set.meta.d];
    dims.extend(&config.hidden);
    dims.push(m);
    let mut params = mlp_init(&dims, config.model_seed)?;
    params.set_last_layer_lr_multiplier(config.last_layer_multiplier());
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig::default();

    let labels: Vec<TriStateLabelVector> = train_set.clips.iter().map(|c| c.labels.clone()).collect();
    let mut loss_state = LossState {
        flips: FlipStore::default(),
        role: (config.loss.kind == LossKind::Role).then(|| RoleState::init(&labels, m, config.seed)),
    };
    let mut store = (config.reg.kind != RegKind::None).then(|| {
        let ids: Vec<u64> = train_set.assets.iter().map(|a| a.asset_id).collect();
        let mut s = init_pseudo_targets(&ids, m, params.embedding_dim(), config.seed);
        s.eps_ema = config.reg.eps_ema;
        s.eps_ema_embed = config.reg.embed_rate();
        s
    });

    let mut record = RunRecord {
        train_loss: Vec::with_capacity(config.epochs),
        val_map: Vec::with_capacity(config.epochs),
        best_epoch: config.epochs,
        test_report: None,
        config: config.clone(),
        wall_clock_secs: 0.0,
        seed: config.seed,
        role_clamped: 0,
        schedule_clamped_batches: 0,
    };
    let mut best: Option<(f64, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(config.seed, rng::STREAM_SHUFFLE ^ ((epoch as u64) << 16)));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.features(chunk);
            let trace = forward(&params, &x)?;
            let ctx = BatchContext::new(
                epoch,
                chunk.to_vec(),
                chunk.iter().map(|&i| labels[i].clone()).collect(),
                trace.probs.clone(),
            );
            let out = spml_loss(&config.loss, &ctx, &mut loss_state)?;
            if !out.value.is_finite() {
                return Err(Error::NonFinite { epoch, batch: bi, term: "spml" });
            }
            if out.schedule_clamped {
                record.schedule_clamped_batches += 1;
            }
            let mut value = out.value;
            let mut grad_z = out.grad_z;
            let mut grad_emb = None;
            let asset_ids: Vec<u64> = chunk.iter().map(|&i| train_set.clips[i].asset_id).collect();
            if let Some(store) = &store {
                let alpha = config.reg.alpha;
                match config.reg.kind {
                    RegKind::Rp => {
                        let targets = Array2::from_shape_fn((chunk.len(), m), |(r, c)| {
                            store.get(asset_ids[r]).expect("training asset").y_bar[c]
                        });
                        let (rv, rg) = rp_batch(&ctx.probs, &targets);
                        if !rv.is_finite() {
                            return Err(Error::NonFinite { epoch, batch: bi, term: "rp" });
                        }
                        value += alpha * rv;
                        grad_z += &(rg * alpha);
                    }
                    RegKind::Re => {
                        let e = params.embedding_dim();
                        let targets = Array2::from_shape_fn((chunk.len(), e), |(r, j)| {
                            store.get(asset_ids[r]).expect("training asset").d_bar[j]
                        });
                        let (rv, rg) = re_batch(&trace.embedding, &targets)?;
                        if !rv.is_finite() {
                            return Err(Error::NonFinite { epoch, batch: bi, term: "re" });
                        }
                        value += alpha * rv;
                        grad_emb = Some(rg * alpha);
                    }
                    RegKind::None => {}
                }
            }
            let grads = backward(&params, &trace, &grad_z, grad_emb.as_ref())?;
            adam_step(&mut params, &grads, &mut adam, config.base_lr, adam_cfg);
            if let (Some(role), Some(g)) = (loss_state.role.as_mut(), out.grad_estimates.as_ref()) {
                record.role_clamped += role.step(chunk, g, config.role_lr);
            }
            // Moving averages after the gradient step, from this batch's
            // (pre-step) predictions, in (asset, clip order) order.
            if let (Some(store), false) = (store.as_mut(), config.reg.freeze_targets) {
                let mut rows: Vec<usize> = (0..chunk.len()).collect();
                rows.sort_by_key(|&r| {
                    let c = &train_set.clips[chunk[r]];
                    (c.asset_id, c.order_index)
                });
                for r in rows {
                    match config.reg.kind {
                        RegKind::Rp => store.update_predictions(asset_ids[r], &ctx.probs.row(r).to_vec()),
                        RegKind::Re => store.update_embedding(asset_ids[r], &trace.embedding.row(r).to_vec()),
                        RegKind::None => {}
                    }
                }
            }
            epoch_loss += value;
            batches += 1;
        }
        record.train_loss.push(epoch_loss / batches as f64);

        let val_map = match val_set {
            Some(val) if config.eval_every > 0 && epoch % config.eval_every == 0 => {
                Some(evaluate(&params, val, true)?.map)
            }
            _ => None,
        };
        record.val_map.push(val_map);
        if let Some(v) = val_map {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, params.clone()));
                record.best_epoch = epoch;
            }
        }
    }
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    let best = best.map(|(_, p)| p).unwrap_or_else(|| params.clone());
    Ok(TrainOutcome {
        best,
        last: params,
        loss_state,
        pseudo_targets: store,
        record,
    })
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub best_index: usize,
    /// Best validation mAP of each configuration.
    pub scores: Vec<f64>,
    pub outcomes: Vec<TrainOutcome>,
}

/// Trains every configuration and picks the highest best-epoch validation
/// mAP; ties keep the earlier configuration.
pub fn sweep(configs: &[TrainConfig], train_set: &Dataset, val_set: &Dataset) -> Result<SweepResult> {
    let trials: Vec<_> = configs.iter().map(|c| (c, train_set)).collect();
    sweep_trials(&trials, val_set)
}

/// `sweep` with a training set per configuration.
pub fn sweep_trials(trials: &[(&TrainConfig, &Dataset)], val_set: &Dataset) -> Result<SweepResult> {
    if trials.is_empty() {
        return Err(Error::Config("sweep needs at least one configuration".into()));
    }
    let mut scores = Vec::with_capacity(trials.len());
    let mut outcomes = Vec::with_capacity(trials.len());
    for (cfg, train_set) in trials {
        let out = train(cfg, train_set, Some(val_set))?;
        let score = out
            .record
            .val_map
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        scores.push(score);
        outcomes.push(out);
    }
    let mut best_index = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best_index] {
            best_index = i;
        }
    }
    Ok(SweepResult {
        best_index,
        scores,
        outcomes,
    })
}

// ---------------------------------------------------------------------------
// Gradient checking

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor in the relative error `|a − n| / max(|a|, |n|, floor)`.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub kind: LossKind,
    pub trials: usize,
    pub max_rel_err: f64,
    /// Trials whose worst entry exceeded the tolerance.
    pub failures: usize,
    pub tolerance: f64,
}

struct GradInstance {
    spec: LossSpec,
    epoch: usize,
    ids: Vec<usize>,
    labels: Vec<TriStateLabelVector>,
    logits: Array2<f64>,
    state: LossState,
    y_bar: Array2<f64>,
    alpha_p: f64,
    emb: Array1<f64>,
    d_bar: Array1<f64>,
    alpha_e: f64,
}

fn random_instance(base: &LossSpec, r: &mut impl Rng) -> GradInstance {
    let b = r.random_range(1..=4);
    let m = r.random_range(2..=6);
    let mut spec = base.clone();
    spec.a = r.random_range(0..=1);
    spec.b = r.random_range(0.0..2.0);
    spec.delta_rel = r.random_range(5.0..40.0);
    let full = base.kind == LossKind::BceFull;
    if full {
        spec.a = 1;
    }
    let labels: Vec<TriStateLabelVector> = (0..b)
        .map(|_| {
            let pos = r.random_range(0..m);
            let states = (0..m)
                .map(|c| {
                    if c == pos {
                        LabelState::Positive
                    } else if full || r.random_bool(0.3) {
                        if full && r.random_bool(0.2) {
                            LabelState::Positive
                        } else {
                            LabelState::Negative
                        }
                    } else {
                        LabelState::Unknown
                    }
                })
                .collect();
            TriStateLabelVector::new(states)
        })
        .collect();
    let ids: Vec<usize> = (0..b).map(|i| 2 * i + 1).collect();
    let logits = Array2::from_shape_fn((b, m), |_| r.random_range(-3.0..3.0));
    let mut state = LossState::default();
    if base.kind == LossKind::LlCp {
        for (i, l) in labels.iter().enumerate() {
            for c in 0..m {
                if l.get(c) == LabelState::Unknown && r.random_bool(0.2) {
                    state.flips.insert(ids[i], c);
                }
            }
        }
    }
    if base.kind == LossKind::Role {
        let mut all = vec![TriStateLabelVector::unknown(m); 2 * b + 1];
        for (i, l) in labels.iter().enumerate() {
            all[ids[i]] = l.clone();
        }
        let mut role = RoleState::init(&all, m, r.random());
        for ((i, c), e) in role.estimates.indexed_iter_mut() {
            if role.pinned[[i, c]] < 0 {
                *e = r.random_range(0.05..0.95);
            }
        }
        state.role = Some(role);
    }
    let e = r.random_range(2..=5);
    GradInstance {
        spec,
        epoch: r.random_range(1..=6),
        ids,
        labels,
        logits,
        state,
        y_bar: Array2::from_shape_fn((b, m), |_| r.random_range(0.05..0.95)),
        alpha_p: r.random_range(0.0..0.5),
        emb: Array1::from_shape_fn(e, |_| r.random_range(-1.0..1.0)),
        d_bar: Array1::from_shape_fn(e, |_| r.random_range(-1.0..1.0)),
        alpha_e: r.random_range(0.0..0.5),
    }
}

/// Independent scalar evaluation of the ROLE objective with stop-gradient
/// arguments made explicit: `p`/`est` are live, `p_stop`/`est_stop` are the
/// values seen through the stop-gradient.
fn role_objective(
    inst: &GradInstance,
    p: &Array2<f64>,
    p_stop: &Array2<f64>,
    est: &Array2<f64>,
    est_stop: &Array2<f64>,
) -> f64 {
    let (b, m) = p.dim();
    let spec = &inst.spec;
    let mut total = 0.0;
    for i in 0..b {
        for c in 0..m {
            let (pl, ps) = (p[[i, c]], p_stop[[i, c]]);
            total += match inst.labels[i].get(c) {
                LabelState::Positive => -pl.ln(),
                LabelState::Negative => -spec.b * (1.0 - pl).ln(),
                LabelState::Unknown => {
                    let (yl, ys) = (est[[i, c]], est_stop[[i, c]]);
                    let first = -(ys * pl.ln() + (1.0 - ys) * (1.0 - pl).ln());
                    let second = -(ps * yl.ln() + (1.0 - ps) * (1.0 - yl).ln());
                    f64::from(spec.a) * 0.5 * (first + second)
                }
            };
        }
    }
    total /= (b * m) as f64;
    let target = spec.expected_positives_k as f64 / m as f64;
    let mut reg = 0.0;
    for i in 0..b {
        let mean = (0..m).map(|c| est[[i, c]]).sum::<f64>() / m as f64;
        reg += (mean - target).powi(2);
    }
    total + spec.lambda_role * reg / b as f64
}

/// Soft-target cross-entropy on clamped probabilities, batch mean.
fn rp_value(p: &Array2<f64>, y_bar: &Array2<f64>) -> f64 {
    let (b, m) = p.dim();
    let mut s = 0.0;
    for i in 0..b {
        for c in 0..m {
            let (pv, y) = (p[[i, c]], y_bar[[i, c]]);
            s -= y * pv.ln() + (1.0 - y) * (1.0 - pv).ln();
        }
    }
    s / (b * m) as f64
}

fn check_instance(inst: &GradInstance, corrupt: Option<f64>) -> Result<f64> {
    let h = GRADCHECK_STEP;
    let probs_of = |z: &Array2<f64>| z.mapv(sigmoid);
    let ctx_of = |z: &Array2<f64>| BatchContext::from_logits(inst.epoch, inst.ids.clone(), inst.labels.clone(), z);
    let p0 = ctx_of(&inst.logits).probs;
    let role_est = inst
        .state
        .role
        .as_ref()
        .map(|r| r.estimates.select(ndarray::Axis(0), &inst.ids));

    // Objective in the logits, the same one the analytic side differentiates.
    let objective_z = |z: &Array2<f64>| -> Result<f64> {
        let ctx = ctx_of(z);
        let base = if let Some(est) = &role_est {
            role_objective(inst, &ctx.probs, &p0, est, est)
        } else {
            let mut state = inst.state.clone();
            spml_loss(&inst.spec, &ctx, &mut state)?.value
        };
        Ok(base + inst.alpha_p * rp_value(&ctx.probs, &inst.y_bar))
    };

    let mut state = inst.state.clone();
    let ctx = ctx_of(&inst.logits);
    let out = spml_loss(&inst.spec, &ctx, &mut state)?;
    let (_, rp_grad) = rp_batch(&ctx.probs, &inst.y_bar);
    let mut analytic = out.grad_z + &(rp_grad * inst.alpha_p);
    if let Some(delta) = corrupt {
        analytic[[0, 0]] += delta;
    }
    let mut worst: f64 = 0.0;
    for idx in 0..analytic.len() {
        let (i, c) = (idx / analytic.ncols(), idx % analytic.ncols());
        let mut zp = inst.logits.clone();
        zp[[i, c]] += h;
        let mut zm = inst.logits.clone();
        zm[[i, c]] -= h;
        let numeric = (objective_z(&zp)? - objective_z(&zm)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic[[i, c]], numeric));
    }
    debug_assert!(probs_of(&inst.logits).iter().all(|p| *p > 0.0));

    if let (Some(est), Some(ge)) = (&role_est, out.grad_estimates.as_ref()) {
        let role = inst.state.role.as_ref().expect("role state");
        for ((i, c), g) in ge.indexed_iter() {
            if role.pinned[[inst.ids[i], c]] >= 0 {
                continue;
            }
            let mut ep = est.clone();
            ep[[i, c]] += h;
            let mut em = est.clone();
            em[[i, c]] -= h;
            let numeric = (role_objective(inst, &p0, &p0, &ep, est) - role_objective(inst, &p0, &p0, &em, est)) / (2.0 * h);
            worst = worst.max(relative_error(*g, numeric));
        }
    }

    // Embedding regularizer.
    let (_, g) = re_term(&inst.emb.to_vec(), &inst.d_bar.to_vec())?;
    let re_value = |d: &Array1<f64>| {
        inst.alpha_e * d.iter().zip(&inst.d_bar).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d.len() as f64
    };
    for (j, gj) in g.iter().enumerate() {
        let mut dp = inst.emb.clone();
        dp[j] += h;
        let mut dm = inst.emb.clone();
        dm[j] -= h;
        let numeric = (re_value(&dp) - re_value(&dm)) / (2.0 * h);
        worst = worst.max(relative_error(inst.alpha_e * gj, numeric));
    }
    Ok(worst)
}

/// Compares analytic gradients of the total objective (loss, `R_P`, `R_E`
/// and, for ROLE, the estimate table) with central finite differences on
/// random small instances.
pub fn gradcheck(spec: &LossSpec, trials: usize, seed: u64) -> Result<GradcheckReport> {
    gradcheck_with(spec, trials, seed, None)
}

/// As [`gradcheck`], optionally adding `corrupt` to one analytic entry to
/// exercise the failure path.
pub fn gradcheck_with(spec: &LossSpec, trials: usize, seed: u64, corrupt: Option<f64>) -> Result<GradcheckReport> {
    let mut r = rng::stream(seed, rng::STREAM_GRADCHECK ^ spec.kind as u64);
    let mut max_rel_err: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..trials {
        let inst = random_instance(spec, &mut r);
        let worst = check_instance(&inst, corrupt)?;
        if worst > GRADCHECK_TOLERANCE {
            failures += 1;
        }
        max_rel_err = max_rel_err.max(worst);
    }
    Ok(GradcheckReport {
        kind: spec.kind,
        trials,
        max_rel_err,
        failures,
        tolerance: GRADCHECK_TOLERANCE,
    })
}
