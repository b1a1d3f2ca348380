//! Acceptance suite: one PASS/FAIL line per criterion (run with
//! `cargo test -p spml-core --test acceptance`). Exits non-zero when any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spml_core::eval::{average_precision, evaluate, EvalReport};
use spml_core::labelspace::{clip_labels_from_boxes, split_dataset, BoxAnnotation, Dataset, LabelState, TriStateLabelVector};
use spml_core::losses::{role_regularizer, spml_loss, BatchContext, LossKind, LossSpec, LossState};
use spml_core::regimes::{
    apply_regime, gen_synthetic_assets, gen_synthetic_flat, sample_single_positive, simulate_context_priors,
    FlatGeneratorConfig, GeneratorConfig, PriorSimConfig, RandomProjection, RegimeKind,
};
use spml_core::regularizers::{ema_update, rp_term, RegConfig};
use spml_core::trainer::{gradcheck, sweep, train, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn line(ok: bool, label: &str, detail: &str) {
    println!("{} {label}: {detail}", if ok { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut parts = Vec::new();
    for kind in LossKind::ALL {
        let r = gradcheck(&LossSpec::new(kind), 100, 1).expect("gradcheck runs");
        worst = worst.max(r.max_rel_err);
        failures += r.failures;
        parts.push(format!("{kind}={:.1e}", r.max_rel_err));
    }
    let secs = start.elapsed().as_secs_f64();
    let bce = gradcheck(&LossSpec::new(LossKind::BceFull), 100, 2).unwrap().max_rel_err;
    outcome(
        worst < 1e-4 && failures == 0 && secs < 60.0 && bce < 1e-6,
        format!(
            "max rel err {worst:.2e} over 9 kinds x 100 instances incl. R_P, R_E, ROLE estimates ({}); bce-full {bce:.1e}; {secs:.1}s",
            parts.join(" ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Closed-form loss values

fn batch(labels: Vec<TriStateLabelVector>, p: f64) -> BatchContext {
    let (b, m) = (labels.len(), labels[0].len());
    BatchContext::new(1, (0..b).collect(), labels, Array2::from_elem((b, m), p))
}

fn single_positive(m: usize) -> TriStateLabelVector {
    let mut l = TriStateLabelVector::unknown(m);
    l.set(0, LabelState::Positive);
    l
}

fn value(spec: &LossSpec, ctx: &BatchContext) -> f64 {
    spml_loss(spec, ctx, &mut LossState::default()).unwrap().value
}

fn c2_closed_forms() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();
    let ctx = batch(vec![single_positive(5)], 0.5);
    checks.push(("AN at p=0.5", value(&LossSpec::new(LossKind::An), &ctx), ln2));
    let wan = LossSpec {
        gamma: 1.0 / 99.0,
        ..LossSpec::new(LossKind::Wan)
    };
    checks.push(("WAN 1/99, M=100", value(&wan, &batch(vec![single_positive(100)], 0.5)), 2.0 * ln2 / 100.0));
    let em = LossSpec {
        alpha_em: 0.1,
        ..LossSpec::new(LossKind::Em)
    };
    // One positive and one unknown: (ln 2 − 0.1 ln 2) / 2.
    let em_ctx = batch(vec![single_positive(2)], 0.5);
    let em_unknown = 2.0 * value(&em, &em_ctx) - ln2;
    checks.push(("EM unknown term", em_unknown, -0.1 * ln2));
    let ls = LossSpec {
        eps_ls: 0.1,
        ..LossSpec::new(LossKind::Ls)
    };
    checks.push(("LS at eps=0.1", value(&ls, &ctx), 0.5 * ln2));
    let est = Array2::from_elem((1, 100), 0.5);
    checks.push(("ROLE regularizer", role_regularizer(&est, 1.0, 1), 0.2401));
    let (rp, _) = rp_term(&[0.5; 4], &[0.5; 4]);
    checks.push(("R_P at 0.5", rp, ln2));
    let worst = checks.iter().map(|(_, a, e)| (a - e).abs()).fold(0.0, f64::max);
    let detail = checks
        .iter()
        .map(|(n, a, e)| format!("{n} {a:.9} vs {e:.9}"))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(worst < 1e-9, format!("max abs err {worst:.1e}; {detail}"))
}

// ---------------------------------------------------------------------------
// 3. Reduction identities

fn random_batch(r: &mut ChaCha8Rng, full: bool, negatives: bool) -> (Vec<TriStateLabelVector>, Array2<f64>) {
    let b = r.random_range(1..=4);
    let m = r.random_range(2..=6);
    let labels = (0..b)
        .map(|_| {
            let pos = r.random_range(0..m);
            let states = (0..m)
                .map(|c| {
                    if c == pos {
                        LabelState::Positive
                    } else if full {
                        if r.random_bool(0.2) {
                            LabelState::Positive
                        } else {
                            LabelState::Negative
                        }
                    } else if negatives && r.random_bool(0.3) {
                        LabelState::Negative
                    } else {
                        LabelState::Unknown
                    }
                })
                .collect();
            TriStateLabelVector::new(states)
        })
        .collect();
    let z = Array2::from_shape_fn((b, m), |_| r.random_range(-4.0..4.0));
    (labels, z)
}

/// Largest value/gradient difference of two specs over random batches.
fn identity_gap(a: &LossSpec, b: &LossSpec, epoch: usize, full: bool, negatives: bool, seed: u64) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (labels, z) = random_batch(&mut r, full, negatives);
        let ids: Vec<usize> = (0..labels.len()).collect();
        let ctx = BatchContext::from_logits(epoch, ids, labels, &z);
        let oa = spml_loss(a, &ctx, &mut LossState::default()).unwrap();
        let ob = spml_loss(b, &ctx, &mut LossState::default()).unwrap();
        worst = worst.max((oa.value - ob.value).abs());
        worst = worst.max((&oa.grad_z - &ob.grad_z).iter().fold(0.0, |acc: f64, v| acc.max(v.abs())));
    }
    worst
}

fn c3_reductions() -> Outcome {
    let an = LossSpec::new(LossKind::An);
    let mut gaps: Vec<(String, f64)> = Vec::new();
    let wan = LossSpec {
        gamma: 1.0,
        ..LossSpec::new(LossKind::Wan)
    };
    gaps.push(("WAN(gamma=1) = AN".into(), identity_gap(&wan, &an, 3, false, true, 1)));
    let ls = LossSpec {
        eps_ls: 0.0,
        ..LossSpec::new(LossKind::Ls)
    };
    gaps.push(("LS(eps=0) = AN".into(), identity_gap(&ls, &an, 3, false, false, 2)));
    for kind in [LossKind::LlR, LossKind::LlCt, LossKind::LlCp] {
        let ll = LossSpec {
            delta_rel: 40.0,
            ..LossSpec::new(kind)
        };
        gaps.push((format!("{kind} at epoch 1 = AN"), identity_gap(&ll, &an, 1, false, true, 3)));
    }
    let full = LossSpec::new(LossKind::BceFull);
    gaps.push(("AN = BCE-Full on full labels".into(), identity_gap(&an, &full, 2, true, false, 4)));
    let comb = LossSpec {
        a: 1,
        b: 1.0,
        ..LossSpec::new(LossKind::Wan)
    };
    gaps.push(("combinator a=1 b=1, no unknowns = BCE-Full".into(), identity_gap(&comb, &full, 2, true, false, 5)));
    for (name, gap) in &gaps {
        line(*gap < 1e-12, &format!("  [3] {name}"), &format!("max gap {gap:.1e}"));
    }
    let failed: Vec<&str> = gaps.iter().filter(|(_, g)| !(*g < 1e-12)).map(|(n, _)| n.as_str()).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            "all identities hold to 1e-12".to_string()
        } else {
            format!(
                "violated: {} (LS weights its terms by (1-eps)/2 and eps/2, so LS(0) = AN/2)",
                failed.join(", ")
            )
        },
    )
}

// ---------------------------------------------------------------------------
// 4. AP oracle

/// Brute force: enumerate every distinct score as a threshold, highest first.
fn brute_force_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let total = labels.iter().filter(|l| **l).count();
    if total == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l).count();
        let predicted = scores.iter().filter(|s| **s >= t).count();
        let recall = tp as f64 / total as f64;
        let precision = tp as f64 / predicted as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

fn c4_ap_oracle() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = r.random_range(1..=8);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..5) as f64 / 4.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        if average_precision(&scores, &labels) != brute_force_ap(&scores, &labels) {
            mismatches += 1;
        }
    }
    let labels = Array2::from_shape_fn((40, 6), |(i, c)| (i * 7 + c * 3) % 5 == 0);
    let scores = labels.mapv(|l| if l { 1.0 } else { 0.0 });
    let map = EvalReport::from_scores(&scores, &labels, true).unwrap().map;
    outcome(
        mismatches == 0 && map == 1.0,
        format!("{mismatches} mismatches over 1000 instances; oracle mAP = {map}"),
    )
}

// ---------------------------------------------------------------------------
// 5. EMA contraction

fn c5_ema() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for eps in [1e-2, 1e-3, 1e-4] {
        let m = 8;
        let y0: Vec<f64> = (0..m).map(|_| r.random_range(0.4..0.6)).collect();
        let p: Vec<f64> = (0..m).map(|_| r.random_range(0.0..1.0)).collect();
        let mut y = y0.clone();
        for t in 1..=2000 {
            ema_update(&mut y, &p, eps);
            if t % 100 == 0 {
                for c in 0..m {
                    let expect = (1.0 - eps).powi(t) * (y0[c] - p[c]).abs();
                    worst = worst.max(((y[c] - p[c]).abs() - expect).abs());
                }
            }
        }
    }
    outcome(worst < 1e-12, format!("max deviation from (1-eps)^T |y0 - p| is {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 6. Regime statistics

fn mean_negatives(ds: &Dataset) -> f64 {
    ds.clips.iter().map(|c| c.labels.counts().negative as f64).sum::<f64>() / ds.clips.len() as f64
}

fn c6_regimes() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;

    let (full, truth) = gen_synthetic_assets(&GeneratorConfig::for_classes(100)).unwrap();
    let target_only = apply_regime(&full, RegimeKind::TargetOnly).unwrap();
    let flat_full = gen_synthetic_flat(&FlatGeneratorConfig::default())
    .unwrap();
    let flat_to = sample_single_positive(&flat_full, 6).unwrap();
    let single = target_only
        .clips
        .iter()
        .chain(&flat_to.clips)
        .all(|c| c.labels.counts().positive == 1);
    ok &= single;
    notes.push(format!("(a) single positive: {single}"));

    for target in [0.45, 0.83] {
        let cfg = PriorSimConfig {
            target_known_negative_fraction: target,
            seed: 6,
            ..PriorSimConfig::default()
        };
        let provider = RandomProjection::new(flat_full.meta.d, cfg.context_dim, 6);
        match simulate_context_priors(&flat_to, &flat_full, &cfg, &provider) {
            Ok((ds, rep)) => {
                let total = (ds.clips.len() * ds.meta.m) as f64;
                let neg = ds.clips.iter().map(|c| c.labels.counts().negative).sum::<usize>() as f64;
                let wrong = ds
                    .clips
                    .iter()
                    .filter(|c| {
                        let f = &flat_full.clips[flat_full.clip_index(c.clip_id).unwrap()];
                        (0..ds.meta.m).any(|k| {
                            c.labels.get(k) == LabelState::Negative && f.labels.get(k) == LabelState::Positive
                        })
                    })
                    .count();
                let frac = neg / total;
                let hit = (frac - target).abs() <= 0.02 && wrong == 0;
                ok &= hit;
                notes.push(format!(
                    "(b) target {target}: achieved {frac:.4}, true positives marked negative {wrong}, reverted {}",
                    rep.reverted
                ));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("(b) target {target}: {e}"));
            }
        }
    }

    let geo = mean_negatives(&apply_regime(&full, RegimeKind::Geo).unwrap());
    let checklist = mean_negatives(&apply_regime(&full, RegimeKind::Checklist).unwrap());
    let counts = (37.0..=47.0).contains(&geo) && (74.0..=84.0).contains(&checklist);
    ok &= counts;
    notes.push(format!("(c) M=100 geo negatives {geo:.2}, checklist negatives {checklist:.2}"));

    let rate = truth.background_rate();
    ok &= (rate - 0.28).abs() <= 0.02;
    notes.push(format!("(d) background rate {rate:.4}"));

    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    notes.push(format!("{secs:.1}s"));
    outcome(ok, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 7–8. Directional reproduction on the synthetic benchmark

struct Bench {
    train_full: Dataset,
    val: Dataset,
    test: Dataset,
}

fn bench(seed: u64) -> Bench {
    let cfg = GeneratorConfig {
        assets: 200,
        seed,
        ..GeneratorConfig::for_classes(20)
    };
    let (full, _) = gen_synthetic_assets(&cfg).unwrap();
    let (train_full, val, test) = split_dataset(&full, (0.6, 0.2, 0.2), seed).unwrap();
    Bench { train_full, val, test }
}

fn test_map(cfg: &TrainConfig, train_set: &Dataset, b: &Bench) -> f64 {
    let out = train(cfg, train_set, Some(&b.val)).unwrap();
    evaluate(&out.best, &b.test, true).unwrap().map
}

fn run_config(loss: LossSpec, rp: bool, seed: u64) -> TrainConfig {
    TrainConfig {
        reg: if rp { RegConfig::rp_preset(loss.kind) } else { RegConfig::default() },
        loss,
        seed,
        model_seed: seed,
        ..TrainConfig::default()
    }
}

fn c7_regularization() -> Outcome {
    let start = Instant::now();
    let mut wins = [0usize; 2];
    let mut rows = Vec::new();
    for seed in 0..5 {
        let b = bench(seed);
        let train_set = apply_regime(&b.train_full, RegimeKind::TargetOnly).unwrap();
        let mut maps = Vec::new();
        for kind in [LossKind::An, LossKind::LlCt] {
            let loss = LossSpec::preset(&format!("l48-targetonly-{kind}")).unwrap();
            let base = test_map(&run_config(loss.clone(), false, seed), &train_set, &b);
            let reg = test_map(&run_config(loss, true, seed), &train_set, &b);
            maps.push((base, reg));
        }
        wins[0] += usize::from(maps[0].1 > maps[0].0);
        wins[1] += usize::from(maps[1].1 > maps[1].0);
        rows.push(format!(
            "s{seed} an {:.3}->{:.3} ll-ct {:.3}->{:.3}",
            maps[0].0, maps[0].1, maps[1].0, maps[1].1
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        wins[0] >= 4 && wins[1] >= 4 && secs < 600.0 * 5.0,
        format!(
            "R_P wins: an {}/5, ll-ct {}/5; {}; {secs:.1}s",
            wins[0],
            wins[1],
            rows.join(", ")
        ),
    )
}

/// Test mAP of one method under a regime. Prior regimes select the
/// combinator weights (a, b) on validation mAP.
fn regime_map(kind: LossKind, regime: RegimeKind, b: &Bench, seed: u64) -> f64 {
    let train_set = apply_regime(&b.train_full, regime).unwrap();
    let base = LossSpec::preset(&format!("l48-targetonly-{kind}")).unwrap();
    if regime == RegimeKind::TargetOnly {
        return test_map(&run_config(base, false, seed), &train_set, b);
    }
    let mut configs = Vec::new();
    for a in [0u8, 1] {
        for weight in [0.01, 0.05, 0.2, 0.5, 1.0] {
            let loss = LossSpec {
                a,
                b: weight,
                ..base.clone()
            };
            configs.push(run_config(loss, false, seed));
        }
    }
    let result = sweep(&configs, &train_set, &b.val).unwrap();
    evaluate(&result.outcomes[result.best_index].best, &b.test, true).unwrap().map
}

fn c8_regime_monotonicity() -> Outcome {
    let start = Instant::now();
    let regimes = [RegimeKind::TargetOnly, RegimeKind::Geo, RegimeKind::Checklist];
    let kinds = [LossKind::Wan, LossKind::Ls, LossKind::Em];
    let mut sums = [0.0; 3];
    for seed in 0..5 {
        let b = bench(seed);
        for (ri, &regime) in regimes.iter().enumerate() {
            for &kind in &kinds {
                sums[ri] += regime_map(kind, regime, &b, seed) / 15.0;
            }
        }
    }
    let [to, geo, cl] = sums;
    outcome(
        to <= geo && geo <= cl && cl > to,
        format!(
            "mean test mAP over wan/ls/em x 5 seeds: target-only {to:.4}, geo {geo:.4}, checklist {cl:.4}; {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Clip-labeling rule

/// Integer-millisecond statement of the rule: a box clipped to the clip is
/// dropped when it lasts more than 80 ms and sits entirely inside the first
/// or last 200 ms.
fn oracle_keeps(start_ms: i64, end_ms: i64, dur_ms: i64) -> bool {
    let e = end_ms.min(dur_ms);
    let s = start_ms.max(0);
    if e <= s {
        return false;
    }
    let dropped = e - s > 80 && (e <= 200 || s >= dur_ms - 200);
    !dropped
}

fn c9_clip_rule() -> Outcome {
    let mut disagreements = 0;
    let mut cases = 0;
    for dur_ms in [3000i64, 1000, 300] {
        let dur = dur_ms as f64 / 1000.0;
        let limit = dur_ms + 100;
        for s in (0..limit).step_by(5) {
            for e in (s + 5..=limit).step_by(5) {
                let bx = BoxAnnotation::new(1, s as f64 / 1000.0, e as f64 / 1000.0);
                let got = clip_labels_from_boxes(&[bx], dur, 3).unwrap().get(1) == LabelState::Positive;
                cases += 1;
                if got != oracle_keeps(s, e, dur_ms) {
                    disagreements += 1;
                }
            }
        }
    }
    outcome(disagreements == 0, format!("{disagreements} disagreements over {cases} boxes"))
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

fn spml(args: &[&str], cwd: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_spml"))
        .args(args)
        .current_dir(cwd)
        .stdout(std::process::Stdio::null())
        .status()
        .expect("spawn spml");
    assert!(status.success(), "spml {args:?} failed");
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    std::fs::write(dir.join("gen.json"), r#"{"generator": {"m": 8, "assets": 48, "d": 16}}"#).unwrap();
    spml(&["regime", "gen", "--config", "gen.json", "--out", "data", "--seed", "7"], dir);
    std::fs::write(dir.join("apply.json"), r#"{"inputs": ["data/train.json"], "regime": "checklist"}"#).unwrap();
    spml(&["regime", "apply", "--config", "apply.json", "--out", "checklist", "--seed", "7"], dir);
    std::fs::write(
        dir.join("exp.json"),
        r#"{"data": {"train": "checklist/train.json", "val": "data/val.json", "test": "data/test.json"},
            "model": {"hidden": [16]},
            "loss": {"preset": "l48-checklist-role"}, "reg": {"kind": "rp"}, "train": {"epochs": 3}}"#,
    )
    .unwrap();
    spml(&["train", "--config", "exp.json", "--out", "runs/exp", "--seed", "7"], dir);
    std::fs::write(
        dir.join("ll.json"),
        r#"{"data": {"generator": {"m": 8, "assets": 48, "d": 16}, "regime": "target-only"},
            "model": {"hidden": [16]}, "loss": {"kind": "ll-cp", "delta_rel": 20}, "train": {"epochs": 3}}"#,
    )
    .unwrap();
    spml(&["train", "--config", "ll.json", "--out", "runs/ll", "--seed", "3"], dir);
    [
        "data/train.json",
        "data/val.json",
        "data/test.json",
        "checklist/train.json",
        "runs/exp/metrics.csv",
        "runs/exp/checkpoint.json",
        "runs/exp/train_state.json",
        "runs/ll/metrics.csv",
        "runs/ll/checkpoint.json",
        "runs/ll/train_state.json",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
    .collect()
}

fn c10_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two invocations", first.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 gradient suite", c1_gradients),
        ("2 closed-form loss values", c2_closed_forms),
        ("3 reduction identities", c3_reductions),
        ("4 AP oracle equivalence", c4_ap_oracle),
        ("5 EMA contraction", c5_ema),
        ("6 regime statistics", c6_regimes),
        ("7 asset regularization direction", c7_regularization),
        ("8 regime monotonicity", c8_regime_monotonicity),
        ("9 clip-labeling rule", c9_clip_rule),
        ("10 CLI determinism", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        line(out.pass, &format!("criterion {name}"), &out.detail);
        failed += usize::from(!out.pass);
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
