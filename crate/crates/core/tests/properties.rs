use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spml_core::eval::average_precision;
use spml_core::labelspace::{
    clip_labels_from_boxes, manifest_from_str, manifest_to_string, split_dataset, BoxAnnotation, Dataset, LabelState,
    TriStateLabelVector,
};
use spml_core::losses::{
    ll_select_fraction, spml_loss, term_bce_neg, term_bce_pos, BatchContext, LossKind, LossSpec, LossState,
};
use spml_core::model::{backward, forward, mlp_init, ModelParams};
use spml_core::regimes::{
    apply_regime, gen_synthetic_assets, gen_synthetic_flat, sample_single_positive, simulate_context_priors,
    FlatGeneratorConfig, GeneratorConfig, PriorSimConfig, RandomProjection, RegimeKind,
};
use spml_core::regularizers::{ema_update, re_batch, rp_term};
use spml_core::trainer::{sweep_trials, TrainConfig};

fn small_assets(seed: u64) -> Dataset {
    let cfg = GeneratorConfig {
        assets: 24,
        d: 8,
        seed,
        ..GeneratorConfig::for_classes(8)
    };
    gen_synthetic_assets(&cfg).unwrap().0
}

fn boxes() -> impl Strategy<Value = Vec<BoxAnnotation>> {
    prop::collection::vec((0usize..4, 0.0f64..3.5, 0.001f64..2.0), 0..8)
        .prop_map(|v| v.into_iter().map(|(c, s, len)| BoxAnnotation::new(c, s, s + len)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clip_labels_ignore_box_order(bs in boxes(), dur in 0.3f64..3.0, seed in any::<u64>()) {
        let mut shuffled = bs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(
            clip_labels_from_boxes(&bs, dur, 4).unwrap(),
            clip_labels_from_boxes(&shuffled, dur, 4).unwrap()
        );
    }

    #[test]
    fn interior_box_is_positive(dur in 0.001f64..10.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assume!(dur > 0.4 + 1e-6);
        let lo = 0.2 + (dur - 0.4) * a.min(b);
        let hi = 0.2 + (dur - 0.4) * a.max(b);
        prop_assume!(hi > lo && lo > 0.2 && hi < dur - 0.2);
        let labels = clip_labels_from_boxes(&[BoxAnnotation::new(2, lo, hi)], dur, 3).unwrap();
        prop_assert_eq!(labels.get(2), LabelState::Positive);
    }

    #[test]
    fn label_counts_sum_to_m(bs in boxes(), dur in 0.3f64..3.0) {
        let c = clip_labels_from_boxes(&bs, dur, 4).unwrap().counts();
        prop_assert_eq!(c.positive + c.negative + c.unknown, 4);
    }

    #[test]
    fn ll_selection_is_nested(losses in prop::collection::vec(0.0f64..5.0, 1..30), f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
        let (lo, hi) = (f1.min(f2), f1.max(f2));
        let small = ll_select_fraction(&losses, lo);
        let large = ll_select_fraction(&losses, hi);
        prop_assert!(small.iter().zip(&large).all(|(s, l)| !s || *l));
    }

    #[test]
    fn ema_stays_in_hull(y0 in prop::collection::vec(0.0f64..1.0, 1..6), steps in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 1..40), eps in 0.0f64..1.0) {
        let m = y0.len();
        let mut y = y0.clone();
        let p_min = 1e-7;
        for p in &steps {
            let p: Vec<f64> = p[..m].iter().map(|v| v.clamp(p_min, 1.0 - p_min)).collect();
            ema_update(&mut y, &p, eps);
            for c in 0..m {
                prop_assert!(y[c] >= y0[c].min(p_min) - 1e-15 && y[c] <= y0[c].max(1.0 - p_min) + 1e-15);
            }
        }
    }

    #[test]
    fn ap_invariant_under_monotone_maps(raw in prop::collection::vec((0i32..6, any::<bool>()), 1..20)) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
        let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
        let base = average_precision(&scores, &labels);
        for f in [|s: f64| 3.0 * s - 7.0, |s: f64| s.powi(3), |s: f64| (0.5 * s).exp(), |s: f64| 1.0 / (1.0 + (-s).exp())] {
            let mapped: Vec<f64> = scores.iter().map(|s| f(*s)).collect();
            prop_assert_eq!(average_precision(&mapped, &labels), base);
        }
        if let Some(ap) = base {
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }

    #[test]
    fn rp_term_class_permutation(pairs in prop::collection::vec((0.001f64..0.999, 0.001f64..0.999), 1..10), seed in any::<u64>()) {
        let (p, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let (a, ga) = rp_term(&p, &y);
        let (b, gb) = rp_term(&pp, &yp);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        for (k, &i) in idx.iter().enumerate() {
            prop_assert_eq!(gb[k], ga[i]);
        }
    }

    #[test]
    fn bce_terms_mirror(p in 1e-6f64..(1.0 - 1e-6)) {
        let (vp, gp) = term_bce_pos(p);
        let (vn, gn) = term_bce_neg(1.0 - p);
        prop_assert!((vp - vn).abs() <= 1e-9 * vp.abs().max(1.0));
        prop_assert!((gp + gn).abs() <= 1e-6 * gp.abs().max(1.0));
    }

    #[test]
    fn em_unknown_term_is_scaled_entropy(p in 1e-3f64..(1.0 - 1e-3), alpha in 0.01f64..2.0) {
        let spec = LossSpec { alpha_em: alpha, ..LossSpec::new(LossKind::Em) };
        let mut row = TriStateLabelVector::unknown(2);
        row.set(0, LabelState::Positive);
        let labels = vec![row];
        let probs = Array2::from_shape_vec((1, 2), vec![0.5, p]).unwrap();
        let v = spml_loss(&spec, &BatchContext::new(1, vec![0], labels, probs), &mut LossState::default()).unwrap().value;
        let entropy = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        let unknown = 2.0 * v - std::f64::consts::LN_2;
        prop_assert!((unknown + alpha * entropy).abs() < 1e-12, "{} vs {}", unknown, -alpha * entropy);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn regimes_nest_and_never_contradict_truth(seed in 0u64..1000) {
        let full = small_assets(seed);
        let to = apply_regime(&full, RegimeKind::TargetOnly).unwrap();
        let geo = apply_regime(&full, RegimeKind::Geo).unwrap();
        let cl = apply_regime(&full, RegimeKind::Checklist).unwrap();
        for i in 0..full.clips.len() {
            for k in 0..full.meta.m {
                let states = [to.clips[i].labels.get(k), geo.clips[i].labels.get(k), cl.clips[i].labels.get(k)];
                let positive = states.map(|s| s == LabelState::Positive);
                prop_assert!(positive[0] == positive[1] && positive[1] == positive[2]);
                let negative = states.map(|s| s == LabelState::Negative);
                prop_assert!(!negative[0] || negative[1]);
                prop_assert!(!negative[1] || negative[2]);
                if full.clips[i].labels.get(k) == LabelState::Positive {
                    prop_assert!(!negative[2]);
                }
            }
        }
    }

    #[test]
    fn target_only_keeps_exactly_target_clips(seed in 0u64..1000) {
        let full = small_assets(seed);
        let to = apply_regime(&full, RegimeKind::TargetOnly).unwrap();
        for clip in &to.clips {
            let target = to.asset_of(clip).target_class;
            let expected: BTreeSet<usize> =
                if full.clips[full.clip_index(clip.clip_id).unwrap()].labels.get(target) == LabelState::Positive {
                    [target].into()
                } else {
                    BTreeSet::new()
                };
            prop_assert_eq!(clip.labels.positives().collect::<BTreeSet<_>>(), expected);
        }
    }

    #[test]
    fn split_is_partition(seed in 0u64..1000) {
        let full = small_assets(seed);
        let (a, b, c) = split_dataset(&full, (0.6, 0.2, 0.2), seed).unwrap();
        let mut seen = BTreeSet::new();
        for part in [&a, &b, &c] {
            for asset in &part.assets {
                prop_assert!(seen.insert(asset.asset_id));
            }
            for clip in &part.clips {
                prop_assert!(part.asset_index(clip.asset_id).is_some());
            }
        }
        prop_assert_eq!(seen, full.assets.iter().map(|x| x.asset_id).collect::<BTreeSet<_>>());
        prop_assert_eq!(a.clips.len() + b.clips.len() + c.clips.len(), full.clips.len());
    }

    #[test]
    fn manifest_round_trip(seed in 0u64..1000) {
        let full = small_assets(seed);
        let ds = apply_regime(&full, RegimeKind::Checklist).unwrap();
        let text = manifest_to_string(&ds);
        let back = manifest_from_str(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(manifest_to_string(&back), text);
    }

    #[test]
    fn generators_are_seed_deterministic(seed in 0u64..1000) {
        prop_assert_eq!(manifest_to_string(&small_assets(seed)), manifest_to_string(&small_assets(seed)));
        let flat = FlatGeneratorConfig { examples: 40, seed, ..FlatGeneratorConfig::default() };
        let a = sample_single_positive(&gen_synthetic_flat(&flat).unwrap(), seed).unwrap();
        let b = sample_single_positive(&gen_synthetic_flat(&flat).unwrap(), seed).unwrap();
        prop_assert_eq!(manifest_to_string(&a), manifest_to_string(&b));
    }
}

/// With an overwhelming ridge penalty every class scores its fit-set base
/// rate, so the threshold admits whole classes in base-rate order.
#[test]
fn context_prior_ridge_limit_orders_by_base_rate() {
    let full = gen_synthetic_flat(&FlatGeneratorConfig::default()).unwrap();
    let to = sample_single_positive(&full, 1).unwrap();
    let (n, m) = (full.clips.len(), full.meta.m);
    let prevalence: Vec<usize> = (0..m)
        .map(|k| full.clips.iter().filter(|c| c.labels.get(k) == LabelState::Positive).count())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by_key(|&k| prevalence[k]);
    // First cut of at least 0.3 that falls between distinct base rates.
    let mut cum = 0;
    let mut cut = 0;
    for (i, &k) in order.iter().enumerate() {
        cum += n - prevalence[k];
        if cum as f64 / (n * m) as f64 >= 0.3 && i + 1 < m && prevalence[order[i + 1]] > prevalence[k] {
            cut = i + 1;
            break;
        }
    }
    assert!(cut > 0);
    let target = cum as f64 / (n * m) as f64;
    let cfg = PriorSimConfig {
        target_known_negative_fraction: target,
        fit_fraction: 1.0,
        ridge_lambda: 1e15,
        tolerance: 1e-9,
        ..PriorSimConfig::default()
    };
    let provider = RandomProjection::new(full.meta.d, cfg.context_dim, 0);
    let (ds, _) = simulate_context_priors(&to, &full, &cfg, &provider).unwrap();
    let negative_classes: BTreeSet<usize> = order[..cut].iter().copied().collect();
    for (clip, truth) in ds.clips.iter().zip(&full.clips) {
        for k in 0..m {
            let expect_negative = negative_classes.contains(&k) && truth.labels.get(k) != LabelState::Positive;
            assert_eq!(clip.labels.get(k) == LabelState::Negative, expect_negative, "clip {} class {k}", clip.clip_id);
        }
    }
}

fn model_objective(params: &ModelParams, x: &Array2<f64>, labels: &[TriStateLabelVector], d_bar: &Array2<f64>) -> f64 {
    let trace = forward(params, x).unwrap();
    let ctx = BatchContext::from_logits(2, (0..x.nrows()).collect(), labels.to_vec(), &trace.logits);
    let spec = LossSpec::new(LossKind::An);
    let base = spml_loss(&spec, &ctx, &mut LossState::default()).unwrap().value;
    base + 0.5 * re_batch(&trace.embedding, d_bar).unwrap().0
}

#[test]
fn model_gradient_matches_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut params = mlp_init(&[5, 7, 4], 3).unwrap();
    let x = Array2::from_shape_fn((3, 5), |_| r.random_range(-1.0..1.0));
    let labels: Vec<_> = (0..3)
        .map(|i| TriStateLabelVector::from_positives(4, [i % 4]))
        .collect();
    let d_bar = Array2::from_shape_fn((3, 7), |_| r.random_range(0.0..1.0));

    let trace = forward(&params, &x).unwrap();
    let ctx = BatchContext::from_logits(2, vec![0, 1, 2], labels.clone(), &trace.logits);
    let out = spml_loss(&LossSpec::new(LossKind::An), &ctx, &mut LossState::default()).unwrap();
    let (_, g_emb) = re_batch(&trace.embedding, &d_bar).unwrap();
    let grads = backward(&params, &trace, &out.grad_z, Some(&(g_emb * 0.5))).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for l in 0..params.layers.len() {
        let (rows, cols) = params.layers[l].weights.dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = params.layers[l].weights[[i, j]];
                params.layers[l].weights[[i, j]] = orig + h;
                let up = model_objective(&params, &x, &labels, &d_bar);
                params.layers[l].weights[[i, j]] = orig - h;
                let down = model_objective(&params, &x, &labels, &d_bar);
                params.layers[l].weights[[i, j]] = orig;
                let num = (up - down) / (2.0 * h);
                let ana = grads[l].weights[[i, j]];
                worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(1e-6));
            }
            if i == 0 {
                for j in 0..cols {
                    let orig = params.layers[l].biases[j];
                    params.layers[l].biases[j] = orig + h;
                    let up = model_objective(&params, &x, &labels, &d_bar);
                    params.layers[l].biases[j] = orig - h;
                    let down = model_objective(&params, &x, &labels, &d_bar);
                    params.layers[l].biases[j] = orig;
                    let num = (up - down) / (2.0 * h);
                    let ana = grads[l].biases[j];
                    worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(1e-6));
                }
            }
        }
    }
    assert!(worst < 1e-6, "max relative error {worst:e}");
}

/// One configuration sees real labels, the rest see labels shuffled across
/// clips; selection must find the real one.
#[test]
fn sweep_selects_planted_configuration() {
    let mut hits = 0;
    for seed in 0..5u64 {
        let cfg = GeneratorConfig {
            assets: 120,
            seed,
            ..GeneratorConfig::for_classes(10)
        };
        let (full, _) = gen_synthetic_assets(&cfg).unwrap();
        let (train_set, val, _) = split_dataset(&full, (0.6, 0.2, 0.2), seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let planted = r.random_range(0..4);
        let sets: Vec<Dataset> = (0..4)
            .map(|i| {
                if i == planted {
                    return train_set.clone();
                }
                let mut labels: Vec<_> = train_set.clips.iter().map(|c| c.labels.clone()).collect();
                labels.shuffle(&mut r);
                let mut ds = train_set.clone();
                for (clip, l) in ds.clips.iter_mut().zip(labels) {
                    clip.labels = l;
                }
                ds
            })
            .collect();
        let configs: Vec<TrainConfig> = (0..4)
            .map(|i| TrainConfig {
                loss: LossSpec::new(LossKind::BceFull),
                epochs: 5,
                seed: seed * 10 + i,
                model_seed: seed * 10 + i,
                ..TrainConfig::default()
            })
            .collect();
        let trials: Vec<_> = configs.iter().zip(&sets).collect();
        let result = sweep_trials(&trials, &val).unwrap();
        hits += usize::from(result.best_index == planted);
    }
    assert!(hits >= 4, "planted configuration selected in {hits}/5 seeds");
}
