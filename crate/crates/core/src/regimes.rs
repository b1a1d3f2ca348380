//! Label regimes (full, target-only, geo prior, checklist prior), the
//! context-prior simulator for flat datasets, and the synthetic benchmark
//! generators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{AssetRecord, ClipRecord, Dataset, DatasetMeta, LabelState, TriStateLabelVector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeKind {
    Full,
    TargetOnly,
    Geo,
    Checklist,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 4] = [
        RegimeKind::Full,
        RegimeKind::TargetOnly,
        RegimeKind::Geo,
        RegimeKind::Checklist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Full => "full",
            RegimeKind::TargetOnly => "target-only",
            RegimeKind::Geo => "geo",
            RegimeKind::Checklist => "checklist",
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('-', "_") == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?} (expected full, target-only, geo, checklist)")))
    }
}

/// Keeps clips whose asset's target class is present and relabels them
/// target-Positive, everything else Unknown.
pub fn make_target_only(ds: &Dataset) -> Result<Dataset> {
    let m = ds.meta.m;
    let clips: Vec<ClipRecord> = ds
        .clips
        .iter()
        .filter_map(|c| {
            let target = ds.asset_of(c).target_class;
            (c.labels.get(target) == LabelState::Positive).then(|| {
                let mut labels = TriStateLabelVector::unknown(m);
                labels.set(target, LabelState::Positive);
                ClipRecord { labels, ..c.clone() }
            })
        })
        .collect();
    let mut out = ds.with_clips(clips)?;
    out.meta.regime = Some(RegimeKind::TargetOnly.to_string());
    Ok(out)
}

/// Flat (asset-free) variant: each example keeps one positive drawn uniformly
/// from its positives. Examples with no positive are dropped. The asset's
/// `target_class` is set to the sampled class.
pub fn sample_single_positive(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let m = ds.meta.m;
    let mut targets: BTreeMap<u64, usize> = BTreeMap::new();
    let mut clips = Vec::with_capacity(ds.clips.len());
    for c in &ds.clips {
        let positives: Vec<usize> = c.labels.positives().collect();
        if positives.is_empty() {
            continue;
        }
        let mut r = rng::stream(seed, rng::STREAM_TARGET_ONLY ^ rng::mix64(c.clip_id));
        let chosen = *positives.choose(&mut r).expect("nonempty");
        let mut labels = TriStateLabelVector::unknown(m);
        labels.set(chosen, LabelState::Positive);
        targets.insert(c.asset_id, chosen);
        clips.push(ClipRecord { labels, ..c.clone() });
    }
    let mut out = ds.with_clips(clips)?;
    for a in &mut out.assets {
        if let Some(&t) = targets.get(&a.asset_id) {
            a.target_class = t;
            a.possible_mask[t] = true;
        }
    }
    out.meta.regime = Some(RegimeKind::TargetOnly.to_string());
    out.validate()?;
    Ok(out)
}

fn apply_mask_prior(ds: &Dataset, kind: RegimeKind, allowed: impl Fn(&AssetRecord, usize) -> bool) -> Result<Dataset> {
    let mut out = ds.clone();
    for clip in &mut out.clips {
        let asset = ds.asset_of(clip);
        if !allowed(asset, asset.target_class) {
            return Err(Error::Metadata(format!(
                "asset {}: target class {} is excluded by the {kind} prior",
                asset.asset_id, asset.target_class
            )));
        }
        for c in 0..ds.meta.m {
            if !allowed(asset, c) && clip.labels.get(c) != LabelState::Positive {
                clip.labels.set(c, LabelState::Negative);
            }
        }
    }
    out.meta.regime = Some(kind.to_string());
    Ok(out)
}

/// Classes outside the asset's possible set become Negative.
pub fn apply_geo_prior(ds: &Dataset) -> Result<Dataset> {
    apply_mask_prior(ds, RegimeKind::Geo, |a, c| a.possible_mask[c])
}

/// Classes outside (observed ∧ possible) become Negative.
pub fn apply_checklist_prior(ds: &Dataset) -> Result<Dataset> {
    apply_mask_prior(ds, RegimeKind::Checklist, |a, c| a.observed_mask[c] && a.possible_mask[c])
}

/// Builds a regime from fully labeled asset data.
pub fn apply_regime(full: &Dataset, kind: RegimeKind) -> Result<Dataset> {
    match kind {
        RegimeKind::Full => {
            let mut out = full.clone();
            out.meta.regime = Some(kind.to_string());
            Ok(out)
        }
        RegimeKind::TargetOnly => make_target_only(full),
        RegimeKind::Geo => apply_geo_prior(&make_target_only(full)?),
        RegimeKind::Checklist => apply_checklist_prior(&make_target_only(full)?),
    }
}

// ---------------------------------------------------------------------------
// Context-prior simulation

/// Maps an example to a context vector (scene descriptor).
pub trait ContextProvider {
    fn dim(&self) -> usize;
    fn context(&self, clip: &ClipRecord) -> Vec<f64>;
}

/// Seeded Gaussian random projection of the feature vector.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    proj: Array2<f64>,
}

impl RandomProjection {
    pub fn new(input_dim: usize, context_dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::STREAM_CONTEXT_PROJ);
        let scale = 1.0 / (context_dim as f64).sqrt();
        let proj = Array2::from_shape_fn((input_dim, context_dim), |_| {
            let z: f64 = StandardNormal.sample(&mut r);
            z * scale
        });
        Self { proj }
    }
}

impl ContextProvider for RandomProjection {
    fn dim(&self) -> usize {
        self.proj.ncols()
    }

    fn context(&self, clip: &ClipRecord) -> Vec<f64> {
        let x = Array1::from(clip.features.clone());
        x.dot(&self.proj).to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSimConfig {
    pub target_known_negative_fraction: f64,
    pub fit_fraction: f64,
    pub context_dim: usize,
    pub ridge_lambda: f64,
    /// Allowed deviation of the achieved fraction from the target.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for PriorSimConfig {
    fn default() -> Self {
        Self {
            target_known_negative_fraction: 0.45,
            fit_fraction: 0.10,
            context_dim: 16,
            ridge_lambda: 1.0,
            tolerance: 0.02,
            seed: 0,
        }
    }
}

impl PriorSimConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.target_known_negative_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("target_known_negative_fraction must be in (0, 1), got {f}")));
        }
        if !(self.fit_fraction > 0.0 && self.fit_fraction <= 1.0) {
            return Err(Error::Config(format!("fit_fraction must be in (0, 1], got {}", self.fit_fraction)));
        }
        if self.context_dim == 0 || !(self.ridge_lambda >= 0.0) {
            return Err(Error::Config("context_dim must be >= 1 and ridge_lambda >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorSimReport {
    pub threshold: f64,
    pub achieved_fraction: f64,
    pub reverted: usize,
    pub fit_examples: usize,
}

/// Ridge regression with an unpenalized intercept. Returns (weights K×M, bias M).
pub fn ridge_fit(x: &Array2<f64>, y: &Array2<f64>, lambda: f64) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = x.nrows();
    if n == 0 || y.nrows() != n {
        return Err(Error::Dimension(format!("ridge fit on {n} rows with {} targets", y.nrows())));
    }
    let x_mean = x.mean_axis(Axis(0)).expect("nonempty");
    let y_mean = y.mean_axis(Axis(0)).expect("nonempty");
    let xc = x - &x_mean;
    let yc = y - &y_mean;
    let k = x.ncols();
    let mut gram = xc.t().dot(&xc);
    for i in 0..k {
        gram[[i, i]] += lambda;
    }
    let rhs = xc.t().dot(&yc);
    let w = cholesky_solve(&gram, &rhs)?;
    let b = &y_mean - &x_mean.dot(&w);
    Ok((w, b))
}

/// Solves `A X = B` for symmetric positive definite `A`.
fn cholesky_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Calibration(
                        "context Gram matrix is singular; use ridge_lambda > 0".into(),
                    ));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    let mut x = b.clone();
    for col in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[[i, col]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = x[[i, col]];
            for k in i + 1..n {
                s -= l[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
    }
    Ok(x)
}

/// Adds context-derived negatives to a flat target-only dataset.
///
/// A ridge model from context vectors to the hidden full labels is fit on a
/// seeded `fit_fraction` subset and scores every (example, class). A single
/// global threshold is bisected so that the share of Negative entries over all
/// pairs matches the target; low-scoring entries that are truly positive are
/// reverted to Unknown, so no true positive is ever marked Negative.
pub fn simulate_context_priors(
    target_only: &Dataset,
    full_labels: &Dataset,
    cfg: &PriorSimConfig,
    provider: &dyn ContextProvider,
) -> Result<(Dataset, PriorSimReport)> {
    cfg.validate()?;
    let m = target_only.meta.m;
    let n = target_only.clips.len();
    if n == 0 {
        return Err(Error::Config("context prior simulation needs a nonempty dataset".into()));
    }
    let truth: Vec<&TriStateLabelVector> = target_only
        .clips
        .iter()
        .map(|c| {
            full_labels
                .clip_index(c.clip_id)
                .map(|i| &full_labels.clips[i].labels)
                .ok_or_else(|| Error::DanglingReference(format!("clip {} has no hidden full labels", c.clip_id)))
        })
        .collect::<Result<_>>()?;

    let k = provider.dim();
    let mut ctx = Array2::<f64>::zeros((n, k));
    for (i, c) in target_only.clips.iter().enumerate() {
        let v = provider.context(c);
        if v.len() != k {
            return Err(Error::Dimension(format!("context provider returned {} values, expected {k}", v.len())));
        }
        ctx.row_mut(i).assign(&Array1::from(v));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(cfg.seed, rng::STREAM_CONTEXT_FIT));
    let n_fit = ((cfg.fit_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut fit_rows = order[..n_fit].to_vec();
    fit_rows.sort_unstable();
    let x_fit = ctx.select(Axis(0), &fit_rows);
    let y_fit = Array2::from_shape_fn((n_fit, m), |(r, c)| {
        f64::from(truth[fit_rows[r]].get(c) == LabelState::Positive)
    });
    let (w, b) = ridge_fit(&x_fit, &y_fit, cfg.ridge_lambda)?;
    let scores = ctx.dot(&w) + &b;

    // Only unknown, truly negative entries can become Negative; everything
    // else below the threshold is the "reverted" set.
    let mut candidates: Vec<f64> = Vec::new();
    let mut existing_negatives = 0usize;
    for (i, c) in target_only.clips.iter().enumerate() {
        for class in 0..m {
            match c.labels.get(class) {
                LabelState::Negative => existing_negatives += 1,
                LabelState::Unknown if truth[i].get(class) != LabelState::Positive => {
                    candidates.push(scores[[i, class]])
                }
                _ => {}
            }
        }
    }
    candidates.sort_by(f64::total_cmp);
    let total = (n * m) as f64;
    let fraction_at = |tau: f64| {
        let below = candidates.partition_point(|&s| s < tau);
        (existing_negatives + below) as f64 / total
    };

    let target = cfg.target_known_negative_fraction;
    let (lo_score, hi_score) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let mut lo = lo_score - 1.0;
    let mut hi = hi_score + 1.0;
    if fraction_at(lo) > target + cfg.tolerance || fraction_at(hi) < target - cfg.tolerance {
        return Err(Error::Calibration(format!(
            "target fraction {target} outside attainable range [{:.4}, {:.4}]",
            fraction_at(lo),
            fraction_at(hi)
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fraction_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let threshold = if (fraction_at(lo) - target).abs() <= (fraction_at(hi) - target).abs() {
        lo
    } else {
        hi
    };
    let achieved = fraction_at(threshold);
    if (achieved - target).abs() > cfg.tolerance {
        return Err(Error::Calibration(format!(
            "could not bracket target fraction {target}: closest achievable is {achieved:.4} (degenerate scores)"
        )));
    }

    let mut out = target_only.clone();
    let mut reverted = 0;
    for (i, clip) in out.clips.iter_mut().enumerate() {
        for class in 0..m {
            if clip.labels.get(class) != LabelState::Unknown || scores[[i, class]] >= threshold {
                continue;
            }
            if truth[i].get(class) == LabelState::Positive {
                reverted += 1;
            } else {
                clip.labels.set(class, LabelState::Negative);
            }
        }
    }
    out.meta.regime = Some(format!("context-{target:.2}"));
    Ok((
        out,
        PriorSimReport {
            threshold,
            achieved_fraction: achieved,
            reverted,
            fit_examples: n_fit,
        },
    ))
}

// ---------------------------------------------------------------------------
// Synthetic benchmark generation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Class count.
    pub m: usize,
    /// Asset count; target classes are assigned round-robin.
    pub assets: usize,
    /// Inclusive range of clips per asset.
    pub clips_per_asset: (usize, usize),
    /// Feature dimension.
    pub d: usize,
    /// Per-clip presence probability of each background species in an asset.
    pub p_bg: f64,
    /// Size of the background community drawn for each asset.
    pub background_species: usize,
    pub confusable_pairs: usize,
    /// Distance between the prototypes of a confusable pair.
    pub confusable_offset: f64,
    pub regions: usize,
    pub species_per_region: usize,
    /// Mean number of non-vocalizing species added to each checklist.
    pub checklist_extra: usize,
    /// Probability that a checklist also lists one out-of-range species.
    pub vagrant_prob: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::for_classes(100)
    }
}

impl GeneratorConfig {
    /// Defaults scaled to `m` classes (calibrated at `m = 100`: 42 impossible
    /// classes per asset and about 21 checklist species). Every class has a
    /// confusable partner and every asset a five-species background community.
    pub fn for_classes(m: usize) -> Self {
        let scaled = |frac: f64, min: usize| ((frac * m as f64).round() as usize).max(min);
        Self {
            m,
            assets: 10 * m,
            clips_per_asset: (4, 8),
            d: 64,
            p_bg: 0.28,
            background_species: 5.min(m.saturating_sub(1)),
            confusable_pairs: m / 2,
            confusable_offset: 0.4,
            regions: 8,
            species_per_region: scaled(0.58, 2).min(m),
            checklist_extra: scaled(0.15, 1),
            vagrant_prob: 0.1,
            noise_sigma: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m < 2 {
            return bad(format!("m must be >= 2, got {}", self.m));
        }
        if !(0.0..=1.0).contains(&self.p_bg) {
            return bad(format!("p_bg must be in [0, 1], got {}", self.p_bg));
        }
        if self.species_per_region == 0 {
            return Err(Error::Metadata("region with zero species".into()));
        }
        if self.species_per_region > self.m {
            return bad(format!(
                "species_per_region ({}) exceeds m ({})",
                self.species_per_region, self.m
            ));
        }
        if self.confusable_pairs * 2 > self.m {
            return bad(format!("confusable_pairs ({}) exceeds m/2", self.confusable_pairs));
        }
        if self.regions == 0 || self.d == 0 || self.assets == 0 {
            return bad("regions, d and assets must be >= 1".into());
        }
        let (lo, hi) = self.clips_per_asset;
        if lo == 0 || lo > hi {
            return bad(format!("clips_per_asset range ({lo}, {hi}) is invalid"));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.vagrant_prob) {
            return bad("noise_sigma must be >= 0 and vagrant_prob in [0, 1]".into());
        }
        Ok(())
    }
}

/// Generator internals kept alongside the labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorTruth {
    pub prototypes: Vec<Vec<f64>>,
    /// Species list per region.
    pub regions: Vec<Vec<usize>>,
    /// Confusable (a, b) class pairs.
    pub confusable: Vec<(usize, usize)>,
    /// Background community per asset id.
    pub communities: BTreeMap<u64, Vec<usize>>,
    /// (species, clip) background opportunities and how many were present.
    pub background_opportunities: usize,
    pub background_presences: usize,
}

impl GeneratorTruth {
    pub fn background_rate(&self) -> f64 {
        self.background_presences as f64 / self.background_opportunities.max(1) as f64
    }
}

fn unit_gaussian(d: usize, r: &mut impl Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *r)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn build_regions(cfg: &GeneratorConfig, r: &mut impl Rng) -> Vec<Vec<usize>> {
    let m = cfg.m;
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(r);
    let step = m.div_ceil(cfg.regions);
    (0..cfg.regions)
        .map(|reg| {
            let mut species: Vec<usize> = (0..cfg.species_per_region)
                .map(|j| perm[(reg * step + j) % m])
                .collect();
            species.sort_unstable();
            species.dedup();
            species
        })
        .collect()
}

/// Pairs classes greedily in random order, preferring partners that share no
/// region and falling back to the least overlapping one.
fn pick_confusable_pairs(n: usize, regions_of: &[Vec<usize>], r: &mut impl Rng) -> Vec<(usize, usize)> {
    let m = regions_of.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(r);
    let mut used = vec![false; m];
    let mut pairs = Vec::with_capacity(n);
    for (i, &a) in order.iter().enumerate() {
        if pairs.len() == n {
            break;
        }
        if used[a] {
            continue;
        }
        let partner = order[i + 1..]
            .iter()
            .copied()
            .filter(|&b| !used[b])
            .min_by_key(|&b| regions_of[b].iter().filter(|reg| regions_of[a].contains(reg)).count());
        if let Some(b) = partner {
            used[a] = true;
            used[b] = true;
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Generates a fully labeled asset-structured dataset.
///
/// Each class gets a region membership and a unit prototype (confusable pairs,
/// preferably from disjoint regions, share a prototype up to
/// `confusable_offset`). Every asset has one target
/// class present in all its clips plus a background community whose members
/// appear in each clip independently with probability `p_bg`. Clip features
/// are the sum of present prototypes plus Gaussian noise.
pub fn gen_synthetic_assets(cfg: &GeneratorConfig) -> Result<(Dataset, GeneratorTruth)> {
    cfg.validate()?;
    let m = cfg.m;
    let mut r = rng::stream(cfg.seed, rng::STREAM_GEN_CLASSES);

    let mut prototypes: Vec<Vec<f64>> = (0..m).map(|_| unit_gaussian(cfg.d, &mut r)).collect();
    let regions = build_regions(cfg, &mut r);
    if regions.iter().any(Vec::is_empty) {
        return Err(Error::Metadata("region with zero species".into()));
    }
    let mut regions_of: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (reg, species) in regions.iter().enumerate() {
        for &s in species {
            regions_of[s].push(reg);
        }
    }

    let confusable = pick_confusable_pairs(cfg.confusable_pairs, &regions_of, &mut r);
    for &(a, b) in &confusable {
        let dir = unit_gaussian(cfg.d, &mut r);
        prototypes[b] = prototypes[a]
            .iter()
            .zip(&dir)
            .map(|(p, u)| p + cfg.confusable_offset * u)
            .collect();
    }

    let mut assets = Vec::with_capacity(cfg.assets);
    let mut clips = Vec::new();
    let mut communities = BTreeMap::new();
    let mut opportunities = 0;
    let mut presences = 0;
    let mut next_clip_id = 0u64;
    for a in 0..cfg.assets {
        let asset_id = a as u64;
        let mut ar = rng::stream(cfg.seed, rng::STREAM_GEN_ASSET ^ rng::mix64(asset_id));
        let target = a % m;
        // A class outside every region keeps a region of its own: itself only.
        let region: Vec<usize> = match regions_of[target].choose(&mut ar) {
            Some(&reg) => regions[reg].clone(),
            None => vec![target],
        };
        let pool: Vec<usize> = region.iter().copied().filter(|&s| s != target).collect();
        let mut community: Vec<usize> = pool
            .choose_multiple(&mut ar, cfg.background_species.min(pool.len()))
            .copied()
            .collect();
        community.sort_unstable();

        let mut possible = vec![false; m];
        region.iter().for_each(|&s| possible[s] = true);
        let mut observed = vec![false; m];
        observed[target] = true;
        community.iter().for_each(|&s| observed[s] = true);
        let rest: Vec<usize> = pool.iter().copied().filter(|s| !observed[*s]).collect();
        let spread = (cfg.checklist_extra / 4).min(cfg.checklist_extra);
        let n_extra = ar.random_range(cfg.checklist_extra - spread..=cfg.checklist_extra + spread);
        for &s in rest.choose_multiple(&mut ar, n_extra.min(rest.len())) {
            observed[s] = true;
        }
        if ar.random_bool(cfg.vagrant_prob) {
            let outside: Vec<usize> = (0..m).filter(|&s| !possible[s]).collect();
            if let Some(&s) = outside.choose(&mut ar) {
                observed[s] = true;
            }
        }

        let n_clips = ar.random_range(cfg.clips_per_asset.0..=cfg.clips_per_asset.1);
        for j in 0..n_clips {
            let mut present = vec![target];
            for &s in &community {
                opportunities += 1;
                if ar.random_bool(cfg.p_bg) {
                    presences += 1;
                    present.push(s);
                }
            }
            let mut features = vec![0.0; cfg.d];
            for &s in &present {
                features.iter_mut().zip(&prototypes[s]).for_each(|(f, p)| *f += p);
            }
            if cfg.noise_sigma > 0.0 {
                for f in &mut features {
                    let z: f64 = StandardNormal.sample(&mut ar);
                    *f += cfg.noise_sigma * z;
                }
            }
            clips.push(ClipRecord {
                clip_id: next_clip_id,
                asset_id,
                order_index: j as u32,
                features,
                labels: TriStateLabelVector::from_positives(m, present),
            });
            next_clip_id += 1;
        }
        communities.insert(asset_id, community);
        assets.push(AssetRecord {
            asset_id,
            target_class: target,
            possible_mask: possible,
            observed_mask: observed,
            clip_ids: Vec::new(),
        });
    }
    let mut meta = DatasetMeta::new(m, cfg.d);
    meta.regime = Some(RegimeKind::Full.to_string());
    let ds = Dataset::new(meta, assets, clips)?;
    Ok((
        ds,
        GeneratorTruth {
            prototypes,
            regions,
            confusable,
            communities,
            background_opportunities: opportunities,
            background_presences: presences,
        },
    ))
}

/// Flat multi-label generator (one example per asset), the counterpart of
/// an image dataset with several objects per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatGeneratorConfig {
    pub m: usize,
    pub examples: usize,
    pub d: usize,
    /// Number of latent scenes; each scene favors a subset of classes.
    pub scenes: usize,
    pub classes_per_scene: usize,
    /// Inclusive range of positives per example.
    pub positives: (usize, usize),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for FlatGeneratorConfig {
    fn default() -> Self {
        Self {
            m: 20,
            examples: 500,
            d: 32,
            scenes: 5,
            classes_per_scene: 6,
            positives: (1, 4),
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

pub fn gen_synthetic_flat(cfg: &FlatGeneratorConfig) -> Result<Dataset> {
    let m = cfg.m;
    if m < 2 || cfg.scenes == 0 || cfg.classes_per_scene == 0 || cfg.classes_per_scene > m {
        return Err(Error::Config("flat generator needs m >= 2 and 1 <= classes_per_scene <= m".into()));
    }
    let (lo, hi) = cfg.positives;
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("positives range ({lo}, {hi}) is invalid")));
    }
    let mut r = rng::stream(cfg.seed, rng::STREAM_GEN_CLASSES);
    let prototypes: Vec<Vec<f64>> = (0..m).map(|_| unit_gaussian(cfg.d, &mut r)).collect();
    // Deal a shuffled class list across scenes first so every class belongs
    // to some scene whenever scenes * classes_per_scene >= m, then fill the
    // remaining slots at random.
    let mut dealt: Vec<usize> = (0..m).collect();
    dealt.shuffle(&mut r);
    let mut scene_classes: Vec<Vec<usize>> = vec![Vec::with_capacity(cfg.classes_per_scene); cfg.scenes];
    for (i, c) in dealt.into_iter().take(cfg.scenes * cfg.classes_per_scene).enumerate() {
        scene_classes[i % cfg.scenes].push(c);
    }
    for scene in &mut scene_classes {
        let rest: Vec<usize> = (0..m).filter(|c| !scene.contains(c)).collect();
        let missing = cfg.classes_per_scene - scene.len();
        scene.extend(rest.choose_multiple(&mut r, missing).copied());
    }
    let mut assets = Vec::with_capacity(cfg.examples);
    let mut clips = Vec::with_capacity(cfg.examples);
    for i in 0..cfg.examples {
        let id = i as u64;
        let mut er = rng::stream(cfg.seed, rng::STREAM_GEN_ASSET ^ rng::mix64(id));
        let scene = &scene_classes[er.random_range(0..cfg.scenes)];
        let k = er.random_range(lo..=hi).min(scene.len());
        let present: Vec<usize> = scene.choose_multiple(&mut er, k).copied().collect();
        let mut features = vec![0.0; cfg.d];
        for &s in &present {
            features.iter_mut().zip(&prototypes[s]).for_each(|(f, p)| *f += p);
        }
        for f in &mut features {
            let z: f64 = StandardNormal.sample(&mut er);
            *f += cfg.noise_sigma * z;
        }
        assets.push(AssetRecord {
            asset_id: id,
            target_class: present[0],
            possible_mask: vec![true; m],
            observed_mask: vec![true; m],
            clip_ids: Vec::new(),
        });
        clips.push(ClipRecord {
            clip_id: id,
            asset_id: id,
            order_index: 0,
            features,
            labels: TriStateLabelVector::from_positives(m, present),
        });
    }
    let mut meta = DatasetMeta::new(m, cfg.d);
    meta.regime = Some(RegimeKind::Full.to_string());
    Dataset::new(meta, assets, clips)
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeStats {
    pub examples: usize,
    pub positive: StateStats,
    pub negative: StateStats,
    pub unknown: StateStats,
    /// Known (Positive + Negative) labels per example.
    pub known: StateStats,
}

pub fn regime_stats(ds: &Dataset) -> RegimeStats {
    let counts: Vec<_> = ds.clips.iter().map(|c| c.labels.counts()).collect();
    let stat = |f: &dyn Fn(&crate::labelspace::LabelCounts) -> usize| {
        if counts.is_empty() {
            return StateStats { mean: 0.0, min: 0, max: 0 };
        }
        let vals: Vec<usize> = counts.iter().map(f).collect();
        StateStats {
            mean: vals.iter().sum::<usize>() as f64 / vals.len() as f64,
            min: *vals.iter().min().unwrap(),
            max: *vals.iter().max().unwrap(),
        }
    };
    RegimeStats {
        examples: counts.len(),
        positive: stat(&|c| c.positive),
        negative: stat(&|c| c.negative),
        unknown: stat(&|c| c.unknown),
        known: stat(&|c| c.positive + c.negative),
    }
}

pub const STATS_CSV_HEADER: &str = "split,regime,mean_pos,mean_neg,mean_unk,min,max";

/// One CSV row; `min`/`max` are the extremes of known labels per example.
pub fn stats_csv_row(split: &str, regime: &str, s: &RegimeStats) -> String {
    format!(
        "{split},{regime},{:.4},{:.4},{:.4},{},{}",
        s.positive.mean, s.negative.mean, s.unknown.mean, s.known.min, s.known.max
    )
}

/// Asset ids per target class, for callers that need T_k directly.
pub fn target_sets(ds: &Dataset) -> BTreeMap<usize, BTreeSet<u64>> {
    let mut sets: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
    for c in &ds.clips {
        let t = ds.asset_of(c).target_class;
        if c.labels.get(t) == LabelState::Positive {
            sets.entry(t).or_default().insert(c.clip_id);
        }
    }
    sets
}
