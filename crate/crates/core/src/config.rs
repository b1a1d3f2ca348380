//! Experiment configuration files and data loading.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::labelspace::{load_manifest, split_dataset, Dataset, Split};
use crate::losses::LossSpec;
use crate::regimes::{
    apply_regime, gen_synthetic_assets, gen_synthetic_flat, sample_single_positive, simulate_context_priors,
    FlatGeneratorConfig, GeneratorConfig, PriorSimConfig, RandomProjection, RegimeKind,
};
use crate::regularizers::{RegConfig, RegKind};
use crate::trainer::TrainConfig;

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

/// Where the data comes from and which supervision regime the training split
/// sees. Validation and test splits always keep their full labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest paths; used when no generator is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Unspecified generator keys take the defaults for the given `m`.
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "de_generator")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat: Option<FlatGeneratorConfig>,
    /// Train/val/test asset fractions for generated data.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Regime applied to the training split. Defaults to target-only for
    /// generated data; manifests are used as stored when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeKind>,
    /// Adds context-derived negatives on top of a target-only training split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_prior: Option<PriorSimConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            val: None,
            test: None,
            generator: Some(GeneratorConfig::for_classes(20)),
            flat: None,
            split: default_split(),
            regime: None,
            context_prior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Full layer widths `[D, hidden…, M]`; must agree with the data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    pub hidden: Vec<usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_layer_lr_mult: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: None,
            hidden: vec![128],
            seed: 0,
            last_layer_lr_mult: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub role_lr: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            base_lr: t.base_lr,
            role_lr: t.role_lr,
            eval_every: t.eval_every,
            seed: t.seed,
        }
    }
}

/// A fully resolved experiment. Presets in the `loss` and `reg` sections are
/// expanded on load, so serializing a loaded config gives an explicit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExperiment")]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossSpec,
    pub reg: RegConfig,
    pub train: TrainSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    loss: Value,
    #[serde(default)]
    reg: Value,
    #[serde(default)]
    train: TrainSection,
}

impl TryFrom<RawExperiment> for ExperimentConfig {
    type Error = String;

    fn try_from(raw: RawExperiment) -> std::result::Result<Self, String> {
        Self::resolve(raw).map_err(|e| match e {
            Error::Config(msg) => msg,
            other => other.to_string(),
        })
    }
}

impl ExperimentConfig {
    fn resolve(raw: RawExperiment) -> Result<Self> {
        let loss = resolve_loss(&raw.loss)?;
        let reg = resolve_reg(&raw.reg, &loss)?;
        let cfg = Self {
            name: raw.name,
            data: raw.data,
            model: raw.model,
            loss,
            reg,
            train: raw.train,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn de_generator<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<GeneratorConfig>, D::Error> {
    let v = Value::deserialize(d)?;
    let Some(obj) = as_object(&v, "data.generator").map_err(serde::de::Error::custom)? else {
        return Ok(None);
    };
    let m = match obj.get("m") {
        None => 100,
        Some(m) => m.as_u64().ok_or_else(|| serde::de::Error::custom("data.generator.m must be an integer"))? as usize,
    };
    overlay(&GeneratorConfig::for_classes(m), obj, "", "data.generator")
        .map(Some)
        .map_err(serde::de::Error::custom)
}

/// Overlays the keys of `overrides` (minus `skip`) onto `base`.
fn overlay<T: Serialize + for<'de> Deserialize<'de>>(base: &T, overrides: &Map<String, Value>, skip: &str, section: &str) -> Result<T> {
    let mut merged = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
    let obj = merged.as_object_mut().expect("struct serializes to an object");
    for (k, v) in overrides {
        if k != skip {
            obj.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(format!("{section}: {e}")))
}

fn as_object<'a>(v: &'a Value, section: &str) -> Result<Option<&'a Map<String, Value>>> {
    match v {
        Value::Null => Ok(None),
        Value::Object(o) => Ok(Some(o)),
        _ => Err(Error::Config(format!("{section} must be an object"))),
    }
}

/// Loss section: an optional `preset` name plus explicit keys overriding it.
pub fn resolve_loss(v: &Value) -> Result<LossSpec> {
    let Some(obj) = as_object(v, "loss")? else {
        return Ok(LossSpec::default());
    };
    let base = match obj.get("preset") {
        None => LossSpec::default(),
        Some(Value::String(name)) => LossSpec::preset(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown loss preset {name:?}; known presets: {}",
                LossSpec::preset_names().join(", ")
            ))
        })?,
        Some(_) => return Err(Error::Config("loss.preset must be a string".into())),
    };
    let spec: LossSpec = overlay(&base, obj, "preset", "loss")?;
    spec.validate()?;
    Ok(spec)
}

/// Reg section: `preset: "rp"` takes the tuned `R_P` weights for the loss.
pub fn resolve_reg(v: &Value, loss: &LossSpec) -> Result<RegConfig> {
    let Some(obj) = as_object(v, "reg")? else {
        return Ok(RegConfig::default());
    };
    let base = match obj.get("preset") {
        None => RegConfig::default(),
        Some(Value::String(p)) if p == "rp" => RegConfig::rp_preset(loss.kind),
        Some(other) => return Err(Error::Config(format!("unknown reg preset {other} (expected \"rp\")"))),
    };
    let reg: RegConfig = overlay(&base, obj, "preset", "reg")?;
    reg.validate()?;
    Ok(reg)
}

impl ExperimentConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let sources = usize::from(d.generator.is_some()) + usize::from(d.flat.is_some()) + usize::from(d.train.is_some());
        if sources != 1 {
            return Err(Error::Config(
                "data needs exactly one of: generator, flat, or train/val/test manifests".into(),
            ));
        }
        if d.train.is_some() && d.val.is_none() {
            return Err(Error::Config("data.val is required with manifest data".into()));
        }
        if let Some(g) = &d.generator {
            g.validate()?;
        }
        if d.context_prior.is_some() && !matches!(d.regime, None | Some(RegimeKind::TargetOnly)) {
            return Err(Error::Config("data.context_prior needs the target-only regime".into()));
        }
        if let Some(cp) = &d.context_prior {
            cp.validate()?;
        }
        self.to_train_config().validate()
    }

    /// Sets every seed (data generation, model init, training) to `seed`.
    pub fn apply_seed(&mut self, seed: u64) {
        if let Some(g) = &mut self.data.generator {
            g.seed = seed;
        }
        if let Some(f) = &mut self.data.flat {
            f.seed = seed;
        }
        if let Some(c) = &mut self.data.context_prior {
            c.seed = seed;
        }
        self.model.seed = seed;
        self.train.seed = seed;
    }

    pub fn to_train_config(&self) -> TrainConfig {
        let hidden = match &self.model.dims {
            Some(dims) if dims.len() >= 2 => dims[1..dims.len() - 1].to_vec(),
            _ => self.model.hidden.clone(),
        };
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            base_lr: self.train.base_lr,
            loss: self.loss.clone(),
            reg: self.reg.clone(),
            hidden,
            model_seed: self.model.seed,
            last_layer_lr_mult: self.model.last_layer_lr_mult,
            role_lr: self.train.role_lr,
            seed: self.train.seed,
            eval_every: self.train.eval_every,
        }
    }

    /// Checks `model.dims` against the data widths.
    pub fn check_dims(&self, d: usize, m: usize) -> Result<()> {
        if let Some(dims) = &self.model.dims {
            if dims.len() < 2 || dims[0] != d || dims[dims.len() - 1] != m {
                return Err(Error::Config(format!(
                    "model.dims {dims:?} must start with the feature width {d} and end with the class count {m}"
                )));
            }
        }
        Ok(())
    }

    /// Regime label for reports.
    pub fn regime_name(&self, data: &Splits) -> String {
        if let Some(cp) = &self.data.context_prior {
            return format!("context-{:.2}", cp.target_known_negative_fraction);
        }
        match self.data.regime {
            Some(r) => r.to_string(),
            None if self.data.train.is_none() => RegimeKind::TargetOnly.to_string(),
            None => data.train.meta.regime.clone().unwrap_or_else(|| "unknown".into()),
        }
    }

    pub fn reg_name(&self) -> &'static str {
        match self.reg.kind {
            RegKind::None => "none",
            RegKind::Rp => "rp",
            RegKind::Re => "re",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
}

fn tag(mut ds: Dataset, split: Split) -> Dataset {
    ds.meta.split = Some(split);
    ds
}

/// Generates full-label train/val/test splits from a generator section.
pub fn generate_splits(data: &DataConfig) -> Result<Option<(Dataset, Dataset, Dataset)>> {
    let full = if let Some(g) = &data.generator {
        gen_synthetic_assets(g)?.0
    } else if let Some(f) = &data.flat {
        gen_synthetic_flat(f)?
    } else {
        return Ok(None);
    };
    let seed = data.generator.as_ref().map(|g| g.seed).or(data.flat.as_ref().map(|f| f.seed)).unwrap_or(0);
    let [a, b, c] = data.split;
    let (tr, va, te) = split_dataset(&full, (a, b, c), seed)?;
    Ok(Some((tag(tr, Split::Train), tag(va, Split::Val), tag(te, Split::Test))))
}

/// Applies a regime to a fully labeled split. Flat data (one example per
/// asset) samples its single positive uniformly instead of using a target.
pub fn regime_for(full: &Dataset, kind: RegimeKind, flat: bool, seed: u64) -> Result<Dataset> {
    if flat && kind == RegimeKind::TargetOnly {
        return sample_single_positive(full, seed);
    }
    apply_regime(full, kind)
}

/// Adds context-derived negatives to a target-only split using a seeded random
/// projection of the features as the context provider.
pub fn with_context_prior(target_only: &Dataset, full: &Dataset, cfg: &PriorSimConfig) -> Result<Dataset> {
    let provider = RandomProjection::new(full.meta.d, cfg.context_dim, cfg.seed);
    let (mut out, _) = simulate_context_priors(target_only, full, cfg, &provider)?;
    out.meta.split = target_only.meta.split;
    Ok(out)
}

/// Loads or generates the experiment's data.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Splits> {
    let d = &cfg.data;
    let (train, val, test) = match generate_splits(d)? {
        Some((tr_full, va, te)) => {
            let flat = d.flat.is_some();
            let regime = d.regime.unwrap_or(RegimeKind::TargetOnly);
            let mut tr = regime_for(&tr_full, regime, flat, cfg.train.seed)?;
            if let Some(cp) = &d.context_prior {
                tr = with_context_prior(&tr, &tr_full, cp)?;
            }
            (tag(tr, Split::Train), va, Some(te))
        }
        None => {
            let path = d.train.as_ref().expect("validated");
            let raw = load_manifest(path)?;
            let mut tr = match d.regime {
                Some(k) => regime_for(&raw, k, false, cfg.train.seed)?,
                None => raw.clone(),
            };
            if let Some(cp) = &d.context_prior {
                tr = with_context_prior(&tr, &raw, cp)?;
            }
            let val = load_manifest(d.val.as_ref().expect("validated"))?;
            let test = d.test.as_ref().map(|p| load_manifest(p)).transpose()?;
            (tr, val, test)
        }
    };
    for other in std::iter::once(&val).chain(test.as_ref()) {
        if other.meta.m != train.meta.m || other.meta.d != train.meta.d {
            return Err(Error::Config(format!(
                "splits disagree on shape: train has M={} D={}, other has M={} D={}",
                train.meta.m, train.meta.d, other.meta.m, other.meta.d
            )));
        }
    }
    cfg.check_dims(train.meta.d, train.meta.m)?;
    Ok(Splits { train, val, test })
}

/// Sets `value` at a dotted path (`"loss.b"`), creating objects as needed.
pub fn set_dotted(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("sweep key {path:?}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj.entry((*part).to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Err(Error::Config("empty sweep key".into()))
}

/// One grid point of a sweep: the chosen values by key, and the config.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub values: BTreeMap<String, Value>,
    pub config: ExperimentConfig,
}

/// Expands a config carrying a `sweep` object (dotted key → list of values)
/// into the cartesian grid. Keys vary in sorted order, last key fastest.
pub fn expand_sweep(raw: &Value) -> Result<Vec<SweepPoint>> {
    let mut base = raw.clone();
    let grid = match base.as_object_mut().and_then(|o| o.remove("sweep")) {
        None => BTreeMap::new(),
        Some(Value::Object(g)) => g.into_iter().collect::<BTreeMap<_, _>>(),
        Some(_) => return Err(Error::Config("sweep must be an object of key -> list".into())),
    };
    let mut axes: Vec<(String, Vec<Value>)> = Vec::with_capacity(grid.len());
    for (k, v) in grid {
        match v {
            Value::Array(vals) if !vals.is_empty() => axes.push((k, vals)),
            _ => return Err(Error::Config(format!("sweep.{k} must be a nonempty list"))),
        }
    }
    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let mut points = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut values = BTreeMap::new();
        let mut v = base.clone();
        for (k, vals) in axes.iter().rev() {
            let choice = vals[idx % vals.len()].clone();
            idx /= vals.len();
            set_dotted(&mut v, k, choice.clone())?;
            values.insert(k.clone(), choice);
        }
        points.push(SweepPoint {
            values,
            config: ExperimentConfig::from_value(v)?,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use serde_json::json;

    #[test]
    fn preset_with_override() {
        let cfg = ExperimentConfig::from_value(json!({
            "loss": {"preset": "l48-targetonly-wan", "gamma": 0.5},
            "reg": {"preset": "rp"}
        }))
        .unwrap();
        assert_eq!(cfg.loss.kind, LossKind::Wan);
        assert_eq!(cfg.loss.gamma, 0.5);
        assert_eq!(cfg.reg.kind, RegKind::Rp);
        assert_eq!(cfg.reg.eps_ema, 1e-3);
        let again = ExperimentConfig::from_str(&cfg.to_json_pretty()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_value(json!({"loss": {"gama": 0.5}})).is_err());
        assert!(ExperimentConfig::from_value(json!({"train": {"epochs": 0}})).is_err());
        assert!(ExperimentConfig::from_value(json!({"loss": {"preset": "nope"}})).is_err());
        assert!(ExperimentConfig::from_value(json!({"bogus": 1})).is_err());
        let two_sources = json!({"data": {"generator": {}, "flat": {}}});
        assert!(ExperimentConfig::from_value(two_sources).is_err());
    }

    #[test]
    fn sweep_grid_order() {
        let raw = json!({"sweep": {"loss.b": [0.1, 0.5], "train.base_lr": [0.001, 0.01, 0.1]}});
        let pts = expand_sweep(&raw).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0].config.loss.b, 0.1);
        assert_eq!(pts[1].config.train.base_lr, 0.01);
        assert_eq!(pts[3].config.loss.b, 0.5);
        assert!(expand_sweep(&json!({"sweep": {"loss.b": []}})).is_err());
    }

    #[test]
    fn generated_data_has_regime_and_full_eval_splits() {
        let mut cfg = ExperimentConfig::from_value(json!({
            "data": {"generator": {"m": 6, "assets": 30, "d": 8}, "regime": "geo"}
        }))
        .unwrap();
        cfg.apply_seed(3);
        let s = load_data(&cfg).unwrap();
        assert_eq!(s.train.meta.regime.as_deref(), Some("geo"));
        assert!(s.val.clips.iter().all(|c| c.fully_labeled()));
        assert_eq!(cfg.regime_name(&s), "geo");
    }
}
