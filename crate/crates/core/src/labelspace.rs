//! Tri-state multi-label data model with asset/clip structure.
//!
//! A dataset is a set of *assets* (long recordings), each cut into ordered
//! *clips*. Every clip carries a dense feature vector and one
//! [`LabelState`] per class. Manifests are single JSON documents; see
//! [`load_manifest`] and [`save_manifest`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default clip length in seconds.
pub const DEFAULT_CLIP_SECONDS: f64 = 3.0;
/// Boxes at most this long are never treated as truncated.
pub const TRUNCATION_MIN_DURATION: f64 = 0.080;
/// Width of the leading/trailing edge band of a clip.
pub const TRUNCATION_EDGE: f64 = 0.200;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelState {
    Positive,
    Negative,
    Unknown,
}

impl LabelState {
    pub fn code(self) -> i8 {
        match self {
            LabelState::Positive => 1,
            LabelState::Negative => 0,
            LabelState::Unknown => -1,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(LabelState::Positive),
            0 => Some(LabelState::Negative),
            -1 => Some(LabelState::Unknown),
            _ => None,
        }
    }
}

/// Per-class label states for one example. Encoded in manifests as `1/0/-1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TriStateLabelVector(Vec<LabelState>);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
    pub unknown: usize,
}

impl TriStateLabelVector {
    pub fn new(states: Vec<LabelState>) -> Self {
        Self(states)
    }

    pub fn unknown(m: usize) -> Self {
        Self(vec![LabelState::Unknown; m])
    }

    /// Fully specified vector: listed classes Positive, the rest Negative.
    pub fn from_positives(m: usize, positives: impl IntoIterator<Item = usize>) -> Self {
        let mut states = vec![LabelState::Negative; m];
        for c in positives {
            states[c] = LabelState::Positive;
        }
        Self(states)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> LabelState {
        self.0[class]
    }

    pub fn set(&mut self, class: usize, state: LabelState) {
        self.0[class] = state;
    }

    pub fn states(&self) -> &[LabelState] {
        &self.0
    }

    pub fn counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for s in &self.0 {
            match s {
                LabelState::Positive => c.positive += 1,
                LabelState::Negative => c.negative += 1,
                LabelState::Unknown => c.unknown += 1,
            }
        }
        c
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == LabelState::Positive)
            .map(|(i, _)| i)
    }

    pub fn is_fully_labeled(&self) -> bool {
        !self.0.contains(&LabelState::Unknown)
    }

    pub fn codes(&self) -> Vec<i8> {
        self.0.iter().map(|s| s.code()).collect()
    }
}

impl Serialize for TriStateLabelVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.codes().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TriStateLabelVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let codes = Vec::<i64>::deserialize(d)?;
        codes
            .into_iter()
            .map(|c| {
                LabelState::from_code(c)
                    .ok_or_else(|| serde::de::Error::custom(format!("label code {c} not in {{1, 0, -1}}")))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxStatus {
    Active,
    Ignore,
}

/// A time-extent annotation inside one clip window. Frequency extent is not modeled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub class_id: usize,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_hint: Option<BoxStatus>,
}

impl BoxAnnotation {
    pub fn new(class_id: usize, t_start: f64, t_end: f64) -> Self {
        Self {
            class_id,
            t_start,
            t_end,
            status_hint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Name of the label regime the clip labels were produced under, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
}

impl DatasetMeta {
    pub fn new(m: usize, d: usize) -> Self {
        Self {
            m,
            d,
            class_names: (0..m).map(|c| format!("class_{c:03}")).collect(),
            split: None,
            regime: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub asset_id: u64,
    pub target_class: usize,
    pub possible_mask: Vec<bool>,
    pub observed_mask: Vec<bool>,
    /// Clip ids ordered by `order_index`; rebuilt on load.
    #[serde(skip)]
    pub clip_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: u64,
    pub asset_id: u64,
    pub order_index: u32,
    pub features: Vec<f64>,
    pub labels: TriStateLabelVector,
}

impl ClipRecord {
    pub fn fully_labeled(&self) -> bool {
        self.labels.is_fully_labeled()
    }
}

/// A validated dataset. Assets are sorted by `asset_id`, clips by `clip_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub assets: Vec<AssetRecord>,
    pub clips: Vec<ClipRecord>,
}

impl Dataset {
    /// Sorts, links clip ids into their assets and validates every invariant.
    pub fn new(meta: DatasetMeta, mut assets: Vec<AssetRecord>, mut clips: Vec<ClipRecord>) -> Result<Self> {
        assets.sort_by_key(|a| a.asset_id);
        clips.sort_by_key(|c| c.clip_id);
        let mut ds = Dataset { meta, assets, clips };
        ds.link()?;
        ds.validate()?;
        Ok(ds)
    }

    fn link(&mut self) -> Result<()> {
        let mut per_asset: BTreeMap<u64, Vec<(u32, u64)>> = BTreeMap::new();
        for (i, clip) in self.clips.iter().enumerate() {
            if self.asset_index(clip.asset_id).is_none() {
                return Err(Error::DanglingReference(format!(
                    "clip {} (record #{i}) references unknown asset {}",
                    clip.clip_id, clip.asset_id
                )));
            }
            per_asset
                .entry(clip.asset_id)
                .or_default()
                .push((clip.order_index, clip.clip_id));
        }
        for asset in &mut self.assets {
            let mut entries = per_asset.remove(&asset.asset_id).unwrap_or_default();
            entries.sort();
            asset.clip_ids = entries.into_iter().map(|(_, id)| id).collect();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.meta.m;
        let schema = |record, index, field, message: String| Error::Schema {
            record,
            index,
            field,
            message,
        };
        if m < 2 {
            return Err(schema("meta", 0, "M", format!("class count must be >= 2, got {m}")));
        }
        if self.meta.class_names.len() != m {
            return Err(schema(
                "meta",
                0,
                "class_names",
                format!("expected {m} names, got {}", self.meta.class_names.len()),
            ));
        }
        let mut seen_assets = BTreeSet::new();
        for (i, a) in self.assets.iter().enumerate() {
            if !seen_assets.insert(a.asset_id) {
                return Err(schema("asset", i, "asset_id", format!("duplicate asset id {}", a.asset_id)));
            }
            if a.target_class >= m {
                return Err(schema(
                    "asset",
                    i,
                    "target_class",
                    format!("asset {}: class {} out of range", a.asset_id, a.target_class),
                ));
            }
            for (field, mask) in [("possible_mask", &a.possible_mask), ("observed_mask", &a.observed_mask)] {
                if mask.len() != m {
                    return Err(schema(
                        "asset",
                        i,
                        field,
                        format!("asset {}: length {} != M = {m}", a.asset_id, mask.len()),
                    ));
                }
            }
            if !a.possible_mask[a.target_class] {
                return Err(schema(
                    "asset",
                    i,
                    "possible_mask",
                    format!("asset {}: target class {} marked impossible", a.asset_id, a.target_class),
                ));
            }
        }
        let mut seen_clips = BTreeSet::new();
        let mut seen_order = BTreeSet::new();
        for (i, c) in self.clips.iter().enumerate() {
            if !seen_clips.insert(c.clip_id) {
                return Err(schema("clip", i, "clip_id", format!("duplicate clip id {}", c.clip_id)));
            }
            if !seen_order.insert((c.asset_id, c.order_index)) {
                return Err(schema(
                    "clip",
                    i,
                    "order_index",
                    format!("clip {}: order index {} repeated in asset {}", c.clip_id, c.order_index, c.asset_id),
                ));
            }
            if c.labels.len() != m {
                return Err(schema(
                    "clip",
                    i,
                    "labels",
                    format!("clip {}: label vector length {} != M = {m}", c.clip_id, c.labels.len()),
                ));
            }
            if c.features.len() != self.meta.d {
                return Err(schema(
                    "clip",
                    i,
                    "features",
                    format!("clip {}: feature length {} != D = {}", c.clip_id, c.features.len(), self.meta.d),
                ));
            }
            if c.features.iter().any(|x| !x.is_finite()) {
                return Err(schema("clip", i, "features", format!("clip {}: non-finite feature", c.clip_id)));
            }
            if self.asset_index(c.asset_id).is_none() {
                return Err(Error::DanglingReference(format!(
                    "clip {} references unknown asset {}",
                    c.clip_id, c.asset_id
                )));
            }
        }
        for a in &self.assets {
            for id in &a.clip_ids {
                if self.clip_index(*id).is_none() {
                    return Err(Error::DanglingReference(format!("asset {} lists unknown clip {id}", a.asset_id)));
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.meta.m
    }

    pub fn asset_index(&self, asset_id: u64) -> Option<usize> {
        self.assets.binary_search_by_key(&asset_id, |a| a.asset_id).ok()
    }

    pub fn clip_index(&self, clip_id: u64) -> Option<usize> {
        self.clips.binary_search_by_key(&clip_id, |c| c.clip_id).ok()
    }

    pub fn asset_of(&self, clip: &ClipRecord) -> &AssetRecord {
        &self.assets[self.asset_index(clip.asset_id).expect("validated dataset")]
    }

    /// Feature matrix (rows in the given clip-index order).
    pub fn features(&self, rows: &[usize]) -> Array2<f64> {
        let d = self.meta.d;
        let mut x = Array2::zeros((rows.len(), d));
        for (r, &i) in rows.iter().enumerate() {
            for (j, v) in self.clips[i].features.iter().enumerate() {
                x[[r, j]] = *v;
            }
        }
        x
    }

    /// Rebuild with a new clip list; drops assets left without clips.
    pub fn with_clips(&self, clips: Vec<ClipRecord>) -> Result<Self> {
        let used: BTreeSet<u64> = clips.iter().map(|c| c.asset_id).collect();
        let assets = self
            .assets
            .iter()
            .filter(|a| used.contains(&a.asset_id))
            .cloned()
            .collect();
        Dataset::new(self.meta.clone(), assets, clips)
    }

    /// The subset made of the given assets and all of their clips.
    pub fn subset_assets(&self, asset_ids: &BTreeSet<u64>) -> Result<Self> {
        let assets = self
            .assets
            .iter()
            .filter(|a| asset_ids.contains(&a.asset_id))
            .cloned()
            .collect();
        let clips = self
            .clips
            .iter()
            .filter(|c| asset_ids.contains(&c.asset_id))
            .cloned()
            .collect();
        Dataset::new(self.meta.clone(), assets, clips)
    }
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    meta: &'a DatasetMeta,
    assets: &'a [AssetRecord],
    clips: &'a [ClipRecord],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    meta: DatasetMeta,
    assets: Vec<RawAsset>,
    clips: Vec<RawClip>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAsset {
    asset_id: u64,
    target_class: usize,
    possible_mask: Vec<bool>,
    observed_mask: Vec<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClip {
    clip_id: u64,
    asset_id: u64,
    order_index: u32,
    features: Vec<f64>,
    labels: Vec<i64>,
}

/// Canonical manifest serialization: compact JSON, fixed field order, trailing newline.
pub fn manifest_to_string(ds: &Dataset) -> String {
    let out = ManifestOut {
        meta: &ds.meta,
        assets: &ds.assets,
        clips: &ds.clips,
    };
    let mut s = serde_json::to_string(&out).expect("manifest serialization is infallible");
    s.push('\n');
    s
}

pub fn manifest_from_str(text: &str, origin: &Path) -> Result<Dataset> {
    let raw: RawManifest = serde_json::from_str(text).map_err(|source| Error::Json {
        path: origin.to_path_buf(),
        source,
    })?;
    let m = raw.meta.m;
    let assets = raw
        .assets
        .into_iter()
        .map(|a| AssetRecord {
            asset_id: a.asset_id,
            target_class: a.target_class,
            possible_mask: a.possible_mask,
            observed_mask: a.observed_mask,
            clip_ids: Vec::new(),
        })
        .collect();
    let mut clips = Vec::with_capacity(raw.clips.len());
    for (i, c) in raw.clips.into_iter().enumerate() {
        if c.labels.len() != m {
            return Err(Error::Schema {
                record: "clip",
                index: i,
                field: "labels",
                message: format!("clip {}: label vector length {} != M = {m}", c.clip_id, c.labels.len()),
            });
        }
        let states = c
            .labels
            .iter()
            .map(|&code| {
                LabelState::from_code(code).ok_or_else(|| Error::Schema {
                    record: "clip",
                    index: i,
                    field: "labels",
                    message: format!("clip {}: label code {code} not in {{1, 0, -1}}", c.clip_id),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        clips.push(ClipRecord {
            clip_id: c.clip_id,
            asset_id: c.asset_id,
            order_index: c.order_index,
            features: c.features,
            labels: TriStateLabelVector::new(states),
        });
    }
    Dataset::new(raw.meta, assets, clips)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    manifest_from_str(&text, path)
}

pub fn save_manifest(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, manifest_to_string(ds)).map_err(|e| Error::io(path, e))
}

/// Whether a box (already clipped to the window) counts as mostly truncated:
/// longer than 80 ms yet confined to the first or last 200 ms of the clip.
fn is_truncated(start: f64, end: f64, clip_duration: f64) -> bool {
    let long = end - start > TRUNCATION_MIN_DURATION + TIME_EPS;
    let leading = end <= TRUNCATION_EDGE + TIME_EPS;
    let trailing = start >= clip_duration - TRUNCATION_EDGE - TIME_EPS;
    long && (leading || trailing)
}

/// Clip-level presence from time boxes. Classes with a retained box become
/// Positive; everything else stays Unknown.
pub fn clip_labels_from_boxes(
    boxes: &[BoxAnnotation],
    clip_duration: f64,
    m: usize,
) -> Result<TriStateLabelVector> {
    if !(clip_duration > 0.0) {
        return Err(Error::Config(format!("clip duration must be positive, got {clip_duration}")));
    }
    let mut labels = TriStateLabelVector::unknown(m);
    for b in boxes {
        if !(b.t_start < b.t_end) || b.t_start < 0.0 {
            return Err(Error::InvalidBox {
                class_id: b.class_id,
                t_start: b.t_start,
                t_end: b.t_end,
            });
        }
        if b.class_id >= m {
            return Err(Error::Config(format!("box class {} out of range for M = {m}", b.class_id)));
        }
        if b.status_hint == Some(BoxStatus::Ignore) {
            continue;
        }
        let start = b.t_start.max(0.0);
        let end = b.t_end.min(clip_duration);
        if end <= start {
            continue;
        }
        if !is_truncated(start, end, clip_duration) {
            labels.set(b.class_id, LabelState::Positive);
        }
    }
    Ok(labels)
}

/// Asset-level split stratified by target class.
pub fn split_dataset(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be in [0, 1] and sum to 1, got ({ft}, {fv}, {fs})"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for a in &ds.assets {
        by_class.entry(a.target_class).or_default().push(a.asset_id);
    }
    let mut parts: [BTreeSet<u64>; 3] = Default::default();
    for (class, mut ids) in by_class {
        let n = ids.len();
        if n < 3 {
            return Err(Error::TooFewAssets { class, have: n, need: 3 });
        }
        let count = |f: f64| {
            if f > 0.0 {
                ((f * n as f64).round() as usize).max(1)
            } else {
                0
            }
        };
        let n_val = count(fv);
        let n_test = count(fs);
        if n_val + n_test >= n && ft > 0.0 || n_val + n_test > n {
            return Err(Error::TooFewAssets {
                class,
                have: n,
                need: n_val + n_test + usize::from(ft > 0.0),
            });
        }
        ids.shuffle(&mut rng::stream(seed, rng::STREAM_SPLIT ^ ((class as u64) << 32)));
        let n_train = n - n_val - n_test;
        parts[0].extend(&ids[..n_train]);
        parts[1].extend(&ids[n_train..n_train + n_val]);
        parts[2].extend(&ids[n_train + n_val..]);
    }
    let mut out = Vec::with_capacity(3);
    for (ids, split) in parts.iter().zip([Split::Train, Split::Val, Split::Test]) {
        let mut sub = ds.subset_assets(ids)?;
        sub.meta.split = Some(split);
        out.push(sub);
    }
    let test = out.pop().unwrap();
    let val = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok((train, val, test))
}
