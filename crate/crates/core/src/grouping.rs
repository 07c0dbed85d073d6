//! Object-focused camera grouping: per-ROI training and test views selected
//! from sparse-point visibility, plus the scene training set.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Aabb;
use crate::sfm::Reconstruction;

pub const GROUPS_SCHEMA: &str = "roi-groups";
pub const GROUPS_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum GroupingError {
    #[error("ROI {0:?} contains no sparse points")]
    EmptyRoi(String),
    #[error("ROI {roi:?} selected {size} views, need at least 2 to hold out a test set")]
    SetTooSmall { roi: String, size: usize },
    #[error("ROI {0:?} has no training cameras")]
    EmptyTrainingSet(String),
    #[error("invalid ROI spec: {0}")]
    InvalidSpec(String),
    #[error("duplicate ROI name {0:?}")]
    DuplicateRoi(String),
    #[error("schema mismatch: expected {expected}, found {found}")]
    SchemaVersionMismatch { expected: String, found: String },
    #[error("malformed groups document: {0}")]
    Malformed(String),
}

fn default_threshold() -> f64 {
    0.10
}

fn default_integration() -> f64 {
    0.50
}

fn default_test() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSpec {
    pub name: String,
    pub aabb: Aabb,
    #[serde(default = "default_threshold")]
    pub threshold_fraction: f64,
    #[serde(default = "default_integration")]
    pub scene_integration_fraction: f64,
    #[serde(default = "default_test")]
    pub test_fraction: f64,
    #[serde(default)]
    pub d_max_override: Option<f64>,
}

impl RoiSpec {
    pub fn new(name: impl Into<String>, aabb: Aabb) -> Self {
        Self {
            name: name.into(),
            aabb,
            threshold_fraction: default_threshold(),
            scene_integration_fraction: default_integration(),
            test_fraction: default_test(),
            d_max_override: None,
        }
    }

    pub fn check(&self) -> Result<(), GroupingError> {
        let bad = |m: &str| Err(GroupingError::InvalidSpec(format!("{}: {m}", self.name)));
        if self.name.is_empty() {
            return bad("empty name");
        }
        if !self.aabb.is_valid() || !self.aabb.extent().iter().all(|e| e.is_finite()) {
            return bad("invalid box");
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            return bad("threshold_fraction outside (0,1]");
        }
        if !(0.0..=1.0).contains(&self.scene_integration_fraction) {
            return bad("scene_integration_fraction outside [0,1]");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction outside [0,1)");
        }
        if let Some(d) = self.d_max_override {
            if !(d > 0.0) {
                return bad("d_max_override must be > 0");
            }
        }
        Ok(())
    }
}

/// Checks every spec and name uniqueness.
pub fn check_specs(specs: &[RoiSpec]) -> Result<(), GroupingError> {
    let mut seen = BTreeSet::new();
    for s in specs {
        s.check()?;
        if !seen.insert(s.name.as_str()) {
            return Err(GroupingError::DuplicateRoi(s.name.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingConfig {
    /// `count > fraction * total` when true, `>=` otherwise.
    #[serde(default = "yes")]
    pub strict_threshold: bool,
    /// Axis for test-view azimuths.
    #[serde(default = "z_up")]
    pub up: Vector3<f64>,
}

fn yes() -> bool {
    true
}

fn z_up() -> Vector3<f64> {
    Vector3::z()
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self { strict_threshold: true, up: Vector3::z() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiGroup {
    pub name: String,
    pub selected_view_ids: Vec<u32>,
    pub train_view_ids: Vec<u32>,
    pub test_view_ids: Vec<u32>,
    pub counts: BTreeMap<u32, usize>,
    pub nb_total_points: usize,
    pub d_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingResult {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub specs: Vec<RoiSpec>,
    pub rois: Vec<RoiGroup>,
    pub scene_view_ids: Vec<u32>,
}

impl GroupingResult {
    pub fn roi(&self, name: &str) -> Option<&RoiGroup> {
        self.rois.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("groups serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, GroupingError> {
        #[derive(Deserialize)]
        struct Header {
            schema: String,
            version: u32,
        }
        let h: Header = serde_json::from_str(text).map_err(|e| GroupingError::Malformed(e.to_string()))?;
        if h.schema != GROUPS_SCHEMA || h.version != GROUPS_VERSION {
            return Err(GroupingError::SchemaVersionMismatch {
                expected: format!("{GROUPS_SCHEMA} v{GROUPS_VERSION}"),
                found: format!("{} v{}", h.schema, h.version),
            });
        }
        serde_json::from_str(text).map_err(|e| GroupingError::Malformed(e.to_string()))
    }
}

/// Reads ROI specs from a bare list, an object with a `rois` list, or a
/// full roi-groups document.
pub fn parse_roi_specs(text: &str) -> Result<Vec<RoiSpec>, GroupingError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        List(Vec<RoiSpec>),
        Wrapped { rois: Vec<RoiSpec> },
    }
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| GroupingError::Malformed(e.to_string()))?;
    let specs = if value.get("schema").is_some() {
        GroupingResult::from_json(text)?.specs
    } else {
        match serde_json::from_value(value).map_err(|e| GroupingError::Malformed(e.to_string()))? {
            Doc::List(v) | Doc::Wrapped { rois: v } => v,
        }
    };
    check_specs(&specs)?;
    Ok(specs)
}

/// Selection for a single box, without test split or scene set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPreview {
    pub name: String,
    pub nb_total_points: usize,
    pub counts: BTreeMap<u32, usize>,
    pub selected_view_ids: Vec<u32>,
}

pub fn preview_group(recon: &Reconstruction, spec: &RoiSpec, config: &GroupingConfig) -> Result<GroupPreview, GroupingError> {
    spec.check()?;
    let (counts, total) = count_visible_points(recon, &spec.aabb);
    let selected = select_from_counts(&counts, total, spec, config)?;
    Ok(GroupPreview { name: spec.name.clone(), nb_total_points: total, counts, selected_view_ids: selected })
}

/// Per-view counts of in-box sparse points (closed box) and the number of
/// in-box points. Views that see none of them are absent from the map.
pub fn count_visible_points(recon: &Reconstruction, aabb: &Aabb) -> (BTreeMap<u32, usize>, usize) {
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for p in recon.points.values().filter(|p| aabb.contains(&p.position)) {
        total += 1;
        let views: BTreeSet<u32> = p.track.iter().map(|t| t.view_id).collect();
        for v in views {
            *counts.entry(v).or_insert(0) += 1;
        }
    }
    (counts, total)
}

/// Views whose in-box point count exceeds `threshold_fraction * total`.
pub fn select_roi_cameras(recon: &Reconstruction, spec: &RoiSpec, config: &GroupingConfig) -> Result<Vec<u32>, GroupingError> {
    let (counts, total) = count_visible_points(recon, &spec.aabb);
    select_from_counts(&counts, total, spec, config)
}

fn select_from_counts(counts: &BTreeMap<u32, usize>, total: usize, spec: &RoiSpec, config: &GroupingConfig) -> Result<Vec<u32>, GroupingError> {
    if total == 0 {
        return Err(GroupingError::EmptyRoi(spec.name.clone()));
    }
    let bar = spec.threshold_fraction * total as f64;
    Ok(counts
        .iter()
        .filter(|(_, &m)| if config.strict_threshold { m as f64 > bar } else { m as f64 >= bar })
        .map(|(&v, _)| v)
        .collect())
}

/// Views not selected by any ROI, plus a seeded `ceil(f * |set|)` subset of
/// each ROI's selection.
pub fn build_scene_set(recon: &Reconstruction, specs: &[RoiSpec], selections: &[Vec<u32>], seed: u64) -> Vec<u32> {
    let owned: BTreeSet<u32> = selections.iter().flatten().copied().collect();
    let mut scene: BTreeSet<u32> = recon.views.keys().copied().filter(|v| !owned.contains(v)).collect();
    for (i, (spec, sel)) in specs.iter().zip(selections).enumerate() {
        let k = ((spec.scene_integration_fraction * sel.len() as f64).ceil() as usize).min(sel.len());
        let mut rng = crate::derive_rng(seed, 0x5CE4E ^ i as u64);
        for idx in rand::seq::index::sample(&mut rng, sel.len(), k) {
            scene.insert(sel[idx]);
        }
    }
    scene.into_iter().collect()
}

fn azimuth_basis(up: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let up = up.normalize();
    let seed = if up.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (seed - up * seed.dot(&up)).normalize();
    (e1, up.cross(&e1))
}

/// Splits `ids` into (train, test). Views are ordered by azimuth about `up`
/// around `center` and every `floor(1/f)`-th one from a seeded offset is held
/// out, `floor(n / stride)` of them (at least 1, at most `n - 1`).
pub fn split_test_set(
    roi: &str,
    ids: &[u32],
    center: &Point3<f64>,
    camera_centers: &BTreeMap<u32, Point3<f64>>,
    test_fraction: f64,
    up: &Vector3<f64>,
    seed: u64,
) -> Result<(Vec<u32>, Vec<u32>), GroupingError> {
    if test_fraction <= 0.0 {
        return Ok((ids.to_vec(), Vec::new()));
    }
    if ids.len() < 2 {
        return Err(GroupingError::SetTooSmall { roi: roi.to_string(), size: ids.len() });
    }
    let (e1, e2) = azimuth_basis(up);
    let mut order: Vec<(f64, u32)> = ids
        .iter()
        .map(|id| {
            let d = camera_centers[id] - center;
            (d.dot(&e2).atan2(d.dot(&e1)), *id)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = order.len();
    let stride = ((1.0 / test_fraction).floor() as usize).max(1);
    let n_test = (n / stride).clamp(1, n - 1);
    let mut rng = crate::derive_rng(seed, 0x7E57);
    let offset = rand::Rng::random_range(&mut rng, 0..stride.min(n));
    let picked: BTreeSet<usize> = (0..n_test).map(|i| (offset + i * stride) % n).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, (_, id)) in order.into_iter().enumerate() {
        if picked.contains(&i) {
            test.push(id);
        } else {
            train.push(id);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Distance from `center` to the farthest training camera.
pub fn compute_d_max(roi: &str, center: &Point3<f64>, camera_centers: &[Point3<f64>]) -> Result<f64, GroupingError> {
    camera_centers
        .iter()
        .map(|c| (c - center).norm())
        .max_by(f64::total_cmp)
        .ok_or_else(|| GroupingError::EmptyTrainingSet(roi.to_string()))
}

/// Full grouping. A pure function of its arguments.
pub fn group_cameras(recon: &Reconstruction, specs: &[RoiSpec], config: &GroupingConfig, seed: u64) -> Result<GroupingResult, GroupingError> {
    check_specs(specs)?;
    let centers: BTreeMap<u32, Point3<f64>> = recon.views.iter().map(|(id, v)| (*id, v.center())).collect();
    let mut selections = Vec::with_capacity(specs.len());
    let mut rois = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let (counts, total) = count_visible_points(recon, &spec.aabb);
        let selected = select_from_counts(&counts, total, spec, config)?;
        let center = spec.aabb.center();
        let (train, test) = split_test_set(&spec.name, &selected, &center, &centers, spec.test_fraction, &config.up, rand::Rng::random::<u64>(&mut crate::derive_rng(seed, i as u64)))?;
        let d_max = match spec.d_max_override {
            Some(d) => d,
            None => compute_d_max(&spec.name, &center, &train.iter().map(|v| centers[v]).collect::<Vec<_>>())?,
        };
        rois.push(RoiGroup {
            name: spec.name.clone(),
            selected_view_ids: selected.clone(),
            train_view_ids: train,
            test_view_ids: test,
            counts,
            nb_total_points: total,
            d_max,
        });
        selections.push(selected);
    }
    let scene_view_ids = build_scene_set(recon, specs, &selections, seed);
    Ok(GroupingResult { schema: GROUPS_SCHEMA.into(), version: GROUPS_VERSION, seed, specs: specs.to_vec(), rois, scene_view_ids })
}
