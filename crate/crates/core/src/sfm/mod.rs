//! Sparse reconstructions: cameras, posed views with keypoint observations and
//! 3D points with visibility tracks.

mod colmap;
mod json;
mod synth;

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;

pub use colmap::{parse_colmap_text, write_colmap_text};
pub use json::{parse_reconstruction_json, write_reconstruction_json, RECON_SCHEMA, RECON_VERSION};
pub use synth::{orbit, synth_reconstruction, CameraPlacement, CameraRig, PointCluster, SynthScene};

#[derive(Debug, Error)]
pub enum SfmError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {reason}")]
    MalformedLine { file: String, line: usize, reason: String },
    #[error("point {point_id} and view {view_id} disagree about their observation link")]
    BrokenTrack { point_id: u64, view_id: u32 },
    #[error("{file}:{line}: unsupported camera model {model}")]
    UnsupportedCameraModel { file: String, line: usize, model: String },
    #[error("expected schema {expected}, found {found}")]
    SchemaVersionMismatch { expected: String, found: String },
    #[error("malformed json: {0}")]
    MalformedJson(String),
    #[error("referential integrity: {0}")]
    Integrity(String),
    #[error("degenerate camera orbit: {0}")]
    DegenerateOrbit(String),
    #[error("invalid synthetic scene: {0}")]
    InvalidScene(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraModel {
    Pinhole,
    SimplePinhole,
}

impl CameraModel {
    pub fn colmap_name(self) -> &'static str {
        match self {
            CameraModel::Pinhole => "PINHOLE",
            CameraModel::SimplePinhole => "SIMPLE_PINHOLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub camera_id: u32,
    pub model: CameraModel,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn check(&self) -> Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err(format!("camera {}: zero image size", self.camera_id));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(format!("camera {}: focal lengths must be positive", self.camera_id));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(format!("camera {}: principal point outside image", self.camera_id));
        }
        if self.model == CameraModel::SimplePinhole && self.fx != self.fy {
            return Err(format!("camera {}: SIMPLE_PINHOLE needs fx == fy", self.camera_id));
        }
        Ok(())
    }

    /// Same camera resampled to a `width` x `height` image.
    pub fn scaled_to(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let mut out = Self {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            ..self.clone()
        };
        if out.model == CameraModel::SimplePinhole && out.fx != out.fy {
            out.model = CameraModel::Pinhole;
        }
        out
    }

    /// Scale so the long side is at most `max_dim` pixels.
    pub fn fit_within(&self, max_dim: u32) -> Self {
        let long = self.width.max(self.height);
        if long <= max_dim {
            return self.clone();
        }
        let s = max_dim as f64 / long as f64;
        let w = ((self.width as f64 * s).round() as u32).max(1);
        let h = ((self.height as f64 * s).round() as u32).max(1);
        self.scaled_to(w, h)
    }

    /// Continuous image coordinates of a camera-frame point, COLMAP convention
    /// (the top-left pixel center is at `(0.5, 0.5)`).
    pub fn project(&self, p_cam: &Point3<f64>) -> Option<(f64, f64)> {
        (p_cam.z > 0.0).then(|| (self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub u: f64,
    pub v: f64,
    pub point_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub view_id: u32,
    pub name: String,
    pub camera_id: u32,
    pub pose: Pose,
    pub observations: Vec<Observation>,
}

impl ViewRecord {
    pub fn center(&self) -> Point3<f64> {
        self.pose.center()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrackEntry {
    pub view_id: u32,
    pub obs_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoint {
    pub point_id: u64,
    pub position: Point3<f64>,
    pub color: [u8; 3],
    pub reproj_error: f64,
    pub track: Vec<TrackEntry>,
}

/// SfM output. Immutable once built and validated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reconstruction {
    pub intrinsics: BTreeMap<u32, CameraIntrinsics>,
    pub views: BTreeMap<u32, ViewRecord>,
    pub points: BTreeMap<u64, SparsePoint>,
}

pub(crate) const QUATERNION_TOLERANCE: f64 = 1e-9;

impl Reconstruction {
    /// At most `budget` points: all of them when they fit, otherwise a seeded
    /// uniform subset in point-id order.
    pub fn decimated_points(&self, budget: usize, seed: u64) -> Vec<&SparsePoint> {
        let all: Vec<&SparsePoint> = self.points.values().collect();
        if budget >= all.len() {
            return all;
        }
        let mut rng = crate::derive_rng(seed, 0xDEC1);
        let mut idx = rand::seq::index::sample(&mut rng, all.len(), budget).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| all[i]).collect()
    }

    pub fn intrinsics_for(&self, view: &ViewRecord) -> &CameraIntrinsics {
        &self.intrinsics[&view.camera_id]
    }

    pub fn view_and_intrinsics(&self, view_id: u32) -> Option<(&ViewRecord, &CameraIntrinsics)> {
        let view = self.views.get(&view_id)?;
        Some((view, self.intrinsics.get(&view.camera_id)?))
    }

    /// Checks every invariant: intrinsics ranges, unit quaternions, camera
    /// references and bidirectional track/observation links.
    pub fn validate(&self) -> Result<(), SfmError> {
        for (id, cam) in &self.intrinsics {
            if *id != cam.camera_id {
                return Err(SfmError::Integrity(format!("camera key {id} != id {}", cam.camera_id)));
            }
            cam.check().map_err(SfmError::Integrity)?;
        }
        for (id, view) in &self.views {
            if *id != view.view_id {
                return Err(SfmError::Integrity(format!("view key {id} != id {}", view.view_id)));
            }
            if !self.intrinsics.contains_key(&view.camera_id) {
                return Err(SfmError::Integrity(format!("view {id} references missing camera {}", view.camera_id)));
            }
            let norm = view.pose.rotation.quaternion().norm();
            if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
                return Err(SfmError::Integrity(format!("view {id}: quaternion norm {norm}")));
            }
            for obs in &view.observations {
                if let Some(pid) = obs.point_id {
                    let linked = self.points.get(&pid).is_some_and(|p| {
                        p.track.iter().any(|t| {
                            t.view_id == *id && view.observations.get(t.obs_index as usize).map(|o| o.point_id) == Some(Some(pid))
                        })
                    });
                    if !linked {
                        return Err(SfmError::BrokenTrack { point_id: pid, view_id: *id });
                    }
                }
            }
        }
        for (id, point) in &self.points {
            if *id != point.point_id {
                return Err(SfmError::Integrity(format!("point key {id} != id {}", point.point_id)));
            }
            for entry in &point.track {
                let ok = self
                    .views
                    .get(&entry.view_id)
                    .and_then(|v| v.observations.get(entry.obs_index as usize))
                    .is_some_and(|o| o.point_id == Some(*id));
                if !ok {
                    return Err(SfmError::BrokenTrack { point_id: *id, view_id: entry.view_id });
                }
            }
        }
        Ok(())
    }
}
