//! Deterministic synthetic reconstructions for tests and built-in fixtures.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, Observation, Reconstruction, SfmError, SparsePoint, TrackEntry, ViewRecord};
use crate::geometry::{Aabb, Pose};

/// Points drawn uniformly inside `region`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCluster {
    pub region: Aabb,
    pub count: usize,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub clusters: Vec<PointCluster>,
    /// Probability that an otherwise visible point is not observed (stands in for occlusion).
    #[serde(default)]
    pub dropout: f64,
    /// Keypoints per view with no 3D point attached.
    #[serde(default)]
    pub unmatched_per_view: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPlacement {
    pub eye: Point3<f64>,
    pub target: Point3<f64>,
}

/// A single shared camera model and where to put it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    pub placements: Vec<CameraPlacement>,
    pub up: Vector3<f64>,
}

/// `count` cameras evenly spaced on a horizontal circle (about +z) looking at `target`.
pub fn orbit(center: Point3<f64>, radius: f64, height: f64, count: usize, phase: f64, target: Point3<f64>) -> Vec<CameraPlacement> {
    (0..count)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / count as f64;
            CameraPlacement {
                eye: Point3::new(center.x + radius * a.cos(), center.y + radius * a.sin(), center.z + height),
                target,
            }
        })
        .collect()
}

/// Builds a reconstruction by projecting sampled points into every camera.
///
/// Observation coordinates follow the COLMAP convention and only points that
/// land at least half a pixel inside the frame are observed.
pub fn synth_reconstruction(scene: &SynthScene, rig: &CameraRig, seed: u64) -> Result<Reconstruction, SfmError> {
    if rig.placements.is_empty() {
        return Err(SfmError::InvalidScene("no cameras".into()));
    }
    let n_points: usize = scene.clusters.iter().map(|c| c.count).sum();
    if n_points == 0 {
        return Err(SfmError::InvalidScene("no points".into()));
    }
    if !(0.0..1.0).contains(&scene.dropout) {
        return Err(SfmError::InvalidScene(format!("dropout {} outside [0, 1)", scene.dropout)));
    }
    rig.intrinsics.check().map_err(SfmError::InvalidScene)?;
    let first = rig.placements[0].eye;
    if rig.placements.len() > 1 && rig.placements.iter().all(|p| (p.eye - first).norm() < 1e-12) {
        return Err(SfmError::DegenerateOrbit("all cameras coincide".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recon = Reconstruction::default();
    let cam = CameraIntrinsics { camera_id: 1, ..rig.intrinsics.clone() };
    recon.intrinsics.insert(1, cam.clone());

    let mut points = Vec::with_capacity(n_points);
    for cluster in &scene.clusters {
        for _ in 0..cluster.count {
            let mut p = cluster.region.min;
            for i in 0..3 {
                let (lo, hi) = (cluster.region.min[i], cluster.region.max[i]);
                p[i] = if hi > lo { rng.random_range(lo..hi) } else { lo };
            }
            points.push((p, cluster.color));
        }
    }
    let mut tracks: Vec<Vec<TrackEntry>> = vec![Vec::new(); points.len()];

    for (vi, placement) in rig.placements.iter().enumerate() {
        let view_id = vi as u32 + 1;
        let pose = Pose::look_at(placement.eye, placement.target, rig.up)
            .ok_or_else(|| SfmError::DegenerateOrbit(format!("camera {view_id} has eye == target")))?;
        let (w, h) = (cam.width as f64, cam.height as f64);
        let mut observations = Vec::new();
        for (pi, (p, _)) in points.iter().enumerate() {
            let Some((u, v)) = cam.project(&pose.world_to_camera(p)) else { continue };
            if !(u >= 0.5 && u <= w - 0.5 && v >= 0.5 && v <= h - 0.5) {
                continue;
            }
            if scene.dropout > 0.0 && rng.random::<f64>() < scene.dropout {
                continue;
            }
            tracks[pi].push(TrackEntry { view_id, obs_index: observations.len() as u32 });
            observations.push(Observation { u, v, point_id: Some(pi as u64 + 1) });
        }
        for _ in 0..scene.unmatched_per_view {
            observations.push(Observation { u: rng.random_range(0.0..w), v: rng.random_range(0.0..h), point_id: None });
        }
        recon.views.insert(
            view_id,
            ViewRecord { view_id, name: format!("view_{view_id:04}.png"), camera_id: 1, pose, observations },
        );
    }

    for (pi, ((position, color), track)) in points.into_iter().zip(tracks).enumerate() {
        let point_id = pi as u64 + 1;
        recon.points.insert(point_id, SparsePoint { point_id, position, color, reproj_error: 0.0, track });
    }
    debug_assert!(recon.validate().is_ok());
    Ok(recon)
}
