//! Versioned JSON interchange for reconstructions ("roi-recon v1").
//!
//! ```json
//! { "schema": "roi-recon", "version": 1,
//!   "cameras": [{"camera_id":1,"model":"pinhole","width":640,"height":480,"fx":..,"fy":..,"cx":..,"cy":..}],
//!   "views":   [{"view_id":1,"name":"a.png","camera_id":1,"qvec":[w,x,y,z],"tvec":[x,y,z],
//!                "observations":[[u,v,point_id_or_-1], ...]}],
//!   "points":  [{"point_id":1,"xyz":[x,y,z],"rgb":[r,g,b],"error":0.5,"track":[[view_id,obs_index], ...]}] }
//! ```
//! Arrays are ordered by id.

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, Observation, Reconstruction, SfmError, SparsePoint, TrackEntry, ViewRecord};
use crate::geometry::Pose;

pub const RECON_SCHEMA: &str = "roi-recon";
pub const RECON_VERSION: u32 = 1;

#[derive(Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    schema: String,
    version: u32,
    cameras: Vec<CameraIntrinsics>,
    views: Vec<ViewDoc>,
    points: Vec<PointDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewDoc {
    view_id: u32,
    name: String,
    camera_id: u32,
    qvec: [f64; 4],
    tvec: [f64; 3],
    observations: Vec<(f64, f64, i64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointDoc {
    point_id: u64,
    xyz: [f64; 3],
    rgb: [u8; 3],
    error: f64,
    track: Vec<(u32, u32)>,
}

pub fn write_reconstruction_json(recon: &Reconstruction) -> Vec<u8> {
    let doc = Doc {
        schema: RECON_SCHEMA.into(),
        version: RECON_VERSION,
        cameras: recon.intrinsics.values().cloned().collect(),
        views: recon
            .views
            .values()
            .map(|v| {
                let q = v.pose.rotation.quaternion();
                let t = v.pose.translation;
                ViewDoc {
                    view_id: v.view_id,
                    name: v.name.clone(),
                    camera_id: v.camera_id,
                    qvec: [q.w, q.i, q.j, q.k],
                    tvec: [t.x, t.y, t.z],
                    observations: v
                        .observations
                        .iter()
                        .map(|o| (o.u, o.v, o.point_id.map_or(-1, |p| p as i64)))
                        .collect(),
                }
            })
            .collect(),
        points: recon
            .points
            .values()
            .map(|p| PointDoc {
                point_id: p.point_id,
                xyz: [p.position.x, p.position.y, p.position.z],
                rgb: p.color,
                error: p.reproj_error,
                track: p.track.iter().map(|t| (t.view_id, t.obs_index)).collect(),
            })
            .collect(),
    };
    serde_json::to_vec(&doc).expect("reconstruction serializes")
}

pub fn parse_reconstruction_json(bytes: &[u8]) -> Result<Reconstruction, SfmError> {
    let header: Header = serde_json::from_slice(bytes).map_err(|e| SfmError::MalformedJson(e.to_string()))?;
    if header.schema != RECON_SCHEMA || header.version != RECON_VERSION {
        return Err(SfmError::SchemaVersionMismatch {
            expected: format!("{RECON_SCHEMA} v{RECON_VERSION}"),
            found: format!("{} v{}", header.schema, header.version),
        });
    }
    let doc: Doc = serde_json::from_slice(bytes).map_err(|e| SfmError::MalformedJson(e.to_string()))?;
    let mut recon = Reconstruction::default();
    for cam in doc.cameras {
        let id = cam.camera_id;
        if recon.intrinsics.insert(id, cam).is_some() {
            return Err(SfmError::Integrity(format!("duplicate camera {id}")));
        }
    }
    for v in doc.views {
        let [w, x, y, z] = v.qvec;
        let observations = v
            .observations
            .into_iter()
            .map(|(u, vv, p)| {
                if p < -1 {
                    return Err(SfmError::Integrity(format!("view {}: bad point id {p}", v.view_id)));
                }
                Ok(Observation { u, v: vv, point_id: (p >= 0).then_some(p as u64) })
            })
            .collect::<Result<_, _>>()?;
        let view = ViewRecord {
            view_id: v.view_id,
            name: v.name,
            camera_id: v.camera_id,
            pose: Pose {
                // norm is checked by validate(); renormalizing here would perturb bits
                rotation: UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)),
                translation: Vector3::from(v.tvec),
            },
            observations,
        };
        if recon.views.insert(v.view_id, view).is_some() {
            return Err(SfmError::Integrity(format!("duplicate view {}", v.view_id)));
        }
    }
    for p in doc.points {
        let point = SparsePoint {
            point_id: p.point_id,
            position: Point3::from(p.xyz),
            color: p.rgb,
            reproj_error: p.error,
            track: p.track.into_iter().map(|(view_id, obs_index)| TrackEntry { view_id, obs_index }).collect(),
        };
        if recon.points.insert(p.point_id, point).is_some() {
            return Err(SfmError::Integrity(format!("duplicate point {}", p.point_id)));
        }
    }
    recon.validate()?;
    Ok(recon)
}
