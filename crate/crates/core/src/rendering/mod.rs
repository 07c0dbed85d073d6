//! Ray sampling and volume rendering quadrature against a single field.

mod image;
mod quadrature;
mod reference;
mod render;
mod sampling;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::Rgb;
use crate::geometry::{Aabb, GeometryError};

pub use image::{read_pfm, ImageBuffer};
pub use quadrature::{depth_at_weight, quadrature, QuadratureResult};
pub use reference::{reference_ray, render_reference, ReferenceRay, REFERENCE_PIECE_DEPTH};
pub use render::{effective_interval, pixel_rng, render_image, render_ray, shade, RayRender};
pub use sampling::{importance_resample, importance_ts, merge_shaded, stratified_samples};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image format error: {0}")]
    Format(String),
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// Sample positions along a ray. `deltas[k] = ts[k+1] - ts[k]` and the last
/// delta runs to `t_far`.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub ts: Vec<f64>,
    pub deltas: Vec<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl RaySamples {
    /// `ts` must be sorted.
    pub fn from_ts(ts: Vec<f64>, t_near: f64, t_far: f64) -> Self {
        let deltas = spacing(&ts, t_far);
        Self { ts, deltas, t_near, t_far }
    }

    pub fn count(&self) -> usize {
        self.ts.len()
    }
}

pub(crate) fn spacing(ts: &[f64], t_far: f64) -> Vec<f64> {
    let n = ts.len();
    (0..n)
        .map(|k| {
            let next = if k + 1 < n { ts[k + 1] } else { t_far };
            (next - ts[k]).max(0.0)
        })
        .collect()
}

/// Shaded samples. `source[k]` indexes `field_ids`; invisible samples are
/// treated as empty space by the quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadedSamples {
    pub samples: RaySamples,
    pub sigma: Vec<f64>,
    pub rgb: Vec<Rgb>,
    pub visible: Vec<bool>,
    pub source: Vec<u16>,
    pub field_ids: Vec<String>,
}

impl ShadedSamples {
    pub fn count(&self) -> usize {
        self.samples.count()
    }

    pub fn source_field_id(&self, k: usize) -> &str {
        &self.field_ids[self.source[k] as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub jitter: bool,
    pub seed: u64,
    pub background: [f64; 3],
    pub near: f64,
    #[serde(with = "crate::serde_inf")]
    pub far: f64,
    /// Extra clipping box applied to every ray (needed for unbounded fields).
    pub clip: Option<Aabb>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            n_fine: 64,
            jitter: true,
            seed: 0,
            background: [0.0; 3],
            near: 0.0,
            far: f64::INFINITY,
            clip: None,
        }
    }
}

impl SamplerConfig {
    pub fn background_rgb(&self) -> Rgb {
        Vector3::from(self.background)
    }

    pub fn check(&self) -> Result<(), RenderError> {
        if self.n_coarse < 1 {
            return Err(RenderError::InvalidConfig("n_coarse must be >= 1".into()));
        }
        if !(self.near >= 0.0) || !(self.far > self.near) {
            return Err(RenderError::InvalidConfig(format!("bad near/far {} {}", self.near, self.far)));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(RenderError::InvalidConfig("background outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.n_coarse + self.n_fine
    }
}
