//! Queryable radiance fields: analytic ground-truth oracles and trilinear
//! voxel grids standing in for trained scene and ROI fields.

mod analytic;
mod fit;
mod grid;
mod io;

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::geometry::Aabb;

pub use analytic::{AnalyticField, Primitive, Shape, Texture};
pub use fit::{fit_grid, photometric_loss, photometric_loss_and_gradient, FitConfig, FitOutcome, GridGradient, GridParams, TrainingView};
pub use grid::{bake_grid, estimate_n_max, GridField, GridLayout, DEFAULT_N_MAX_CAP};
pub use io::{grid_from_bytes, grid_to_bytes, load_grid, save_grid, GRID_MAGIC};

pub type Rgb = Vector3<f64>;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid resolution {0:?} below 2 cells on some axis")]
    ResolutionTooSmall([u32; 3]),
    #[error("grid domain has zero or invalid extent")]
    DegenerateDomain,
    #[error("no view has its camera center outside the box")]
    NoUsableView,
    #[error("corrupt grid header: {0}")]
    CorruptHeader(String),
    #[error("grid checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("loss diverged to {0}")]
    DivergedLoss(f64),
    #[error("no training views")]
    EmptyTrainingSet,
    #[error("training image is {got:?}, camera is {expected:?}")]
    ImageSizeMismatch { expected: (u32, u32), got: (u32, u32) },
}

/// Density and color at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub rgb: Rgb,
}

impl FieldSample {
    pub const EMPTY: FieldSample = FieldSample { sigma: 0.0, rgb: Vector3::new(0.0, 0.0, 0.0) };
}

/// Deterministic `(position, direction) -> (sigma, rgb)` map. Queries outside
/// `domain()` return zero density.
pub trait RadianceField: Send + Sync {
    fn query(&self, p: &Point3<f64>, dir: &Vector3<f64>) -> FieldSample;

    /// `None` means the field is defined everywhere.
    fn domain(&self) -> Option<Aabb>;

    fn field_id(&self) -> &str;
}

impl<F: RadianceField + ?Sized> RadianceField for std::sync::Arc<F> {
    fn query(&self, p: &Point3<f64>, dir: &Vector3<f64>) -> FieldSample {
        (**self).query(p, dir)
    }

    fn domain(&self) -> Option<Aabb> {
        (**self).domain()
    }

    fn field_id(&self) -> &str {
        (**self).field_id()
    }
}

impl<F: RadianceField + ?Sized> RadianceField for &F {
    fn query(&self, p: &Point3<f64>, dir: &Vector3<f64>) -> FieldSample {
        (**self).query(p, dir)
    }

    fn domain(&self) -> Option<Aabb> {
        (**self).domain()
    }

    fn field_id(&self) -> &str {
        (**self).field_id()
    }
}

/// Wraps a field and counts every query.
pub struct CountingField<F> {
    inner: F,
    queries: AtomicU64,
}

impl<F> CountingField<F> {
    pub fn new(inner: F) -> Self {
        Self { inner, queries: AtomicU64::new(0) }
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.queries.store(0, Ordering::Relaxed);
    }
}

impl<F: RadianceField> RadianceField for CountingField<F> {
    fn query(&self, p: &Point3<f64>, dir: &Vector3<f64>) -> FieldSample {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.inner.query(p, dir)
    }

    fn domain(&self) -> Option<Aabb> {
        self.inner.domain()
    }

    fn field_id(&self) -> &str {
        self.inner.field_id()
    }
}
