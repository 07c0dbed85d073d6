//! Gradient-descent fitting of a voxel grid to rendered images.
//!
//! Sample positions are fixed midpoints, so the loss is a smooth function of
//! the vertex values and its gradient is computed in closed form through the
//! quadrature and the trilinear weights.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FieldError, FieldSample, GridField, GridLayout, RadianceField, Rgb};
use crate::geometry::{pixel_ray, ray_aabb_intersect, Aabb};
use crate::rendering::{quadrature, ImageBuffer, RaySamples, ShadedSamples};
use crate::sfm::{CameraIntrinsics, ViewRecord};

#[derive(Debug, Clone)]
pub struct TrainingView {
    pub view: ViewRecord,
    pub intrinsics: CameraIntrinsics,
    pub image: ImageBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub steps: usize,
    /// Midpoint samples per ray inside the grid domain.
    pub n_samples: usize,
    pub lr_density: f64,
    pub lr_color: f64,
    /// Step size multiplier after an accepted step.
    pub lr_growth: f64,
    /// Halvings tried before giving up on a step.
    pub max_backtracks: usize,
    pub near: f64,
    pub background: [f64; 3],
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { steps: 100, n_samples: 32, lr_density: 100.0, lr_color: 1.0, lr_growth: 1.5, max_backtracks: 20, near: 0.0, background: [0.0; 3] }
    }
}

/// Working copy of grid values in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct GridParams {
    pub layout: GridLayout,
    pub density: Vec<f64>,
    pub rgb: Vec<[f64; 3]>,
}

impl GridParams {
    pub fn from_grid(grid: &GridField) -> Self {
        Self {
            layout: *grid.layout(),
            density: grid.densities().iter().map(|&s| s as f64).collect(),
            rgb: grid.colors().iter().map(|c| c.map(|v| v as f64)).collect(),
        }
    }

    pub fn to_grid(&self, id: impl Into<String>) -> Result<GridField, FieldError> {
        GridField::from_parts(
            id,
            self.layout,
            self.density.iter().map(|&s| s as f32).collect(),
            self.rgb.iter().map(|c| c.map(|v| v as f32)).collect(),
        )
    }

    fn sample(&self, corners: &[(usize, f64); 8]) -> FieldSample {
        let mut sigma = 0.0;
        let mut rgb = Vector3::zeros();
        for &(i, w) in corners {
            sigma += w * self.density[i];
            rgb += w * Vector3::from(self.rgb[i]);
        }
        FieldSample { sigma, rgb }
    }
}

impl RadianceField for GridParams {
    fn query(&self, p: &Point3<f64>, _dir: &Vector3<f64>) -> FieldSample {
        match self.layout.corners(p) {
            Some(c) => self.sample(&c),
            None => FieldSample::EMPTY,
        }
    }

    fn domain(&self) -> Option<Aabb> {
        Some(self.layout.domain)
    }

    fn field_id(&self) -> &str {
        "fit"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridGradient {
    pub density: Vec<f64>,
    pub rgb: Vec<[f64; 3]>,
}

impl GridGradient {
    fn zeros(n: usize) -> Self {
        Self { density: vec![0.0; n], rgb: vec![[0.0; 3]; n] }
    }

    fn add(&mut self, other: &GridGradient) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += b;
        }
        for (a, b) in self.rgb.iter_mut().zip(&other.rgb) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
    }
}

struct RayPlan {
    ts: Vec<f64>,
    t_far: f64,
    corners: Vec<[(usize, f64); 8]>,
    target: Rgb,
}

struct Plan {
    views: Vec<Vec<RayPlan>>,
    pixels: usize,
}

fn plan(layout: &GridLayout, views: &[TrainingView], config: &FitConfig) -> Result<Plan, FieldError> {
    if views.is_empty() {
        return Err(FieldError::EmptyTrainingSet);
    }
    let mut pixels = 0;
    let mut out = Vec::with_capacity(views.len());
    for tv in views {
        let k = &tv.intrinsics;
        if (tv.image.width, tv.image.height) != (k.width, k.height) {
            return Err(FieldError::ImageSizeMismatch { expected: (k.width, k.height), got: (tv.image.width, tv.image.height) });
        }
        let mut rays = Vec::with_capacity(tv.image.len());
        for v in 0..k.height {
            for u in 0..k.width {
                pixels += 1;
                let px = tv.image.pixel(u, v);
                let target = Vector3::new(px[0] as f64, px[1] as f64, px[2] as f64);
                let ray = pixel_ray(&tv.view.pose, k, u as f64, v as f64);
                let ray = ray.with_bounds(config.near, ray.t_far);
                let (ts, t_far, corners) = match ray_aabb_intersect(&ray, &layout.domain) {
                    Some(iv) if iv.t_exit > iv.t_enter && config.n_samples > 0 => {
                        let h = (iv.t_exit - iv.t_enter) / config.n_samples as f64;
                        let ts: Vec<f64> = (0..config.n_samples).map(|i| iv.t_enter + (i as f64 + 0.5) * h).collect();
                        let corners = ts.iter().map(|&t| layout.corners(&ray.at(t)).unwrap_or([(0, 0.0); 8])).collect();
                        (ts, iv.t_exit, corners)
                    }
                    _ => (Vec::new(), 0.0, Vec::new()),
                };
                rays.push(RayPlan { ts, t_far, corners, target });
            }
        }
        out.push(rays);
    }
    Ok(Plan { views: out, pixels })
}

fn shaded_for(params: &GridParams, ray: &RayPlan) -> ShadedSamples {
    let n = ray.ts.len();
    let (mut sigma, mut rgb) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for c in &ray.corners {
        let s = params.sample(c);
        sigma.push(s.sigma);
        rgb.push(s.rgb);
    }
    ShadedSamples {
        samples: RaySamples::from_ts(ray.ts.clone(), ray.ts.first().copied().unwrap_or(0.0), ray.t_far),
        sigma,
        rgb,
        visible: vec![true; n],
        source: vec![0; n],
        field_ids: vec!["fit".into()],
    }
}

fn view_loss(params: &GridParams, rays: &[RayPlan], bg: &Rgb, grad: Option<&mut GridGradient>, scale: f64) -> Result<f64, FieldError> {
    let mut loss = 0.0;
    let mut grad = grad;
    for ray in rays {
        let shaded = shaded_for(params, ray);
        let q = quadrature(&shaded, bg).map_err(|_| FieldError::DivergedLoss(f64::NAN))?;
        let r = q.color - ray.target;
        loss += r.norm_squared();
        let Some(g) = grad.as_deref_mut() else { continue };
        let dc = 2.0 * scale * r;
        let n = shaded.count();
        // suffix sums S_k = sum_{j>k} w_j (dc . c_j) + T_end (dc . bg)
        let mut suffix = q.t_end * dc.dot(bg);
        let mut t_after = q.t_end;
        for k in (0..n).rev() {
            let w = q.weights[k];
            let ck = &shaded.rgb[k];
            let dsigma = shaded.samples.deltas[k] * (t_after * dc.dot(ck) - suffix);
            let drgb = w * dc;
            for &(i, tw) in &ray.corners[k] {
                if tw == 0.0 {
                    continue;
                }
                g.density[i] += tw * dsigma;
                for c in 0..3 {
                    g.rgb[i][c] += tw * drgb[c];
                }
            }
            suffix += w * dc.dot(ck);
            t_after += w;
        }
    }
    Ok(loss * scale)
}

fn evaluate(params: &GridParams, plan: &Plan, bg: &Rgb, with_grad: bool) -> Result<(f64, Option<GridGradient>), FieldError> {
    let scale = 1.0 / (3.0 * plan.pixels as f64);
    let n = params.layout.vertex_count();
    let parts: Vec<(f64, Option<GridGradient>)> = plan
        .views
        .par_iter()
        .map(|rays| {
            let mut g = with_grad.then(|| GridGradient::zeros(n));
            let l = view_loss(params, rays, bg, g.as_mut(), scale)?;
            Ok((l, g))
        })
        .collect::<Result<_, FieldError>>()?;
    // fixed reduction order
    let mut loss = 0.0;
    let mut grad = with_grad.then(|| GridGradient::zeros(n));
    for (l, g) in parts {
        loss += l;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add(&g);
        }
    }
    if !loss.is_finite() {
        return Err(FieldError::DivergedLoss(loss));
    }
    Ok((loss, grad))
}

/// Mean squared error over all pixels and channels.
pub fn photometric_loss(params: &GridParams, views: &[TrainingView], config: &FitConfig) -> Result<f64, FieldError> {
    let plan = plan(&params.layout, views, config)?;
    Ok(evaluate(params, &plan, &Vector3::from(config.background), false)?.0)
}

pub fn photometric_loss_and_gradient(params: &GridParams, views: &[TrainingView], config: &FitConfig) -> Result<(f64, GridGradient), FieldError> {
    let plan = plan(&params.layout, views, config)?;
    let (l, g) = evaluate(params, &plan, &Vector3::from(config.background), true)?;
    Ok((l, g.expect("gradient requested")))
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub grid: GridField,
    /// Initial loss followed by the loss after each accepted step.
    pub losses: Vec<f64>,
}

/// Projected gradient descent with backtracking: a step is accepted only if
/// it does not raise the loss, so the loss history is non-increasing.
pub fn fit_grid(views: &[TrainingView], initial: &GridField, config: &FitConfig) -> Result<FitOutcome, FieldError> {
    let bg = Vector3::from(config.background);
    let plan = plan(initial.layout(), views, config)?;
    let mut params = GridParams::from_grid(initial);
    let (mut loss, _) = evaluate(&params, &plan, &bg, false)?;
    let mut losses = vec![loss];
    if config.steps == 0 {
        return Ok(FitOutcome { grid: initial.clone(), losses });
    }
    let (mut lr_s, mut lr_c) = (config.lr_density, config.lr_color);
    'steps: for _ in 0..config.steps {
        let (_, grad) = evaluate(&params, &plan, &bg, true)?;
        let grad = grad.expect("gradient requested");
        for _ in 0..=config.max_backtracks {
            let mut trial = params.clone();
            for (s, g) in trial.density.iter_mut().zip(&grad.density) {
                *s = (*s - lr_s * g).max(0.0);
            }
            for (c, g) in trial.rgb.iter_mut().zip(&grad.rgb) {
                for i in 0..3 {
                    c[i] = (c[i] - lr_c * g[i]).clamp(0.0, 1.0);
                }
            }
            let (l, _) = evaluate(&trial, &plan, &bg, false)?;
            if l <= loss {
                params = trial;
                loss = l;
                losses.push(l);
                lr_s *= config.lr_growth;
                lr_c *= config.lr_growth;
                continue 'steps;
            }
            lr_s *= 0.5;
            lr_c *= 0.5;
        }
        // no descent step found at any tried size
        break;
    }
    Ok(FitOutcome { grid: params.to_grid(initial.id.clone())?, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{bake_grid, AnalyticField};
    use crate::geometry::Pose;
    use crate::rendering::{render_image, SamplerConfig};
    use crate::sfm::CameraModel;

    fn cam(n: u32) -> CameraIntrinsics {
        CameraIntrinsics { camera_id: 1, model: CameraModel::Pinhole, width: n, height: n, fx: n as f64, fy: n as f64, cx: n as f64 / 2.0, cy: n as f64 / 2.0 }
    }

    fn unit_box() -> Aabb {
        Aabb::from_center_half_extent(Point3::origin(), Vector3::repeat(0.5))
    }

    fn training(oracle: &AnalyticField, count: usize, n: u32) -> Vec<TrainingView> {
        (0..count)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / count as f64;
                let eye = Point3::new(2.5 * a.cos(), 2.5 * a.sin(), 0.8);
                let view = ViewRecord {
                    view_id: i as u32 + 1,
                    name: format!("{i}"),
                    camera_id: 1,
                    pose: Pose::look_at(eye, Point3::origin(), Vector3::z()).unwrap(),
                    observations: vec![],
                };
                let cfg = SamplerConfig { n_coarse: 128, n_fine: 0, jitter: false, clip: Some(unit_box()), ..Default::default() };
                let image = render_image(oracle, &view, &cam(n), &cfg).unwrap();
                TrainingView { view, intrinsics: cam(n), image }
            })
            .collect()
    }

    #[test]
    fn loss_is_non_increasing() {
        let oracle = AnalyticField::homogeneous("o", 2.0, Vector3::new(0.8, 0.3, 0.1), None);
        let views = training(&oracle, 4, 6);
        let init = GridField::constant("g", GridLayout::new(unit_box(), [4; 3]).unwrap(), 0.5, [0.5; 3]).unwrap();
        let cfg = FitConfig { steps: 200, ..Default::default() };
        let out = fit_grid(&views, &init, &cfg).unwrap();
        assert!(out.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(*out.losses.last().unwrap() < out.losses[0] * 0.1);
    }

    #[test]
    fn zero_steps_returns_initial() {
        let oracle = AnalyticField::homogeneous("o", 2.0, Vector3::new(0.8, 0.3, 0.1), None);
        let views = training(&oracle, 2, 4);
        let init = bake_grid("g", &oracle, unit_box(), [3; 3]).unwrap();
        let out = fit_grid(&views, &init, &FitConfig { steps: 0, ..Default::default() }).unwrap();
        assert_eq!(out.grid, init);
    }

    #[test]
    fn empty_training_set() {
        let init = GridField::constant("g", GridLayout::new(unit_box(), [2; 3]).unwrap(), 0.5, [0.5; 3]).unwrap();
        assert!(matches!(fit_grid(&[], &init, &FitConfig::default()), Err(FieldError::EmptyTrainingSet)));
    }
}
