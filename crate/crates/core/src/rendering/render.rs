use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{importance_ts, merge_shaded, quadrature, stratified_samples, ImageBuffer, QuadratureResult, RaySamples, RenderError, SamplerConfig, ShadedSamples};
use crate::fields::RadianceField;
use crate::geometry::{pixel_ray, ray_aabb_intersect, Aabb, Ray};
use crate::sfm::{CameraIntrinsics, ViewRecord};

/// Independent RNG stream for one pixel, so output never depends on the
/// parallel schedule.
pub fn pixel_rng(seed: u64, index: u64) -> ChaCha8Rng {
    crate::derive_rng(seed, index)
}

/// Clips `ray` to the sampler's `[near, far]`, its clip box and `domain`.
/// `None` when nothing is left.
pub fn effective_interval(ray: &Ray, domain: Option<&Aabb>, config: &SamplerConfig) -> Option<Ray> {
    let mut r = ray.with_bounds(ray.t_near.max(config.near), ray.t_far.min(config.far));
    if !(r.t_near < r.t_far) {
        return None;
    }
    for b in [domain, config.clip.as_ref()].into_iter().flatten() {
        let iv = ray_aabb_intersect(&r, b)?;
        if !(iv.t_enter < iv.t_exit) {
            return None;
        }
        r = r.with_bounds(iv.t_enter, iv.t_exit);
    }
    Some(r)
}

/// Queries `field` at every sample position.
pub fn shade(field: &dyn RadianceField, ray: &Ray, samples: RaySamples) -> ShadedSamples {
    let n = samples.count();
    let mut sigma = Vec::with_capacity(n);
    let mut rgb = Vec::with_capacity(n);
    for &t in &samples.ts {
        let s = field.query(&ray.at(t), &ray.dir);
        sigma.push(s.sigma);
        rgb.push(s.rgb);
    }
    ShadedSamples {
        samples,
        sigma,
        rgb,
        visible: vec![true; n],
        source: vec![0; n],
        field_ids: vec![field.field_id().to_string()],
    }
}

#[derive(Debug, Clone)]
pub struct RayRender {
    pub shaded: ShadedSamples,
    pub quad: QuadratureResult,
    pub queries: u64,
}

/// Coarse pass, importance pass (coarse shading is reused), quadrature.
/// Returns `None` when the ray misses the sampled interval entirely.
pub fn render_ray(field: &dyn RadianceField, ray: &Ray, config: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<Option<RayRender>, RenderError> {
    let Some(r) = effective_interval(ray, field.domain().as_ref(), config) else { return Ok(None) };
    if !r.t_far.is_finite() {
        return Err(RenderError::NumericalDomain("unbounded ray: set far or a clip box".into()));
    }
    let bg = config.background_rgb();
    let coarse = shade(field, &r, stratified_samples(&r, config.n_coarse, config.jitter, rng));
    let mut queries = coarse.count() as u64;
    let shaded = if config.n_fine > 0 {
        let q = quadrature(&coarse, &bg)?;
        let fine_ts = importance_ts(&coarse.samples, &q.weights, config.n_fine, config.jitter, rng);
        let fine = shade(field, &r, RaySamples::from_ts(fine_ts, r.t_near, r.t_far));
        queries += fine.count() as u64;
        merge_shaded(coarse, fine)
    } else {
        coarse
    };
    let quad = quadrature(&shaded, &bg)?;
    Ok(Some(RayRender { shaded, quad, queries }))
}

/// Renders every pixel of `view` at the intrinsics' resolution.
pub fn render_image(field: &dyn RadianceField, view: &ViewRecord, intrinsics: &CameraIntrinsics, config: &SamplerConfig) -> Result<ImageBuffer, RenderError> {
    config.check()?;
    let (w, h) = (intrinsics.width, intrinsics.height);
    let bg = config.background.map(|c| c as f32);
    let rows: Vec<Vec<([f32; 3], f32, f32)>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let idx = v as u64 * w as u64 + u as u64;
                    let mut rng = pixel_rng(config.seed, idx);
                    let ray = pixel_ray(&view.pose, intrinsics, u as f64, v as f64);
                    Ok(match render_ray(field, &ray, config, &mut rng)? {
                        None => (bg, f32::NAN, 0.0),
                        Some(rr) => (
                            [rr.quad.color.x as f32, rr.quad.color.y as f32, rr.quad.color.z as f32],
                            rr.quad.depth.map_or(f32::NAN, |d| d as f32),
                            rr.quad.opacity as f32,
                        ),
                    })
                })
                .collect::<Result<Vec<_>, RenderError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut img = ImageBuffer::new(w, h);
    for (i, (c, d, o)) in rows.into_iter().flatten().enumerate() {
        img.rgb[i] = c;
        img.depth[i] = d;
        img.opacity[i] = o;
    }
    Ok(img)
}
