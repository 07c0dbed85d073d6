//! Ray-level composition of a scene field with ROI fields: candidate culling
//! by distance, depth-based ray filtering, sample replacement with padding to
//! a fixed per-ray count, multi-ROI overlap resolution and the pixel-level
//! baseline.

use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{RadianceField, Rgb};
use crate::geometry::{pixel_ray, ray_aabb_intersect, Aabb, Interval, Ray};
use crate::grouping::RoiSpec;
use crate::rendering::{pixel_rng, quadrature, render_ray, ImageBuffer, RaySamples, RenderError, SamplerConfig, ShadedSamples};
use crate::sfm::{CameraIntrinsics, ViewRecord};

#[derive(Debug, Error)]
pub enum CompositionError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("overlapping ROI intervals left unresolved on a ray")]
    IntervalOverlapUnresolved,
    #[error("image {name} is {got:?}, expected {expected:?}")]
    ResolutionMismatch { name: String, expected: (u32, u32), got: (u32, u32) },
    #[error("sample replacement without depth filtering supports a single ROI, got {0}")]
    MultiRoiWithoutDrf(usize),
    #[error("invalid composition config: {0}")]
    InvalidConfig(String),
}

/// A ROI ready for composition.
#[derive(Clone)]
pub struct RoiRuntime {
    pub spec: RoiSpec,
    pub field: Arc<dyn RadianceField>,
    pub d_max: f64,
    pub sampler: SamplerConfig,
}

impl std::fmt::Debug for RoiRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RoiRuntime")
            .field("name", &self.spec.name)
            .field("field", &self.field.field_id())
            .field("d_max", &self.d_max)
            .finish()
    }
}

impl RoiRuntime {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn samples_per_ray(&self) -> usize {
        self.sampler.total_samples()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPolicy {
    #[default]
    NearestDepthWins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompositionConfig {
    pub enable_rsr: bool,
    pub enable_drf: bool,
    pub enable_d_max: bool,
    pub scene_occlusion_precheck: bool,
    pub overlap_policy: OverlapPolicy,
    pub depth_threshold: f64,
    /// Occlusion margin; `None` means 1e-3 of the scene diagonal.
    pub occlusion_epsilon: Option<f64>,
    /// ROIs skipped entirely (by name).
    pub disabled_rois: Vec<String>,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self {
            enable_rsr: true,
            enable_drf: true,
            enable_d_max: true,
            scene_occlusion_precheck: true,
            overlap_policy: OverlapPolicy::NearestDepthWins,
            depth_threshold: 0.5,
            occlusion_epsilon: None,
            disabled_rois: Vec::new(),
        }
    }
}

impl CompositionConfig {
    pub fn check(&self, n_rois: usize) -> Result<(), CompositionError> {
        if !(self.depth_threshold > 0.0 && self.depth_threshold < 1.0) {
            return Err(CompositionError::InvalidConfig(format!("depth_threshold {} outside (0,1)", self.depth_threshold)));
        }
        if self.enable_rsr && !self.enable_drf && n_rois > 1 {
            return Err(CompositionError::MultiRoiWithoutDrf(n_rois));
        }
        Ok(())
    }

    fn active(&self, roi: &RoiRuntime) -> bool {
        !self.disabled_rois.iter().any(|n| n == roi.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NoIntersection,
    RejectedDistance,
    RejectedOccluded,
    RejectedDepth,
    Accepted,
}

impl Verdict {
    pub fn code(self) -> u8 {
        match self {
            Verdict::NoIntersection => 0,
            Verdict::RejectedDistance => 1,
            Verdict::RejectedOccluded => 2,
            Verdict::RejectedDepth => 3,
            Verdict::Accepted => 4,
        }
    }
}

/// Outcome of filtering one ROI on one ray. Accepted decisions carry the
/// box interval, the ROI depth (when DRF ran) and the cached ROI samples
/// (when the ROI field was shaded).
#[derive(Debug, Clone)]
pub struct RoiDecision {
    pub roi: usize,
    pub verdict: Verdict,
    pub interval: Option<Interval>,
    pub depth: Option<f64>,
    pub cache: Option<ShadedSamples>,
    /// Field queries spent deciding.
    pub queries: u64,
}

/// Every ROI's box interval on `ray`, or the reason it is not a candidate.
pub fn classify_rois(ray: &Ray, camera: &Point3<f64>, rois: &[RoiRuntime], config: &CompositionConfig) -> Vec<Result<Interval, Verdict>> {
    rois.iter()
        .map(|roi| {
            let Some(iv) = ray_aabb_intersect(ray, &roi.spec.aabb) else { return Err(Verdict::NoIntersection) };
            if config.enable_d_max && (camera - roi.spec.aabb.center()).norm() > roi.d_max {
                return Err(Verdict::RejectedDistance);
            }
            Ok(iv)
        })
        .collect()
}

/// Candidate ROIs for `ray` ordered by entry distance (name breaks ties).
pub fn roi_candidates(ray: &Ray, camera: &Point3<f64>, rois: &[RoiRuntime], config: &CompositionConfig) -> Vec<(usize, Interval)> {
    let mut out: Vec<(usize, Interval)> = classify_rois(ray, camera, rois, config)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| config.active(&rois[*i]))
        .filter_map(|(i, r)| r.ok().map(|iv| (i, iv)))
        .collect();
    out.sort_by(|a, b| a.1.t_enter.total_cmp(&b.1.t_enter).then_with(|| rois[a.0].name().cmp(rois[b.0].name())));
    out
}

/// Depth-based filtering of one candidate. `scene_depth` is the scene
/// field's depth on the same ray, used by the occlusion pre-check. The ROI
/// field is shaded with the ROI sampler keyed by `pixel`.
pub fn depth_filter(
    ray: &Ray,
    roi_index: usize,
    roi: &RoiRuntime,
    interval: Interval,
    scene_depth: Option<f64>,
    epsilon: f64,
    pixel: u64,
    config: &CompositionConfig,
) -> Result<RoiDecision, CompositionError> {
    let mut decision = RoiDecision { roi: roi_index, verdict: Verdict::Accepted, interval: Some(interval), depth: None, cache: None, queries: 0 };
    if config.enable_drf && config.scene_occlusion_precheck {
        if let Some(d) = scene_depth {
            if d < interval.t_enter - epsilon {
                decision.verdict = Verdict::RejectedOccluded;
                return Ok(decision);
            }
        }
    }
    // without RSR the ROI samples are only needed for the depth test
    if !config.enable_drf && !config.enable_rsr {
        return Ok(decision);
    }
    let mut rng = pixel_rng(roi.sampler.seed, pixel);
    let rendered = render_ray(roi.field.as_ref(), ray, &roi.sampler, &mut rng)?;
    let (depth, cache, queries) = match rendered {
        Some(r) => {
            let depth = if config.depth_threshold == 0.5 {
                r.quad.depth
            } else {
                crate::rendering::depth_at_weight(&r.quad, &r.shaded, config.depth_threshold)
            };
            (depth, Some(r.shaded), r.queries)
        }
        None => (None, None, 0),
    };
    decision.depth = depth;
    decision.queries = queries;
    if config.enable_drf && !depth.is_some_and(|d| interval.contains(d)) {
        decision.verdict = Verdict::RejectedDepth;
        return Ok(decision);
    }
    decision.cache = if config.enable_rsr { cache } else { None };
    Ok(decision)
}

/// `a` minus the union of `taken`, as sorted disjoint pieces.
fn subtract(a: Interval, taken: &[Interval]) -> Vec<Interval> {
    let mut pieces = vec![a];
    for t in taken {
        let mut next = Vec::with_capacity(pieces.len() + 1);
        for p in pieces {
            if t.t_exit <= p.t_enter || t.t_enter >= p.t_exit {
                next.push(p);
                continue;
            }
            if t.t_enter > p.t_enter {
                next.push(Interval::new(p.t_enter, t.t_enter));
            }
            if t.t_exit < p.t_exit {
                next.push(Interval::new(t.t_exit, p.t_exit));
            }
        }
        pieces = next;
    }
    pieces
}

/// Accepted ROI claim for overlap resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub name: String,
    pub interval: Interval,
    pub depth: f64,
}

/// Nearest-depth-wins: claims are processed by (depth, name) and each keeps
/// what earlier claims left of its interval.
pub fn resolve_overlaps(claims: &[Claim]) -> Vec<Vec<Interval>> {
    let mut order: Vec<usize> = (0..claims.len()).collect();
    order.sort_by(|&a, &b| claims[a].depth.total_cmp(&claims[b].depth).then_with(|| claims[a].name.cmp(&claims[b].name)));
    let mut out = vec![Vec::new(); claims.len()];
    let mut taken = Vec::new();
    for i in order {
        out[i] = subtract(claims[i].interval, &taken);
        taken.push(claims[i].interval);
    }
    out
}

fn in_pieces(t: f64, pieces: &[Interval]) -> bool {
    pieces.iter().any(|p| p.contains(t))
}

/// A composed ray: fixed-length sample sequence with invisible padding at
/// `t = 0` followed by the visible samples in ascending order.
#[derive(Debug, Clone)]
pub struct ComposedRay {
    pub shaded: ShadedSamples,
    /// Queries made while composing (zero when cached ROI samples are reused).
    pub compose_queries: Vec<u64>,
}

struct Visible {
    t: f64,
    sigma: f64,
    rgb: Rgb,
    source: u16,
}

/// Builds the composed sample sequence.
///
/// With replacement on, scene samples inside any accepted piece are hidden
/// and each accepted ROI contributes its cached samples inside its own
/// pieces. With replacement off, scene sample positions are kept and the
/// ones inside a piece are re-shaded by that ROI's field.
///
/// The sequence length is `scene.count() + pad` where `pad` is the sum of
/// the per-ray ROI sample counts (zero without replacement), for every ray.
pub fn compose_ray(
    ray: &Ray,
    scene: &ShadedSamples,
    n_scene: usize,
    rois: &[RoiRuntime],
    accepted: &[(&RoiDecision, Vec<Interval>)],
    t_far: f64,
    config: &CompositionConfig,
) -> Result<ComposedRay, CompositionError> {
    for (i, (_, a)) in accepted.iter().enumerate() {
        for (_, b) in &accepted[i + 1..] {
            for p in a {
                for q in b {
                    if p.t_enter.max(q.t_enter) < p.t_exit.min(q.t_exit) {
                        return Err(CompositionError::IntervalOverlapUnresolved);
                    }
                }
            }
        }
    }
    let pad_total: usize = if config.enable_rsr { rois.iter().filter(|r| config.active(r)).map(|r| r.samples_per_ray()).sum() } else { 0 };
    let total = n_scene + pad_total;
    let mut compose_queries = vec![0u64; rois.len()];
    let mut visible: Vec<Visible> = Vec::with_capacity(total);
    for k in 0..scene.count() {
        let t = scene.samples.ts[k];
        let owner = accepted.iter().find(|(_, pieces)| in_pieces(t, pieces));
        match owner {
            None => visible.push(Visible { t, sigma: scene.sigma[k], rgb: scene.rgb[k], source: 0 }),
            // replaced by the ROI's own samples below
            Some(_) if config.enable_rsr => {}
            Some((d, _)) => {
                let roi = &rois[d.roi];
                let s = roi.field.query(&ray.at(t), &ray.dir);
                compose_queries[d.roi] += 1;
                visible.push(Visible { t, sigma: s.sigma, rgb: s.rgb, source: d.roi as u16 + 1 });
            }
        }
    }
    if config.enable_rsr {
        for (d, pieces) in accepted {
            let Some(cache) = &d.cache else { continue };
            for k in 0..cache.count() {
                let t = cache.samples.ts[k];
                if in_pieces(t, pieces) {
                    visible.push(Visible { t, sigma: cache.sigma[k], rgb: cache.rgb[k], source: d.roi as u16 + 1 });
                }
            }
        }
    }
    // stable: scene samples stay ahead of ROI samples at equal t
    visible.sort_by(|a, b| a.t.total_cmp(&b.t));
    if visible.len() > total {
        return Err(CompositionError::IntervalOverlapUnresolved);
    }
    let pads = total - visible.len();
    let mut ts = vec![0.0; pads];
    let mut sigma = vec![0.0; pads];
    let mut rgb = vec![Vector3::zeros(); pads];
    let mut vis = vec![false; pads];
    let mut source = vec![0u16; pads];
    for v in visible {
        ts.push(v.t);
        sigma.push(v.sigma);
        rgb.push(v.rgb);
        vis.push(true);
        source.push(v.source);
    }
    let mut field_ids = vec![scene.field_ids.first().cloned().unwrap_or_default()];
    field_ids.extend(rois.iter().map(|r| r.field.field_id().to_string()));
    let shaded = ShadedSamples { samples: RaySamples::from_ts(ts, 0.0, t_far), sigma, rgb, visible: vis, source, field_ids };
    Ok(ComposedRay { shaded, compose_queries })
}

/// Everything computed for one pixel.
#[derive(Debug, Clone)]
pub struct PixelOutcome {
    pub color: Rgb,
    pub depth: Option<f64>,
    pub opacity: f64,
    pub verdicts: Vec<Verdict>,
    pub scene_queries: u64,
    pub drf_queries: Vec<u64>,
    pub drf_rays: Vec<bool>,
    pub compose_queries: Vec<u64>,
    pub sample_count: usize,
}

/// Full per-pixel pipeline: scene render, candidate culling, depth
/// filtering, overlap resolution, composition and quadrature.
#[allow(clippy::too_many_arguments)]
pub fn compose_pixel(
    scene_field: &dyn RadianceField,
    rois: &[RoiRuntime],
    ray: &Ray,
    camera: &Point3<f64>,
    pixel: u64,
    scene_sampler: &SamplerConfig,
    epsilon: f64,
    config: &CompositionConfig,
) -> Result<PixelOutcome, CompositionError> {
    let n_scene = scene_sampler.total_samples();
    let bg = scene_sampler.background_rgb();
    let mut rng = pixel_rng(scene_sampler.seed, pixel);
    let scene = render_ray(scene_field, ray, scene_sampler, &mut rng)?;
    let (scene_shaded, scene_depth, scene_queries, t_far) = match scene {
        Some(r) => {
            let t_far = r.shaded.samples.t_far;
            (r.shaded, r.quad.depth, r.queries, t_far)
        }
        None => {
            let empty = ShadedSamples {
                samples: RaySamples::from_ts(Vec::new(), 0.0, 0.0),
                sigma: Vec::new(),
                rgb: Vec::new(),
                visible: Vec::new(),
                source: Vec::new(),
                field_ids: vec![scene_field.field_id().to_string()],
            };
            (empty, None, 0, 0.0)
        }
    };
    // a missed scene ray still gets a full-length sequence
    let scene_shaded = if scene_shaded.count() < n_scene { pad_front(scene_shaded, n_scene) } else { scene_shaded };

    let bounded = ray.with_bounds(ray.t_near.max(scene_sampler.near), ray.t_far.min(scene_sampler.far));
    let mut verdicts = vec![Verdict::NoIntersection; rois.len()];
    let mut drf_queries = vec![0u64; rois.len()];
    let mut drf_rays = vec![false; rois.len()];
    let mut decisions = Vec::new();
    let classes = classify_rois(&bounded, camera, rois, config);
    for (i, c) in classes.iter().enumerate() {
        if let Err(v) = c {
            verdicts[i] = *v;
        }
    }
    for (i, iv) in roi_candidates(&bounded, camera, rois, config) {
        let d = depth_filter(ray, i, &rois[i], iv, scene_depth, epsilon, pixel, config)?;
        verdicts[i] = d.verdict;
        drf_queries[i] = d.queries;
        drf_rays[i] = d.queries > 0;
        if d.verdict == Verdict::Accepted {
            decisions.push(d);
        }
    }
    let claims: Vec<Claim> = decisions
        .iter()
        .map(|d| {
            let iv = d.interval.expect("accepted decisions carry an interval");
            Claim { name: rois[d.roi].name().to_string(), interval: iv, depth: d.depth.unwrap_or(iv.t_enter) }
        })
        .collect();
    let pieces = resolve_overlaps(&claims);
    let accepted: Vec<(&RoiDecision, Vec<Interval>)> = decisions.iter().zip(pieces).collect();
    let composed = compose_ray(ray, &scene_shaded, n_scene, rois, &accepted, t_far, config)?;
    let q = quadrature(&composed.shaded, &bg)?;
    Ok(PixelOutcome {
        color: q.color,
        depth: q.depth,
        opacity: q.opacity,
        verdicts,
        scene_queries,
        drf_queries,
        drf_rays,
        compose_queries: composed.compose_queries,
        sample_count: composed.shaded.count(),
    })
}

fn pad_front(s: ShadedSamples, n: usize) -> ShadedSamples {
    let pads = n - s.count();
    let mut ts = vec![0.0; pads];
    ts.extend(&s.samples.ts);
    let mut sigma = vec![0.0; pads];
    sigma.extend(&s.sigma);
    let mut rgb = vec![Vector3::zeros(); pads];
    rgb.extend(&s.rgb);
    let mut visible = vec![false; pads];
    visible.extend(&s.visible);
    let mut source = vec![0; pads];
    source.extend(&s.source);
    ShadedSamples { samples: RaySamples::from_ts(ts, 0.0, s.samples.t_far), sigma, rgb, visible, source, field_ids: s.field_ids }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoiStats {
    pub name: String,
    pub intersecting_rays: u64,
    pub rejected_distance: u64,
    pub rejected_occluded: u64,
    pub rejected_depth: u64,
    pub accepted_rays: u64,
    /// Rays on which the ROI field was shaded for filtering/caching.
    pub drf_rays: u64,
    pub drf_queries: u64,
    /// Queries made during composition (only without sample replacement).
    pub compose_queries: u64,
    /// Per-pixel verdict codes: 0 none, 1 distance, 2 occluded, 3 depth, 4 accepted.
    #[serde(skip)]
    pub heatmap: Vec<u8>,
}

impl RoiStats {
    pub fn field_queries(&self) -> u64 {
        self.drf_queries + self.compose_queries
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositionStats {
    pub width: u32,
    pub height: u32,
    pub rays: u64,
    /// Sample count of every composed ray.
    pub composed_samples_per_ray: usize,
    pub scene_queries: u64,
    pub rois: Vec<RoiStats>,
}

impl CompositionStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    /// Red: ray meets the box; green: ray accepted.
    pub fn heatmap_image(&self, roi: usize) -> ImageBuffer {
        let mut img = ImageBuffer::new(self.width, self.height);
        for (p, &code) in img.rgb.iter_mut().zip(&self.rois[roi].heatmap) {
            *p = [if code > 0 { 1.0 } else { 0.0 }, if code == 4 { 1.0 } else { 0.0 }, 0.0];
        }
        img
    }
}

/// Scene diagonal used for the default occlusion margin.
pub fn occlusion_epsilon(scene_field: &dyn RadianceField, sampler: &SamplerConfig, config: &CompositionConfig) -> f64 {
    if let Some(e) = config.occlusion_epsilon {
        return e;
    }
    let diag = scene_field.domain().or(sampler.clip).map(|b: Aabb| b.diagonal()).unwrap_or(1.0);
    1e-3 * diag
}

/// Composed render of a whole view.
pub fn render_image_composed(
    scene_field: &dyn RadianceField,
    rois: &[RoiRuntime],
    view: &ViewRecord,
    intrinsics: &CameraIntrinsics,
    sampler: &SamplerConfig,
    config: &CompositionConfig,
) -> Result<(ImageBuffer, CompositionStats), CompositionError> {
    sampler.check()?;
    let active = rois.iter().filter(|r| config.active(r)).count();
    config.check(active)?;
    for r in rois {
        r.sampler.check()?;
    }
    let (w, h) = (intrinsics.width, intrinsics.height);
    let eps = occlusion_epsilon(scene_field, sampler, config);
    let camera = view.center();
    let rows: Vec<Vec<PixelOutcome>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let idx = v as u64 * w as u64 + u as u64;
                    let ray = pixel_ray(&view.pose, intrinsics, u as f64, v as f64);
                    compose_pixel(scene_field, rois, &ray, &camera, idx, sampler, eps, config)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let mut img = ImageBuffer::new(w, h);
    let n = (w * h) as usize;
    let mut stats = CompositionStats {
        width: w,
        height: h,
        rays: n as u64,
        composed_samples_per_ray: 0,
        scene_queries: 0,
        rois: rois.iter().map(|r| RoiStats { name: r.name().to_string(), heatmap: vec![0; n], ..Default::default() }).collect(),
    };
    for (i, o) in rows.into_iter().flatten().enumerate() {
        img.rgb[i] = [o.color.x as f32, o.color.y as f32, o.color.z as f32];
        img.depth[i] = o.depth.map_or(f32::NAN, |d| d as f32);
        img.opacity[i] = o.opacity as f32;
        if i == 0 {
            stats.composed_samples_per_ray = o.sample_count;
        } else if o.sample_count != stats.composed_samples_per_ray {
            return Err(CompositionError::InvalidConfig("composed rays differ in length".into()));
        }
        stats.scene_queries += o.scene_queries;
        for (r, s) in stats.rois.iter_mut().enumerate() {
            let v = o.verdicts[r];
            s.heatmap[i] = v.code();
            match v {
                Verdict::NoIntersection => {}
                Verdict::RejectedDistance => s.rejected_distance += 1,
                Verdict::RejectedOccluded => s.rejected_occluded += 1,
                Verdict::RejectedDepth => s.rejected_depth += 1,
                Verdict::Accepted => s.accepted_rays += 1,
            }
            if v != Verdict::NoIntersection {
                s.intersecting_rays += 1;
            }
            s.drf_rays += o.drf_rays[r] as u64;
            s.drf_queries += o.drf_queries[r];
            s.compose_queries += o.compose_queries[r];
        }
    }
    Ok((img, stats))
}

/// Naive baseline: whole-image renders per field, then per pixel the ROI
/// image replaces the scene image where that ROI's ray would be accepted
/// (ROI depth inside the box interval and not occluded in the scene depth
/// map; any box hit when filtering is off). Nearest depth wins.
pub fn pixel_level_compose(
    scene_image: &ImageBuffer,
    roi_images: &[ImageBuffer],
    rois: &[RoiRuntime],
    view: &ViewRecord,
    intrinsics: &CameraIntrinsics,
    sampler: &SamplerConfig,
    config: &CompositionConfig,
) -> Result<ImageBuffer, CompositionError> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let check = |name: &str, img: &ImageBuffer| {
        if (img.width, img.height) != (w, h) {
            Err(CompositionError::ResolutionMismatch { name: name.to_string(), expected: (w, h), got: (img.width, img.height) })
        } else {
            Ok(())
        }
    };
    check("scene", scene_image)?;
    if roi_images.len() != rois.len() {
        return Err(CompositionError::InvalidConfig(format!("{} ROI images for {} ROIs", roi_images.len(), rois.len())));
    }
    for (r, img) in rois.iter().zip(roi_images) {
        check(r.name(), img)?;
    }
    let eps = config.occlusion_epsilon.unwrap_or_else(|| sampler.clip.map_or(1e-3, |b| 1e-3 * b.diagonal()));
    let camera = view.center();
    let mut out = scene_image.clone();
    for v in 0..h {
        for u in 0..w {
            let i = out.index(u, v);
            let ray = pixel_ray(&view.pose, intrinsics, u as f64, v as f64);
            let ray = ray.with_bounds(ray.t_near.max(sampler.near), ray.t_far.min(sampler.far));
            let scene_depth = scene_image.depth[i];
            let mut best: Option<(f64, &str, usize)> = None;
            for (r, iv) in roi_candidates(&ray, &camera, rois, config) {
                let d = roi_images[r].depth[i] as f64;
                let key = if config.enable_drf {
                    if !d.is_finite() || !iv.contains(d) {
                        continue;
                    }
                    if config.scene_occlusion_precheck && (scene_depth as f64) < iv.t_enter - eps {
                        continue;
                    }
                    d
                } else if d.is_finite() {
                    d
                } else {
                    iv.t_enter
                };
                let name = rois[r].name();
                if best.is_none_or(|(bd, bn, _)| key < bd || (key == bd && name < bn)) {
                    best = Some((key, name, r));
                }
            }
            if let Some((_, _, r)) = best {
                out.rgb[i] = roi_images[r].rgb[i];
                out.depth[i] = roi_images[r].depth[i];
                out.opacity[i] = roi_images[r].opacity[i];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
