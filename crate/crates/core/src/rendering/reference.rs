//! Reference renderer for analytic fields. Density is piecewise constant
//! along a ray, so transmittance is integrated in closed form between
//! primitive boundaries and only color uses a midpoint rule.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{effective_interval, ImageBuffer, RenderError, SamplerConfig};
use crate::fields::{AnalyticField, RadianceField, Rgb};
use crate::geometry::{pixel_ray, Ray};
use crate::sfm::{CameraIntrinsics, ViewRecord};

/// Optical depth of one color piece.
pub const REFERENCE_PIECE_DEPTH: f64 = 0.01;

/// Optical depth after which a segment's remainder is lumped into one piece.
const SATURATION: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRay {
    pub color: Rgb,
    pub opacity: f64,
    pub depth: Option<f64>,
}

/// Renders one ray; `None` when the sampled interval is empty.
pub fn reference_ray(field: &AnalyticField, ray: &Ray, config: &SamplerConfig) -> Result<Option<ReferenceRay>, RenderError> {
    let Some(r) = effective_interval(ray, None, config) else { return Ok(None) };
    if !r.t_far.is_finite() {
        return Err(RenderError::NumericalDomain("unbounded ray: set far or a clip box".into()));
    }
    let bps = field.breakpoints(&r, r.t_near, r.t_far);
    let mut t_acc = 1.0f64;
    let mut color = Vector3::zeros();
    let mut opacity = 0.0;
    let mut depth = None;
    let mut push = |t_start: f64, t_end: f64, w: f64, c: Rgb, t_acc_before: f64, opacity: &mut f64| {
        // depth: linear in cumulative weight across the piece
        if depth.is_none() && *opacity + w >= 0.5 && w > 0.0 {
            let f = (0.5 - *opacity) / w;
            depth = Some(t_start + f.clamp(0.0, 1.0) * (t_end - t_start));
        }
        let _ = t_acc_before;
        *opacity += w;
        color += w * c;
    };
    for seg in bps.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if !(b > a) {
            continue;
        }
        let sigma = field.query(&r.at(0.5 * (a + b)), &r.dir).sigma;
        if sigma <= 0.0 {
            continue;
        }
        let len = b - a;
        let sat = (SATURATION / sigma).min(len);
        let pieces = ((sigma * sat) / REFERENCE_PIECE_DEPTH).ceil().max(1.0) as usize;
        let h = sat / pieces as f64;
        let step = (-sigma * h).exp();
        for j in 0..pieces {
            let t0 = a + j as f64 * h;
            let w = t_acc * (1.0 - step);
            let c = field.query(&r.at(t0 + 0.5 * h), &r.dir).rgb;
            push(t0, t0 + h, w, c, t_acc, &mut opacity);
            t_acc *= step;
        }
        if sat < len {
            let rest = (-sigma * (len - sat)).exp();
            let w = t_acc * (1.0 - rest);
            let c = field.query(&r.at(a + sat + 0.5 * h), &r.dir).rgb;
            push(a + sat, b, w, c, t_acc, &mut opacity);
            t_acc *= rest;
        }
        if t_acc < 1e-300 {
            t_acc = 0.0;
            break;
        }
    }
    color += t_acc * config.background_rgb();
    Ok(Some(ReferenceRay { color, opacity, depth }))
}

/// Reference image of `field` for `view`. Sample counts and the seed in
/// `config` are ignored; near, far, clip box and background apply.
pub fn render_reference(field: &AnalyticField, view: &ViewRecord, intrinsics: &CameraIntrinsics, config: &SamplerConfig) -> Result<ImageBuffer, RenderError> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let bg = config.background.map(|c| c as f32);
    let rows: Vec<Vec<([f32; 3], f32, f32)>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let ray = pixel_ray(&view.pose, intrinsics, u as f64, v as f64);
                    Ok(match reference_ray(field, &ray, config)? {
                        None => (bg, f32::NAN, 0.0),
                        Some(rr) => (
                            [rr.color.x as f32, rr.color.y as f32, rr.color.z as f32],
                            rr.depth.map_or(f32::NAN, |d| d as f32),
                            rr.opacity as f32,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Primitive, Shape};
    use crate::geometry::Aabb;
    use nalgebra::Point3;

    fn cfg() -> SamplerConfig {
        SamplerConfig { clip: Some(Aabb::from_center_half_extent(Point3::origin(), Vector3::repeat(2.0))), ..Default::default() }
    }

    #[test]
    fn homogeneous_slab_closed_form() {
        // sigma 2 over [-0.5, 0.5] along the ray, white, black background
        let region = Aabb::from_center_half_extent(Point3::origin(), Vector3::repeat(0.5));
        let f = AnalyticField::homogeneous("h", 2.0, Vector3::repeat(1.0), Some(region));
        let ray = Ray::new(Point3::new(0.0, 0.0, -3.0), Vector3::z(), 0.0, f64::INFINITY);
        let out = reference_ray(&f, &ray, &cfg()).unwrap().unwrap();
        let expect = 1.0 - (-2.0f64).exp();
        assert!((out.color.x - expect).abs() < 1e-12);
        assert!((out.opacity - expect).abs() < 1e-12);
        // median depth: 1 - exp(-2 s) = 0.5 -> s = ln 2 / 2 past the entry at t = 2.5
        let d = out.depth.unwrap();
        assert!((d - (2.5 + std::f64::consts::LN_2 / 2.0)).abs() < 1e-3);
    }

    #[test]
    fn nested_densities_use_the_densest() {
        let outer = Primitive::new(Shape::Sphere { center: Point3::origin(), radius: 1.0 }, 1.0, Vector3::new(1.0, 0.0, 0.0));
        let inner = Primitive::new(Shape::Sphere { center: Point3::origin(), radius: 0.5 }, 3.0, Vector3::new(0.0, 1.0, 0.0));
        let f = AnalyticField::new("n", vec![outer, inner]);
        let ray = Ray::new(Point3::new(0.0, 0.0, -3.0), Vector3::z(), 0.0, f64::INFINITY);
        let out = reference_ray(&f, &ray, &cfg()).unwrap().unwrap();
        // red over [2, 2.5], green over [2.5, 3.5], red over [3.5, 4]
        let t1 = (-0.5f64).exp();
        let t2 = t1 * (-3.0f64).exp();
        let red = (1.0 - t1) + t2 * (1.0 - (-0.5f64).exp());
        let green = t1 * (1.0 - (-3.0f64).exp());
        assert!((out.color.x - red).abs() < 1e-12, "{} vs {red}", out.color.x);
        assert!((out.color.y - green).abs() < 1e-12);
    }

    #[test]
    fn miss_is_background() {
        let f = AnalyticField::new("e", vec![]);
        let c = SamplerConfig { background: [0.2, 0.3, 0.4], ..cfg() };
        let ray = Ray::new(Point3::new(0.0, 0.0, -3.0), Vector3::z(), 0.0, f64::INFINITY);
        let out = reference_ray(&f, &ray, &c).unwrap().unwrap();
        assert_eq!(out.color, Vector3::new(0.2, 0.3, 0.4));
        assert_eq!(out.depth, None);
    }
}
