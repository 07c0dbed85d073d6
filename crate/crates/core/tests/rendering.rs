use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use roi_core::fields::{AnalyticField, Primitive, RadianceField, Shape};
use roi_core::fixtures::fixture;
use roi_core::geometry::{pixel_ray, Aabb, Ray};
use roi_core::metrics::psnr;
use roi_core::rendering::{quadrature, render_image, render_reference, stratified_samples, ImageBuffer, RaySamples, ShadedSamples};

/// Uniform midpoint marcher with its own slab clipping and compositing.
fn dense_march(field: &dyn RadianceField, ray: &Ray, clip: &Aabb, n: usize) -> [f64; 3] {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        let inv = 1.0 / ray.dir[a];
        let (mut ta, mut tb) = ((clip.min[a] - ray.origin[a]) * inv, (clip.max[a] - ray.origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    let mut out = [0.0; 3];
    if !(t0 < t1) {
        return out;
    }
    let h = (t1 - t0) / n as f64;
    let mut trans = 1.0;
    for k in 0..n {
        let t = t0 + (k as f64 + 0.5) * h;
        let s = field.query(&(ray.origin + t * ray.dir), &ray.dir);
        let a = 1.0 - (-s.sigma * h).exp();
        for c in 0..3 {
            out[c] += trans * a * s.rgb[c];
        }
        trans *= 1.0 - a;
    }
    out
}

#[test]
fn checkered_sphere_matches_dense_marcher() {
    let f = fixture("checkered-sphere").unwrap();
    let recon = f.reconstruction(0).unwrap();
    let (view, k) = recon.view_and_intrinsics(*recon.views.keys().nth(0).unwrap()).unwrap();
    let img = render_image(&f.oracle, view, k, &f.sampler(3)).unwrap();
    let mut dense = ImageBuffer::new(k.width, k.height);
    for v in 0..k.height {
        for u in 0..k.width {
            let ray = pixel_ray(&view.pose, k, u as f64, v as f64);
            let c = dense_march(&f.oracle, &ray, &f.scene_aabb, 4096);
            let i = dense.index(u, v);
            dense.rgb[i] = c.map(|x| x as f32);
        }
    }
    let p = psnr(&img, &dense).unwrap();
    assert!(p > 40.0, "psnr {p}");
}

#[test]
fn reference_renderer_agrees_with_dense_marcher() {
    let f = fixture("checkered-sphere").unwrap();
    let recon = f.reconstruction(0).unwrap();
    let (view, k) = recon.view_and_intrinsics(*recon.views.keys().nth(3).unwrap()).unwrap();
    let img = render_reference(&f.oracle, view, k, &f.sampler(0)).unwrap();
    let mut dense = ImageBuffer::new(k.width, k.height);
    for v in 0..k.height {
        for u in 0..k.width {
            let ray = pixel_ray(&view.pose, k, u as f64, v as f64);
            let i = dense.index(u, v);
            dense.rgb[i] = dense_march(&f.oracle, &ray, &f.scene_aabb, 16384).map(|x| x as f32);
        }
    }
    let p = psnr(&img, &dense).unwrap();
    assert!(p > 45.0, "psnr {p}");
}

fn homogeneous_color(n: usize) -> f64 {
    let f = AnalyticField::homogeneous("h", 2.0, Vector3::repeat(1.0), None);
    let ray = Ray::new(Point3::origin(), Vector3::z(), 0.0, 1.0);
    let mut rng = roi_core::rendering::pixel_rng(0, 0);
    let s = stratified_samples(&ray, n, false, &mut rng);
    let shaded = roi_core::rendering::shade(&f, &ray, s);
    quadrature(&shaded, &Vector3::zeros()).unwrap().color.x
}

#[test]
fn refinement_error_is_first_order() {
    let exact = 1.0 - (-2.0f64).exp();
    let ns = [32usize, 64, 128, 256, 512, 1024];
    let pts: Vec<(f64, f64)> = ns.iter().map(|&n| ((n as f64).ln(), (homogeneous_color(n) - exact).abs().ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!(slope <= -0.9, "slope {slope}");
}

#[test]
fn same_seed_renders_bitwise_equal() {
    let f = fixture("occluder").unwrap();
    let recon = f.reconstruction(0).unwrap();
    let (view, k) = recon.view_and_intrinsics(*recon.views.keys().nth(2).unwrap()).unwrap();
    let a = render_image(&f.oracle, view, k, &f.sampler(11)).unwrap();
    let b = render_image(&f.oracle, view, k, &f.sampler(11)).unwrap();
    assert!(a.bitwise_eq(&b));
}

fn shaded(sig: Vec<f64>, rgb: Vec<[f64; 3]>) -> ShadedSamples {
    let n = sig.len();
    let ts: Vec<f64> = (0..n).map(|i| i as f64 + 0.5).collect();
    ShadedSamples {
        samples: RaySamples::from_ts(ts, 0.0, n as f64),
        sigma: sig,
        rgb: rgb.into_iter().map(Vector3::from).collect(),
        visible: vec![true; n],
        source: vec![0; n],
        field_ids: vec!["p".into()],
    }
}

proptest! {
    #[test]
    fn transmittance_monotone_and_color_bounded(
        data in prop::collection::vec((0.0f64..50.0, prop::array::uniform3(0.0f64..=1.0)), 1..64),
        bg in prop::array::uniform3(0.0f64..=1.0),
    ) {
        let (sig, rgb): (Vec<_>, Vec<_>) = data.into_iter().unzip();
        let q = quadrature(&shaded(sig, rgb), &Vector3::from(bg)).unwrap();
        // T_k = 1 - sum_{j<k} w_j is non-increasing iff every weight is >= 0
        let mut t_prev = 1.0;
        for w in &q.weights {
            prop_assert!(*w >= 0.0);
            let t = t_prev - w;
            prop_assert!(t <= t_prev);
            t_prev = t;
        }
        prop_assert!((t_prev - q.t_end).abs() < 1e-9);
        for c in q.color.iter() {
            prop_assert!((0.0..=1.0 + 1e-12).contains(c));
        }
        let total: f64 = q.weights.iter().sum::<f64>() + q.t_end;
        prop_assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn shape_intervals_match_membership() {
    let shapes = [
        Shape::Sphere { center: Point3::new(0.1, -0.2, 0.3), radius: 0.5 },
        Shape::Cuboid { aabb: Aabb::new(Point3::new(-0.3, -0.1, 0.0), Point3::new(0.4, 0.2, 0.6)) },
        Shape::Slab { axis: 1, min: -0.25, max: 0.1 },
    ];
    let dirs = [Vector3::new(0.3, 0.8, 0.5).normalize(), Vector3::new(-0.7, 0.1, 0.7).normalize(), Vector3::x()];
    for shape in &shapes {
        let prim = Primitive::new(shape.clone(), 1.0, Vector3::repeat(1.0));
        let f = AnalyticField::new("s", vec![prim]);
        for d in &dirs {
            let ray = Ray::new(Point3::new(-1.0, -1.2, -0.9) + 0.0 * d, *d, 0.0, 5.0);
            let iv = shape.ray_interval(&ray);
            for i in 0..2000 {
                let t = i as f64 * 0.0025 + 0.00123;
                let inside = f.query(&ray.at(t), d).sigma > 0.0;
                let pred = iv.is_some_and(|(a, b)| t >= a && t <= b);
                assert_eq!(inside, pred, "{shape:?} {d:?} t={t}");
            }
        }
    }
}
