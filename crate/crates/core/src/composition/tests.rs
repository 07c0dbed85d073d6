use super::*;
use crate::fields::{bake_grid, AnalyticField, CountingField, Primitive, Shape};
use crate::geometry::Pose;
use crate::rendering::render_image;
use crate::sfm::CameraModel;
use proptest::prelude::*;

fn bx(c: [f64; 3], h: f64) -> Aabb {
    Aabb::from_center_half_extent(Point3::from(c), Vector3::repeat(h))
}

fn cube(c: [f64; 3], h: f64, sigma: f64, rgb: [f64; 3]) -> Primitive {
    Primitive::new(Shape::Cuboid { aabb: bx(c, h) }, sigma, Vector3::from(rgb))
}

fn roi(name: &str, aabb: Aabb, field: Arc<dyn RadianceField>, sampler: &SamplerConfig) -> RoiRuntime {
    RoiRuntime { spec: RoiSpec::new(name, aabb), field, d_max: 100.0, sampler: sampler.clone() }
}

fn sampler(n_coarse: usize, n_fine: usize) -> SamplerConfig {
    SamplerConfig { n_coarse, n_fine, clip: Some(bx([0.0; 3], 4.0)), ..Default::default() }
}

fn along_y() -> Ray {
    Ray::new(Point3::new(0.0, -3.0, 0.0), Vector3::y(), 0.0, f64::INFINITY)
}

fn cam(n: u32) -> CameraIntrinsics {
    CameraIntrinsics { camera_id: 1, model: CameraModel::Pinhole, width: n, height: n, fx: n as f64, fy: n as f64, cx: n as f64 / 2.0, cy: n as f64 / 2.0 }
}

fn view() -> ViewRecord {
    ViewRecord {
        view_id: 1,
        name: "v".into(),
        camera_id: 1,
        pose: Pose::look_at(Point3::new(0.3, -3.0, 0.4), Point3::origin(), Vector3::z()).unwrap(),
        observations: vec![],
    }
}

fn scene_field() -> AnalyticField {
    AnalyticField::new("scene", vec![cube([0.0; 3], 0.3, 40.0, [0.8, 0.2, 0.1]), cube([0.0, 0.0, -1.2], 0.5, 5.0, [0.1, 0.7, 0.2])])
}

#[test]
fn candidates_respect_d_max_and_order() {
    let s = sampler(8, 0);
    let f: Arc<dyn RadianceField> = Arc::new(scene_field());
    let mut rois = vec![
        roi("c", bx([0.0, 2.0, 0.0], 0.2), f.clone(), &s),
        roi("a", bx([0.0, -1.0, 0.0], 0.2), f.clone(), &s),
        roi("b", bx([0.0, 0.5, 0.0], 0.2), f.clone(), &s),
    ];
    let cam = Point3::new(0.0, -3.0, 0.0);
    let cfg = CompositionConfig::default();
    let got: Vec<&str> = roi_candidates(&along_y(), &cam, &rois, &cfg).iter().map(|(i, _)| rois[*i].name()).collect();
    assert_eq!(got, vec!["a", "b", "c"]);

    rois[2].d_max = 4.0; // box "b" sits 3.5 from the camera, "c" 5.0
    rois[0].d_max = 4.0;
    let got: Vec<&str> = roi_candidates(&along_y(), &cam, &rois, &cfg).iter().map(|(i, _)| rois[*i].name()).collect();
    assert_eq!(got, vec!["a", "b"]);
    let no_dmax = CompositionConfig { enable_d_max: false, ..Default::default() };
    assert_eq!(roi_candidates(&along_y(), &cam, &rois, &no_dmax).len(), 3);
}

#[test]
fn empty_corner_rejected_by_depth() {
    // box larger than the cube; a ray through the empty part of the box
    let s = sampler(32, 32);
    let f: Arc<dyn RadianceField> = Arc::new(scene_field());
    let r = roi("r", bx([0.0; 3], 0.6), f, &s);
    let ray = Ray::new(Point3::new(0.5, -3.0, 0.5), Vector3::y(), 0.0, f64::INFINITY);
    let iv = ray_aabb_intersect(&ray, &r.spec.aabb).unwrap();
    let d = depth_filter(&ray, 0, &r, iv, None, 1e-3, 0, &CompositionConfig::default()).unwrap();
    assert_eq!(d.verdict, Verdict::RejectedDepth);
    let hit = depth_filter(&along_y(), 0, &r, ray_aabb_intersect(&along_y(), &r.spec.aabb).unwrap(), None, 1e-3, 0, &CompositionConfig::default()).unwrap();
    assert_eq!(hit.verdict, Verdict::Accepted);
    let depth = hit.depth.unwrap();
    assert!((depth - 2.7).abs() < 0.05, "{depth}");
}

#[test]
fn occluded_rejected_without_roi_queries() {
    let s = sampler(32, 32);
    let f = Arc::new(CountingField::new(scene_field()));
    let r = roi("r", bx([0.0, 1.0, 0.0], 0.3), f.clone(), &s);
    let iv = ray_aabb_intersect(&along_y(), &r.spec.aabb).unwrap();
    // scene surface at t = 2.7, box starts at t = 3.7
    let d = depth_filter(&along_y(), 0, &r, iv, Some(2.7), 1e-3, 0, &CompositionConfig::default()).unwrap();
    assert_eq!(d.verdict, Verdict::RejectedOccluded);
    assert_eq!(f.queries(), 0);
}

fn flat_samples(ts: &[f64], t_far: f64, sigma: f64, rgb: [f64; 3], id: &str) -> ShadedSamples {
    let n = ts.len();
    ShadedSamples {
        samples: RaySamples::from_ts(ts.to_vec(), 0.0, t_far),
        sigma: vec![sigma; n],
        rgb: vec![Vector3::from(rgb); n],
        visible: vec![true; n],
        source: vec![0; n],
        field_ids: vec![id.into()],
    }
}

#[test]
fn six_plus_six_is_twelve() {
    let s = SamplerConfig { n_coarse: 3, n_fine: 3, ..sampler(3, 3) };
    let f: Arc<dyn RadianceField> = Arc::new(scene_field());
    let rois = vec![roi("r", bx([0.0; 3], 0.5), f, &s)];
    let scene = flat_samples(&[0.5, 1.5, 2.5, 3.5, 4.5, 5.5], 6.0, 0.3, [1.0, 0.0, 0.0], "scene");
    let cfg = CompositionConfig::default();
    // nothing accepted
    let none = compose_ray(&along_y(), &scene, 6, &rois, &[], 6.0, &cfg).unwrap();
    assert_eq!(none.shaded.count(), 12);
    // accepted with 6 cached samples, some outside the interval
    let cache = flat_samples(&[2.0, 2.4, 2.6, 3.0, 3.4, 3.9], 6.0, 2.0, [0.0, 1.0, 0.0], "roi");
    let dec = RoiDecision { roi: 0, verdict: Verdict::Accepted, interval: Some(Interval::new(2.5, 3.5)), depth: Some(2.7), cache: Some(cache), queries: 6 };
    let acc = vec![(&dec, vec![Interval::new(2.5, 3.5)])];
    let c = compose_ray(&along_y(), &scene, 6, &rois, &acc, 6.0, &cfg).unwrap();
    assert_eq!(c.shaded.count(), 12);
    assert_eq!(c.compose_queries, vec![0]);
    let vis: Vec<f64> = c.shaded.samples.ts.iter().zip(&c.shaded.visible).filter(|(_, v)| **v).map(|(t, _)| *t).collect();
    assert_eq!(vis, vec![0.5, 1.5, 2.6, 3.0, 3.4, 4.5, 5.5]);
    for k in 0..12 {
        if !c.shaded.visible[k] {
            assert_eq!((c.shaded.samples.ts[k], c.shaded.sigma[k]), (0.0, 0.0));
        }
    }
}

#[test]
fn no_accepted_roi_matches_scene() {
    let scene = flat_samples(&[0.5, 1.5, 2.5, 3.5, 4.5, 5.5], 6.0, 0.3, [0.4, 0.5, 0.6], "scene");
    let s = sampler(3, 3);
    let f: Arc<dyn RadianceField> = Arc::new(scene_field());
    let rois = vec![roi("r", bx([0.0; 3], 0.5), f, &s)];
    let c = compose_ray(&along_y(), &scene, 6, &rois, &[], 6.0, &CompositionConfig::default()).unwrap();
    let bg = Vector3::new(0.1, 0.1, 0.1);
    let a = quadrature(&c.shaded, &bg).unwrap().color;
    let b = quadrature(&scene, &bg).unwrap().color;
    assert!((a - b).amax() <= 1e-12);
}

#[test]
fn overlap_resolution() {
    let claim = |n: &str, a: f64, b: f64, d: f64| Claim { name: n.into(), interval: Interval::new(a, b), depth: d };
    let disjoint = resolve_overlaps(&[claim("a", 1.0, 2.0, 1.5), claim("b", 3.0, 4.0, 3.5)]);
    assert_eq!(disjoint, vec![vec![Interval::new(1.0, 2.0)], vec![Interval::new(3.0, 4.0)]]);
    let nested = resolve_overlaps(&[claim("outer", 1.0, 5.0, 3.5), claim("inner", 2.0, 3.0, 2.2)]);
    assert_eq!(nested[0], vec![Interval::new(1.0, 2.0), Interval::new(3.0, 5.0)]);
    assert_eq!(nested[1], vec![Interval::new(2.0, 3.0)]);
    let tie = resolve_overlaps(&[claim("z", 1.0, 3.0, 2.0), claim("m", 2.0, 4.0, 2.0)]);
    assert_eq!(tie[1], vec![Interval::new(2.0, 4.0)]);
    assert_eq!(tie[0], vec![Interval::new(1.0, 2.0)]);
}

#[test]
fn disabled_rois_reproduce_scene_render() {
    let s = sampler(16, 16);
    let scene = scene_field();
    let f: Arc<dyn RadianceField> = Arc::new(scene_field());
    let rois = vec![roi("r", bx([0.0; 3], 0.5), f, &s)];
    let cfg = CompositionConfig { disabled_rois: vec!["r".into()], ..Default::default() };
    let (img, stats) = render_image_composed(&scene, &rois, &view(), &cam(12), &s, &cfg).unwrap();
    let plain = render_image(&scene, &view(), &cam(12), &s).unwrap();
    assert!(img.bitwise_eq(&plain));
    assert_eq!(stats.rois[0].drf_queries, 0);
    assert_eq!(stats.composed_samples_per_ray, 32);
}

#[test]
fn identity_composition_is_exact() {
    let s = sampler(16, 16);
    let scene = scene_field();
    let f: Arc<dyn RadianceField> = Arc::new(scene_field());
    let rois = vec![roi("r", bx([0.0; 3], 0.5), f, &s)];
    let (img, stats) = render_image_composed(&scene, &rois, &view(), &cam(16), &s, &CompositionConfig::default()).unwrap();
    let plain = render_image(&scene, &view(), &cam(16), &s).unwrap();
    assert!(stats.rois[0].accepted_rays > 0);
    for (a, b) in img.rgb.iter().zip(&plain.rgb) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() as f64 <= 1e-12);
        }
    }
}

#[test]
fn stats_accepted_at_most_intersecting() {
    let s = sampler(16, 16);
    let scene = scene_field();
    let roi_grid = bake_grid("roi", &scene, bx([0.0; 3], 0.6), [24; 3]).unwrap();
    let rois = vec![roi("r", bx([0.0; 3], 0.6), Arc::new(roi_grid), &s)];
    let (_, stats) = render_image_composed(&scene, &rois, &view(), &cam(24), &s, &CompositionConfig::default()).unwrap();
    let r = &stats.rois[0];
    assert!(r.accepted_rays < r.intersecting_rays, "{r:?}");
    assert_eq!(r.drf_queries, r.drf_rays * 32);
    assert_eq!(r.compose_queries, 0);
    assert_eq!(r.intersecting_rays, r.accepted_rays + r.rejected_depth + r.rejected_occluded + r.rejected_distance);
}

#[test]
fn rsr_without_drf_refuses_multi_roi() {
    let s = sampler(8, 0);
    let f: Arc<dyn RadianceField> = Arc::new(scene_field());
    let rois = vec![roi("a", bx([0.0; 3], 0.5), f.clone(), &s), roi("b", bx([1.0; 3], 0.2), f, &s)];
    let cfg = CompositionConfig { enable_drf: false, ..Default::default() };
    let err = render_image_composed(&scene_field(), &rois, &view(), &cam(4), &s, &cfg).unwrap_err();
    assert!(matches!(err, CompositionError::MultiRoiWithoutDrf(2)));
    assert!(render_image_composed(&scene_field(), &rois[..1], &view(), &cam(4), &s, &cfg).is_ok());
}

#[test]
fn no_rsr_reshades_scene_samples() {
    let s = sampler(16, 16);
    let scene = scene_field();
    let roi_field = Arc::new(CountingField::new(AnalyticField::new("roi", vec![cube([0.0; 3], 0.3, 40.0, [0.0, 0.0, 1.0])])));
    let rois = vec![roi("r", bx([0.0; 3], 0.5), roi_field.clone(), &s)];
    let cfg = CompositionConfig { enable_rsr: false, enable_drf: false, ..Default::default() };
    let (img, stats) = render_image_composed(&scene, &rois, &view(), &cam(8), &s, &cfg).unwrap();
    assert_eq!(stats.rois[0].drf_queries, 0);
    assert_eq!(stats.rois[0].compose_queries, roi_field.queries());
    assert!(roi_field.queries() > 0);
    assert_eq!(stats.composed_samples_per_ray, 32);
    // center pixel sees the blue ROI cube
    let c = img.pixel(4, 4);
    assert!(c[2] > 0.9 && c[0] < 0.05, "{c:?}");
}

#[test]
fn pixel_level_baseline() {
    let s = sampler(16, 16);
    let scene = scene_field();
    let f: Arc<dyn RadianceField> = Arc::new(AnalyticField::new("roi", vec![cube([0.0; 3], 0.3, 40.0, [0.0, 0.0, 1.0])]));
    let rois = vec![roi("r", bx([0.0; 3], 0.5), f.clone(), &s)];
    let scene_img = render_image(&scene, &view(), &cam(8), &s).unwrap();
    let roi_img = render_image(f.as_ref(), &view(), &cam(8), &s).unwrap();
    let out = pixel_level_compose(&scene_img, &[roi_img.clone()], &rois, &view(), &cam(8), &s, &CompositionConfig::default()).unwrap();
    assert_eq!(out.pixel(4, 4), roi_img.pixel(4, 4));
    assert_eq!(out.pixel(0, 0), scene_img.pixel(0, 0));
    // nothing accepted when the ROI image is empty
    let empty = ImageBuffer::new(8, 8);
    let same = pixel_level_compose(&scene_img, &[empty], &rois, &view(), &cam(8), &s, &CompositionConfig::default()).unwrap();
    assert!(same.bitwise_eq(&scene_img));
    let small = ImageBuffer::new(4, 4);
    assert!(matches!(
        pixel_level_compose(&scene_img, &[small], &rois, &view(), &cam(8), &s, &CompositionConfig::default()),
        Err(CompositionError::ResolutionMismatch { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn padding_is_inert(
        n in 1usize..12,
        pads in 0usize..12,
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut ts: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
        ts.sort_by(f64::total_cmp);
        let sig: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let rgb: Vec<Rgb> = (0..n).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
        let plain = ShadedSamples {
            samples: RaySamples::from_ts(ts.clone(), 0.0, 5.0),
            sigma: sig.clone(), rgb: rgb.clone(), visible: vec![true; n], source: vec![0; n], field_ids: vec!["f".into()],
        };
        let mut full_ts = vec![0.0; pads];
        full_ts.extend(&ts);
        let mut full_sig: Vec<f64> = (0..pads).map(|_| rng.random_range(0.0..100.0)).collect();
        full_sig.extend(&sig);
        let mut full_rgb = vec![Vector3::repeat(1.0); pads];
        full_rgb.extend(&rgb);
        let mut vis = vec![false; pads];
        vis.extend(vec![true; n]);
        let padded = ShadedSamples {
            samples: RaySamples::from_ts(full_ts, 0.0, 5.0),
            sigma: full_sig, rgb: full_rgb, visible: vis, source: vec![0; n + pads], field_ids: vec!["f".into()],
        };
        let bg = Vector3::new(0.3, 0.2, 0.1);
        let a = quadrature(&plain, &bg).unwrap();
        let b = quadrature(&padded, &bg).unwrap();
        prop_assert!((a.color - b.color).amax() <= 1e-9);
        prop_assert!((a.t_end - b.t_end).abs() <= 1e-9);
    }
}
