use nalgebra::{Point3, Vector3};
use roi_core::fields::AnalyticField;
use roi_core::fixtures::fixture;
use roi_core::geometry::Aabb;
use roi_core::harness::*;
use roi_core::rendering::SamplerConfig;
use roi_core::sfm::write_reconstruction_json;

fn occluder_config(modes: Vec<Mode>) -> ExperimentConfig {
    ExperimentConfig {
        scene: SceneSource::Fixture { name: "occluder".into() },
        scene_resolution: 16,
        roi_resolution: RoiResolution::Fixed(48),
        modes,
        seed: 5,
        max_views: Some(2),
        timing_repeats: 1,
        ..Default::default()
    }
}

#[test]
fn constant_field_scene_only_is_exact() {
    let f = fixture("checkered-sphere").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let recon_path = dir.path().join("recon.json");
    std::fs::write(&recon_path, write_reconstruction_json(&f.reconstruction(0).unwrap())).unwrap();
    let region = Aabb::from_center_half_extent(Point3::origin(), Vector3::repeat(1.0));
    let cfg = ExperimentConfig {
        scene: SceneSource::Analytic {
            oracle: AnalyticField::homogeneous("fog", 3.0, Vector3::repeat(0.5), None),
            scene_aabb: region,
            reconstruction: recon_path,
        },
        rois: Some(f.rois.clone()),
        scene_resolution: 4,
        roi_resolution: RoiResolution::Fixed(4),
        sampler: Some(SamplerConfig { background: [0.5; 3], ..Default::default() }),
        modes: vec![Mode::SceneOnly, Mode::OursSingle],
        max_views: Some(1),
        timing_repeats: 1,
        ..Default::default()
    };
    let report = run_experiment(&cfg).unwrap();
    for s in &report.summary {
        assert_eq!(s.psnr, Some(f64::INFINITY), "{:?}", s.mode);
    }
    let back = RenderReport::from_json(&report.to_json()).unwrap();
    assert_eq!(back, report);
    let (csv, _) = emit_tables(&report);
    assert!(csv.lines().nth(1).unwrap().contains(",inf,"), "{csv}");
}

#[test]
fn empty_report_csv_is_header_only() {
    let (csv, json) = emit_tables(&RenderReport::empty());
    assert_eq!(csv, "mode,views,errors,psnr,ssim,masked_psnr,render_time_ms\n");
    assert_eq!(RenderReport::from_json(&json).unwrap(), RenderReport::empty());
}

#[test]
fn rows_match_modes_and_json_round_trips() {
    let cfg = occluder_config(vec![Mode::SceneOnly, Mode::OursSingle, Mode::AblationB, Mode::PixelBaseline, Mode::RoiOnly]);
    let report = run_experiment(&cfg).unwrap();
    let (csv, json) = emit_tables(&report);
    assert_eq!(csv.lines().count(), 1 + cfg.modes.len());
    assert_eq!(report.cells.len(), cfg.modes.len() * report.view_ids.len());
    assert_eq!(RenderReport::from_json(&json).unwrap(), report);
    let ours = report.summary_for(Mode::OursSingle).unwrap();
    let scene = report.summary_for(Mode::SceneOnly).unwrap();
    assert!(ours.mean_masked_psnr.unwrap() > scene.mean_masked_psnr.unwrap());
}

#[test]
fn reports_are_reproducible_across_worker_counts() {
    let cfg = occluder_config(vec![Mode::SceneOnly, Mode::OursMultiple, Mode::AblationA]);
    let a = run_experiment(&cfg).unwrap().without_timings();
    let b = run_experiment(&cfg).unwrap().without_timings();
    assert_eq!(a.to_json(), b.to_json());
    let par = ExperimentConfig { parallel: true, ..cfg };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| run_experiment(&par)).unwrap().without_timings();
    assert_eq!(a.to_json(), c.to_json());
}

#[test]
fn ablation_c_refuses_multiple_rois_and_run_continues() {
    let cfg = ExperimentConfig {
        scene: SceneSource::Fixture { name: "two-spheres".into() },
        scene_resolution: 8,
        roi_resolution: RoiResolution::Fixed(8),
        modes: vec![Mode::AblationC, Mode::OursMultiple],
        max_views: Some(1),
        timing_repeats: 1,
        sampler: Some(SamplerConfig { n_coarse: 8, n_fine: 0, ..Default::default() }),
        ..Default::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let c: Vec<_> = report.cells_for(Mode::AblationC).collect();
    assert_eq!(c.len(), 1);
    assert!(c[0].error.as_deref().unwrap().contains("single ROI"), "{:?}", c[0].error);
    assert!(report.cells_for(Mode::OursMultiple).all(|c| c.error.is_none()));
    let s = report.summary_for(Mode::AblationC).unwrap();
    assert_eq!((s.views, s.errors, s.psnr), (0, 1, None));
}

#[test]
fn output_dir_receives_tables_images_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output_dir: Some(dir.path().to_path_buf()),
        write_images: true,
        heatmaps: true,
        max_views: Some(1),
        ..occluder_config(vec![Mode::OursSingle])
    };
    let report = run_experiment(&cfg).unwrap();
    let v = report.view_ids[0];
    for name in ["table.csv".to_string(), "report.json".into(), format!("reference_{v}.png"), format!("ours-single_{v}.png"), format!("ours-single_{v}_ball_heatmap.pfm")] {
        assert!(dir.path().join(&name).is_file(), "{name}");
    }
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(RenderReport::from_json(&json).unwrap(), report);
}

#[test]
fn config_validation() {
    assert!(ExperimentConfig::from_json(r#"{"modes": []}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"colour": 1}"#).is_err());
    let c = ExperimentConfig::from_json(r#"{"scene": {"kind": "fixture", "name": "occluder"}, "roi_resolution": "auto", "modes": ["ablation-d"]}"#).unwrap();
    assert_eq!(c.roi_resolution, RoiResolution::Auto(AutoTag::Auto));
    assert_eq!(c.modes, vec![Mode::AblationD]);
    let bad = ExperimentConfig { scene: SceneSource::Fixture { name: "nope".into() }, ..Default::default() };
    assert!(matches!(prepare(&bad), Err(HarnessError::UnknownFixture(_))));
}

#[test]
fn lod_fixture_ours_single_beats_scene_only() {
    let cfg = ExperimentConfig { max_views: Some(2), timing_repeats: 1, ..Default::default() };
    let report = run_experiment(&cfg).unwrap();
    let ours = report.summary_for(Mode::OursSingle).unwrap().mean_masked_psnr.unwrap();
    let scene = report.summary_for(Mode::SceneOnly).unwrap().mean_masked_psnr.unwrap();
    assert!(ours > scene, "{ours} vs {scene}");
}
