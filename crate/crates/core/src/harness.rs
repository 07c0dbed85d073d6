//! Experiment runner: builds the scene and ROI fields, renders every mode on
//! every evaluation view and tabulates the metrics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{pixel_level_compose, render_image_composed, CompositionConfig, CompositionError, CompositionStats, RoiRuntime};
use crate::fields::{bake_grid, estimate_n_max, AnalyticField, FieldError, GridField, RadianceField};
use crate::fixtures::fixture;
use crate::geometry::Aabb;
use crate::grouping::{group_cameras, GroupingConfig, GroupingError, GroupingResult, RoiSpec};
use crate::metrics::{evaluate_image, MetricReport};
use crate::rendering::{render_image, render_reference, ImageBuffer, RenderError, SamplerConfig};
use crate::sfm::{parse_reconstruction_json, Reconstruction, SfmError};

pub const REPORT_SCHEMA: &str = "roi-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown fixture {0:?}")]
    UnknownFixture(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sfm(#[from] SfmError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed report: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    RoiOnly,
    SceneOnly,
    OursSingle,
    OursMultiple,
    PixelBaseline,
    AblationA,
    AblationB,
    AblationC,
    AblationD,
}

impl Mode {
    pub const ALL: [Mode; 9] = [
        Mode::RoiOnly,
        Mode::SceneOnly,
        Mode::OursSingle,
        Mode::OursMultiple,
        Mode::PixelBaseline,
        Mode::AblationA,
        Mode::AblationB,
        Mode::AblationC,
        Mode::AblationD,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::RoiOnly => "roi-only",
            Mode::SceneOnly => "scene-only",
            Mode::OursSingle => "ours-single",
            Mode::OursMultiple => "ours-multiple",
            Mode::PixelBaseline => "pixel-baseline",
            Mode::AblationA => "ablation-a",
            Mode::AblationB => "ablation-b",
            Mode::AblationC => "ablation-c",
            Mode::AblationD => "ablation-d",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Composition switches for the ablation modes: (a) neither, (b) DRF
    /// only, (c) RSR only, (d) both.
    pub fn composition_config(self) -> CompositionConfig {
        let (rsr, drf) = match self {
            Mode::AblationA => (false, false),
            Mode::AblationB => (false, true),
            Mode::AblationC => (true, false),
            _ => (true, true),
        };
        CompositionConfig { enable_rsr: rsr, enable_drf: drf, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SceneSource {
    Fixture { name: String },
    /// Inline analytic oracle with a reconstruction file.
    Analytic { oracle: AnalyticField, scene_aabb: Aabb, reconstruction: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutoTag {
    Auto,
}

/// Cells per axis of the ROI grids, or `"auto"` for the N_max estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoiResolution {
    Fixed(u32),
    Auto(AutoTag),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    /// Replaces the fixture's ROI boxes.
    pub rois: Option<Vec<RoiSpec>>,
    pub scene_resolution: u32,
    pub roi_resolution: RoiResolution,
    pub n_max_cap: u32,
    /// Defaults to 64 + 64 samples clipped to the scene box.
    pub sampler: Option<SamplerConfig>,
    pub modes: Vec<Mode>,
    pub seed: u64,
    /// Explicit evaluation views; otherwise the ROI test views.
    pub views: Option<Vec<u32>>,
    pub max_views: Option<usize>,
    pub timing_repeats: usize,
    /// Run cells concurrently. Timings are then not comparable.
    pub parallel: bool,
    pub output_dir: Option<PathBuf>,
    pub write_images: bool,
    pub heatmaps: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSource::Fixture { name: "checker-table".into() },
            rois: None,
            scene_resolution: 32,
            roi_resolution: RoiResolution::Fixed(128),
            n_max_cap: 256,
            sampler: None,
            modes: vec![Mode::SceneOnly, Mode::OursSingle],
            seed: 0,
            views: None,
            max_views: None,
            timing_repeats: 3,
            parallel: false,
            output_dir: None,
            write_images: false,
            heatmaps: false,
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.modes.is_empty() {
            return bad("at least one mode is required".into());
        }
        if self.scene_resolution < 2 {
            return bad("scene_resolution must be >= 2".into());
        }
        if let RoiResolution::Fixed(n) = self.roi_resolution {
            if n < 2 {
                return bad("roi_resolution must be >= 2".into());
            }
        }
        if self.timing_repeats == 0 {
            return bad("timing_repeats must be >= 1".into());
        }
        if self.max_views == Some(0) {
            return bad("max_views must be >= 1".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }
}

/// Everything an experiment renders with.
pub struct Setup {
    pub name: String,
    pub oracle: AnalyticField,
    pub scene_aabb: Aabb,
    pub recon: Reconstruction,
    pub groups: GroupingResult,
    pub scene_field: GridField,
    pub rois: Vec<RoiRuntime>,
    pub roi_resolutions: Vec<u32>,
    pub sampler: SamplerConfig,
    pub view_ids: Vec<u32>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Setup, HarnessError> {
    config.check()?;
    let (name, oracle, scene_aabb, recon, fixture_rois) = match &config.scene {
        SceneSource::Fixture { name } => {
            let f = fixture(name).ok_or_else(|| HarnessError::UnknownFixture(name.clone()))?;
            let recon = f.reconstruction(config.seed)?;
            (f.name, f.oracle, f.scene_aabb, recon, f.rois)
        }
        SceneSource::Analytic { oracle, scene_aabb, reconstruction } => {
            let bytes = std::fs::read(reconstruction).map_err(|source| HarnessError::Io { path: reconstruction.clone(), source })?;
            let recon = parse_reconstruction_json(&bytes)?;
            (oracle.id.clone(), oracle.clone(), *scene_aabb, recon, Vec::new())
        }
    };
    oracle.check().map_err(HarnessError::InvalidConfig)?;
    let specs = config.rois.clone().unwrap_or(fixture_rois);
    let groups = group_cameras(&recon, &specs, &GroupingConfig::default(), config.seed)?;
    let sampler = match &config.sampler {
        Some(s) => SamplerConfig { clip: s.clip.or(Some(scene_aabb)), ..s.clone() },
        None => SamplerConfig { seed: config.seed, clip: Some(scene_aabb), ..Default::default() },
    };
    sampler.check()?;

    let r = config.scene_resolution;
    let scene_field = bake_grid("scene", &oracle, scene_aabb, [r; 3])?;
    let mut rois = Vec::new();
    let mut roi_resolutions = Vec::new();
    for (spec, group) in specs.iter().zip(&groups.rois) {
        let n = match config.roi_resolution {
            RoiResolution::Fixed(n) => n,
            RoiResolution::Auto(_) => {
                let views: Vec<_> = group.train_view_ids.iter().filter_map(|id| recon.view_and_intrinsics(*id)).collect();
                estimate_n_max(&spec.aabb, &views, config.n_max_cap)?.max(2)
            }
        };
        let grid = bake_grid(spec.name.clone(), &oracle, spec.aabb, [n; 3])?;
        roi_resolutions.push(n);
        rois.push(RoiRuntime {
            spec: spec.clone(),
            field: Arc::new(grid),
            d_max: group.d_max,
            sampler: SamplerConfig { clip: Some(spec.aabb), ..sampler.clone() },
        });
    }

    let mut view_ids = match &config.views {
        Some(v) => v.clone(),
        None => {
            let mut all: Vec<u32> = groups.rois.iter().flat_map(|g| g.test_view_ids.iter().copied()).collect();
            all.sort_unstable();
            all.dedup();
            all
        }
    };
    for id in &view_ids {
        if !recon.views.contains_key(id) {
            return Err(HarnessError::InvalidConfig(format!("view {id} not in reconstruction")));
        }
    }
    if let Some(m) = config.max_views {
        view_ids.truncate(m);
    }
    Ok(Setup { name, oracle, scene_aabb, recon, groups, scene_field, rois, roi_resolutions, sampler, view_ids })
}

/// Output of a single mode on a single view.
pub struct ModeRender {
    pub image: ImageBuffer,
    pub stats: Option<CompositionStats>,
}

/// Renders `mode` for view `view_id`.
pub fn render_mode(setup: &Setup, mode: Mode, view_id: u32) -> Result<ModeRender, HarnessError> {
    let (view, k) = setup
        .recon
        .view_and_intrinsics(view_id)
        .ok_or_else(|| HarnessError::InvalidConfig(format!("view {view_id} not in reconstruction")))?;
    let composed = |scene: &dyn RadianceField, cfg: CompositionConfig| -> Result<ModeRender, HarnessError> {
        let (image, stats) = render_image_composed(scene, &setup.rois, view, k, &setup.sampler, &cfg).map_err(composition_error)?;
        Ok(ModeRender { image, stats: Some(stats) })
    };
    match mode {
        Mode::SceneOnly => Ok(ModeRender { image: render_image(&setup.scene_field, view, k, &setup.sampler)?, stats: None }),
        Mode::RoiOnly => composed(&AnalyticField::new("empty", Vec::new()), CompositionConfig::default()),
        Mode::OursSingle => {
            let disabled = setup.rois.iter().skip(1).map(|r| r.name().to_string()).collect();
            composed(&setup.scene_field, CompositionConfig { disabled_rois: disabled, ..Default::default() })
        }
        Mode::OursMultiple => composed(&setup.scene_field, CompositionConfig::default()),
        Mode::PixelBaseline => {
            let scene = render_image(&setup.scene_field, view, k, &setup.sampler)?;
            let roi_images = setup
                .rois
                .iter()
                .map(|r| render_image(r.field.as_ref(), view, k, &r.sampler))
                .collect::<Result<Vec<_>, _>>()?;
            let image = pixel_level_compose(&scene, &roi_images, &setup.rois, view, k, &setup.sampler, &CompositionConfig::default())
                .map_err(composition_error)?;
            Ok(ModeRender { image, stats: None })
        }
        Mode::AblationA | Mode::AblationB | Mode::AblationC | Mode::AblationD => composed(&setup.scene_field, mode.composition_config()),
    }
}

fn composition_error(e: CompositionError) -> HarnessError {
    match e {
        CompositionError::Render(r) => HarnessError::Render(r),
        other => HarnessError::InvalidConfig(other.to_string()),
    }
}

/// Oracle render used as ground truth.
pub fn reference_image(setup: &Setup, view_id: u32) -> Result<ImageBuffer, HarnessError> {
    let (view, k) = setup
        .recon
        .view_and_intrinsics(view_id)
        .ok_or_else(|| HarnessError::InvalidConfig(format!("view {view_id} not in reconstruction")))?;
    Ok(render_reference(&setup.oracle, view, k, &setup.sampler)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub mode: Mode,
    pub view_id: u32,
    pub metrics: Option<MetricReport>,
    /// Median over the timing repeats.
    pub wall_time_ms: f64,
    pub stats: Option<CompositionStats>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub views: usize,
    pub errors: usize,
    #[serde(with = "crate::serde_inf_opt")]
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Mean over views, per ROI.
    #[serde(with = "crate::serde_inf_map")]
    pub masked_psnr: BTreeMap<String, f64>,
    /// Mean of the per-ROI means.
    #[serde(with = "crate::serde_inf_opt")]
    pub mean_masked_psnr: Option<f64>,
    pub render_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderReport {
    pub schema: String,
    pub version: u32,
    pub experiment: String,
    pub seed: u64,
    pub scene_resolution: u32,
    pub roi_resolutions: BTreeMap<String, u32>,
    pub view_ids: Vec<u32>,
    pub modes: Vec<Mode>,
    pub cells: Vec<CellResult>,
    pub summary: Vec<ModeSummary>,
}

impl RenderReport {
    pub fn empty() -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            version: REPORT_VERSION,
            experiment: String::new(),
            seed: 0,
            scene_resolution: 0,
            roi_resolutions: BTreeMap::new(),
            view_ids: Vec::new(),
            modes: Vec::new(),
            cells: Vec::new(),
            summary: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let report: Self = serde_json::from_str(text).map_err(|e| HarnessError::Format(e.to_string()))?;
        if report.schema != REPORT_SCHEMA || report.version != REPORT_VERSION {
            return Err(HarnessError::Format(format!("expected {REPORT_SCHEMA} v{REPORT_VERSION}, got {} v{}", report.schema, report.version)));
        }
        Ok(report)
    }

    /// Copy with every timing zeroed, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.cells.iter_mut().for_each(|c| c.wall_time_ms = 0.0);
        r.summary.iter_mut().for_each(|s| s.render_time_ms = s.render_time_ms.map(|_| 0.0));
        r
    }

    pub fn summary_for(&self, mode: Mode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    pub fn cells_for(&self, mode: Mode) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(move |c| c.mode == mode)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn summarize(mode: Mode, cells: &[CellResult]) -> ModeSummary {
    let ok: Vec<&CellResult> = cells.iter().filter(|c| c.mode == mode && c.metrics.is_some()).collect();
    let metrics = || ok.iter().map(|c| c.metrics.as_ref().expect("filtered"));
    let mut per_roi: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in metrics() {
        for (name, s) in &m.masked_psnr {
            per_roi.entry(name.clone()).or_default().push(s.psnr);
        }
    }
    let masked: BTreeMap<String, f64> = per_roi.into_iter().map(|(k, v)| (k, mean(v.into_iter()).expect("non-empty"))).collect();
    ModeSummary {
        mode,
        views: ok.len(),
        errors: cells.iter().filter(|c| c.mode == mode && c.error.is_some()).count(),
        psnr: mean(metrics().map(|m| m.psnr)),
        ssim: mean(metrics().filter_map(|m| m.ssim)),
        mean_masked_psnr: mean(masked.values().copied()),
        masked_psnr: masked,
        render_time_ms: mean(ok.iter().map(|c| c.wall_time_ms)),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

fn run_cell(setup: &Setup, config: &ExperimentConfig, reference: &ImageBuffer, mode: Mode, view_id: u32) -> Result<(CellResult, ModeRender), HarnessError> {
    let (view, k) = setup.recon.view_and_intrinsics(view_id).expect("checked in prepare");
    let mut times = Vec::with_capacity(config.timing_repeats);
    let mut out = None;
    for _ in 0..config.timing_repeats {
        let start = Instant::now();
        let r = render_mode(setup, mode, view_id)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        out.get_or_insert(r);
    }
    let render = out.expect("at least one repeat");
    let boxes: Vec<(&str, &Aabb)> = setup.rois.iter().map(|r| (r.name(), &r.spec.aabb)).collect();
    let metrics = evaluate_image(&render.image, reference, &boxes, view, k).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let cell = CellResult { mode, view_id, metrics: Some(metrics), wall_time_ms: median(times), stats: render.stats.clone(), error: None };
    Ok((cell, render))
}

/// Runs every configured mode on every evaluation view. Cell failures are
/// recorded in the report and do not stop the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RenderReport, HarnessError> {
    let setup = prepare(config)?;
    run_prepared(&setup, config)
}

pub fn run_prepared(setup: &Setup, config: &ExperimentConfig) -> Result<RenderReport, HarnessError> {
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
    }
    let references: Vec<ImageBuffer> = setup.view_ids.iter().map(|id| reference_image(setup, *id)).collect::<Result<_, _>>()?;
    let jobs: Vec<(Mode, usize)> = config.modes.iter().flat_map(|m| (0..setup.view_ids.len()).map(move |v| (*m, v))).collect();
    let run = |&(mode, vi): &(Mode, usize)| {
        let view_id = setup.view_ids[vi];
        match run_cell(setup, config, &references[vi], mode, view_id) {
            Ok((cell, render)) => (cell, Some(render)),
            Err(e) => (
                CellResult { mode, view_id, metrics: None, wall_time_ms: 0.0, stats: None, error: Some(e.to_string()) },
                None,
            ),
        }
    };
    let results: Vec<(CellResult, Option<ModeRender>)> = if config.parallel { jobs.par_iter().map(run).collect() } else { jobs.iter().map(run).collect() };

    if let Some(dir) = &config.output_dir {
        if config.write_images {
            for (vi, r) in references.iter().enumerate() {
                write_file(&dir.join(format!("reference_{}.png", setup.view_ids[vi])), &r.to_png()?)?;
            }
        }
        for (cell, render) in &results {
            let Some(render) = render else { continue };
            let stem = format!("{}_{}", cell.mode.as_str(), cell.view_id);
            if config.write_images {
                write_file(&dir.join(format!("{stem}.png")), &render.image.to_png()?)?;
            }
            if let (true, Some(stats)) = (config.heatmaps, &render.stats) {
                for (i, roi) in stats.rois.iter().enumerate() {
                    write_file(&dir.join(format!("{stem}_{}_heatmap.pfm", roi.name)), &stats.heatmap_image(i).to_pfm())?;
                }
            }
        }
    }

    // heatmaps live in the PFM files, not in the report
    let cells: Vec<CellResult> = results
        .into_iter()
        .map(|(mut c, _)| {
            c.stats.iter_mut().flat_map(|s| s.rois.iter_mut()).for_each(|r| r.heatmap = Vec::new());
            c
        })
        .collect();
    let summary = config.modes.iter().map(|m| summarize(*m, &cells)).collect();
    let report = RenderReport {
        schema: REPORT_SCHEMA.into(),
        version: REPORT_VERSION,
        experiment: setup.name.clone(),
        seed: config.seed,
        scene_resolution: config.scene_resolution,
        roi_resolutions: setup.rois.iter().map(|r| r.name().to_string()).zip(setup.roi_resolutions.iter().copied()).collect(),
        view_ids: setup.view_ids.clone(),
        modes: config.modes.clone(),
        cells,
        summary,
    };
    if let Some(dir) = &config.output_dir {
        let (csv, json) = emit_tables(&report);
        write_file(&dir.join("table.csv"), csv.as_bytes())?;
        write_file(&dir.join("report.json"), json.as_bytes())?;
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_infinite() => if x > 0.0 { "inf".into() } else { "-inf".into() },
        Some(x) => format!("{x:.digits$}"),
        None => String::new(),
    }
}

/// One CSV row per mode plus the full report as JSON.
pub fn emit_tables(report: &RenderReport) -> (String, String) {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "views", "errors", "psnr", "ssim", "masked_psnr", "render_time_ms"]).expect("in-memory csv");
    for s in &report.summary {
        w.write_record([
            s.mode.as_str().to_string(),
            s.views.to_string(),
            s.errors.to_string(),
            fmt_opt(s.psnr, 4),
            fmt_opt(s.ssim, 6),
            fmt_opt(s.mean_masked_psnr, 4),
            fmt_opt(s.render_time_ms, 2),
        ])
        .expect("in-memory csv");
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv");
    (csv, report.to_json())
}
