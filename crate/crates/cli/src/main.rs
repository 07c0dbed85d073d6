mod error;
mod settings;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::Point3;
use roi_core::composition::{render_image_composed, CompositionConfig, RoiRuntime};
use roi_core::fields::{bake_grid, estimate_n_max, load_grid, save_grid, GridField, RadianceField};
use roi_core::fixtures::{fixture, Fixture, FIXTURE_NAMES};
use roi_core::geometry::Aabb;
use roi_core::grouping::{group_cameras, parse_roi_specs, GroupingConfig, GroupingResult, RoiSpec};
use roi_core::harness::{prepare, run_experiment, ExperimentConfig, Mode, RoiResolution, SceneSource};
use roi_core::rendering::{render_image, ImageBuffer, SamplerConfig};
use roi_core::sfm::{parse_colmap_text, parse_reconstruction_json, write_reconstruction_json, Reconstruction};
use roi_service::{PreviewFields, SessionState};

use error::CliError;
use settings::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "roi-compose", version, about = "Compose region-of-interest radiance fields into a scene render")]
struct Cli {
    #[command(flatten)]
    global: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalFlags {
    /// JSON settings file (keys: seed, threads, n_coarse, n_fine, jitter, background, point_budget).
    #[arg(long, global = true)]
    settings: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rendering (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Coarse samples per ray.
    #[arg(long, global = true)]
    n_coarse: Option<usize>,
    /// Importance samples per ray.
    #[arg(long, global = true)]
    n_fine: Option<usize>,
    /// Jitter sample positions (true/false).
    #[arg(long, global = true)]
    jitter: Option<bool>,
    /// Background color as r,g,b in [0,1].
    #[arg(long, global = true, value_parser = parse_rgb)]
    background: Option<[f64; 3]>,
}

impl GlobalFlags {
    fn run_config(&self) -> Result<RunConfig, CliError> {
        let file = match &self.settings {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(file.overlay(RunConfig {
            seed: self.seed,
            threads: self.threads,
            n_coarse: self.n_coarse,
            n_fine: self.n_fine,
            jitter: self.jitter,
            background: self.background,
            point_budget: None,
        }))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a COLMAP text model (cameras.txt, images.txt, points3D.txt) to roi-recon JSON.
    Ingest {
        colmap_dir: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write the synthetic reconstruction of a built-in fixture.
    Synth {
        #[arg(long, value_parser = FIXTURE_NAMES)]
        fixture: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Select ROI cameras and split training/test/scene sets.
    Group {
        #[command(flatten)]
        recon: ReconSource,
        /// ROI list, `{"rois": [...]}` or a roi-groups document.
        #[arg(long)]
        rois: PathBuf,
        /// Select views with `count >= fraction * total` instead of `>`.
        #[arg(long)]
        non_strict: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Bake a fixture's analytic field into a voxel grid.
    Bake {
        /// Fixture whose analytic field is sampled.
        #[arg(long, value_parser = FIXTURE_NAMES)]
        oracle: String,
        /// Grid box as xmin,ymin,zmin,xmax,ymax,zmax.
        #[arg(long, value_parser = parse_aabb, conflicts_with = "roi")]
        aabb: Option<Aabb>,
        /// Use the box of this fixture ROI. Without --aabb or --roi the scene box is used.
        #[arg(long)]
        roi: Option<String>,
        /// Cells per axis.
        #[arg(long, required_unless_present = "auto_nmax", conflicts_with = "auto_nmax")]
        res: Option<u32>,
        /// Pick the resolution from camera footprints.
        #[arg(long)]
        auto_nmax: bool,
        /// Upper bound for --auto-nmax.
        #[arg(long, default_value_t = 256)]
        cap: u32,
        /// Reconstruction for --auto-nmax (default: the fixture's own).
        #[arg(long)]
        recon: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Render one view of a single field.
    Render {
        /// Grid file to render.
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        field: Option<PathBuf>,
        /// Render a fixture's analytic field instead.
        #[arg(long, value_parser = FIXTURE_NAMES)]
        oracle: Option<String>,
        #[command(flatten)]
        view: ViewArgs,
        /// Image path; .png, .pfm or .ppm.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Render one view with ROI fields composed into the scene field.
    Compose {
        #[arg(long)]
        scene_field: PathBuf,
        /// ROI grid as NAME=PATH or PATH (name = file stem). Repeatable.
        #[arg(long = "roi")]
        rois: Vec<String>,
        /// roi-groups document supplying ROI boxes and d_max.
        #[arg(long)]
        groups: Option<PathBuf>,
        /// ours-multiple, ours-single or ablation-a..d.
        #[arg(long, default_value = "ours-multiple", value_parser = parse_compose_mode)]
        mode: Mode,
        #[command(flatten)]
        view: ViewArgs,
        /// Write composition statistics as JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run an experiment config and print the report.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides output_dir in the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Write the report JSON here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Serve the HTTP API used by the ROI editor.
    Serve {
        #[command(flatten)]
        recon: ReconSource,
        /// Bake preview fields from this fixture.
        #[arg(long, value_parser = FIXTURE_NAMES)]
        fields: Option<String>,
        #[arg(long, default_value_t = 16)]
        scene_res: u32,
        #[arg(long, default_value_t = 64)]
        roi_res: u32,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Point budget for /api/reconstruction.
        #[arg(long)]
        point_budget: Option<usize>,
        /// Saved ROI sets are written here.
        #[arg(long)]
        rois_out: Option<PathBuf>,
        /// Allowed CORS origin (repeatable; default: any localhost origin).
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
    },
}

#[derive(Debug, Args)]
struct ReconSource {
    /// roi-recon JSON file.
    #[arg(long, conflicts_with = "fixture")]
    recon: Option<PathBuf>,
    /// Use a fixture's synthetic reconstruction.
    #[arg(long, value_parser = FIXTURE_NAMES)]
    fixture: Option<String>,
}

#[derive(Debug, Args)]
struct ViewArgs {
    #[arg(long)]
    view: u32,
    #[command(flatten)]
    recon: ReconSource,
    /// Downscale so the longer side is at most this many pixels.
    #[arg(long)]
    max_dim: Option<u32>,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_aabb(s: &str) -> Result<Aabb, String> {
    let v = parse_floats::<6>(s)?;
    let aabb = Aabb { min: Point3::new(v[0], v[1], v[2]), max: Point3::new(v[3], v[4], v[5]) };
    if !aabb.is_valid() {
        return Err("box min must not exceed max".into());
    }
    Ok(aabb)
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    parse_floats::<3>(s)
}

fn parse_compose_mode(s: &str) -> Result<Mode, String> {
    match Mode::parse(s) {
        Some(m @ (Mode::OursSingle | Mode::OursMultiple | Mode::AblationA | Mode::AblationB | Mode::AblationC | Mode::AblationD)) => Ok(m),
        _ => Err(format!("{s:?} is not one of ours-multiple, ours-single, ablation-a, ablation-b, ablation-c, ablation-d")),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes to `path`, or stdout when absent.
fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn get_fixture(name: &str) -> Result<Fixture, CliError> {
    fixture(name).ok_or_else(|| CliError::Validation(format!("unknown fixture {name:?}")))
}

impl ReconSource {
    fn load(&self, seed: u64) -> Result<Option<Reconstruction>, CliError> {
        match (&self.recon, &self.fixture) {
            (Some(p), _) => Ok(Some(parse_reconstruction_json(&read(p)?)?)),
            (None, Some(name)) => Ok(Some(get_fixture(name)?.reconstruction(seed)?)),
            (None, None) => Ok(None),
        }
    }

    fn require(&self, seed: u64) -> Result<Reconstruction, CliError> {
        self.load(seed)?.ok_or_else(|| CliError::Usage("one of --recon or --fixture is required".into()))
    }
}

fn render_target(args: &ViewArgs, seed: u64) -> Result<(Reconstruction, u32), CliError> {
    let recon = args.recon.require(seed)?;
    if !recon.views.contains_key(&args.view) {
        return Err(CliError::Validation(format!("view {} not in reconstruction", args.view)));
    }
    Ok((recon, args.view))
}

fn view_intrinsics(recon: &Reconstruction, args: &ViewArgs) -> (roi_core::sfm::ViewRecord, roi_core::sfm::CameraIntrinsics) {
    let (view, k) = recon.view_and_intrinsics(args.view).expect("view checked");
    let k = match args.max_dim {
        Some(m) => k.fit_within(m),
        None => k.clone(),
    };
    (view.clone(), k)
}

fn check_finite(image: &ImageBuffer) -> Result<(), CliError> {
    if image.rgb.iter().flatten().any(|c| !c.is_finite()) {
        return Err(CliError::Numeric("render produced non-finite colors".into()));
    }
    Ok(())
}

fn load_grid_file(path: &Path) -> Result<GridField, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("{}: file not found", path.display())));
    }
    Ok(load_grid(path)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = cli.global.run_config()?;
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(CliError::Validation("threads must be >= 1".into()));
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = cfg.seed();
    match cli.command {
        Command::Ingest { colmap_dir, output } => {
            let recon = parse_colmap_text(&colmap_dir)?;
            write_out(output.as_deref(), &write_reconstruction_json(&recon))
        }
        Command::Synth { fixture, output } => {
            let recon = get_fixture(&fixture)?.reconstruction(seed)?;
            write_out(output.as_deref(), &write_reconstruction_json(&recon))
        }
        Command::Group { recon, rois, non_strict, output } => {
            let recon = recon.require(seed)?;
            let specs = parse_roi_specs(&read_text(&rois)?)?;
            let config = GroupingConfig { strict_threshold: !non_strict, ..Default::default() };
            let groups = group_cameras(&recon, &specs, &config, seed)?;
            write_out(output.as_deref(), groups.to_json().as_bytes())
        }
        Command::Bake { oracle, aabb, roi, res, auto_nmax, cap, recon, output } => {
            let f = get_fixture(&oracle)?;
            let spec = match &roi {
                Some(name) => Some(
                    f.rois.iter().find(|r| &r.name == name).cloned().ok_or_else(|| CliError::Validation(format!("fixture {oracle} has no ROI {name:?}")))?,
                ),
                None => None,
            };
            let aabb = aabb.or(spec.as_ref().map(|s| s.aabb)).unwrap_or(f.scene_aabb);
            let n = match res {
                Some(n) => n,
                None => {
                    debug_assert!(auto_nmax);
                    let recon = match &recon {
                        Some(p) => parse_reconstruction_json(&read(p)?)?,
                        None => f.reconstruction(seed)?,
                    };
                    // an ROI box uses its training cameras, any other box every camera
                    let ids: Vec<u32> = match &spec {
                        Some(s) => group_cameras(&recon, std::slice::from_ref(s), &GroupingConfig::default(), seed)?.rois[0].train_view_ids.clone(),
                        None => recon.views.keys().copied().collect(),
                    };
                    let views: Vec<_> = ids.iter().filter_map(|id| recon.view_and_intrinsics(*id)).collect();
                    estimate_n_max(&aabb, &views, cap)?.max(2)
                }
            };
            let id = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let grid = bake_grid(id, &f.oracle, aabb, [n; 3])?;
            save_grid(&grid, &output)?;
            let summary = serde_json::json!({ "output": output, "resolution": grid.resolution(), "aabb": aabb });
            println!("{summary}");
            Ok(())
        }
        Command::Render { field, oracle, view, output } => {
            let (recon, _) = render_target(&view, seed)?;
            let (v, k) = view_intrinsics(&recon, &view);
            let image = match (field, oracle) {
                (Some(path), _) => {
                    let grid = load_grid_file(&path)?;
                    let sampler = cfg.sampler(grid.domain())?;
                    render_image(&grid, &v, &k, &sampler)?
                }
                (None, Some(name)) => {
                    let f = get_fixture(&name)?;
                    let sampler = cfg.sampler(Some(f.scene_aabb))?;
                    render_image(&f.oracle, &v, &k, &sampler)?
                }
                (None, None) => return Err(CliError::Usage("one of --field or --oracle is required".into())),
            };
            check_finite(&image)?;
            Ok(image.write_auto(&output)?)
        }
        Command::Compose { scene_field, rois, groups, mode, view, stats, output } => {
            let (recon, _) = render_target(&view, seed)?;
            let (v, k) = view_intrinsics(&recon, &view);
            let scene = load_grid_file(&scene_field)?;
            let sampler = cfg.sampler(scene.domain())?;
            let groups = match &groups {
                Some(p) => Some(GroupingResult::from_json(&read_text(p)?)?),
                None => None,
            };
            let runtimes = roi_runtimes(&rois, groups.as_ref(), &sampler)?;
            let mut config = mode.composition_config();
            if mode == Mode::OursSingle {
                config.disabled_rois = runtimes.iter().skip(1).map(|r| r.name().to_string()).collect();
            }
            let (image, st) = render_image_composed(&scene, &runtimes, &v, &k, &sampler, &config)?;
            check_finite(&image)?;
            image.write_auto(&output)?;
            if let Some(p) = stats {
                write_out(Some(&p), st.to_json().as_bytes())?;
            }
            Ok(())
        }
        Command::Evaluate { config, output_dir, report } => {
            let mut exp = ExperimentConfig::from_json(&read_text(&config)?)?;
            if let Some(s) = cfg.seed {
                exp.seed = s;
            }
            if output_dir.is_some() {
                exp.output_dir = output_dir;
            }
            if cfg.n_coarse.is_some() || cfg.n_fine.is_some() || cfg.jitter.is_some() || cfg.background.is_some() {
                let base = exp.sampler.clone().unwrap_or(SamplerConfig { seed: exp.seed, ..Default::default() });
                exp.sampler = Some(SamplerConfig {
                    n_coarse: cfg.n_coarse.unwrap_or(base.n_coarse),
                    n_fine: cfg.n_fine.unwrap_or(base.n_fine),
                    jitter: cfg.jitter.unwrap_or(base.jitter),
                    background: cfg.background.unwrap_or(base.background),
                    ..base
                });
            }
            let result = run_experiment(&exp)?;
            write_out(report.as_deref(), result.to_json().as_bytes())
        }
        Command::Serve { recon, fields, scene_res, roi_res, host, port, point_budget, rois_out, cors_origins } => {
            let mut recon = recon.load(seed)?;
            let preview = match &fields {
                Some(name) => {
                    let exp = ExperimentConfig {
                        scene: SceneSource::Fixture { name: name.clone() },
                        scene_resolution: scene_res,
                        roi_resolution: RoiResolution::Fixed(roi_res),
                        seed,
                        ..Default::default()
                    };
                    let setup = prepare(&exp)?;
                    if recon.is_none() {
                        recon = Some(setup.recon);
                    }
                    let sampler = cfg.sampler(Some(setup.scene_aabb))?;
                    Some(PreviewFields {
                        scene: Arc::new(setup.scene_field),
                        rois: setup.rois.into_iter().map(|r| RoiRuntime { sampler: SamplerConfig { clip: Some(r.spec.aabb), ..sampler.clone() }, ..r }).collect(),
                        sampler,
                        composition: CompositionConfig::default(),
                    })
                }
                None => None,
            };
            let mut state = SessionState::new(recon);
            if let Some(p) = preview {
                state = state.with_fields(p);
            }
            state.seed = seed;
            if let Some(b) = point_budget.or(cfg.point_budget) {
                state.point_budget = b;
            }
            state.persist_path = rois_out;
            state.cors_origins = cors_origins;
            let addr = std::net::SocketAddr::new(host, port);
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(format!("runtime: {e}")))?;
            eprintln!("{}", serde_json::json!({ "listening": addr.to_string() }));
            rt.block_on(roi_service::serve(Arc::new(state), addr)).map_err(|e| CliError::Io(format!("{addr}: {e}")))
        }
    }
}

/// ROI runtimes from `NAME=PATH` arguments. Boxes and d_max come from the
/// groups document when given; otherwise the grid domain and no d_max cut.
fn roi_runtimes(args: &[String], groups: Option<&GroupingResult>, sampler: &SamplerConfig) -> Result<Vec<RoiRuntime>, CliError> {
    let mut out: Vec<RoiRuntime> = Vec::new();
    for arg in args {
        let (name, path) = match arg.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(arg);
                (p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), p)
            }
        };
        if out.iter().any(|r| r.name() == name) {
            return Err(CliError::Validation(format!("duplicate ROI name {name:?}")));
        }
        let grid = load_grid_file(&path)?;
        let domain = grid.domain().expect("grids are bounded");
        let (spec, d_max) = match groups {
            Some(g) => {
                let spec = g.specs.iter().find(|s| s.name == name).ok_or_else(|| CliError::Validation(format!("ROI {name:?} not in groups document")))?;
                (spec.clone(), g.roi(&name).map(|r| r.d_max).unwrap_or(f64::INFINITY))
            }
            None => (RoiSpec::new(name.clone(), domain), f64::INFINITY),
        };
        out.push(RoiRuntime { sampler: SamplerConfig { clip: Some(spec.aabb), ..sampler.clone() }, spec, field: Arc::new(grid), d_max });
    }
    Ok(out)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
