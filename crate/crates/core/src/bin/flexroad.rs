use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use flexroad::filter::{run_filter, FilterParams};
use flexroad::fit::{fit, initial_surface, FitConfig, LossWeights, SurfaceParams};
use flexroad::grid::{
    extract_road_points, load_mask, load_raster, resample_mask, save_mask, save_raster, PointGrid,
    Raster,
};
use flexroad::mesh::{build_tin, export_mesh, load_mesh, SamplingConfig};
use flexroad::metrics::{evaluate_all, metrics_csv, metrics_table};
use flexroad::nurbs::{load_surface, save_surface};
use flexroad::pipeline::{
    ablate, ablation_csv, load_inputs, run_pipeline, PipelineConfig, PipelineError, Stage,
};
use flexroad::synth::{generate, SceneSpec};
use flexroad::Error;

#[derive(Parser)]
#[command(
    name = "flexroad",
    version,
    about = "Road surface reconstruction from DSM, DTM and a road mask"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth
    Synth(SynthArgs),
    /// Clean a road mask by elevation-aware clustering
    Filter(FilterArgs),
    /// Fit a NURBS surface to road and terrain elevations
    Fit(FitArgs),
    /// Sample a fitted surface and triangulate it
    Mesh(MeshArgs),
    /// Score a mesh against ground-truth rasters
    Eval(EvalArgs),
    /// Run the whole pipeline from a config file
    Run(RunArgs),
    /// Sweep one config key and tabulate the metrics
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec in TOML; the built-in standard scene is used otherwise
    #[arg(long, conflicts_with_all = ["standard", "clean"])]
    spec: Option<PathBuf>,
    /// Use the standard noisy scene
    #[arg(long)]
    standard: bool,
    /// Use the standard layout without noise
    #[arg(long, conflicts_with = "standard")]
    clean: bool,
    /// Override the seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    dsm: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = FilterParams::default().theta_xy)]
    theta_xy: f64,
    #[arg(long, default_value_t = FilterParams::default().theta_z)]
    theta_z: f64,
    #[arg(long, default_value_t = FilterParams::default().top_k)]
    top_k: usize,
    /// Cleaned mask output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    dsm: PathBuf,
    #[arg(long)]
    dtm: PathBuf,
    /// Cleaned road mask
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = SurfaceParams::default().control_u)]
    control_u: usize,
    #[arg(long, default_value_t = SurfaceParams::default().control_v)]
    control_v: usize,
    #[arg(long, default_value_t = SurfaceParams::default().degree_u)]
    degree_u: usize,
    #[arg(long, default_value_t = SurfaceParams::default().degree_v)]
    degree_v: usize,
    #[arg(long, default_value_t = LossWeights::default().lambda_t)]
    lambda_t: f64,
    #[arg(long, default_value_t = LossWeights::default().lambda_reg)]
    lambda_reg: f64,
    #[arg(long, default_value_t = FitConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = FitConfig::default().max_iters)]
    max_iters: usize,
    /// Fitted surface output
    #[arg(long)]
    out: PathBuf,
    /// Optional per-iteration loss CSV
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long)]
    surface: PathBuf,
    /// Cleaned road mask
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = SamplingConfig::default().road_rate)]
    road_rate: f64,
    #[arg(long, default_value_t = SamplingConfig::default().terrain_rate)]
    terrain_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Cleaned road mask used to split the mesh
    #[arg(long)]
    mask: PathBuf,
    /// Road ground truth raster; NODATA cells are ignored
    #[arg(long)]
    gt_road: PathBuf,
    /// Terrain ground truth raster; NODATA cells are ignored
    #[arg(long)]
    gt_terrain: PathBuf,
    /// Row label in the output
    #[arg(long, default_value = "mesh")]
    method: String,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set filter.theta_z=1.0
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Config key to sweep, e.g. filter.theta_z
    #[arg(long)]
    key: String,
    /// Comma-separated values
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn at(stage: Stage) -> impl FnOnce(Error) -> PipelineError {
    move |source| PipelineError { stage, source }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| at(Stage::Output)(io_error(dir, e)))?;
    }
    std::fs::write(path, text).map_err(|e| at(Stage::Output)(io_error(path, e)))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::FileNotFound(path.to_path_buf())
    } else {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
    }
}

fn synth(a: SynthArgs) -> Result<(), PipelineError> {
    let mut spec = match &a.spec {
        Some(p) => SceneSpec::load(p).map_err(at(Stage::Config))?,
        None if a.clean => SceneSpec::clean(0),
        None => SceneSpec::standard(0),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let scene = generate(&spec).map_err(at(Stage::Grid))?;
    std::fs::create_dir_all(&a.out).map_err(|e| at(Stage::Output)(io_error(&a.out, e)))?;
    let out = |name: &str| a.out.join(name);
    let save = |r: &Raster, name: &str| save_raster(r, out(name)).map_err(at(Stage::Output));
    save(&scene.dsm, "dsm.asc")?;
    save(&scene.dtm, "dtm.asc")?;
    save(&scene.gt_road.to_raster(), "gt_road.asc")?;
    save(&scene.gt_terrain.to_raster(), "gt_terrain.asc")?;
    save(&scene.provenance_raster(), "provenance.asc")?;
    save_mask(&scene.mask, out("mask.asc")).map_err(at(Stage::Output))?;
    save_mask(&scene.road_footprint, out("road_footprint.asc")).map_err(at(Stage::Output))?;
    write_text(&out("scene.toml"), &spec.to_toml())?;

    let mut config = PipelineConfig::default();
    config.paths.dsm = Some(out("dsm.asc"));
    config.paths.dtm = Some(out("dtm.asc"));
    config.paths.mask = Some(out("mask.asc"));
    config.paths.gt_road = Some(out("gt_road.asc"));
    config.paths.gt_terrain = Some(out("gt_terrain.asc"));
    config.paths.output_dir = out("run");
    write_text(&out("config.toml"), &config.to_toml())?;
    println!(
        "scene written to {} (road width {:.2} m, {} mask cells)",
        a.out.display(),
        scene.road_width,
        scene.mask.count_ones()
    );
    Ok(())
}

fn filter(a: FilterArgs) -> Result<(), PipelineError> {
    let params = FilterParams {
        theta_xy: a.theta_xy,
        theta_z: a.theta_z,
        top_k: a.top_k,
    };
    params.validate().map_err(at(Stage::Config))?;
    let dsm = load_raster(&a.dsm).map_err(at(Stage::Grid))?;
    let mask = load_mask(&a.mask).map_err(at(Stage::Grid))?;
    let mask = resample_mask(&mask, dsm.geometry()).map_err(at(Stage::Grid))?;
    let points = extract_road_points(&dsm, &mask).map_err(at(Stage::Grid))?;
    let out = run_filter(&points, &params).map_err(at(Stage::Filter))?;
    save_mask(&out.mask, &a.out).map_err(at(Stage::Output))?;
    println!("kept {} of {} road points", out.points.len(), points.len());
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<(), PipelineError> {
    let params = SurfaceParams {
        control_u: a.control_u,
        control_v: a.control_v,
        degree_u: a.degree_u,
        degree_v: a.degree_v,
    };
    let weights = LossWeights {
        lambda_t: a.lambda_t,
        lambda_reg: a.lambda_reg,
    };
    let config = FitConfig {
        learning_rate: a.learning_rate,
        max_iters: a.max_iters,
        ..Default::default()
    };
    weights.validate().map_err(at(Stage::Config))?;
    config.validate().map_err(at(Stage::Config))?;
    let dsm = load_raster(&a.dsm).map_err(at(Stage::Grid))?;
    let dtm = load_raster(&a.dtm).map_err(at(Stage::Grid))?;
    let mask = load_mask(&a.mask).map_err(at(Stage::Grid))?;
    let mask = resample_mask(&mask, dsm.geometry()).map_err(at(Stage::Grid))?;
    let init = initial_surface(&dsm, &dtm, &mask, &params).map_err(at(Stage::Fit))?;
    let (surface, report) =
        fit(&init, &dsm, &dtm, &mask, &weights, &config).map_err(at(Stage::Fit))?;
    save_surface(&surface, &a.out).map_err(at(Stage::Output))?;
    if let Some(trace) = &a.trace {
        write_text(trace, &report.to_csv())?;
    }
    println!(
        "{} iterations ({}), loss {:.6} -> {:.6}",
        report.iterations, report.stop_reason, report.initial.total, report.best.total
    );
    Ok(())
}

fn mesh_cmd(a: MeshArgs) -> Result<(), PipelineError> {
    let sampling = SamplingConfig {
        road_rate: a.road_rate,
        terrain_rate: a.terrain_rate,
    };
    sampling.validate().map_err(at(Stage::Config))?;
    let surface = load_surface(&a.surface).map_err(at(Stage::Grid))?;
    let mask = load_mask(&a.mask).map_err(at(Stage::Grid))?;
    let mesh = build_tin(&surface, &mask, &sampling).map_err(at(Stage::Mesh))?;
    export_mesh(&mesh, &a.out).map_err(at(Stage::Output))?;
    println!(
        "{} vertices, {} triangles",
        mesh.vertices().len(),
        mesh.triangle_count()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), PipelineError> {
    let mesh = load_mesh(&a.mesh).map_err(at(Stage::Grid))?;
    let mask = load_mask(&a.mask).map_err(at(Stage::Grid))?;
    let gt = |p: &Path| {
        load_raster(p)
            .map(|r| PointGrid::from_raster(&r, |_, _| true))
            .map_err(at(Stage::Grid))
    };
    let (road, terrain) = (gt(&a.gt_road)?, gt(&a.gt_terrain)?);
    let report = evaluate_all(&mesh, &road, &terrain, &mask).map_err(at(Stage::Metrics))?;
    let rows = [(a.method.as_str(), report)];
    match &a.csv {
        Some(path) => {
            write_text(path, &metrics_csv(&rows))?;
            print!("{}", metrics_table(&rows));
        }
        None => print!("{}", metrics_csv(&rows)),
    }
    Ok(())
}

fn load_config(a: &ConfigArgs) -> Result<PipelineConfig, PipelineError> {
    let mut config = PipelineConfig::load(&a.config)?;
    config.apply_overrides(&a.set)?;
    config.validate()?;
    Ok(config)
}

fn run_cmd(a: RunArgs) -> Result<(), PipelineError> {
    let config = load_config(&a.config)?;
    let (output, baselines, artifacts) = run_pipeline(&config)?;
    info!("artifacts written to {}", config.paths.output_dir.display());
    if let Some(m) = output.metrics {
        let mut rows = vec![("FlexRoad", m)];
        if let Some(b) = baselines {
            rows.push(("Plane", b.plane));
            rows.push(("RGT", b.rgt));
        }
        print!("{}", metrics_table(&rows));
    } else {
        println!(
            "mesh: {} triangles -> {}",
            output.mesh.triangle_count(),
            artifacts.mesh.display()
        );
    }
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<(), PipelineError> {
    let config = load_config(&a.config)?;
    let inputs = load_inputs(&config)?;
    let rows = ablate(&config, &inputs, &a.key, &a.values)?;
    let csv = ablation_csv(&a.key, &rows);
    match &a.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Filter(a) => filter(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Mesh(a) => mesh_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
