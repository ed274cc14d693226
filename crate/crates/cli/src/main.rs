//! `dsct`: phantom generation, projection, reconstruction, dataset builds and
//! metric tables for dual-spectral fan-beam CT.

mod config;
mod eval;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsct::dataset::{build_dataset, write_atomic, DatasetSpec};
use dsct::forward::{add_poisson_noise, forward_project, read_sinograms, write_sinograms, SinogramMeta};
use dsct::geometry::{FanBeamGeometry, GeometrySpec, ImageGrid, ProjectionMatrix};
use dsct::metrics::table_csv;
use dsct::opmt::{self, Method, OpmtConfig, Problem};
use dsct::phantom::{generate_phantom_indexed, ingest_image_pair};
use serde_json::{json, Value};

use config::{decode, merge, overrides, read_json, to_value, RunConfig};
use eval::{ChannelFiles, PredSpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<dsct::Error> for CliError {
    fn from(e: dsct::Error) -> Self {
        let missing_input = matches!(&e, dsct::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound);
        if e.is_validation() || missing_input {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "dsct", version, about = "Dual-spectral CT simulation and OPMT reconstruction")]
struct Cli {
    /// JSON run configuration (geometry, spectra, i0, seed, opmt, matrix_cache); flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate random ellipse phantoms (bone and water density images)
    Phantom(PhantomArgs),
    /// Forward-project a density pair under both spectra and add Poisson noise
    Project(ProjectArgs),
    /// Reconstruct bone and water densities from a sinogram pair
    Recon(ReconArgs),
    /// Build a full training dataset from a JSON build spec
    Dataset(DatasetArgs),
    /// Compare predictions with ground truth and write MSE/PSNR/SSIM tables
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
struct GeometryArgs {
    /// JSON geometry file with keys n_s, n_d, l_d, d1, d2, n_r
    #[arg(long, value_name = "FILE")]
    geometry: Option<PathBuf>,
    /// Number of view angles over a full turn [default: 60]
    #[arg(long)]
    n_s: Option<usize>,
    /// Number of detector elements [default: 256]
    #[arg(long)]
    n_d: Option<usize>,
    /// Detector element pitch in cm [default: 0.2]
    #[arg(long)]
    l_d: Option<f64>,
    /// Source to rotation-center distance in cm [default: 490]
    #[arg(long)]
    d1: Option<f64>,
    /// Rotation-center to detector distance in cm [default: 390]
    #[arg(long)]
    d2: Option<f64>,
    /// Image side length in pixels [default: 256]
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct SpectraArgs {
    /// Low-energy spectrum CSV (energy_kev,weight) [default: bundled 80 kV table]
    #[arg(long, value_name = "FILE")]
    low: Option<PathBuf>,
    /// High-energy spectrum CSV (energy_kev,weight) [default: bundled 140 kV table]
    #[arg(long, value_name = "FILE")]
    high: Option<PathBuf>,
    /// Bone/water attenuation CSV (energy_kev,phi,theta) [default: bundled table]
    #[arg(long, value_name = "FILE")]
    materials: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Number of phantoms
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; phantom i is written to <OUT>/<id>/{f_gt,g_gt}.tsr
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    #[command(flatten)]
    spectra: SpectraArgs,
    /// Directory holding the bone and water density tensors
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Bone and water file stems inside --in
    #[arg(long, default_value = "f_gt,g_gt", value_name = "BONE,WATER")]
    files: ChannelFiles,
    /// Output directory for p1.tsr, p2.tsr and sinogram.json
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Incident photon count per ray [default: 100000]
    #[arg(long)]
    i0: Option<f64>,
    /// Noise seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the Poisson noise step
    #[arg(long)]
    noise_free: bool,
    /// Directory for the cached system matrix
    #[arg(long, value_name = "DIR")]
    matrix_cache: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MethodArg {
    Opmt,
    Eart,
}

#[derive(Args, Debug)]
struct ReconArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    #[command(flatten)]
    spectra: SpectraArgs,
    /// Directory holding p1.tsr, p2.tsr and sinogram.json
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output directory for f_opmt.tsr, g_opmt.tsr and residuals.csv
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Update rule; eart ignores --lambda1/--lambda2
    #[arg(long, value_enum, default_value_t = MethodArg::Opmt)]
    method: MethodArg,
    /// Number of sweeps over all rays [default: 10]
    #[arg(long)]
    iters: Option<usize>,
    /// Weight of the own-hyperplane normal [default: 1]
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight of the direction along the other hyperplane [default: 1]
    #[arg(long)]
    lambda2: Option<f64>,
    /// Step scale in (0, 2] [default: 1]
    #[arg(long)]
    relaxation: Option<f64>,
    /// Clamp densities at zero after every step
    #[arg(long)]
    nonneg: bool,
    /// Directory for the cached system matrix
    #[arg(long, value_name = "DIR")]
    matrix_cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// JSON build spec (count, geometry, spectra, i0, opmt, split, seed, ingest, density_range, matrix_cache)
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Dataset root
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Master seed, overrides the spec
    #[arg(long)]
    seed: Option<u64>,
    /// Number of generated samples, overrides the spec [default: 3500]
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Ground-truth root; every directory below it holding the bone file is a sample
    #[arg(long, value_name = "DIR")]
    truth: PathBuf,
    /// Prediction root mirroring --truth, as NAME=DIR or DIR; repeat for more table columns
    #[arg(long, value_name = "[NAME=]DIR", required = true)]
    pred: Vec<PredSpec>,
    /// Bone and water file stems in ground-truth samples
    #[arg(long, default_value = "f_gt,g_gt", value_name = "BONE,WATER")]
    truth_files: ChannelFiles,
    /// Bone and water file stems in prediction samples
    #[arg(long, default_value = "f_opmt,g_opmt", value_name = "BONE,WATER")]
    pred_files: ChannelFiles,
    /// Output directory for metrics.csv and metrics.json
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// Loads `--config` (or `{}`) as raw JSON.
fn config_value(cli: &Cli) -> CliResult<Value> {
    let value = match &cli.config {
        Some(path) => read_json(path)?,
        None => json!({}),
    };
    decode::<RunConfig>(value.clone(), "config")?;
    Ok(value)
}

fn geometry_overrides(g: &GeometryArgs) -> CliResult<Value> {
    let mut v = json!({});
    if let Some(path) = &g.geometry {
        let file = read_json(path)?;
        decode::<GeometrySpec>(file.clone(), &path.display().to_string())?;
        merge(&mut v, json!({ "geometry": file }));
    }
    merge(
        &mut v,
        overrides(vec![
            ("geometry.n_s", to_value(g.n_s)),
            ("geometry.n_d", to_value(g.n_d)),
            ("geometry.l_d", to_value(g.l_d)),
            ("geometry.d1", to_value(g.d1)),
            ("geometry.d2", to_value(g.d2)),
            ("geometry.n_r", to_value(g.size)),
        ]),
    );
    Ok(v)
}

fn spectra_overrides(s: &SpectraArgs) -> Value {
    overrides(vec![
        ("spectra.low", to_value(s.low.clone())),
        ("spectra.high", to_value(s.high.clone())),
        ("spectra.materials", to_value(s.materials.clone())),
    ])
}

fn resolve(base: &Value, layers: Vec<Value>) -> CliResult<RunConfig> {
    let mut v = base.clone();
    for layer in layers {
        merge(&mut v, layer);
    }
    let cfg: RunConfig = decode(v, "configuration")?;
    cfg.opmt.validate()?;
    if !(cfg.i0 > 0.0 && cfg.i0.is_finite()) {
        return Err(CliError::Validation(format!("i0 must be > 0, got {}", cfg.i0)));
    }
    Ok(cfg)
}

fn build_geometry(cfg: &RunConfig) -> CliResult<(FanBeamGeometry, ImageGrid)> {
    Ok(cfg.geometry.build()?)
}

fn matrix_for(cfg: &RunConfig, geom: &FanBeamGeometry, grid: &ImageGrid) -> CliResult<ProjectionMatrix> {
    Ok(match &cfg.matrix_cache {
        Some(dir) => ProjectionMatrix::load_or_build(geom, grid, dir)?,
        None => ProjectionMatrix::build(geom, grid)?,
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn cmd_phantom(base: &Value, a: &PhantomArgs) -> CliResult<()> {
    let cfg = resolve(
        base,
        vec![geometry_overrides(&a.geometry)?, overrides(vec![("seed", to_value(a.seed))])],
    )?;
    if a.count == 0 {
        return Err(CliError::Validation("--count must be >= 1".into()));
    }
    let (geom, grid) = build_geometry(&cfg)?;
    let width = (a.count - 1).to_string().len().max(4);
    let shape = [grid.n_r, grid.n_r];
    for i in 0..a.count {
        let pair = generate_phantom_indexed(&grid, geom.fov_radius(), cfg.seed, i as u64);
        let dir = a.out.join(format!("{i:0width$}"));
        create_dir(&dir)?;
        dsct::dataset::tensor::write_f64_as_f32(&dir.join("f_gt.tsr"), &shape, &pair.f)?;
        dsct::dataset::tensor::write_f64_as_f32(&dir.join("g_gt.tsr"), &shape, &pair.g)?;
    }
    Ok(())
}

fn cmd_project(base: &Value, a: &ProjectArgs) -> CliResult<()> {
    let cfg = resolve(
        base,
        vec![
            geometry_overrides(&a.geometry)?,
            spectra_overrides(&a.spectra),
            overrides(vec![
                ("i0", to_value(a.i0)),
                ("seed", to_value(a.seed)),
                ("matrix_cache", to_value(a.matrix_cache.clone())),
            ]),
        ],
    )?;
    let (geom, grid) = build_geometry(&cfg)?;
    let loaded = cfg.spectra.load()?;
    let (low, high) = loaded.channels()?;
    let f = a.input.join(format!("{}.tsr", a.files.f));
    let g = a.input.join(format!("{}.tsr", a.files.g));
    let pair = ingest_image_pair(&f, &g, &grid, None)?;
    let matrix = matrix_for(&cfg, &geom, &grid)?;
    let clean = forward_project(&pair, &matrix, &low, &high)?;
    let (sino, i0, seed) = if a.noise_free {
        (clean, None, None)
    } else {
        (add_poisson_noise(&clean, cfg.i0, cfg.seed)?, Some(cfg.i0), Some(cfg.seed))
    };
    let meta = SinogramMeta {
        geometry_hash: sino.geometry_hash.clone(),
        spectra_hashes: loaded.hashes.clone(),
        i0,
        seed,
    };
    Ok(write_sinograms(&a.out, &sino, &meta)?)
}

fn cmd_recon(base: &Value, a: &ReconArgs) -> CliResult<()> {
    let cfg = resolve(
        base,
        vec![
            geometry_overrides(&a.geometry)?,
            spectra_overrides(&a.spectra),
            overrides(vec![
                ("opmt.n_sweeps", to_value(a.iters)),
                ("opmt.lambda1", to_value(a.lambda1)),
                ("opmt.lambda2", to_value(a.lambda2)),
                ("opmt.relaxation", to_value(a.relaxation)),
                ("opmt.nonneg", a.nonneg.then_some(Value::Bool(true))),
                ("matrix_cache", to_value(a.matrix_cache.clone())),
            ]),
        ],
    )?;
    let (geom, grid) = build_geometry(&cfg)?;
    let (sino, meta) = read_sinograms(&a.input)?;
    let loaded = cfg.spectra.load()?;
    if meta.spectra_hashes != loaded.hashes {
        return Err(CliError::Validation(format!(
            "{}: sinograms were simulated with different spectra or materials",
            a.input.display()
        )));
    }
    let (low, high) = loaded.channels()?;
    let matrix = matrix_for(&cfg, &geom, &grid)?;
    let problem = Problem::new(&sino, &matrix, &low, &high)?;
    let (opmt_cfg, method): (OpmtConfig, Method) = match a.method {
        MethodArg::Opmt => (cfg.opmt.clone(), Method::Opmt),
        MethodArg::Eart => (cfg.opmt.eart(), Method::Eart),
    };
    let result = opmt::reconstruct(&problem, &opmt_cfg, method, None)?;
    create_dir(&a.out)?;
    let shape = [grid.n_r, grid.n_r];
    dsct::dataset::tensor::write_f64_as_f32(&a.out.join("f_opmt.tsr"), &shape, &result.state.f)?;
    dsct::dataset::tensor::write_f64_as_f32(&a.out.join("g_opmt.tsr"), &shape, &result.state.g)?;
    let csv = opmt::residuals_csv(&result.residuals);
    Ok(write_atomic(&a.out.join("residuals.csv"), csv.as_bytes())?)
}

/// Keys of the run configuration that a dataset build spec shares.
const SHARED_KEYS: [&str; 6] = ["geometry", "spectra", "i0", "seed", "opmt", "matrix_cache"];

fn cmd_dataset(base: &Value, a: &DatasetArgs) -> CliResult<()> {
    let mut v = json!({});
    if let Value::Object(map) = base {
        for key in SHARED_KEYS {
            if let Some(x) = map.get(key) {
                merge(&mut v, json!({ key: x }));
            }
        }
    }
    merge(&mut v, read_json(&a.spec)?);
    merge(
        &mut v,
        overrides(vec![("seed", to_value(a.seed)), ("count", to_value(a.count))]),
    );
    let spec: DatasetSpec = decode(v, &a.spec.display().to_string())?;
    build_dataset(&spec, &a.out)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let out = eval::evaluate(&a.truth, &a.truth_files, &a.pred, &a.pred_files)?;
    create_dir(&a.out)?;
    write_atomic(&a.out.join("metrics.csv"), table_csv(&out.models).as_bytes())?;
    let json = serde_json::to_vec_pretty(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(write_atomic(&a.out.join("metrics.json"), &json)?)
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let base = config_value(cli)?;
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(&base, a),
        Command::Project(a) => cmd_project(&base, a),
        Command::Recon(a) => cmd_recon(&base, a),
        Command::Dataset(a) => cmd_dataset(&base, a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}
