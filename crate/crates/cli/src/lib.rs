//! Command-line front end for the `sscan` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use sscan_core::gradcheck::{run_suite, SuiteConfig, DEFAULT_STEP, DEFAULT_TOLERANCE, SUITE_OPS};
use sscan_core::hsi::{add_gaussian_noise, derive_seed, load_any, load_cube, save_cube, HsiCube, NoiseSpec};
use sscan_core::metrics::{evaluate_pair, mpsnr};
use sscan_core::network::{denoise_tiled, load_checkpoint, ModelConfig, SscanModel, DEFAULT_MARGIN};
use sscan_core::tensor::OpKind;
use sscan_core::trainer::{fit, TrainConfig};

pub mod error_map;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;
pub const EXIT_INVALID: u8 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sscan_core::Error),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: sscan_core::Error,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    /// 3 for I/O and file-format problems, 4 for numerical failures
    /// (divergence, failed gradient checks), 5 for invalid input. Argument
    /// parse errors exit with 2 before any command runs.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io() => EXIT_IO,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(_) | CliError::Invalid(_) => EXIT_INVALID,
            CliError::File { source, .. } if source.is_io() => EXIT_IO,
            CliError::File { .. } => EXIT_INVALID,
            CliError::Io(_) => EXIT_IO,
            CliError::GradcheckFailed(_) => EXIT_NUMERICAL,
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

fn with_path<T>(path: &Path, r: sscan_core::Result<T>) -> CliResult<T> {
    r.map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn read_cube(path: &Path) -> CliResult<HsiCube> {
    with_path(path, load_cube(path))
}

fn write_cube(cube: &HsiCube, path: &Path) -> CliResult {
    with_path(path, save_cube(cube, path))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, bytes).map_err(|e| CliError::File {
        path: path.to_path_buf(),
        source: e.into(),
    })
}

/// Hyperspectral denoising with a spectral-spatial cross attention network.
///
/// Exit codes: 0 success, 2 argument error, 3 I/O or file format error,
/// 4 numerical failure (divergence, failed gradient check), 5 invalid input.
/// SSCAN_THREADS caps the worker thread count.
#[derive(Debug, Parser)]
#[command(name = "sscan", version)]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Also log debug messages.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a cube (HSIC or ENVI-style .hdr), optionally crop and split it,
    /// normalize each band to [0, 1] and write HSIC.
    Prepare(PrepareArgs),
    /// Add Gaussian noise of sigma/255 to a clean cube and report metrics.
    SimulateNoise(SimulateArgs),
    /// Train a model on random patches of a cube.
    Train(TrainArgs),
    /// Denoise a cube with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Compare a cube against its clean reference.
    Evaluate(EvaluateArgs),
    /// Write an absolute-error map as a binary PGM.
    ErrorMap(ErrorMapArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Source cube: HSIC file or ENVI-style header (.hdr).
    #[arg(long)]
    pub input: PathBuf,
    /// Normalized HSIC output (the training part when splitting).
    #[arg(long)]
    pub output: PathBuf,
    /// Crop before normalizing: column, row, height, width.
    #[arg(long, num_args = 4, value_names = ["X", "Y", "H", "W"])]
    pub crop: Option<Vec<usize>>,
    /// Keep the first N rows in --output and write the rest to --test-output.
    #[arg(long, requires = "test_output")]
    pub split_rows: Option<usize>,
    /// Where the rows after --split-rows go.
    #[arg(long, requires = "split_rows")]
    pub test_output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Clean cube in [0, 1].
    #[arg(long)]
    pub input: PathBuf,
    /// Noisy HSIC output.
    #[arg(long)]
    pub output: PathBuf,
    /// Noise level in 8-bit units.
    #[arg(long, default_value_t = 25.0)]
    pub sigma: f64,
    /// Noise stream seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the metrics report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Normalized training cube.
    #[arg(long)]
    pub input: PathBuf,
    /// Clean test cube.
    #[arg(long)]
    pub clean: PathBuf,
    /// Noisy test cube, fixed for every evaluation.
    #[arg(long)]
    pub noisy: PathBuf,
    /// Directory for the best checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training log path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Training noise level in 8-bit units.
    #[arg(long, default_value_t = 25.0)]
    pub sigma: f64,
    /// Base seed for initialization, patch sampling and noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bands per group.
    #[arg(long = "k", value_name = "K", default_value_t = 4)]
    pub group_size: usize,
    /// Bands shared by neighbouring groups.
    #[arg(long, default_value_t = 2)]
    pub overlap: usize,
    /// Attention blocks per cascade.
    #[arg(long, default_value_t = 10)]
    pub n_ssab: usize,
    /// Trunk feature width.
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    /// Per-group output width.
    #[arg(long, default_value_t = 16)]
    pub group_channels: usize,
    /// Training epochs (0 exits immediately).
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Patches per batch.
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Patch side length.
    #[arg(long, default_value_t = 40)]
    pub patch: usize,
    /// Random patches drawn per epoch.
    #[arg(long, default_value_t = 2000)]
    pub patches_per_epoch: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Epoch at which the learning rate drops tenfold.
    #[arg(long, default_value_t = 50)]
    pub decay_epoch: usize,
    /// Epochs between test evaluations.
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    /// Max-norm gradient clipping (off when absent).
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Evaluate the test cube in tiles of this size (whole cube when absent).
    #[arg(long)]
    pub tile: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Trained model (SSCK file).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Noisy cube.
    #[arg(long)]
    pub input: PathBuf,
    /// Denoised HSIC output.
    #[arg(long)]
    pub output: PathBuf,
    /// Tile side length; cubes no larger than this run whole.
    #[arg(long, default_value_t = 256)]
    pub tile: usize,
    /// Context kept around each tile and cropped away after inference.
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Clean reference cube.
    #[arg(long)]
    pub clean: PathBuf,
    /// Cube under test.
    #[arg(long)]
    pub input: PathBuf,
    /// Also write the metrics report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ErrorMapArgs {
    /// Clean reference cube.
    #[arg(long)]
    pub clean: PathBuf,
    /// Cube under test.
    #[arg(long)]
    pub input: PathBuf,
    /// Output PGM.
    #[arg(long)]
    pub output: PathBuf,
    /// Three band indices averaged into the map.
    #[arg(long, value_delimiter = ',', default_value = "57,27,17")]
    pub bands: Vec<usize>,
    /// Error mapped to white; the largest error in the map when absent.
    #[arg(long)]
    pub max_error: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Comma-separated subset of checks (all when absent).
    #[arg(long, value_delimiter = ',', value_parser = clap::builder::PossibleValuesParser::new(SUITE_OPS))]
    pub ops: Option<Vec<String>>,
    /// Seed for random inputs and layer initialization.
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    /// Bands of the network under test.
    #[arg(long, default_value_t = 6)]
    pub bands: usize,
    /// Bands per group.
    #[arg(long = "k", value_name = "K", default_value_t = 4)]
    pub group_size: usize,
    /// Bands shared by neighbouring groups.
    #[arg(long, default_value_t = 2)]
    pub overlap: usize,
    /// Attention blocks per cascade.
    #[arg(long, default_value_t = 2)]
    pub n_ssab: usize,
    /// Trunk feature width.
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Per-group output width.
    #[arg(long, default_value_t = 4)]
    pub group_channels: usize,
    /// Spatial side of the layer and network checks.
    #[arg(long, default_value_t = 6)]
    pub patch: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    /// Corrupt the backward rule of one tape operation (self-test of the
    /// checker).
    #[arg(long, value_parser = parse_op_kind)]
    pub inject_fault: Option<OpKind>,
}

fn parse_op_kind(s: &str) -> Result<OpKind, String> {
    OpKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| {
            let names: Vec<_> = OpKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown operation `{s}`; expected one of {}", names.join(", "))
        })
}

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::SimulateNoise(a) => simulate_noise(a),
        Command::Train(a) => train(a),
        Command::Denoise(a) => denoise(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ErrorMap(a) => error_map_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

/// Full metrics line, or MPSNR alone when the cube is too small for MSSIM
/// or has no usable spectra.
fn report_text(clean: &HsiCube, test: &HsiCube) -> CliResult<String> {
    match evaluate_pair(clean, test) {
        Ok(r) => Ok(format!("{r}\n{}", r.to_key_values())),
        Err(sscan_core::Error::InvalidArgument { field, reason }) => {
            warn!("partial report ({field}: {reason})");
            let v = mpsnr(clean, test)?;
            Ok(format!("MPSNR={v:.4}\nmpsnr = {v}\n"))
        }
        Err(e) => Err(e.into()),
    }
}

fn emit_report(text: &str, path: Option<&Path>) -> CliResult {
    println!("{}", text.lines().next().unwrap_or_default());
    if let Some(p) = path {
        write_file(p, text)?;
    }
    Ok(())
}

fn prepare(a: PrepareArgs) -> CliResult {
    let mut cube = with_path(&a.input, load_any(&a.input))?;
    info!("loaded {:?} ({}x{}x{})", a.input, cube.height(), cube.width(), cube.bands());
    if let Some(c) = &a.crop {
        cube = cube.crop(c[1], c[0], c[2], c[3])?;
    }
    let cube = cube.normalize();
    match (a.split_rows, &a.test_output) {
        (Some(rows), Some(test_path)) => {
            let (train, test) = cube.split_spatial(rows)?;
            write_cube(&train, &a.output)?;
            write_cube(&test, test_path)?;
            info!("wrote {:?} and {:?}", a.output, test_path);
        }
        _ => write_cube(&cube, &a.output)?,
    }
    Ok(())
}

fn simulate_noise(a: SimulateArgs) -> CliResult {
    info!("simulate-noise sigma={} seed={}", a.sigma, a.seed);
    let clean = read_cube(&a.input)?;
    let noisy = add_gaussian_noise(&clean, &NoiseSpec::new(a.sigma, a.seed))?;
    write_cube(&noisy, &a.output)?;
    emit_report(&report_text(&clean, &noisy)?, a.report.as_deref())
}

fn train(a: TrainArgs) -> CliResult {
    let train = read_cube(&a.input)?;
    let clean = read_cube(&a.clean)?;
    let noisy = read_cube(&a.noisy)?;
    let model_config = ModelConfig {
        group_size: a.group_size,
        overlap: a.overlap,
        n_ssab: a.n_ssab,
        fusion_ssab: a.n_ssab,
        trunk_channels: a.channels,
        group_channels: a.group_channels,
        bands: train.bands(),
        seed: a.seed,
        ..ModelConfig::default()
    };
    let train_config = TrainConfig {
        initial_lr: a.lr,
        decay_epoch: a.decay_epoch,
        epochs: a.epochs,
        batch_size: a.batch,
        patch_size: a.patch,
        patches_per_epoch: a.patches_per_epoch,
        noise: NoiseSpec::new(a.sigma, derive_seed(a.seed, 2)),
        data_seed: derive_seed(a.seed, 1),
        eval_every: a.eval_every,
        checkpoint_dir: Some(a.checkpoint.clone()),
        clip_norm: a.clip_norm,
        eval_tile: a.tile,
        ..TrainConfig::default()
    };
    info!("model {model_config:?}");
    info!("training {train_config:?}");
    let mut model = SscanModel::new(model_config)?;
    info!("{} parameters", model.parameter_count());
    let baseline = mpsnr(&clean, &noisy)?;
    let report = fit(&mut model, &train, &clean, &noisy, &train_config)?;
    if let Some(path) = &a.report {
        write_file(path, report.to_log())?;
    }
    for e in &report.checkpoint_errors {
        warn!("checkpoint not written: {e}");
    }
    match report.best {
        Some((epoch, best)) => {
            println!("best epoch {epoch}: {best}");
            println!("MPSNR gain over noisy input: {:.4} dB", best.mpsnr - baseline);
        }
        None => println!("no epochs run"),
    }
    Ok(())
}

fn denoise(a: DenoiseArgs) -> CliResult {
    let model = with_path(&a.checkpoint, load_checkpoint(&a.checkpoint))?;
    let cube = read_cube(&a.input)?;
    info!("denoise tile={} margin={} config {:?}", a.tile, a.margin, model.config());
    let out = denoise_tiled(&model, &cube, a.tile, a.margin)?;
    write_cube(&out, &a.output)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let clean = read_cube(&a.clean)?;
    let test = read_cube(&a.input)?;
    let report = evaluate_pair(&clean, &test)?;
    emit_report(&format!("{report}\n{}", report.to_key_values()), a.report.as_deref())
}

fn error_map_cmd(a: ErrorMapArgs) -> CliResult {
    let clean = read_cube(&a.clean)?;
    let test = read_cube(&a.input)?;
    let bands: [usize; 3] = a
        .bands
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Invalid("--bands takes exactly three indices".into()))?;
    let map = error_map::ErrorMap::compute(&clean, &test, bands)?;
    let anchor = a.max_error.unwrap_or(map.max());
    write_file(&a.output, map.to_pgm(anchor)?)?;
    info!("error map anchor {anchor}");
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let config = SuiteConfig {
        step: a.step,
        tolerance: a.tolerance,
        seed: a.seed,
        ops: a.ops,
        fault: a.inject_fault,
        model: ModelConfig {
            group_size: a.group_size,
            overlap: a.overlap,
            n_ssab: a.n_ssab,
            fusion_ssab: a.n_ssab,
            trunk_channels: a.channels,
            group_channels: a.group_channels,
            bands: a.bands,
            ..ModelConfig::tiny()
        },
        spatial: a.patch,
    };
    info!("gradcheck {config:?}");
    let outcomes = run_suite(&config)?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{} ({} at {})", o.op, o.target, o.location))
        .collect();
    if failed.is_empty() {
        println!("all {} checks within {:e}", outcomes.len(), a.tolerance);
        Ok(())
    } else {
        Err(CliError::GradcheckFailed(failed.join(", ")))
    }
}
