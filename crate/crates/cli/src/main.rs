//! `cmdt`: command-line front end for the spectral imaging toolkit.

mod commands;
mod interrupt;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cmdt_core::scene::SceneKind;

#[derive(Parser, Debug)]
#[command(name = "cmdt", version, about = "Snapshot spectral imaging: simulation, analysis, training and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic cube.
    GenScene(GenSceneArgs),
    /// Write a random binary coded aperture as an H x W x 1 cube.
    GenMask(GenMaskArgs),
    /// Simulate a CASSI measurement of a cube.
    Simulate(SimulateArgs),
    /// Band correlation maps and token correlation curve of one cube.
    AnalyzeHfc(AnalyzeHfcArgs),
    /// Correlation statistics and histograms over many cubes.
    CorpusStats(CorpusStatsArgs),
    /// Train an unfolding model.
    Train(TrainArgs),
    /// Reconstruct a cube from a measurement.
    Reconstruct(ReconstructArgs),
    /// PSNR, SSIM and frequency-domain gap of reconstructions.
    Metrics(MetricsArgs),
    /// Parameter and FLOP counts of a model configuration.
    Params(ParamsArgs),
    /// Export gating filters, attention maps and correlation maps as PGM.
    ExportMaps(ExportMapsArgs),
    /// Train one model per token size and tabulate the results.
    AblateKernel(AblateKernelArgs),
}

#[derive(Args, Debug)]
struct GenSceneArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: SceneKind,
    #[arg(long, default_value_t = 64)]
    h: usize,
    #[arg(long, default_value_t = 64)]
    w: usize,
    #[arg(long, default_value_t = 28)]
    c: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Spectral correlation in [0, 1].
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenMaskArgs {
    #[arg(long, default_value_t = 64)]
    h: usize,
    #[arg(long, default_value_t = 64)]
    w: usize,
    /// Fraction of open pixels.
    #[arg(long, default_value_t = 0.5)]
    open: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Dispersion in pixels per band.
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeHfcArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 8)]
    token: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CorpusStatsArgs {
    /// HSIC files to analyse.
    #[arg(long = "in", num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Directory whose `.hsic` files are added to the inputs.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    stages: usize,
    /// One prior shared by all stages (the default).
    #[arg(long, overrides_with = "no_share")]
    share: bool,
    /// One prior per stage.
    #[arg(long)]
    no_share: bool,
    /// Base embedding width; defaults to the band count.
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long, default_value_t = 8)]
    token: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    ffn_mult: usize,
    #[arg(long, default_value_t = 16)]
    ipe_width: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory of HSIC training cubes.
    #[arg(long)]
    data: PathBuf,
    /// Coded aperture; its size sets the crop size. Without it a random
    /// mask of `--crop` pixels is drawn from `--seed`.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    crop: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 4e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable rotation and flip augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Scale every cube to a peak of 1 on load.
    #[arg(long)]
    normalize: bool,
    /// Training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Cmdt,
    GapTv,
    ShiftBack,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Measurement, an H x W' x 1 HSIC file.
    #[arg(long)]
    y: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Cmdt)]
    method: Method,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Mask for the model-free methods.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Band count; inferred from the measurement width when `d > 0`.
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0.07)]
    tv_weight: f64,
    #[arg(long, default_value_t = 5)]
    tv_inner: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    gt: PathBuf,
    /// One or more reconstructions of the ground truth.
    #[arg(long, num_args = 1.., required = true)]
    pred: Vec<PathBuf>,
    /// CSV destination; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    /// Count the configuration stored in a checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    h: usize,
    #[arg(long, default_value_t = 256)]
    w: usize,
    #[arg(long, default_value_t = 28)]
    bands: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct ExportMapsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Number of lowest-frequency tokens whose attention is exported.
    #[arg(long, default_value_t = 5)]
    tokens: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct AblateKernelArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    crop: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Token sizes to compare.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    tokens: Vec<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 4e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<SceneKind, String> {
    s.parse().map_err(|e: cmdt_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenScene(a) => commands::gen_scene(a),
        Command::GenMask(a) => commands::gen_mask(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::AnalyzeHfc(a) => commands::analyze_hfc(a),
        Command::CorpusStats(a) => commands::corpus_stats(a),
        Command::Train(a) => commands::train(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Params(a) => commands::params(a),
        Command::ExportMaps(a) => commands::export_maps(a),
        Command::AblateKernel(a) => commands::ablate_kernel(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
