mod commands;
mod manifest;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use afcfit::density::{DEFAULT_GRID, DEFAULT_SIGMA};
use afcfit::distances::Metric;
use afcfit::uniformise::DEFAULT_BINS;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::pipeline::Method;

#[derive(Parser, Debug)]
#[command(
    name = "afcfit",
    version,
    about = "Fit and score binomial decision models on raw 2AFC judgements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a uniformiser and decision surface on a training CSV.
    Fit(FitArgs),
    /// Score a fitted surface on a test CSV.
    Eval(EvalArgs),
    /// Generate a synthetic dataset from a known truth.
    Simulate(SimulateArgs),
    /// Compute distances for a manifest of image triplets.
    Distances(DistancesArgs),
    /// Fit and evaluate over lists of sigma and grid values.
    Sweep(SweepArgs),
    /// Write a fitted surface as plot-ready CSV.
    ExportSurface(ExportArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SIGMA, allow_negative_numbers = true)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = Method::Density)]
    method: Method,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "group")]
    group_col: String,
    /// MLP epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// MLP batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// MLP learning rate.
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    /// Feed raw rather than uniformised distances to the MLP.
    #[arg(long)]
    raw_mlp_input: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed for simulated judgements; defaults to the fit seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fit a fresh uniformiser on the test set instead of reusing the training one.
    #[arg(long)]
    refit_uniformiser: bool,
    /// Defaults to the group column used at fit time.
    #[arg(long)]
    group_col: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TruthKind {
    Logistic,
    Constant,
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SamplerKind {
    Uniform,
    Lognormal,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = TruthKind::Logistic)]
    truth: TruthKind,
    /// Logistic slope.
    #[arg(long, default_value_t = 8.0, allow_negative_numbers = true)]
    k: f64,
    /// Constant probability.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    c: f64,
    /// Step ramp width.
    #[arg(long, default_value_t = 0.1)]
    width: f64,
    #[arg(long, default_value_t = 10_000)]
    t_count: usize,
    /// Observers per triplet.
    #[arg(long, default_value_t = 2)]
    m: u32,
    /// Weighted observer counts such as `2:1,5:3`; overrides `--m`.
    #[arg(long)]
    m_weights: Option<String>,
    #[arg(long, value_enum, default_value_t = SamplerKind::Uniform)]
    sampler: SamplerKind,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    log_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Euclidean,
    Ssim,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Ssim => Metric::Ssim,
        }
    }
}

#[derive(Args, Debug)]
struct DistancesArgs {
    /// CSV with columns id,ref,x0,x1,n,m and optionally group. Image paths are
    /// relative to the manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Ssim)]
    metric: MetricArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Sigma values, evaluated on a fixed 100x100 grid.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    sigmas: Vec<f64>,
    /// Grid sizes, evaluated at the default sigma.
    #[arg(long, value_delimiter = ',')]
    grids: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "group")]
    group_col: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    fit: PathBuf,
    /// Resample to this many cells per axis.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// 2 for missing inputs and invalid configuration, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        match cause.downcast_ref::<afcfit::Error>() {
            Some(afcfit::Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => return 2,
            Some(afcfit::Error::Config(_)) => return 2,
            _ => {}
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Eval(a) => commands::eval(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Distances(a) => commands::distances(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::ExportSurface(a) => commands::export_surface(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
