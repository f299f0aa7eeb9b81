use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "streetdcm", version, about = "Estimate, simulate and map street-level choice models")]
struct Cli {
    /// Worker threads for scoring (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with known coefficients.
    Simulate(SimulateArgs),
    /// Fit the model in three sequential phases.
    Train(TrainArgs),
    /// Fit statistics of a trained model on one split.
    Eval(EvalArgs),
    /// Street-level utility of every image.
    Score(ScoreArgs),
    /// Per-zone means of the image scores.
    Aggregate(ScoreArgs),
    /// Per-attribute deviation of every zone from the citywide mean.
    Decompose(DecomposeArgs),
    /// Correlations and summary statistics across zones.
    Report(ScoreArgs),
    /// Compare analytic and finite-difference gradients on random cases.
    CheckGradients(CheckArgs),
    /// Simulate, train and compare the estimates with the truth.
    Recover(RecoverArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct TrainFlags {
    /// JSON file with training settings; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kappa1: Option<f64>,
    #[arg(long)]
    kappa2: Option<f64>,
    #[arg(long)]
    kappa3: Option<f64>,
    /// Learning rate of every phase (clears per-phase rates from the config).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    /// Maximum epochs of every phase.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON file with a simulation spec; flags given here take precedence.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of choice observations.
    #[arg(long)]
    n: Option<usize>,
    /// Embedding width.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sigma_z: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
    /// Directory for `eval.json` and `eval.txt`; the table goes to stderr otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Leave the residual embedding term out of the scores.
    #[arg(long)]
    no_residual: bool,
    /// Zones with fewer images are flagged as low-confidence.
    #[arg(long, default_value_t = streetdcm::spatial::DEFAULT_MIN_ZONE_COUNT)]
    min_zone_count: usize,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[command(flatten)]
    scoring: ScoreArgs,
    /// Zone polygons to attach the results to (overrides the manifest).
    #[arg(long)]
    geojson: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecoverArgs {
    /// Number of choice observations.
    #[arg(long, default_value_t = 50_000)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with a simulation spec; `--n` and `--seed` take precedence.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<streetdcm::Error> for Failure {
    fn from(e: streetdcm::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            let (Failure::Validation(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
