//! `ahgnn`: homophily analytics, message precomputation, training and
//! verification for heterogeneous graphs.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use run::{RunContext, EXIT_INVALID, EXIT_OK};

#[derive(Debug, Parser)]
#[command(
    name = "ahgnn",
    version,
    about = "Adaptive heterogeneous GNN pipeline",
    propagate_version = true
)]
pub struct Cli {
    /// Worker threads for precompute, analytics and batched inference
    /// (default: one per CPU). Results do not depend on this.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    /// Random seed; overrides the seed in a training config.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,

    /// Print progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per meta-path homophily ratios and local-homophily histograms.
    Analyze(AnalyzeArgs),
    /// Diffuse features and training labels along every meta-path into a cache file.
    Precompute(PrecomputeArgs),
    /// Fit a model and write metrics, hop weights, influence factors and a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on every split and write per-node predictions.
    Eval(EvalArgs),
    /// Rewire a dataset, or generate a synthetic one, at a requested homophily.
    Synth(SynthArgs),
    /// Check that the initial hop weights act as a low-pass filter on random graphs.
    VerifySpectral(SpectralArgs),
    /// Compare analytic gradients of the training loss with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Longest meta-path, in relation steps.
    #[arg(long, default_value_t = 4)]
    pub max_len: usize,
    /// Directory for homophily_report.csv and run.json.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrecomputeArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Feature propagation depth.
    #[arg(long, default_value_t = 3)]
    pub l1: usize,
    /// Label propagation depth.
    #[arg(long, default_value_t = 3)]
    pub l2: usize,
    /// Cache file to write (default: under $AHGNN_CACHE_DIR, else ./.ahgnn-cache).
    /// run.json goes next to it.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Training settings that override the config file.
#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    /// JSON file with any subset of the training settings.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub l1: Option<usize>,
    #[arg(long)]
    pub l2: Option<usize>,
    /// Initial hop-weight decay in (0, 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the head-diversity term on coarse attention.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Weight of the head-diversity term on fine attention.
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Target nodes per gradient step; 0 is full-batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Freeze every hop weight at 1 (ablation).
    #[arg(long)]
    pub fixed_gamma: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Cache from `precompute`. Without it the default location is used and
    /// filled on first use.
    #[arg(long, value_name = "FILE")]
    pub cache: Option<PathBuf>,
    #[command(flatten)]
    pub settings: TrainOverrides,
    /// Directory for metrics.csv, gamma.csv, beta.csv, model.ahgm,
    /// summary.json and run.json.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub cache: Option<PathBuf>,
    /// Target nodes per inference batch; 0 runs everything at once.
    #[arg(long, default_value_t = 0)]
    pub batch_size: usize,
    /// Directory for eval.csv, predictions.csv and run.json.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["data", "toy"]))]
pub struct SynthArgs {
    /// Dataset to rewire.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Generate a planted-partition graph instead of rewiring one.
    #[arg(long)]
    pub toy: bool,
    /// Requested graph-level homophily in [0, 1].
    #[arg(long)]
    pub target_h: f64,
    /// Output dataset directory; also receives synth.json and run.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Accepted distance from the request.
    #[arg(long, default_value_t = 0.03)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 50_000)]
    pub max_iterations: usize,
    /// Toy: target nodes.
    #[arg(long, default_value_t = 60, requires = "toy")]
    pub nodes: usize,
    /// Toy: classes.
    #[arg(long, default_value_t = 3, requires = "toy")]
    pub classes: usize,
    /// Toy: node types, 2 or 3.
    #[arg(long, default_value_t = 2, requires = "toy")]
    pub types: usize,
    /// Toy: link nodes; 0 means one per target node.
    #[arg(long, default_value_t = 0, requires = "toy")]
    pub links: usize,
    /// Toy: target nodes joined by each link node.
    #[arg(long, default_value_t = 3, requires = "toy")]
    pub link_size: usize,
    /// Toy: feature width of every type.
    #[arg(long, default_value_t = 16, requires = "toy")]
    pub feature_dim: usize,
    /// Toy: scale of the class signal in target features.
    #[arg(long, default_value_t = 1.0, requires = "toy")]
    pub signal: f64,
    /// Toy: feature noise standard deviation.
    #[arg(long, default_value_t = 1.0, requires = "toy")]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    /// Largest random graph, in nodes.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[arg(long, default_value_t = 3)]
    pub hops: usize,
    /// Directory for spectral.csv and run.json.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Dataset to check on (default: a small generated graph).
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub settings: TrainOverrides,
    /// Parameter coordinates to perturb.
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Directory for run.json.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.into())
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(run::EXIT_FAILED);
        }
    }
    let ctx = RunContext {
        threads: rayon::current_num_threads(),
        seed: cli.seed,
        verbosity: cli.verbose,
    };

    let result = match &cli.command {
        Command::Analyze(a) => commands::analyze(&ctx, a),
        Command::Precompute(a) => commands::precompute(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::VerifySpectral(a) => commands::verify_spectral(&ctx, a),
        Command::GradCheck(a) => commands::grad_check(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
