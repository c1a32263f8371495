mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wfre::config::{EvalSplit, RunConfig};
use wfre::fuzzy::TNormKind;
use wfre::query::UnionMode;
use wfre::transport::GradMode;

#[derive(Parser, Debug)]
#[command(name = "wfre", version, about = "Logical query answering with transport-scored histogram embeddings")]
struct Cli {
    /// Worker threads; 1 gives reduction-order determinism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic graph split and query files.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus metric log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a query split.
    Eval(EvalArgs),
    /// Rank entities for a single query.
    Score(ScoreArgs),
    /// Time the banded and dense solvers.
    Bench(BenchArgs),
    /// Sweep window and block size on a dataset.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    entities: usize,
    #[arg(long, default_value_t = 3)]
    relations: usize,
    #[arg(long, default_value_t = 4.0)]
    degree: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "train-queries", default_value_t = 500)]
    train_queries: usize,
    #[arg(long = "eval-queries", default_value_t = 100)]
    eval_queries: usize,
    #[arg(long = "valid-fraction", default_value_t = 0.1)]
    valid_fraction: f64,
    #[arg(long = "test-fraction", default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Per-key overrides applied on top of the config file.
#[derive(Args, Debug, Default, Clone)]
struct Overrides {
    #[arg(long = "learning_rate", visible_alias = "learning-rate")]
    learning_rate: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long = "k_neg", visible_alias = "k-neg")]
    k_neg: Option<usize>,
    #[arg(long = "weight_decay", visible_alias = "weight-decay")]
    weight_decay: Option<f64>,
    #[arg(long = "drop_p", visible_alias = "drop-p")]
    drop_p: Option<f64>,
    #[arg(long = "drop_n", visible_alias = "drop-n")]
    drop_n: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    bases: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long = "block_size", visible_alias = "block-size")]
    block_size: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "sinkhorn_iters", visible_alias = "sinkhorn-iters")]
    sinkhorn_iters: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tnorm: Option<TNormKind>,
    #[arg(long = "union-mode", alias = "union_mode")]
    union_mode: Option<UnionMode>,
    #[arg(long = "grad-mode", alias = "grad_mode")]
    grad_mode: Option<GradMode>,
    #[arg(long = "batch_size", visible_alias = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "log_every", visible_alias = "log-every")]
    log_every: Option<usize>,
    #[arg(long = "valid_every", visible_alias = "valid-every")]
    valid_every: Option<usize>,
    #[arg(long = "split", alias = "eval_split")]
    eval_split: Option<EvalSplit>,
}

macro_rules! apply {
    ($cfg:ident, $ov:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $ov.$field.clone() { $cfg.$field = v; })*
    };
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let ov = self;
        apply!(cfg, ov; learning_rate, steps, k_neg, weight_decay, drop_p, drop_n, dim, bases,
            layers, margin, scale, block_size, window, epsilon, sinkhorn_iters, beta, tnorm,
            union_mode, grad_mode, batch_size, seed, log_every, valid_every, eval_split);
    }
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated query types to train on.
    #[arg(long, value_delimiter = ',')]
    types: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Defaults to `checkpoint.json` under `--run`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training output directory holding `checkpoint.json` and `config.toml`.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    types: Option<Vec<String>>,
    /// Score with the symbolic answers instead of a model.
    #[arg(long)]
    oracle: bool,
    /// Directory for `report.tsv` and `report.json`; the TSV goes to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    run: Option<PathBuf>,
    /// Query in s-expression form, e.g. `(p 0 (e 3))`.
    #[arg(long)]
    query: String,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256, 512, 1024, 2048, 4096, 8192])]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 3, 5])]
    omegas: Vec<usize>,
    /// Comma-separated subset of `conv,dense`.
    #[arg(long, value_delimiter = ',', default_values_t = ["conv".to_string(), "dense".to_string()])]
    solvers: Vec<String>,
    #[arg(long, visible_alias = "sinkhorn-iters", alias = "sinkhorn_iters", default_value_t = 10)]
    iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    omegas: Vec<usize>,
    #[arg(long = "block-sizes", value_delimiter = ',', default_values_t = [4, 5, 8, 10, 16])]
    block_sizes: Vec<usize>,
    #[arg(long = "fixed-block-size", default_value_t = 5)]
    fixed_block_size: usize,
    #[arg(long = "fixed-window", default_value_t = 3)]
    fixed_window: usize,
    #[arg(long, value_delimiter = ',')]
    types: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
