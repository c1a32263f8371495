use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use wfre::ablation::{ablation_to_tsv, run_cell, AblationConfig, TRAIN_TYPES};
use wfre::bench::{bench_to_tsv, run_bench, BenchConfig, Solver};
use wfre::config::RunConfig;
use wfre::dataset::{load_dataset, synthesize, write_dataset, Dataset, SynthConfig};
use wfre::eval::{evaluate, evaluate_with, oracle_scores, EvalReport};
use wfre::fsutil::write_atomic;
use wfre::kg::QuerySample;
use wfre::model::{Checkpoint, ModelParams};
use wfre::query::{embed_query, parse_query, score_entities, EmbedOptions, QueryType};
use wfre::training::{metrics_to_tsv, train, TrainCallbacks};
use wfre::transport::{Scorer, TransportConfig};
use wfre::WfreError;

use crate::{AblateArgs, BenchArgs, Cli, Command, ConfigArgs, EvalArgs, ScoreArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.tsv";

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        init_threads(n)?;
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a, cli.threads.is_some()),
        Command::Eval(a) => eval_cmd(a, cli.threads.is_some()),
        Command::Score(a) => score_cmd(a, cli.threads.is_some()),
        Command::Bench(a) => bench_cmd(a),
        Command::Ablate(a) => ablate_cmd(a, cli.threads.is_some()),
    }
}

fn init_threads(n: usize) -> Result<()> {
    if n == 0 {
        bail!("--threads must be positive");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")
}

/// Loads the config file (or `fallback` when it exists), applies flag
/// overrides, validates, and echoes the result on stderr.
fn resolve_config(args: &ConfigArgs, fallback: Option<&Path>, threads_set: bool) -> Result<RunConfig> {
    let source = args.config.clone().or_else(|| fallback.filter(|p| p.exists()).map(Path::to_path_buf));
    let mut cfg = match &source {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    if let (Some(n), false) = (cfg.threads, threads_set) {
        init_threads(n)?;
    }
    eprintln!("# effective config");
    for line in cfg.to_toml().lines() {
        eprintln!("#   {line}");
    }
    Ok(cfg)
}

fn parse_types(names: &Option<Vec<String>>, default: &[QueryType]) -> Result<Vec<QueryType>> {
    match names {
        None => Ok(default.to_vec()),
        Some(list) => list
            .iter()
            .map(|s| s.trim().parse::<QueryType>().map_err(Into::into))
            .collect(),
    }
}

fn data_dir(flag: &Option<PathBuf>, cfg: &mut RunConfig) -> Result<PathBuf> {
    if let Some(d) = flag {
        cfg.data_dir = Some(d.clone());
    }
    cfg.data_dir.clone().context("no dataset given: pass --data or set data_dir")
}

fn queries_of(ds: &Dataset, split: &str, types: &[QueryType]) -> Vec<QuerySample> {
    types.iter().flat_map(|&t| ds.queries(split, t).iter().cloned()).collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        entities: a.entities,
        relations: a.relations,
        degree: a.degree,
        seed: a.seed,
        valid_fraction: a.valid_fraction,
        test_fraction: a.test_fraction,
        train_queries: a.train_queries,
        eval_queries: a.eval_queries,
    };
    eprintln!("# effective config");
    for line in toml::to_string(&cfg)?.lines() {
        eprintln!("#   {line}");
    }
    let ds = synthesize(&cfg)?;
    let files = write_dataset(&ds, &a.out)?;
    eprintln!(
        "wrote {} files to {} ({} / {} / {} triples)",
        files.len(),
        a.out.display(),
        ds.train.triple_count(),
        ds.valid.triple_count(),
        ds.test.triple_count()
    );
    Ok(())
}

struct Progress<'a> {
    valid: &'a [QuerySample],
    every: usize,
    transport: &'a TransportConfig,
    cfg: &'a RunConfig,
}

impl TrainCallbacks for Progress<'_> {
    fn on_log(&mut self, step: usize, loss: f64, model: &ModelParams) -> Option<f64> {
        let mrr = if self.every > 0 && step % self.every == 0 && !self.valid.is_empty() {
            match evaluate(model, self.valid, self.transport, self.cfg.union_mode, self.cfg.tnorm) {
                Ok(r) => Some(mean_mrr(&r)),
                Err(e) => {
                    eprintln!("validation failed at step {step}: {e}");
                    None
                }
            }
        } else {
            None
        };
        match mrr {
            Some(m) => eprintln!("step {step}\tloss {loss:.6}\tvalid_mrr {m:.4}"),
            None => eprintln!("step {step}\tloss {loss:.6}"),
        }
        mrr
    }
}

fn mean_mrr(r: &EvalReport) -> f64 {
    if r.types.is_empty() {
        return 0.0;
    }
    r.types.iter().map(|t| t.metrics.mrr).sum::<f64>() / r.types.len() as f64
}

fn train_cmd(a: TrainArgs, threads_set: bool) -> Result<()> {
    let mut cfg = resolve_config(&a.cfg, None, threads_set)?;
    let dir = data_dir(&a.data, &mut cfg)?;
    let types = parse_types(&a.types, &TRAIN_TYPES)?;
    let ds = load_dataset(&dir)?;
    let train_q = queries_of(&ds, "train", &types);
    if train_q.is_empty() {
        bail!("{}: no training queries for the selected types", dir.display());
    }
    let valid_q = queries_of(&ds, "valid", &types);
    let train_cfg = cfg.train_config()?;
    let shape = cfg.model_shape(ds.test.entity_count(), ds.test.relation_count());
    let model = ModelParams::init(shape, cfg.seed)?;
    let checkpoint_path = cfg.checkpoint.clone().unwrap_or_else(|| a.out.join(CHECKPOINT_FILE));
    cfg.checkpoint = Some(checkpoint_path.clone());
    write_atomic(&a.out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    let mut progress = Progress {
        valid: &valid_q,
        every: cfg.valid_every,
        transport: &train_cfg.transport,
        cfg: &cfg,
    };
    let outcome = train(model, &train_q, &train_cfg, &mut progress)?;
    Checkpoint::new(outcome.model, cfg.model_fingerprint()).save(&checkpoint_path)?;
    write_atomic(&a.out.join(METRICS_FILE), metrics_to_tsv(&outcome.log).as_bytes())?;
    eprintln!("checkpoint written to {}", checkpoint_path.display());
    Ok(())
}

fn checkpoint_location(checkpoint: &Option<PathBuf>, run: &Option<PathBuf>) -> Result<PathBuf> {
    match (checkpoint, run) {
        (Some(c), _) => Ok(c.clone()),
        (None, Some(r)) => Ok(r.join(CHECKPOINT_FILE)),
        (None, None) => bail!("no checkpoint given: pass --checkpoint or --run"),
    }
}

/// Loads a checkpoint and checks it against the scoring configuration.
fn load_model(path: &Path, cfg: &RunConfig) -> Result<ModelParams> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.params.dim != cfg.dim {
        return Err(WfreError::Load(format!(
            "{}: checkpoint has dimension {} but the config asks for {}",
            path.display(),
            ckpt.params.dim,
            cfg.dim
        ))
        .into());
    }
    if ckpt.header.fingerprint != cfg.model_fingerprint() {
        return Err(WfreError::Load(format!(
            "{}: checkpoint was trained under a different model or transport configuration",
            path.display()
        ))
        .into());
    }
    Ok(ckpt.params)
}

fn eval_cmd(a: EvalArgs, threads_set: bool) -> Result<()> {
    let fallback = a.run.as_ref().map(|r| r.join(CONFIG_FILE));
    let mut cfg = resolve_config(&a.cfg, fallback.as_deref(), threads_set)?;
    let dir = data_dir(&a.data, &mut cfg)?;
    let types = parse_types(&a.types, &QueryType::ALL)?;
    let ds = load_dataset(&dir)?;
    let split = cfg.eval_split.name();
    let samples = queries_of(&ds, split, &types);
    if samples.is_empty() {
        bail!("{}: no {split} queries for the selected types", dir.display());
    }
    let report = if a.oracle {
        let n = ds.test.entity_count();
        evaluate_with(&samples, |s| Ok(oracle_scores(s, n)))?
    } else {
        let model = load_model(&checkpoint_location(&a.checkpoint, &a.run)?, &cfg)?;
        evaluate(&model, &samples, &cfg.transport()?, cfg.union_mode, cfg.tnorm)?
    };
    match &a.out {
        Some(out) => {
            write_atomic(&out.join("report.tsv"), report.to_tsv().as_bytes())?;
            write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
            eprintln!("report written to {}", out.display());
        }
        None => print!("{}", report.to_tsv()),
    }
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    eprintln!("A_P {}  A_N {}", fmt(report.a_p), fmt(report.a_n));
    Ok(())
}

fn score_cmd(a: ScoreArgs, threads_set: bool) -> Result<()> {
    let fallback = a.run.as_ref().map(|r| r.join(CONFIG_FILE));
    let cfg = resolve_config(&a.cfg, fallback.as_deref(), threads_set)?;
    let model = load_model(&checkpoint_location(&a.checkpoint, &a.run)?, &cfg)?;
    let tree = parse_query(&a.query)?;
    tree.check_ids(model.entity_count, model.relation_count)?;
    let branches = embed_query(&tree, &model, &EmbedOptions::eval(cfg.union_mode, cfg.tnorm))?;
    let scorer = Scorer::new(cfg.transport()?)?;
    let scores = score_entities(&branches, &model.entity_histograms(), &scorer)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&x, &y| scores[x].total_cmp(&scores[y]).then(x.cmp(&y)));
    println!("entity\tdistance");
    for &e in order.iter().take(a.top) {
        println!("{e}\t{:.6}", scores[e]);
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let solvers = a
        .solvers
        .iter()
        .map(|s| match s.trim() {
            "conv" => Ok(Solver::Conv),
            "dense" => Ok(Solver::Dense),
            other => bail!("unknown solver `{other}` (expected conv or dense)"),
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        dims: a.dims,
        omegas: a.omegas,
        solvers,
        iterations: a.iterations,
        epsilon: a.epsilon,
        repeats: a.repeats,
        min_round: Duration::from_millis(20),
        seed: a.seed,
    };
    eprintln!("# effective config: {cfg:?}");
    let tsv = bench_to_tsv(&run_bench(&cfg)?);
    emit(&a.out, &tsv)
}

fn ablate_cmd(a: AblateArgs, threads_set: bool) -> Result<()> {
    let mut base_args = ConfigArgs {
        config: a.cfg.config.clone(),
        overrides: a.cfg.overrides.clone(),
    };
    if base_args.overrides.dim.is_none() && base_args.config.is_none() {
        base_args.overrides.dim = Some(AblationConfig::default().base.dim);
    }
    if base_args.overrides.steps.is_none() && base_args.config.is_none() {
        base_args.overrides.steps = Some(AblationConfig::default().base.steps);
    }
    base_args.overrides.block_size = base_args.overrides.block_size.or(Some(a.fixed_block_size));
    base_args.overrides.window = base_args.overrides.window.or(Some(a.fixed_window));
    let mut base = resolve_config(&base_args, None, threads_set)?;
    let dir = data_dir(&a.data, &mut base)?;
    let ds = load_dataset(&dir)?;
    let cfg = AblationConfig {
        base,
        omegas: a.omegas,
        block_sizes: a.block_sizes,
        fixed_block_size: a.fixed_block_size,
        fixed_omega: a.fixed_window,
        train_types: parse_types(&a.types, &TRAIN_TYPES)?,
    };
    let mut rows = Vec::new();
    for (w, b) in cfg.cells() {
        let row = run_cell(&ds, &cfg.base, &cfg.train_types, w, b)
            .with_context(|| format!("ablation cell omega={w} a={b}"))?;
        eprintln!("omega {w}\ta {b}\tA_P {:?}\tA_N {:?}", row.a_p, row.a_n);
        rows.push(row);
    }
    emit(&a.out, &ablation_to_tsv(&rows))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
