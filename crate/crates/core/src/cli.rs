//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 runtime failure.
//! A `--config` file holds flat `key = value` lines naming the long flags of
//! the chosen subcommand; flags given on the command line win over the file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::acquire::{Metric, Strategy, DEFAULT_CEAL_EPSILON};
use crate::analysis::{agreement_csv, compare_strategies, scatter_csv, strategy_rank_scatter, CompareSetup};
use crate::dataset::{init_labels, Dataset, Format, LabelState, Oracle};
use crate::driver::{self, InitialLabels, RunConfig, Session};
use crate::error::{Error, Result};
use crate::graph::{build_reciprocal_knn, SparseGraph};
use crate::model::{Activation, ModelKind, TrainPlan};
use crate::propagate::{pseudo_label_all, CgSettings};
use crate::synth::{self, Shape, SynthParams};
use crate::util::derive_seed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "semial", version, about = "Pool-based active learning with label propagation")]
pub struct Cli {
    /// Flat `key = value` file with defaults for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short = 'o', global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the active learning loop and write records.jsonl, curves.csv and timings.csv.
    Run(RunArgs),
    /// Propagate labels over a graph and write propagation.csv.
    Propagate(PropagateArgs),
    /// Train on the initial labels and write the first acquired batch to acquired.csv.
    Acquire(RunArgs),
    /// Compare two strategies on the same state; writes agreement.csv and scatter.csv.
    Agree(AgreeArgs),
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Training pool (features plus hidden labels).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Held-out test set. Without it a seeded fraction of the pool is held out.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Fraction of the pool held out for testing when --test is absent.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// File format: csv or raw-f32. Guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Acquisition strategy, or a comma-separated list to run each in turn
    /// (random, uncertainty, coreset, ceal, jlp).
    #[arg(long, default_value = "uncertainty")]
    pub strategy: String,
    /// Labels acquired per cycle [default: size of the initial labeled set].
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub cycles: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial labels per class.
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,
    /// Draw the initial labels uniformly (same total) instead of per class.
    #[arg(long)]
    pub unbalanced: bool,
    /// Unsupervised pre-training (k-means pseudo-labels) before the first cycle.
    #[arg(long)]
    pub pre: bool,
    /// Semi-supervised training with propagated pseudo-labels.
    #[arg(long)]
    pub semi: bool,
    /// Model: linear (softmax regression) or embedding (one hidden layer).
    #[arg(long, default_value = "linear")]
    pub model: String,
    /// Embedding width for --model embedding.
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    /// Embedding activation: identity, relu or tanh.
    #[arg(long, default_value = "identity")]
    pub activation: String,
    /// Neighbors per node in the reciprocal kNN graph.
    #[arg(long, default_value_t = 50)]
    pub k_graph: usize,
    /// Propagation parameter alpha in [0, 1).
    #[arg(long, default_value_t = 0.99)]
    pub alpha: f64,
    /// Relative residual tolerance of the conjugate gradient solver.
    #[arg(long, default_value_t = 1e-8)]
    pub cg_tol: f64,
    /// Conjugate gradient iteration cap [default: 10 sqrt(n) + 100].
    #[arg(long)]
    pub cg_max_iter: Option<usize>,
    /// CEAL entropy threshold for pseudo-labeling.
    #[arg(long, default_value_t = DEFAULT_CEAL_EPSILON)]
    pub epsilon: f64,
    /// CoreSet distance: euclidean or cosine.
    #[arg(long, default_value = "euclidean")]
    pub metric: String,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    /// Epoch at which the cosine learning-rate schedule reaches zero.
    #[arg(long, default_value_t = 210)]
    pub anneal_horizon: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Mini-batch size for supervised training.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Labeled examples per semi-supervised mini-batch.
    #[arg(long, default_value_t = 50)]
    pub batch_labeled: usize,
    /// Total semi-supervised mini-batch size.
    #[arg(long, default_value_t = 128)]
    pub batch_total: usize,
    /// Pseudo-labels drawn per semi-supervised epoch, as a fraction of |U|.
    #[arg(long, default_value_t = 0.5)]
    pub draw_fraction: f64,
    /// Scale pseudo-label losses by their certainty weight.
    #[arg(long)]
    pub loss_weighting: bool,
    /// Supervised epochs before the semi-supervised epochs.
    #[arg(long, default_value_t = 10)]
    pub warmup_epochs: usize,
    /// Semi-supervised epochs per cycle [default: --epochs].
    #[arg(long)]
    pub semi_epochs: Option<usize>,
    /// k-means clusters for pre-training [default: 10 per class].
    #[arg(long)]
    pub k_pretrain: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub pretrain_rounds: usize,
    /// Epochs per pre-training round.
    #[arg(long, default_value_t = 10)]
    pub pretrain_epochs: usize,
    /// l2-normalize embeddings before clustering.
    #[arg(long)]
    pub pretrain_normalize: bool,
    /// Rebuild the graph every semi epoch even when the embedding is fixed.
    #[arg(long)]
    pub force_rebuild: bool,
    /// Short schedule for smoke tests (20 epochs); not the reference settings.
    #[arg(long)]
    pub fast: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PropagateArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    /// Edge list (`i j w` per line). Without it a reciprocal kNN graph is built.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub k_graph: usize,
    /// Comma-separated labeled indices; labels come from the dataset.
    #[arg(long)]
    pub labeled: Option<String>,
    /// Initial labels per class when --labeled is absent.
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0.99)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub cg_tol: f64,
    #[arg(long)]
    pub cg_max_iter: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct AgreeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// The two strategies to compare.
    #[arg(long, default_value = "uncertainty,jlp")]
    pub pair: String,
    /// Cycles to advance (with --strategy) before comparing.
    #[arg(long, default_value_t = 0)]
    pub at_cycle: usize,
    /// Fraction of U sampled for the rank scatter.
    #[arg(long, default_value_t = 0.1)]
    pub sample_frac: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    /// two-moons, blobs or chain.
    #[arg(long)]
    pub shape: Option<String>,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Blob centers are drawn from [-center_box, center_box]^dim.
    #[arg(long, default_value_t = 10.0)]
    pub center_box: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file [default: <out>/<shape>.csv].
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

fn config_err(error: Error) -> Failure {
    Failure { code: EXIT_CONFIG, error }
}

fn runtime_err(error: Error) -> Failure {
    let code = match error {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    };
    Failure { code, error }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: no + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Parse { line: no + 1, msg: "empty key".into() });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Appends config-file entries as flags for every argument not already set
/// on the command line, then parses again.
fn merge_config(argv: &[OsString], first: &clap::ArgMatches) -> Result<Option<Vec<OsString>>> {
    let Some(path) = first.get_one::<PathBuf>("config") else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries = parse_config_text(&text)?;
    let (name, sub) = first.subcommand().expect("subcommand is required");
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(name).expect("known subcommand");
    let mut merged = argv.to_vec();
    let mut seen = BTreeMap::new();
    for (key, value) in entries {
        if seen.insert(key.clone(), ()).is_some() {
            return Err(Error::Config(format!("duplicate config key '{key}'")));
        }
        if key == "config" {
            return Err(Error::Config("config files cannot include other config files".into()));
        }
        let by_key = |a: &&clap::Arg| a.get_long() == Some(key.as_str());
        let (arg, owner) = match sub_cmd.get_arguments().find(by_key) {
            Some(a) => (a, sub),
            None => cmd
                .get_arguments()
                .find(by_key)
                .map(|a| (a, first))
                .ok_or_else(|| Error::Config(format!("unknown config key '{key}' for `{name}`")))?,
        };
        let on_cli = owner.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine);
        if on_cli {
            continue;
        }
        if arg.get_action().takes_values() {
            merged.push(format!("--{key}").into());
            merged.push(value.into());
        } else {
            match value.as_str() {
                "true" | "yes" | "1" => merged.push(format!("--{key}").into()),
                "false" | "no" | "0" => {}
                other => {
                    return Err(Error::Config(format!("'{key}' expects true or false, got '{other}'")))
                }
            }
        }
    }
    Ok(Some(merged))
}

fn parse(argv: Vec<OsString>) -> std::result::Result<Cli, i32> {
    let report = |e: clap::Error| -> i32 {
        let _ = e.print();
        match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
            _ => EXIT_CONFIG,
        }
    };
    let first = Cli::command().try_get_matches_from(&argv).map_err(report)?;
    let matches = match merge_config(&argv, &first) {
        Ok(None) => first,
        Ok(Some(merged)) => Cli::command().try_get_matches_from(merged).map_err(report)?,
        Err(e) => {
            eprintln!("error: {e}");
            return Err(EXIT_CONFIG);
        }
    };
    Cli::from_arg_matches(&matches).map_err(report)
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Run(args) => cmd_run(args, &cli.out),
        Command::Propagate(args) => cmd_propagate(args, &cli.out),
        Command::Acquire(args) => cmd_acquire(args, &cli.out),
        Command::Agree(args) => cmd_agree(args, &cli.out),
        Command::GenData(args) => cmd_gen_data(args, &cli.out),
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    // Temp files are created private; results should read like any other file.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn format_for(path: &Path, explicit: Option<&str>) -> Result<Format> {
    match explicit {
        Some(f) => f.parse(),
        None => Ok(Format::from_path(path)),
    }
}

fn load(path: Option<&PathBuf>, format: Option<&str>) -> CliResult<Dataset> {
    let path = path.ok_or_else(|| config_err(Error::Config("--dataset is required".into())))?;
    let fmt = format_for(path, format).map_err(config_err)?;
    Dataset::load(path, fmt).map_err(config_err)
}

/// Splits `ds` into (pool, test) with a seeded permutation.
pub fn holdout_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    use rand::seq::SliceRandom;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout must lie in (0, 1), got {fraction}")));
    }
    let n = ds.len();
    let n_test = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(Error::invalid("need at least two examples to hold out a test set"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::util::rng(derive_seed(seed, 0x7E57)));
    let (test_idx, pool_idx) = order.split_at(n_test);
    let mut pool_idx = pool_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    pool_idx.sort_unstable();
    test_idx.sort_unstable();
    let part = |idx: &[usize]| -> Result<Dataset> {
        let features = ds.features().select_rows(idx);
        let labels = idx.iter().map(|&i| ds.evaluation_labels()[i]).collect();
        Dataset::with_class_names(features, labels, ds.class_names().to_vec())
    };
    Ok((part(&pool_idx)?, part(&test_idx)?))
}

fn load_pair(data: &DataArgs, seed: u64) -> CliResult<(Dataset, Dataset)> {
    let pool = load(data.dataset.as_ref(), data.format.as_deref())?;
    match &data.test {
        Some(p) => {
            let test = load(Some(p), data.format.as_deref())?;
            let test = test.align_classes(pool.class_names()).map_err(config_err)?;
            Ok((pool, test))
        }
        None => holdout_split(&pool, data.holdout, seed).map_err(config_err),
    }
}

fn parse_strategies(list: &str, args: &RunArgs) -> Result<Vec<Strategy>> {
    let metric: Metric = args.metric.parse()?;
    let out: Vec<Strategy> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Strategy::parse(s, args.epsilon, args.alpha, metric))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config("no strategy given".into()));
    }
    Ok(out)
}

/// Parses `key = value` text with the same keys as `run`'s flags.
pub fn run_args_from_config_text(text: &str) -> Result<RunArgs> {
    let mut argv: Vec<String> = vec!["semial".into(), "run".into()];
    let cmd = Cli::command();
    let run_cmd = cmd.find_subcommand("run").expect("run subcommand");
    for (key, value) in parse_config_text(text)? {
        let arg = run_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        if arg.get_action().takes_values() {
            argv.push(format!("--{key}"));
            argv.push(value);
        } else if matches!(value.as_str(), "true" | "yes" | "1") {
            argv.push(format!("--{key}"));
        } else if !matches!(value.as_str(), "false" | "no" | "0") {
            return Err(Error::Config(format!("'{key}' expects true or false, got '{value}'")));
        }
    }
    match Cli::try_parse_from(argv) {
        Ok(Cli { command: Command::Run(args), .. }) => Ok(args),
        Ok(_) => unreachable!("argv names the run subcommand"),
        Err(e) => Err(Error::Config(e.to_string().trim().to_string())),
    }
}

/// Strategies named in `args.strategy`, in order.
pub fn strategies_of(args: &RunArgs) -> Result<Vec<Strategy>> {
    parse_strategies(&args.strategy, args)
}

/// Builds the run configuration for one strategy.
pub fn run_config(args: &RunArgs, strategy: Strategy, classes: usize) -> Result<RunConfig> {
    let model = match args.model.as_str() {
        "linear" => ModelKind::Linear,
        "embedding" => ModelKind::Embedding {
            dim: args.embed_dim,
            activation: args.activation.parse::<Activation>()?,
        },
        other => return Err(Error::Config(format!("unknown model '{other}'"))),
    };
    let initial = if args.unbalanced {
        InitialLabels::Uniform(args.per_class * classes)
    } else {
        InitialLabels::PerClass(args.per_class)
    };
    let mut cfg = RunConfig {
        budget: args.budget.unwrap_or(initial.count(classes)),
        cycles: args.cycles,
        repeats: args.repeats,
        seed: args.seed,
        strategy,
        pre: args.pre,
        semi: args.semi,
        initial,
        model,
        k_graph: args.k_graph,
        alpha: args.alpha,
        cg: CgSettings { tol: args.cg_tol, max_iter: args.cg_max_iter },
        plan: TrainPlan {
            epochs: args.epochs,
            lr0: args.lr,
            anneal_horizon: args.anneal_horizon,
            momentum: args.momentum,
            weight_decay: args.weight_decay,
            batch_size: args.batch_size,
            batch_labeled: args.batch_labeled,
            batch_total: args.batch_total,
            draw_fraction: args.draw_fraction,
            loss_weighting: args.loss_weighting,
        },
        warmup_epochs: args.warmup_epochs,
        semi_epochs: args.semi_epochs.unwrap_or(args.epochs),
        k_pretrain: args.k_pretrain,
        pretrain_rounds: args.pretrain_rounds,
        pretrain_epochs: args.pretrain_epochs,
        pretrain_normalize: args.pretrain_normalize,
        force_rebuild: args.force_rebuild,
    };
    if args.fast {
        cfg = cfg.fast();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs, out: &Path) -> CliResult<()> {
    let (train, test) = load_pair(&args.data, args.seed)?;
    let strategies = parse_strategies(&args.strategy, args).map_err(config_err)?;
    let mut records = Vec::new();
    for s in strategies {
        let cfg = run_config(args, s, train.num_classes()).map_err(config_err)?;
        records.extend(driver::run(&cfg, &train, &test).map_err(runtime_err)?);
    }
    let curves = driver::summarize(&records).map_err(runtime_err)?;
    let write = |name: &str, text: String| write_atomic(&out.join(name), text.as_bytes()).map_err(runtime_err);
    write("records.jsonl", driver::records_jsonl(&records))?;
    write("curves.csv", driver::curves_csv(&curves))?;
    write("timings.csv", driver::timings_csv(&records))?;
    Ok(())
}

fn cmd_acquire(args: &RunArgs, out: &Path) -> CliResult<()> {
    let (train, _test) = load_pair(&args.data, args.seed)?;
    let strategies = parse_strategies(&args.strategy, args).map_err(config_err)?;
    if strategies.len() != 1 {
        return Err(config_err(Error::Config("acquire takes a single strategy".into())));
    }
    let cfg = run_config(args, strategies[0], train.num_classes()).map_err(config_err)?;
    let mut session = Session::new(&cfg, &train, 0).map_err(runtime_err)?;
    let trained = session.train_cycle().map_err(runtime_err)?;
    let acq = session.acquire(&trained).map_err(runtime_err)?;
    let mut text = String::from("rank,index,score\n");
    for (r, (i, s)) in acq.indices.iter().zip(&acq.scores).enumerate() {
        text.push_str(&format!("{r},{i},{s}\n"));
    }
    write_atomic(&out.join("acquired.csv"), text.as_bytes()).map_err(runtime_err)
}

fn cmd_agree(args: &AgreeArgs, out: &Path) -> CliResult<()> {
    let run = &args.run;
    let (train, _test) = load_pair(&run.data, run.seed)?;
    let pair = parse_strategies(&args.pair, run).map_err(config_err)?;
    if pair.len() != 2 {
        return Err(config_err(Error::Config("--pair needs exactly two strategies".into())));
    }
    let driving = parse_strategies(&run.strategy, run).map_err(config_err)?;
    let cfg = run_config(run, driving[0], train.num_classes()).map_err(config_err)?;
    let mut session = Session::new(&cfg, &train, 0).map_err(runtime_err)?;
    for _ in 0..args.at_cycle {
        let trained = session.train_cycle().map_err(runtime_err)?;
        let acq = session.acquire(&trained).map_err(runtime_err)?;
        session.commit(&acq).map_err(runtime_err)?;
    }
    let trained = session.train_cycle().map_err(runtime_err)?;
    let (report, scatter) = session
        .with_context(&trained, true, |ctx| {
            let graph = ctx.graph.expect("graph requested");
            let setup = CompareSetup { ctx: *ctx, graph, dataset: &train, alpha: cfg.alpha, cg: cfg.cg };
            let report = compare_strategies(&setup, &pair[0], &pair[1], cfg.budget)?;
            let scatter =
                strategy_rank_scatter(ctx, &pair[0], &pair[1], args.sample_frac, derive_seed(cfg.seed, 0x5CA7))?;
            Ok((report, scatter))
        })
        .map_err(runtime_err)?;
    write_atomic(&out.join("agreement.csv"), agreement_csv(&[report]).as_bytes()).map_err(runtime_err)?;
    write_atomic(&out.join("scatter.csv"), scatter_csv(&scatter).as_bytes()).map_err(runtime_err)
}

fn parse_indices(list: &str, n: usize) -> Result<Vec<usize>> {
    let idx: Vec<usize> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| Error::Config(format!("bad index '{s}'"))))
        .collect::<Result<_>>()?;
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    Ok(idx)
}

fn cmd_propagate(args: &PropagateArgs, out: &Path) -> CliResult<()> {
    let ds = load(args.dataset.as_ref(), args.format.as_deref())?;
    let graph = match &args.graph {
        Some(p) => SparseGraph::load_edge_list(ds.len(), p).map_err(config_err)?,
        None => {
            let k = args.k_graph.min(ds.len().saturating_sub(1)).max(1);
            build_reciprocal_knn(ds.features(), k).map_err(runtime_err)?
        }
    };
    let oracle = Oracle::new(&ds);
    let state = match &args.labeled {
        Some(list) => {
            let idx = parse_indices(list, ds.len()).map_err(config_err)?;
            let answers = oracle.label_all(&idx).map_err(config_err)?;
            LabelState::new(ds.len(), &idx, &answers).map_err(config_err)?
        }
        None => init_labels(&ds, &oracle, args.per_class, args.seed).map_err(config_err)?,
    };
    let cg = CgSettings { tol: args.cg_tol, max_iter: args.cg_max_iter };
    let prop = pseudo_label_all(&graph, &state, ds.num_classes(), args.alpha, cg).map_err(runtime_err)?;
    let mut text = String::from("index,pseudo_label,weight\n");
    for ((i, y), w) in prop.unlabeled.iter().zip(&prop.pseudo_labels).zip(&prop.weights) {
        text.push_str(&format!("{i},{y},{w}\n"));
    }
    write_atomic(&out.join("propagation.csv"), text.as_bytes()).map_err(runtime_err)
}

fn cmd_gen_data(args: &GenDataArgs, out: &Path) -> CliResult<()> {
    let name = args
        .shape
        .as_deref()
        .ok_or_else(|| config_err(Error::Config("--shape is required".into())))?;
    let shape: Shape = name.parse().map_err(config_err)?;
    let params = SynthParams {
        n: args.n,
        noise: args.noise,
        classes: args.classes,
        dim: args.dim,
        center_box: args.center_box,
        seed: args.seed,
    };
    let ds = synth::generate(shape, &params).map_err(config_err)?;
    let path = args.output.clone().unwrap_or_else(|| out.join(format!("{name}.csv")));
    let fmt = format_for(&path, args.format.as_deref()).map_err(config_err)?;
    let mut bytes = Vec::new();
    match fmt {
        Format::Csv => ds.write_csv_to(&mut bytes),
        Format::RawF32 => ds.write_raw_to(&mut bytes),
    }
    .map_err(|e| runtime_err(Error::io(&path, e)))?;
    write_atomic(&path, &bytes).map_err(runtime_err)?;
    if shape == Shape::Chain {
        let (_, g) = synth::chain();
        write_atomic(&path.with_extension("edges"), g.to_edge_list().as_bytes()).map_err(runtime_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_parsing() {
        let kv = parse_config_text("# comment\nk_graph = 10\n\nsemi = true # inline\n").unwrap();
        assert_eq!(kv, vec![("k-graph".into(), "10".into()), ("semi".into(), "true".into())]);
        assert!(parse_config_text("novalue\n").is_err());
    }

    #[test]
    fn help_and_bad_strategy_codes() {
        assert_eq!(parse_and_dispatch(["semial", "--help"]), EXIT_OK);
        assert_eq!(parse_and_dispatch(["semial", "run", "--bogus-flag"]), EXIT_CONFIG);
        assert_eq!(parse_and_dispatch(["semial", "run", "--strategy", "bogus"]), EXIT_CONFIG);
    }

    #[test]
    fn run_args_from_text() {
        let args = run_args_from_config_text("cycles = 3\nsemi = true\nstrategy = jlp,random\n").unwrap();
        assert_eq!(args.cycles, 3);
        assert!(args.semi && !args.pre);
        assert_eq!(strategies_of(&args).unwrap().len(), 2);
        assert_eq!(args.epsilon, DEFAULT_CEAL_EPSILON);
        assert!(run_args_from_config_text("bogus = 1\n").is_err());
        assert!(run_args_from_config_text("cycles = many\n").is_err());
    }

    #[test]
    fn holdout_is_a_partition() {
        let ds = synth::two_moons(&SynthParams { n: 50, ..Default::default() }).unwrap();
        let (a, b) = holdout_split(&ds, 0.2, 3).unwrap();
        assert_eq!((a.len(), b.len()), (40, 10));
        assert!(holdout_split(&ds, 1.0, 3).is_err());
    }
}
