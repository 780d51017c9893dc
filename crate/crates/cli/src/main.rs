//! `bandit-gnn` command-line front end.

mod config;
mod error;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use bandit_gnn::gnn::{Architecture, ModelParams};
use bandit_gnn::graph::{
    generate_synthetic, import_linqs, load_graph, save_graph, Graph, GraphFiles, GraphOptions, LinqsSplit,
    SyntheticSpec, WeightMode,
};
use bandit_gnn::harness::{simulate_regret, train, variance_report, RegretSpec, SamplerKind, StreamKind, TrainConfig};
use bandit_gnn::policy::{PlayMode, PolicyState};

use config::{manifest, merge_config, read_config_file, OUT_DIR_ENV};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "bandit-gnn", version, about = "Bandit neighbor sampling for GNN training")]
#[command(args_override_self = true)]
struct Cli {
    /// Directory for every file a run writes.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    out_dir: PathBuf,
    /// Directory holding datasets as `<data-dir>/<name>/`.
    #[arg(long, global = true, default_value = "data")]
    data_dir: PathBuf,
    /// `key = value` file with option values; flags take precedence [default: none]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a two-layer GNN with sampled neighborhoods.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Run one bandit row against a synthetic reward stream.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Per-vertex effective variance of a trained model's first layer.
    #[command(name = "variance-report", args_override_self = true)]
    VarianceReport(ReportArgs),
    /// Write a synthetic or converted dataset as plain text files.
    #[command(name = "gen-data", args_override_self = true)]
    GenData(GenArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Dataset name under the data directory, or `synthetic`.
    #[arg(long, default_value = "cora")]
    dataset: String,
    /// Fixed aggregation weights for GCN: `symmetric` or `row`.
    #[arg(long, default_value = "symmetric")]
    weights: WeightMode,
    /// Seed for LINQS splits and the built-in synthetic graph.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// LINQS split sizes.
    #[arg(long, default_value_t = 1208)]
    split_train: usize,
    #[arg(long, default_value_t = 500)]
    split_val: usize,
    #[arg(long, default_value_t = 1000)]
    split_test: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// `gcn` or `attentive`.
    #[arg(long, default_value = "gcn")]
    arch: Architecture,
    /// Neighbors sampled per vertex and layer.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// `single` (EXP3) or `multiple` (EXP3.M).
    #[arg(long, default_value = "single")]
    mode: PlayMode,
    /// `bandit` or `uniform`.
    #[arg(long, default_value = "bandit", value_parser = parse_sampler)]
    sampler: SamplerKind,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Exploration rate.
    #[arg(long, default_value_t = 0.4)]
    eta: f64,
    /// Horizon for the learning-rate schedule; 0 uses epochs × steps per epoch.
    #[arg(long, default_value_t = 0)]
    horizon: u64,
    /// Clip importance-weighted rewards at 1/δ.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    reward_clip: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Arms.
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Plays per step.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Horizon.
    #[arg(long = "T", default_value_t = 10_000)]
    horizon: u64,
    /// `uniform`, `skewed`, `drifting` or `switch`.
    #[arg(long, default_value = "skewed")]
    stream: StreamKind,
    /// Fraction of the horizon after which a switch stream reverses.
    #[arg(long, default_value_t = 0.5)]
    switch_at: f64,
    #[arg(long, default_value = "single")]
    mode: PlayMode,
    #[arg(long, default_value_t = 0.4)]
    eta: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    reward_clip: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Directory with `model.json` and `policy.json` from a training run.
    #[arg(long, default_value = "out")]
    checkpoint: PathBuf,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Convert a LINQS directory (`*.content`, `*.cites`) instead of generating [default: none]
    #[arg(long)]
    from_linqs: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 8.0)]
    degree: f64,
    #[arg(long, default_value_t = 16)]
    features: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1208)]
    split_train: usize,
    #[arg(long, default_value_t = 500)]
    split_val: usize,
    #[arg(long, default_value_t = 1000)]
    split_test: usize,
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    match s {
        "bandit" => Ok(SamplerKind::Bandit),
        "uniform" => Ok(SamplerKind::Uniform),
        other => Err(format!("unknown sampler `{other}`")),
    }
}

fn find_linqs(dir: &Path) -> Option<(PathBuf, PathBuf)> {
    let entries = fs::read_dir(dir).ok()?;
    let (mut content, mut cites) = (None, None);
    for e in entries.flatten() {
        let p = e.path();
        match p.extension().and_then(|x| x.to_str()) {
            Some("content") => content = Some(p),
            Some("cites") => cites = Some(p),
            _ => {}
        }
    }
    Some((content?, cites?))
}

fn load_dataset(data_dir: &Path, args: &DatasetArgs, arch: Architecture) -> Result<Graph, CliError> {
    let weight_mode = match arch {
        Architecture::Attentive => WeightMode::Attentive,
        Architecture::Gcn => args.weights,
    };
    if weight_mode == WeightMode::Attentive && arch == Architecture::Gcn {
        return Err(CliError::Usage(
            "`--weights attentive` requires `--arch attentive`".into(),
        ));
    }
    let options = GraphOptions {
        weight_mode,
        ..GraphOptions::default()
    };
    if args.dataset == "synthetic" {
        return Ok(generate_synthetic(
            &SyntheticSpec::new(100, 8.0, 3, 16, args.data_seed),
            options,
        )?);
    }
    let dir = data_dir.join(&args.dataset);
    let files = GraphFiles::in_dir(&dir);
    if files.all_exist() {
        return Ok(load_graph(&files, options)?);
    }
    if let Some((content, cites)) = find_linqs(&dir) {
        let split = LinqsSplit {
            train: args.split_train,
            val: args.split_val,
            test: args.split_test,
            seed: args.data_seed,
        };
        return Ok(import_linqs(&content, &cites, split, options)?);
    }
    Err(CliError::Data(format!(
        "dataset `{}` not found: {} has neither edges/features/labels/splits files nor a LINQS pair",
        args.dataset,
        dir.display()
    )))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn csv_to(dir: &Path, name: &str, f: impl FnOnce(fs::File) -> std::io::Result<()>) -> Result<(), CliError> {
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    f(file).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn run_train(cli: &Cli, args: &TrainArgs) -> Result<String, CliError> {
    let graph = load_dataset(&cli.data_dir, &args.data, args.arch)?;
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        k: args.k,
        hidden: args.hidden,
        lr: args.lr,
        weight_decay: args.weight_decay,
        dropout: args.dropout,
        eta: args.eta,
        horizon: (args.horizon > 0).then_some(args.horizon),
        mode: args.mode,
        arch: args.arch,
        sampler: args.sampler,
        reward_clip: args.reward_clip,
        seed: args.seed,
    };
    let report = train(&graph, &config)?;
    report.write_to(&cli.out_dir)?;
    Ok(format!(
        "train: dataset={} arch={} test_acc={:.4} test_f1={:.4} best_epoch={} best_val={:.4} skipped={} out={}",
        args.data.dataset,
        args.arch,
        report.test.accuracy,
        report.test.micro_f1,
        report.best_epoch,
        report.best_val,
        report.skipped_steps,
        cli.out_dir.display()
    ))
}

fn run_simulate(cli: &Cli, args: &SimulateArgs) -> Result<String, CliError> {
    let stream = match args.stream {
        StreamKind::Switch { .. } => StreamKind::Switch { at: args.switch_at },
        s => s,
    };
    let spec = RegretSpec {
        eta: args.eta,
        reward_clip: args.reward_clip,
        ..RegretSpec::new(args.n, args.k, args.horizon, stream, args.mode, args.seed)
    };
    let trace = simulate_regret(&spec)?;
    csv_to(&cli.out_dir, "regret.csv", |f| trace.write_csv(f))?;
    let last = trace.last();
    let readapt = trace
        .readaptation_steps
        .map_or_else(|| "none".to_string(), |s| s.to_string());
    Ok(format!(
        "simulate: stream={} n={} k={} T={} cum_Ve={:.6} cum_Ve_star={:.6} bound={:.3} holds={} readaptation={} out={}",
        stream,
        args.n,
        args.k,
        args.horizon,
        last.cum_ve,
        last.cum_ve_star,
        last.bound,
        trace.bound_holds(),
        readapt,
        cli.out_dir.display()
    ))
}

fn run_report(cli: &Cli, args: &ReportArgs) -> Result<String, CliError> {
    let model_path = args.checkpoint.join("model.json");
    let policy_path = args.checkpoint.join("policy.json");
    if !model_path.is_file() || !policy_path.is_file() {
        return Err(CliError::Usage(format!(
            "no checkpoint in {}; run `train` first or pass --checkpoint",
            args.checkpoint.display()
        )));
    }
    let params = ModelParams::load(&model_path)?;
    let policy = PolicyState::load(&policy_path)?;
    let graph = load_dataset(&cli.data_dir, &args.data, params.arch)?;
    let (k, mode) = (policy.config().k, policy.config().mode);
    let report = variance_report(&graph, &params, &policy, k, mode)?;
    csv_to(&cli.out_dir, "variance.csv", |f| report.write_csv(f))?;
    Ok(format!(
        "variance-report: vertices={} sampled={} mean uniform={:.6} bandit={:.6} oracle={:.6} out={}",
        report.rows.len(),
        report.sampled_rows,
        report.mean.uniform,
        report.mean.bandit,
        report.mean.oracle,
        cli.out_dir.display()
    ))
}

fn run_gen(cli: &Cli, args: &GenArgs) -> Result<String, CliError> {
    let options = GraphOptions::default();
    let graph = match &args.from_linqs {
        Some(dir) => {
            let (content, cites) = find_linqs(dir)
                .ok_or_else(|| CliError::Data(format!("{} has no *.content/*.cites pair", dir.display())))?;
            let split = LinqsSplit {
                train: args.split_train,
                val: args.split_val,
                test: args.split_test,
                seed: args.seed,
            };
            import_linqs(&content, &cites, split, options)?
        }
        None => generate_synthetic(
            &SyntheticSpec::new(args.n, args.degree, args.classes, args.features, args.seed),
            options,
        )?,
    };
    save_graph(&graph, &GraphFiles::in_dir(&cli.out_dir))?;
    Ok(format!(
        "gen-data: nodes={} edges={} features={} out={}",
        graph.num_nodes(),
        graph.num_edges(),
        graph.feature_dim(),
        cli.out_dir.display()
    ))
}

fn run(argv: Vec<OsString>) -> Result<String, CliError> {
    let cmd = Cli::command();
    let first = cmd.clone().try_get_matches_from(&argv).map_err(clap_error)?;
    let (sub, _) = first.subcommand().expect("subcommand is required");
    let sub = sub.to_string();
    let argv = match first.get_one::<PathBuf>("config") {
        Some(path) => merge_config(&cmd, &argv, &sub, &read_config_file(path)?)?,
        None => argv,
    };
    let matches = cmd.try_get_matches_from(&argv).map_err(clap_error)?;
    let cli = Cli::from_arg_matches(&matches).map_err(clap_error)?;
    let sub_matches = matches.subcommand().expect("subcommand is required").1;

    fs::create_dir_all(&cli.out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    let summary = match &cli.command {
        Command::Train(a) => run_train(&cli, a),
        Command::Simulate(a) => run_simulate(&cli, a),
        Command::VarianceReport(a) => run_report(&cli, a),
        Command::GenData(a) => run_gen(&cli, a),
    }?;
    write(
        &cli.out_dir,
        "manifest.txt",
        &manifest(&Cli::command(), env!("CARGO_PKG_VERSION"), &sub, sub_matches),
    )?;
    Ok(summary)
}

/// Help and version output is printed here and ends the process with 0.
fn clap_error(e: clap::Error) -> CliError {
    if !e.use_stderr() {
        let _ = e.print();
        std::process::exit(0);
    }
    let text = e.to_string();
    let first = text.lines().next().unwrap_or_default();
    CliError::Usage(first.trim_start_matches("error: ").to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args_os().collect()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
