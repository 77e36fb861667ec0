use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use lrhawkes::bench::{rank_sweep, scaling_run, write_rank_csv, write_scaling_csv, ScalingConfig, Truth};
use lrhawkes::eval::{
    aligned_l2_error, assignment_accuracy, cluster_kernel, evaluate_model, evaluate_naive, recover_groups, score_history,
    Grid, PredictionMetrics,
};
use lrhawkes::io::{
    history_paths, load_events, load_model, load_network, read_json, save_events, save_model, save_network,
    to_json_string, write_curves, write_json, write_scores, SelfLoops,
};
use lrhawkes::simulate::{generate_synthetic_config, simulate, true_kernel, SyntheticConfig};
use lrhawkes::{fit, EventHistory, Hyperparams, LowRankModel, Network};

#[derive(Parser)]
#[command(name = "lrhawkes", version, about = "Low-rank multivariate Hawkes processes")]
struct Cli {
    /// Worker threads for compute (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Zero wall-clock timings in outputs so repeated runs are byte-identical
    /// (results are deterministic given --seed either way).
    #[arg(long, global = true)]
    reproducible: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a two-group synthetic configuration and simulate histories from it.
    Simulate(SimulateArgs),
    /// Fit a low-rank model to an event history.
    Fit(FitArgs),
    /// Score every event of a history with the intensities of a fitted model.
    Predict(PredictArgs),
    /// Prediction metrics, kernel error and group recovery of a fitted model.
    Evaluate(EvaluateArgs),
    /// Write kernel and baseline curves of a model or synthetic configuration.
    Kernels(KernelsArgs),
    /// Scaling and rank-sensitivity harness.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct NetworkArgs {
    /// Directed edge list `src,dst`.
    #[arg(long, conflicts_with = "complete")]
    network: Option<PathBuf>,
    /// Every pair of distinct types excites each other (the default without --network).
    #[arg(long)]
    complete: bool,
    /// Self-excitation: add (`on`) or forbid (`off`) diagonal edges.
    #[arg(long, value_enum)]
    self_loops: Option<Toggle>,
}

impl NetworkArgs {
    fn resolve(&self, d: usize) -> anyhow::Result<Network> {
        match &self.network {
            Some(path) => {
                let policy = match self.self_loops {
                    None => SelfLoops::AsListed,
                    Some(Toggle::On) => SelfLoops::On,
                    Some(Toggle::Off) => SelfLoops::Off,
                };
                Ok(load_network(path, d, policy)?)
            }
            None => Ok(Network::complete(d, matches!(self.self_loops, Some(Toggle::On)))?),
        }
    }
}

#[derive(Args)]
struct HyperArgs {
    /// Rank r of the projection.
    #[arg(long)]
    rank: Option<usize>,
    /// Number K of exponential basis functions.
    #[arg(long)]
    kernels: Option<usize>,
    /// Baseline decay rate.
    #[arg(long)]
    gamma: Option<f64>,
    /// Kernel decay rate.
    #[arg(long)]
    delta: Option<f64>,
    /// Log-barrier weight of the kernel step.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Maximum outer iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Relative log-likelihood tolerance of the outer loop.
    #[arg(long)]
    tol: Option<f64>,
    /// Seed of the random initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl HyperArgs {
    fn resolve(&self) -> Hyperparams {
        let mut hp = Hyperparams { seed: self.seed, ..Hyperparams::default() };
        if let Some(v) = self.rank {
            hp.rank = v;
        }
        if let Some(v) = self.kernels {
            hp.kernels = v;
        }
        if let Some(v) = self.gamma {
            hp.gamma = v;
        }
        if let Some(v) = self.delta {
            hp.delta = v;
        }
        if let Some(v) = self.epsilon {
            hp.epsilon = v;
        }
        if let Some(v) = self.iters {
            hp.max_outer_iters = v;
        }
        if let Some(v) = self.tol {
            hp.rel_tol = v;
        }
        hp
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of event types.
    #[arg(long, default_value_t = 50)]
    d: usize,
    /// Edge probability of the Erdős–Rényi network.
    #[arg(long, default_value_t = 0.1)]
    erdos_p: f64,
    /// Number of independent realizations.
    #[arg(long, default_value_t = 1000)]
    realizations: usize,
    /// Observation window [0, window].
    #[arg(long, default_value_t = 100.0)]
    window: f64,
    /// Also write `train` and `test` histories holding out this fraction of realizations.
    #[arg(long)]
    holdout: Option<f64>,
    /// Add diagonal edges to the network.
    #[arg(long, value_enum, default_value = "off")]
    self_loops: Toggle,
    /// Seed of the configuration and the simulation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// History stem: reads `<stem>.events.csv` and `<stem>.windows.csv`.
    #[arg(long)]
    events: PathBuf,
    /// Number of event types (default: inferred from the events).
    #[arg(long)]
    d: Option<usize>,
    #[command(flatten)]
    net: NetworkArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Model output (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Fit report output (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Fitted model (JSON).
    #[arg(long)]
    model: PathBuf,
    /// History stem of the events to score.
    #[arg(long)]
    events: PathBuf,
    #[command(flatten)]
    net: NetworkArgs,
    /// Scores output (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Fitted model (JSON).
    #[arg(long)]
    model: PathBuf,
    /// History stem of the held-out events.
    #[arg(long)]
    test: PathBuf,
    /// History stem of the training events, enables the NAIVE baseline.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Synthetic configuration, enables kernel error and group recovery.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    net: NetworkArgs,
    /// Fraction of top-ranked types counted as a hit by the accuracy metric.
    #[arg(long, default_value_t = 0.3)]
    fraction: f64,
    /// Seed of the k-means restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics output (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KernelsArgs {
    /// Fitted model (JSON): curves of the fitted group kernels and baselines.
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    model: Option<PathBuf>,
    /// Synthetic configuration (JSON): curves of the true kernels.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Curves cover [0, t_max].
    #[arg(long, default_value_t = 10.0)]
    t_max: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 1000)]
    points: usize,
    /// Curves output (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Time tensor construction and one outer iteration for growing n.
    Scaling(ScalingArgs),
    /// Fit one model per rank and compare likelihood, prediction and recovery.
    Ranks(RanksArgs),
}

#[derive(Args)]
struct ScalingArgs {
    /// Target event counts.
    #[arg(long, value_delimiter = ',', default_value = "10000,20000,40000")]
    sizes: Vec<usize>,
    /// Number of event types.
    #[arg(long, default_value_t = 50)]
    d: usize,
    /// Timed repetitions per size (the median is reported).
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Seed of the simulated pool.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Timing table output (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RanksArgs {
    /// History stem of the training events.
    #[arg(long)]
    events: PathBuf,
    /// History stem of held-out events.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Synthetic configuration, enables kernel error and group recovery.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of event types (default: inferred from the events).
    #[arg(long)]
    d: Option<usize>,
    /// Ranks to fit.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    ranks: Vec<usize>,
    #[command(flatten)]
    net: NetworkArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Per-rank table output (CSV).
    #[arg(long)]
    out: PathBuf,
}

fn load_history(stem: &Path, d: Option<usize>) -> anyhow::Result<EventHistory> {
    let (events, windows) = history_paths(stem);
    Ok(load_events(&events, &windows, d)?)
}


fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn run_simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let (cfg, network) = generate_synthetic_config(a.d, a.erdos_p, a.seed, matches!(a.self_loops, Toggle::On))?;
    let history = simulate(&cfg, &network, (0.0, a.window), a.realizations, a.seed)?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &cfg)?;
    save_network(&network, &a.out.join("network.csv"))?;
    let (ev, win) = history_paths(&a.out.join("history"));
    save_events(&history, &ev, &win)?;
    if let Some(fraction) = a.holdout {
        let (train, test) = history.split_holdout(fraction)?;
        let (ev, win) = history_paths(&a.out.join("train"));
        save_events(&train, &ev, &win)?;
        let (ev, win) = history_paths(&a.out.join("test"));
        save_events(&test, &ev, &win)?;
    }
    info!("simulated {} events in {} realizations", history.num_events(), a.realizations);
    Ok(())
}

fn run_fit(a: &FitArgs, reproducible: bool) -> anyhow::Result<()> {
    let history = load_history(&a.events, a.d)?;
    let network = a.net.resolve(history.d())?;
    let hp = a.hyper.resolve();
    let (model, mut report) = fit(&history, &network, &hp, None)?;
    if reproducible {
        report.wall_times.iter_mut().for_each(|t| *t = 0.0);
        report.tensor_seconds = 0.0;
    }
    info!(
        "log-likelihood {} after {} outer iterations (converged: {})",
        report.final_log_likelihood, report.outer_iters_used, report.converged
    );
    save_model(&model, Some(&hp), &a.out)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    Ok(())
}

fn run_predict(a: &PredictArgs) -> anyhow::Result<()> {
    let (model, _) = load_model(&a.model)?;
    let history = load_history(&a.events, Some(model.d()))?;
    let network = a.net.resolve(model.d())?;
    let (scores, _) = score_history(&model, &network, &history)?;
    write_scores(&a.out, &history, &scores)?;
    Ok(())
}

#[derive(Serialize)]
struct Recovery {
    l2: f64,
    permutation: Vec<usize>,
    group_accuracy: f64,
}

#[derive(Serialize)]
struct Metrics {
    model: PredictionMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    naive: Option<PredictionMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recovery: Option<Recovery>,
}

fn recovery(model: &LowRankModel, cfg: &SyntheticConfig, seed: u64) -> anyhow::Result<Recovery> {
    if cfg.d != model.d() {
        bail!("configuration has d = {}, model has d = {}", cfg.d, model.d());
    }
    let groups = recover_groups(model.projection(), model.rank(), cfg.r_true, 10, seed)?;
    let (l2, permutation) = aligned_l2_error(
        cfg.r_true,
        |j, i, t| cluster_kernel(model, &groups, j, i, t),
        |j, i, t| true_kernel(cfg, j, i, t),
        Grid::default(),
    )?;
    let group_accuracy = assignment_accuracy(&groups.assignment, &cfg.group_of, cfg.r_true);
    Ok(Recovery { l2, permutation, group_accuracy })
}

fn run_evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let (model, _) = load_model(&a.model)?;
    let test = load_history(&a.test, Some(model.d()))?;
    let network = a.net.resolve(model.d())?;
    let naive = match &a.train {
        Some(stem) => Some(evaluate_naive(&load_history(stem, Some(model.d()))?, &test, a.fraction)?),
        None => None,
    };
    let recovery = match &a.config {
        Some(path) => Some(recovery(&model, &read_json::<SyntheticConfig>(path)?, a.seed)?),
        None => None,
    };
    let metrics = Metrics {
        model: evaluate_model(&model, &network, &test, a.fraction)?,
        naive,
        recovery,
    };
    match &a.out {
        Some(path) => write_json(path, &metrics)?,
        None => println!("{}", to_json_string(&metrics)?),
    }
    Ok(())
}

fn run_kernels(a: &KernelsArgs) -> anyhow::Result<()> {
    if a.points < 2 || !(a.t_max > 0.0) {
        bail!("need at least 2 points on a positive range");
    }
    let ts: Vec<f64> = (0..a.points).map(|n| a.t_max * n as f64 / (a.points - 1) as f64).collect();
    let mut columns = Vec::new();
    if let Some(path) = &a.model {
        let (model, _) = load_model(path)?;
        for j in 0..model.rank() {
            for i in 0..model.rank() {
                let ys = ts.iter().map(|&t| model.kernel_value(j, i, t)).collect::<Result<Vec<_>, _>>()?;
                columns.push((format!("g_{j}_{i}"), ys));
            }
        }
        for i in 0..model.rank() {
            let ys = ts.iter().map(|&t| model.baseline_value(i, t)).collect::<Result<Vec<_>, _>>()?;
            columns.push((format!("mu_{i}"), ys));
        }
    } else if let Some(path) = &a.config {
        let cfg: SyntheticConfig = read_json(path)?;
        for j in 0..cfg.r_true {
            for i in 0..cfg.r_true {
                let ys = ts.iter().map(|&t| true_kernel(&cfg, j, i, t)).collect();
                columns.push((format!("g_{j}_{i}"), ys));
            }
        }
    }
    write_curves(&a.out, &ts, &columns)?;
    Ok(())
}

fn run_bench(cmd: &BenchCommand, reproducible: bool) -> anyhow::Result<()> {
    match cmd {
        BenchCommand::Scaling(a) => {
            let cfg = ScalingConfig { d: a.d, reps: a.reps, seed: a.seed, ..ScalingConfig::default() };
            let rows = scaling_run(&a.sizes, &cfg)?;
            write_scaling_csv(&rows, &a.out)?;
        }
        BenchCommand::Ranks(a) => {
            let train = load_history(&a.events, a.d)?;
            let test = match &a.test {
                Some(stem) => Some(load_history(stem, Some(train.d()))?),
                None => None,
            };
            let network = a.net.resolve(train.d())?;
            let cfg = match &a.config {
                Some(path) => Some(read_json::<SyntheticConfig>(path)?),
                None => None,
            };
            let truth = cfg.as_ref().map(|config| Truth { config, grid: Grid::default() });
            let mut rows = rank_sweep(&train, test.as_ref(), &network, &a.hyper.resolve(), &a.ranks, truth.as_ref())?;
            if reproducible {
                rows.iter_mut().for_each(|r| r.fit_seconds = 0.0);
            }
            write_rank_csv(&rows, &a.out)?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads > 1 {
        log::warn!("built without the `parallel` feature; --threads ignored");
    }
    match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Fit(a) => run_fit(a, cli.reproducible),
        Command::Predict(a) => run_predict(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Kernels(a) => run_kernels(a),
        Command::Bench(c) => run_bench(c, cli.reproducible),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<lrhawkes::Error>() {
        e.kind()
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else {
        "invalid_argument"
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({ "error": error_kind(&err), "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
