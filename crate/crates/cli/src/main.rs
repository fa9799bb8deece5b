//! `powerctl` command-line driver.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use powerctl::baselines::{fp, full_power, grid_oracle, random_power, wmmse, Allocator};
use powerctl::config::{LoadedConfig, NetworkConfig};
use powerctl::nn::Checkpoint;
use powerctl::orchestrator::{evaluate, run_episode_schedule, EvaluationReport, Method};
use powerctl::rng::{stream, Stream};
use powerctl::scalar::dbm_to_watts;
use powerctl::{Error, LinkGains, RunConfig};

/// Environment variable that relocates relative output directories.
const OUT_ROOT_ENV: &str = "POWERCTL_OUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "powerctl", version, about = "Multi-agent deep actor-critic power control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy over the configured episode schedule.
    Train(TrainArgs),
    /// Evaluate a checkpoint against every benchmark allocator on paired channels.
    Evaluate(EvaluateArgs),
    /// Run a single benchmark allocator over simulated deployments.
    Baseline(BaselineArgs),
    /// Emit plot-ready CSVs (training progress, movement traces) from finished runs.
    Plotdata(PlotdataArgs),
    /// Solve one gain matrix with one allocator and print the result as JSON.
    Solve(SolveArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON configuration; every omitted field takes its default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Relative paths are resolved against $POWERCTL_OUT_ROOT when set.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SizeArgs {
    /// Override the number of cells.
    #[arg(long)]
    cells: Option<usize>,
    /// Override the number of links.
    #[arg(long)]
    links: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Independent runs with seeds seed, seed+1, ...; each gets `replica_<r>/`.
    #[arg(long, default_value_t = 1)]
    replicas: u64,
    /// Evaluate the final checkpoint against the baselines after training.
    #[arg(long)]
    evaluate: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    size: SizeArgs,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// One of full, random, wmmse, fp, fp_delayed.
    #[arg(long)]
    algorithm: String,
    #[command(flatten)]
    size: SizeArgs,
}

#[derive(Args, Debug)]
struct PlotdataArgs {
    /// Directories written by `powerctl train`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Square CSV matrix of linear gains; row = transmitter, column = receiver.
    #[arg(long)]
    gains: PathBuf,
    /// One of full, random, wmmse, fp, grid.
    #[arg(long)]
    algorithm: String,
    /// Maximum power in watts.
    #[arg(long, default_value_t = dbm_to_watts(NetworkConfig::default().pmax_dbm))]
    pmax_w: f64,
    /// Noise power in watts.
    #[arg(long, default_value_t = dbm_to_watts(NetworkConfig::default().noise_dbm))]
    noise_w: f64,
    /// Stopping tolerance on the sum-rate change (bps/Hz).
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Levels per link for `grid`.
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure to obtain a usable configuration; exits with status 2.
#[derive(Debug)]
struct ConfigFailure(String);

impl fmt::Display for ConfigFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigFailure>() {
            return 2;
        }
        match cause.downcast_ref::<Error>() {
            Some(Error::Config { .. }) => return 2,
            Some(Error::NonFinite(_)) => return 3,
            _ => {}
        }
    }
    1
}

fn load_config(path: Option<&Path>) -> anyhow::Result<LoadedConfig> {
    match path {
        None => {
            let config = RunConfig::default();
            let defaulted = vec!["<all>".to_string()];
            Ok(LoadedConfig { config, defaulted })
        }
        Some(p) => RunConfig::load(p)
            .map_err(|e| ConfigFailure(format!("cannot load config {}: {e}", p.display())).into()),
    }
}

fn resolve_out(out: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn unix_millis() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    defaulted: &'a [String],
    seeds: serde_json::Value,
    outputs: Vec<String>,
    started_unix_ms: u128,
    finished_unix_ms: u128,
}

/// Writes `config.json` and `manifest.json` next to the other outputs.
fn finish_run(
    dir: &Path,
    command: &str,
    loaded: &LoadedConfig,
    outputs: Vec<String>,
    started: u128,
) -> anyhow::Result<()> {
    write_file(&dir.join("config.json"), loaded.config.to_json_pretty())?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: &loaded.config,
        defaulted: &loaded.defaulted,
        seeds: json!({
            "run": loaded.config.seed,
            "evaluation": loaded.config.evaluation.seed,
        }),
        outputs,
        started_unix_ms: started,
        finished_unix_ms: unix_millis(),
    };
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)
}

fn sized(net: &NetworkConfig, size: &SizeArgs) -> NetworkConfig {
    net.with_size(size.cells.unwrap_or(net.num_cells), size.links.unwrap_or(net.num_links))
}

fn report_json(report: &EvaluationReport) -> serde_json::Value {
    let means: serde_json::Map<String, serde_json::Value> = report
        .methods
        .iter()
        .map(|m| (m.name().to_string(), json!(report.mean_rate(*m))))
        .collect();
    json!({
        "num_cells": report.num_cells,
        "num_links": report.num_links,
        "slots_per_deployment": report.slots,
        "deployments": report.deployments.len(),
        "mean_rate_bps_hz_per_link": means,
        "mean_iterations": {
            "wmmse": report.mean_wmmse_iterations(),
            "fp": report.mean_fp_iterations(),
        },
    })
}

fn print_table(report: &EvaluationReport) {
    let header: Vec<String> = report.methods.iter().map(|m| format!("{:>10}", m.name())).collect();
    println!("{:>10} {}", "seed", header.join(" "));
    for d in &report.deployments {
        let cells: Vec<String> = report
            .methods
            .iter()
            .map(|m| format!("{:>10.4}", d.rate(*m).unwrap_or(f64::NAN)))
            .collect();
        println!("{:>10} {}", d.seed, cells.join(" "));
    }
    let means: Vec<String> = report
        .methods
        .iter()
        .map(|m| format!("{:>10.4}", report.mean_rate(*m).unwrap_or(f64::NAN)))
        .collect();
    println!("{:>10} {}", "mean", means.join(" "));
}

fn train_one(loaded: &LoadedConfig, dir: &Path, evaluate_after: bool) -> anyhow::Result<()> {
    let started = unix_millis();
    create_dir(dir)?;
    let cfg = &loaded.config;
    let outcome = run_episode_schedule::<f64>(cfg)?;
    let mut outputs = vec!["metrics.csv".to_string(), "trace.csv".to_string()];
    let mut csv = Vec::new();
    outcome.metrics.write_csv(&mut csv)?;
    write_file(&dir.join("metrics.csv"), csv)?;
    let mut trace = Vec::new();
    outcome.metrics.write_trace_csv(&mut trace)?;
    write_file(&dir.join("trace.csv"), trace)?;
    for c in &outcome.checkpoints {
        let path = dir.join(c.file_name());
        c.checkpoint.save(&path)?;
        outputs.push(c.file_name());
    }
    let per_episode: Vec<f64> = (1..=cfg.timing.episodes)
        .map(|e| {
            let rows: Vec<_> = outcome.metrics.slots.iter().filter(|s| s.episode == e).collect();
            let links: usize = rows.iter().map(|s| s.rates.len()).sum();
            rows.iter().map(|s| s.sum_rate()).sum::<f64>() / links.max(1) as f64
        })
        .collect();
    let mut summary = json!({
        "mean_rate_bps_hz_per_link": outcome.metrics.mean_rate(),
        "episode_mean_rate_bps_hz_per_link": per_episode,
        "handovers": outcome.handovers,
        "gradient_steps": outcome.trainer.learner().gradient_steps(),
        "causality": {
            "experiences_delivered": outcome.audit.experiences_delivered,
            "early_experiences": outcome.audit.early_experiences,
            "snapshot_uses": outcome.audit.snapshot_uses,
            "early_snapshots": outcome.audit.early_snapshots,
        },
    });
    if evaluate_after {
        let actor = &outcome.trainer.learner().actor;
        let report = evaluate(cfg, &cfg.network, Some(actor), &Allocator::ALL)?;
        summary["evaluation"] = report_json(&report);
        let mut table = Vec::new();
        report.write_csv(&mut table)?;
        write_file(&dir.join("evaluation.csv"), table)?;
        outputs.push("evaluation.csv".into());
    }
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    outputs.push("summary.json".into());
    finish_run(dir, "train", loaded, outputs, started)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let loaded = load_config(args.common.config.as_deref())?;
    let out = resolve_out(&args.common.out);
    if args.replicas == 0 {
        bail!(ConfigFailure("--replicas must be at least 1".into()));
    }
    if args.replicas == 1 {
        return train_one(&loaded, &out, args.evaluate);
    }
    let runs: Vec<(LoadedConfig, PathBuf)> = (0..args.replicas)
        .map(|r| {
            let mut l = loaded.clone();
            l.config.seed = loaded.config.seed + r;
            (l, out.join(format!("replica_{r}")))
        })
        .collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(l, dir)| s.spawn(move || train_one(l, dir, args.evaluate)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("replica panicked"))))
            .collect::<anyhow::Result<Vec<()>>>()
    })?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let started = unix_millis();
    let loaded = load_config(args.common.config.as_deref())?;
    let cfg = &loaded.config;
    let out = resolve_out(&args.common.out);
    let dim = powerctl::agent_state::state_dim(cfg.neighbors.cap);
    let ckpt = Checkpoint::<f64>::load_for_input(&args.checkpoint, dim)?;
    let net = sized(&cfg.network, &args.size);
    let report = evaluate(cfg, &net, Some(&ckpt.params), &Allocator::ALL)?;
    create_dir(&out)?;
    let mut table = Vec::new();
    report.write_csv(&mut table)?;
    write_file(&out.join("evaluation.csv"), table)?;
    let mut summary = report_json(&report);
    summary["checkpoint"] = json!(args.checkpoint.display().to_string());
    write_file(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    print_table(&report);
    finish_run(&out, "evaluate", &loaded, vec!["evaluation.csv".into(), "summary.json".into()], started)
}

fn cmd_baseline(args: BaselineArgs) -> anyhow::Result<()> {
    let started = unix_millis();
    let algorithm = Allocator::from_name(&args.algorithm)?;
    let loaded = load_config(args.common.config.as_deref())?;
    let cfg = &loaded.config;
    let out = resolve_out(&args.common.out);
    let net = sized(&cfg.network, &args.size);
    let report = evaluate::<f64>(cfg, &net, None, &[algorithm])?;
    create_dir(&out)?;
    let mut table = Vec::new();
    report.write_csv(&mut table)?;
    write_file(&out.join("baseline.csv"), table)?;
    write_file(&out.join("summary.json"), serde_json::to_string_pretty(&report_json(&report))?)?;
    print_table(&report);
    if let Some(it) = report.mean_wmmse_iterations().or(report.mean_fp_iterations()) {
        println!("mean iterations: {it:.2}");
    }
    finish_run(&out, "baseline", &loaded, vec!["baseline.csv".into(), "summary.json".into()], started)
}

/// Checkpoints in `dir` ordered by episode.
fn episode_checkpoints(dir: &Path) -> anyhow::Result<Vec<(u64, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(e) = name.strip_prefix("policy_ep").and_then(|r| r.strip_suffix(".ckpt")) {
            if let Ok(e) = e.parse::<u64>() {
                found.push((e, path));
            }
        }
    }
    found.sort();
    Ok(found)
}

fn cmd_plotdata(args: PlotdataArgs) -> anyhow::Result<()> {
    let out = resolve_out(&args.out);
    create_dir(&out)?;
    let mut used = std::collections::HashSet::new();
    for (i, run) in args.runs.iter().enumerate() {
        let config_path = run.join("config.json");
        if !config_path.is_file() {
            bail!("{} is not a finished run (missing config.json)", run.display());
        }
        let loaded = load_config(Some(&config_path))?;
        let cfg = &loaded.config;
        let checkpoints = episode_checkpoints(run)?;
        if checkpoints.is_empty() {
            bail!("{} contains no checkpoints", run.display());
        }
        let base = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("run{i}"));
        let name = if used.insert(base.clone()) { base } else { format!("{base}_{i}") };

        let baselines = evaluate::<f64>(cfg, &cfg.network, None, &Allocator::ALL)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run", "episode", "method", "mean_rate_bpsHz"])?;
        for (episode, path) in &checkpoints {
            let dim = powerctl::agent_state::state_dim(cfg.neighbors.cap);
            let ckpt = Checkpoint::<f64>::load_for_input(path, dim)?;
            let report = evaluate(cfg, &cfg.network, Some(&ckpt.params), &[])?;
            let mut row = |method: Method, rate: Option<f64>| {
                w.write_record([
                    name.clone(),
                    episode.to_string(),
                    method.name().to_string(),
                    rate.map(|r| r.to_string()).unwrap_or_default(),
                ])
            };
            row(Method::Policy, report.mean_rate(Method::Policy))?;
            for a in Allocator::ALL {
                row(Method::Baseline(a), baselines.mean_rate(Method::Baseline(a)))?;
            }
        }
        write_file(&out.join(format!("progress_{name}.csv")), w.into_inner()?)?;

        let trace = run.join("trace.csv");
        let bytes = fs::read(&trace).with_context(|| format!("reading {}", trace.display()))?;
        write_file(&out.join(format!("movement_{name}.csv")), bytes)?;
    }
    Ok(())
}

fn read_gains(path: &Path) -> anyhow::Result<LinkGains> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|x| x.parse::<f64>().with_context(|| format!("bad gain `{x}` in {}", path.display())))
            .collect::<anyhow::Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        bail!("{} must hold a non-empty square matrix", path.display());
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let m = ndarray::Array2::from_shape_vec((n, n), flat)?;
    Ok(LinkGains::from_matrix(m)?)
}

fn cmd_solve(args: SolveArgs) -> anyhow::Result<()> {
    let gains = read_gains(&args.gains)?;
    let n = gains.num_links();
    let solver = powerctl::config::SolverConfig::converged(args.tol, args.max_iter);
    let (pmax, noise) = (args.pmax_w, args.noise_w);
    if !(pmax > 0.0 && noise > 0.0) {
        bail!(ConfigFailure("--pmax-w and --noise-w must be positive".into()));
    }
    let result = match args.algorithm.as_str() {
        "grid" => grid_oracle(&gains, pmax, noise, args.grid_points)?,
        name => match Allocator::from_name(name)? {
            Allocator::Wmmse => wmmse(&gains, pmax, noise, &solver)?,
            Allocator::Fp => fp(&gains, pmax, noise, &solver)?,
            Allocator::Full | Allocator::Random => {
                let powers = if name == "full" {
                    full_power(n, pmax)
                } else {
                    random_power(n, pmax, &mut stream(args.seed, Stream::RandomBaseline))
                };
                let f = powerctl::netsim::sum_rate(&gains, &powers, noise);
                powerctl::AllocatorResult {
                    powers,
                    iterations: 0,
                    objective_trace: vec![f],
                }
            }
            Allocator::FpDelayed => bail!("fp_delayed needs a gain history; use `baseline` instead"),
        },
    };
    let out = json!({
        "algorithm": args.algorithm,
        "powers_w": result.powers,
        "sum_rate_bps_hz": result.objective(),
        "iterations": result.iterations,
        "objective_trace": result.objective_trace,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Plotdata(a) => cmd_plotdata(a),
        Command::Solve(a) => cmd_solve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
