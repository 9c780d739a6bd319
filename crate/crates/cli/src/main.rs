//! `tpmix`: stream a time series through the mixture-of-experts engine,
//! score one-step-ahead predictions, and emit per-step records.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::PathBuf;
use tpmix_cli::config::{RunConfig, StandardizeMode};
use tpmix_cli::dataset::{load_csv, standardize, ColumnSpec, Dataset};
use tpmix_cli::engine::EngineModel;
use tpmix_cli::error::{CliError, Result};
use tpmix_cli::harness::{emit_results, run_stream, summarize, RunSummary};
use tpmix_cli::validate;

#[derive(Parser)]
#[command(
    name = "tpmix",
    version,
    about = "Streaming mixture-of-experts regression with one-step-ahead scoring"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stream one dataset; write steps.csv and summary.json
    Run(RunArgs),
    /// Repeat a run over consecutive seeds; report mean MSE and its
    /// standard error, writing bench.json
    Bench(RunArgs),
    /// Run the built-in self-checks
    Validate,
}

/// Shared flags; every configuration key has a flag of the same name, and
/// flags override values loaded from --config.
#[derive(Args)]
struct RunArgs {
    /// Dataset CSV (headered; see --time-column / --value-column)
    #[arg(long)]
    data: PathBuf,
    /// Flat JSON configuration file; keys mirror these flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Particle population size
    #[arg(long)]
    particles: Option<usize>,
    /// Per-cluster likelihood budget
    #[arg(long)]
    batch: Option<usize>,
    /// Resample threshold in (0, 1]
    #[arg(long)]
    threshold: Option<f64>,
    /// Monte Carlo draws per predictive interval
    #[arg(long)]
    mc_draws: Option<usize>,
    /// Seeds per benchmark
    #[arg(long)]
    repeats: Option<usize>,
    /// Worker threads (0 = machine default)
    #[arg(long)]
    threads: Option<usize>,
    /// Input-model prior mean location
    #[arg(long)]
    mu0: Option<f64>,
    /// Input-model prior mean-precision scale
    #[arg(long)]
    lambda0: Option<f64>,
    /// Input-model prior scatter scale
    #[arg(long)]
    psi0: Option<f64>,
    /// Input-model prior scatter degrees of freedom
    #[arg(long)]
    nu0: Option<f64>,
    /// Concentration prior shape
    #[arg(long)]
    a0: Option<f64>,
    /// Concentration prior rate
    #[arg(long)]
    b0: Option<f64>,
    /// Log-kernel prior mean
    #[arg(long)]
    m0: Option<f64>,
    /// Log-kernel prior variance
    #[arg(long)]
    s0sq: Option<f64>,
    /// Degrees-of-freedom prior shape
    #[arg(long)]
    nu_shape: Option<f64>,
    /// Degrees-of-freedom prior rate
    #[arg(long)]
    nu_rate: Option<f64>,
    /// Header name of the time column
    #[arg(long)]
    time_column: Option<String>,
    /// Header name of the value column
    #[arg(long)]
    value_column: Option<String>,
    /// offline (whole-series) or running (experimental)
    #[arg(long)]
    standardize: Option<StandardizeMode>,
}

fn merged_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    macro_rules! overlay {
        ($($field:ident),* $(,)?) => {
            $(if let Some(v) = &args.$field {
                cfg.$field = v.clone();
            })*
        };
    }
    overlay!(
        seed, particles, batch, threshold, mc_draws, repeats, threads, mu0, lambda0, psi0, nu0,
        a0, b0, m0, s0sq, nu_shape, nu_rate, time_column, value_column, standardize,
    );
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads(n: usize) -> Result<()> {
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("cannot configure {n} threads: {e}")))?;
    }
    Ok(())
}

fn load_dataset(args: &RunArgs, cfg: &RunConfig) -> Result<Dataset> {
    let cols = ColumnSpec {
        time: cfg.time_column.clone(),
        value: cfg.value_column.clone(),
    };
    let raw = load_csv(&args.data, &cols)?;
    match cfg.standardize {
        StandardizeMode::Offline => standardize(&raw),
        // Running mode scales inside the harness.
        StandardizeMode::Running => Ok(raw),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

fn run_cmd(args: &RunArgs) -> Result<()> {
    let cfg = merged_config(args)?;
    configure_threads(cfg.threads)?;
    let ds = load_dataset(args, &cfg)?;
    let mut model = EngineModel::new(&cfg);
    let (records, runtime_s) = run_stream(&ds, cfg.standardize, &mut model)?;
    let (mse, coverage95) = summarize(&records);
    let summary = RunSummary {
        dataset: ds.name.clone(),
        n: ds.ys.len(),
        mse,
        coverage95,
        seed: cfg.seed,
        config: cfg,
        runtime_s,
    };
    emit_results(&records, &summary, &args.out)?;
    println!(
        "{}: n={} mse={} coverage95={} ({:.1}s) -> {}",
        summary.dataset,
        summary.n,
        fmt_opt(summary.mse),
        fmt_opt(summary.coverage95),
        runtime_s,
        args.out.display()
    );
    Ok(())
}

/// Benchmark summary written as `bench.json`.
#[derive(Serialize)]
struct BenchSummary {
    dataset: String,
    n: usize,
    repeats: usize,
    seeds: Vec<u64>,
    mse_per_seed: Vec<f64>,
    mse_mean: f64,
    /// Standard error of the mean across seeds; absent for a single seed.
    mse_se: Option<f64>,
    coverage95_mean: f64,
    config: RunConfig,
}

fn bench_cmd(args: &RunArgs) -> Result<()> {
    let cfg = merged_config(args)?;
    configure_threads(cfg.threads)?;
    let ds = load_dataset(args, &cfg)?;

    let mut seeds = Vec::with_capacity(cfg.repeats);
    let mut mses = Vec::with_capacity(cfg.repeats);
    let mut coverages = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let seed = cfg.seed + r as u64;
        let mut model = EngineModel::with_seed(&cfg, seed);
        let (records, runtime_s) = run_stream(&ds, cfg.standardize, &mut model)?;
        let (mse, coverage) = summarize(&records);
        let mse =
            mse.ok_or_else(|| CliError::input("dataset too short to score".to_string()))?;
        println!(
            "seed {seed}: mse={mse:.6} coverage95={} ({runtime_s:.1}s)",
            fmt_opt(coverage)
        );
        seeds.push(seed);
        mses.push(mse);
        coverages.push(coverage.unwrap_or(f64::NAN));
    }
    let r = mses.len() as f64;
    let mean = mses.iter().sum::<f64>() / r;
    let se = if mses.len() > 1 {
        let var = mses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (r - 1.0);
        Some((var / r).sqrt())
    } else {
        None
    };
    let coverage_mean = coverages.iter().sum::<f64>() / r;

    let summary = BenchSummary {
        dataset: ds.name.clone(),
        n: ds.ys.len(),
        repeats: cfg.repeats,
        seeds,
        mse_per_seed: mses,
        mse_mean: mean,
        mse_se: se,
        coverage95_mean: coverage_mean,
        config: cfg,
    };
    std::fs::create_dir_all(&args.out).map_err(|source| CliError::Io {
        path: args.out.clone(),
        source,
    })?;
    let path = args.out.join("bench.json");
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Internal(format!("bench serialization: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })?;

    match se {
        Some(se) => println!(
            "{}: mse {:.3} ({:.3}) over {} seeds -> {}",
            summary.dataset,
            mean,
            se,
            summary.repeats,
            args.out.display()
        ),
        None => println!(
            "{}: mse {:.3} over 1 seed -> {}",
            summary.dataset,
            mean,
            args.out.display()
        ),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Run(args) => run_cmd(args),
        Cmd::Bench(args) => bench_cmd(args),
        Cmd::Validate => validate::run_all(),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successes; everything else is bad input.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        let mut source = std::error::Error::source(&err);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(err.exit_code());
    }
}
