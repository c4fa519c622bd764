//! Command-line front end for the risk-averse stopping bounds.
//!
//! Configuration comes from an optional JSON file plus flag overrides; flags
//! win. `RISKSTOP_THREADS` caps the rayon pool before any parallel work runs.

pub mod commands;
pub mod config;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use commands::DumpFormat;
use config::{FamilyKind, RunConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "riskstop", version, about = "Monte Carlo bounds for risk-averse optimal stopping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Regression-policy lower bound with the threshold search.
    Lower(RunArgs),
    /// Nested-simulation upper bound anchored at the lower-bound argmax.
    Upper(RunArgs),
    /// Lower and upper bounds for c in {0, 0.5, 1, 1.5} on shared paths.
    Table1(RunArgs),
    /// Exact small-tree identity battery.
    Oracle(OracleArgs),
    /// Dump simulated price paths.
    Simulate(SimArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    n_outer: Option<usize>,
    #[arg(long)]
    n_inner: Option<usize>,
    #[arg(long)]
    seed_train: Option<u64>,
    #[arg(long)]
    seed_test: Option<u64>,
    #[arg(long)]
    seed_outer: Option<u64>,
    #[arg(long)]
    seed_inner: Option<u64>,
    /// Sample paths in antithetic pairs (path counts must be even).
    #[arg(long)]
    antithetic: bool,

    /// Risk family: semidev | expectile.
    #[arg(long)]
    risk_family: Option<String>,
    /// Semideviation penalty weight (family parameter bound).
    #[arg(long)]
    c: Option<f64>,
    /// Expectile tail level in (1/2, 1).
    #[arg(long)]
    alpha: Option<f64>,

    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    strike: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    j_max: Option<usize>,

    #[arg(long)]
    coarse_points: Option<usize>,
    #[arg(long)]
    x_tol_rel: Option<f64>,
    #[arg(long)]
    x_max_quantile: Option<f64>,
    /// Run the nested simulation at every family grid point instead of only
    /// the lower-bound argmax.
    #[arg(long)]
    sweep_family: bool,
    /// Re-run the nested simulation on a small threshold grid around each
    /// anchor and keep the smallest upper bound.
    #[arg(long)]
    refine_x: bool,
    #[arg(long)]
    refine_span_rel: Option<f64>,

    /// Copy the JSON result record to this file.
    #[arg(long)]
    json: Option<PathBuf>,
    /// lower/upper: append a CSV row here. table1: write the table CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        let s = &mut cfg.sampling;
        if let Some(v) = self.n_train {
            s.n_train = v;
        }
        if let Some(v) = self.n_test {
            s.n_test = v;
        }
        if let Some(v) = self.n_outer {
            s.n_outer = v;
        }
        if let Some(v) = self.n_inner {
            s.n_inner = v;
        }
        if let Some(v) = self.seed_train {
            s.seed_train = v;
        }
        if let Some(v) = self.seed_test {
            s.seed_test = v;
        }
        if let Some(v) = self.seed_outer {
            s.seed_outer = v;
        }
        if let Some(v) = self.seed_inner {
            s.seed_inner = v;
        }
        if self.antithetic {
            s.antithetic = true;
        }
        if let Some(name) = &self.risk_family {
            cfg.risk.family = FamilyKind::parse(name)
                .with_context(|| format!("unknown --risk-family {name:?}"))?;
        }
        if let Some(v) = self.c {
            cfg.risk.c = v;
        }
        if let Some(v) = self.alpha {
            cfg.risk.alpha = v;
        }
        let m = &mut cfg.model;
        if let Some(v) = self.d {
            m.d = v;
        }
        if let Some(v) = self.s0 {
            m.s0 = v;
        }
        if let Some(v) = self.r {
            m.r = v;
        }
        if let Some(v) = self.delta {
            m.delta = v;
        }
        if let Some(v) = self.sigma {
            m.sigma = v;
        }
        if let Some(v) = self.strike {
            m.strike = v;
        }
        if let Some(v) = self.horizon {
            m.horizon = v;
        }
        if let Some(v) = self.j_max {
            m.j_max = v;
        }
        let se = &mut cfg.search;
        if let Some(v) = self.coarse_points {
            se.coarse_points = v;
        }
        if let Some(v) = self.x_tol_rel {
            se.x_tol_rel = v;
        }
        if let Some(v) = self.x_max_quantile {
            se.x_max_quantile = v;
        }
        if self.sweep_family {
            se.sweep_family = true;
        }
        if self.refine_x {
            se.refine_x = true;
        }
        if let Some(v) = self.refine_span_rel {
            se.refine_span_rel = v;
        }
        if self.json.is_some() {
            cfg.output.json = self.json;
        }
        if self.csv.is_some() {
            cfg.output.csv = self.csv;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct OracleArgs {
    /// Number of random trees in the battery.
    #[arg(long, default_value_t = 50)]
    n_trees: usize,
    /// Tree depths cycle through 1..=max_depth.
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Perturb one martingale increment; the battery must then fail
    /// (exit code 2), demonstrating the checks have teeth.
    #[arg(long)]
    inject_martingale_corruption: bool,
    /// Copy the JSON report to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// JSON config file for the market model.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n_paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = DumpFormat::Csv)]
    format: DumpFormat,
    /// Output file; csv defaults to stdout, binary requires a file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    antithetic: bool,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    strike: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    j_max: Option<usize>,
}

impl SimArgs {
    fn into_config(self) -> Result<(RunConfig, usize, u64, DumpFormat, Option<PathBuf>)> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if self.antithetic {
            cfg.sampling.antithetic = true;
        }
        let m = &mut cfg.model;
        if let Some(v) = self.d {
            m.d = v;
        }
        if let Some(v) = self.s0 {
            m.s0 = v;
        }
        if let Some(v) = self.r {
            m.r = v;
        }
        if let Some(v) = self.delta {
            m.delta = v;
        }
        if let Some(v) = self.sigma {
            m.sigma = v;
        }
        if let Some(v) = self.strike {
            m.strike = v;
        }
        if let Some(v) = self.horizon {
            m.horizon = v;
        }
        if let Some(v) = self.j_max {
            m.j_max = v;
        }
        Ok((cfg, self.n_paths, self.seed, self.format, self.out))
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("RISKSTOP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("RISKSTOP_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        anyhow::bail!("RISKSTOP_THREADS must be a positive integer, got 0");
    }
    // A pool may already exist (library callers); that is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses arguments, runs the selected command, returns the process exit
/// code: 0 success, 1 configuration or runtime error, 2 failed checks.
pub fn run() -> Result<i32> {
    configure_threads()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Lower(args) => commands::cmd_lower(&args.into_config()?),
        Command::Upper(args) => commands::cmd_upper(&args.into_config()?),
        Command::Table1(args) => commands::cmd_table1(&args.into_config()?),
        Command::Oracle(args) => commands::cmd_oracle(
            args.n_trees,
            args.max_depth,
            args.seed,
            args.inject_martingale_corruption,
            args.json.as_deref(),
        ),
        Command::Simulate(args) => {
            let (cfg, n_paths, seed, format, out) = args.into_config()?;
            commands::cmd_simulate(&cfg, n_paths, seed, format, out.as_deref())
        }
    }
}
