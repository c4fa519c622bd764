//! Command implementations: orchestration, result emission, exit codes.

use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use riskstop::distortion::KusuokaFamily;
use riskstop::dual::upper_bound_search;
use riskstop::market::{
    dump_binary, dump_csv, simulate_paths, simulate_paths_antithetic, PathSet,
};
use riskstop::oracle::run_battery;
use riskstop::primal::{lower_bound_search, SearchCell, SearchOutcome};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

fn simulate_set(cfg: &RunConfig, n_paths: usize, seed: u64) -> Result<PathSet> {
    let params = cfg.gbm_params();
    let grid = riskstop::market::ExerciseGrid::equally_spaced(params.horizon, params.j_max)
        .map_err(|e| anyhow::anyhow!("grid: {e}"))?;
    let paths = if cfg.sampling.antithetic {
        simulate_paths_antithetic(&params, &grid, n_paths, seed)
    } else {
        simulate_paths(&params, &grid, n_paths, seed)
    };
    paths.map_err(|e| anyhow::anyhow!("simulation: {e}"))
}

/// JSON record of one bound estimate.
#[derive(Serialize)]
struct BoundRecord<'a> {
    command: &'a str,
    family: &'a str,
    c: f64,
    alpha: f64,
    bias: &'a str,
    value: f64,
    stderr: f64,
    /// Winning family parameter (the kink for semidev, the mean weight for
    /// expectile families).
    kappa_star: f64,
    x_star: f64,
    n: usize,
    seed: u64,
    x_max: f64,
    cells: &'a [SearchCell],
}

impl BoundRecord<'_> {
    fn emit(&self, cfg: &RunConfig) -> Result<()> {
        let line = serde_json::to_string(self).context("serializing result")?;
        println!("{line}");
        if let Some(path) = &cfg.output.json {
            std::fs::write(path, format!("{line}\n"))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        if let Some(path) = &cfg.output.csv {
            append_csv_row(path, self)?;
        }
        Ok(())
    }
}

fn append_csv_row(path: &Path, r: &BoundRecord<'_>) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if fresh {
        writeln!(file, "command,family,c,alpha,value,stderr,kappa_star,x_star,n,seed")?;
    }
    writeln!(
        file,
        "{},{},{},{},{},{},{},{},{},{}",
        r.command, r.family, r.c, r.alpha, r.value, r.stderr, r.kappa_star, r.x_star, r.n, r.seed
    )?;
    Ok(())
}

fn outcome_argmax(outcome: &SearchOutcome) -> (f64, f64) {
    outcome.best.argmax.expect("searches always record an argmax")
}

pub fn cmd_lower(cfg: &RunConfig) -> Result<i32> {
    cfg.validate()?;
    let dynamics = cfg.dynamics()?;
    let train = simulate_set(cfg, cfg.sampling.n_train, cfg.sampling.seed_train)?;
    let test = simulate_set(cfg, cfg.sampling.n_test, cfg.sampling.seed_test)?;
    let outcome = lower_bound_search(&dynamics, &train, &test, cfg.family(), &cfg.search_config())
        .map_err(|e| anyhow::anyhow!("lower bound: {e}"))?;
    let (kappa_star, x_star) = outcome_argmax(&outcome);
    BoundRecord {
        command: "lower",
        family: cfg.risk.family.name(),
        c: cfg.risk.c,
        alpha: cfg.risk.alpha,
        bias: "low",
        value: outcome.best.value,
        stderr: outcome.best.stderr,
        kappa_star,
        x_star,
        n: outcome.best.n,
        seed: cfg.sampling.seed_test,
        x_max: outcome.x_max,
        cells: &outcome.cells,
    }
    .emit(cfg)?;
    Ok(0)
}

pub fn cmd_upper(cfg: &RunConfig) -> Result<i32> {
    cfg.validate()?;
    let dynamics = cfg.dynamics()?;
    let train = simulate_set(cfg, cfg.sampling.n_train, cfg.sampling.seed_train)?;
    let test = simulate_set(cfg, cfg.sampling.n_test, cfg.sampling.seed_test)?;
    let outer = simulate_set(cfg, cfg.sampling.n_outer, cfg.sampling.seed_outer)?;
    let family = cfg.family();
    let primal = lower_bound_search(&dynamics, &train, &test, family, &cfg.search_config())
        .map_err(|e| anyhow::anyhow!("lower bound (anchor): {e}"))?;
    let dual = upper_bound_search(
        &dynamics,
        &train,
        &outer,
        family,
        &primal,
        cfg.sampling.n_inner,
        cfg.sampling.seed_inner,
        &cfg.dual_config(),
    )
    .map_err(|e| anyhow::anyhow!("upper bound: {e}"))?;
    let (kappa_star, x_star) = outcome_argmax(&dual);
    BoundRecord {
        command: "upper",
        family: cfg.risk.family.name(),
        c: cfg.risk.c,
        alpha: cfg.risk.alpha,
        bias: "high",
        value: dual.best.value,
        stderr: dual.best.stderr,
        kappa_star,
        x_star,
        n: dual.best.n,
        seed: cfg.sampling.seed_outer,
        x_max: dual.x_max,
        cells: &dual.cells,
    }
    .emit(cfg)?;
    Ok(0)
}

/// One row of the four-point penalty sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub c: f64,
    pub lower: f64,
    pub lower_se: f64,
    pub upper: f64,
    pub upper_se: f64,
}

/// Runs lower and upper bounds for `c` in {0, 0.5, 1, 1.5} on shared path
/// sets. Used by the `table1` command and the acceptance checks.
pub fn run_penalty_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let dynamics = cfg.dynamics()?;
    let train = simulate_set(cfg, cfg.sampling.n_train, cfg.sampling.seed_train)?;
    let test = simulate_set(cfg, cfg.sampling.n_test, cfg.sampling.seed_test)?;
    let outer = simulate_set(cfg, cfg.sampling.n_outer, cfg.sampling.seed_outer)?;
    let mut rows = Vec::with_capacity(4);
    for c in [0.0, 0.5, 1.0, 1.5] {
        let family = KusuokaFamily::Semidev { c };
        let primal = lower_bound_search(&dynamics, &train, &test, family, &cfg.search_config())
            .map_err(|e| anyhow::anyhow!("lower bound at c = {c}: {e}"))?;
        let dual = upper_bound_search(
            &dynamics,
            &train,
            &outer,
            family,
            &primal,
            cfg.sampling.n_inner,
            cfg.sampling.seed_inner,
            &cfg.dual_config(),
        )
        .map_err(|e| anyhow::anyhow!("upper bound at c = {c}: {e}"))?;
        rows.push(SweepRow {
            c,
            lower: primal.best.value,
            lower_se: primal.best.stderr,
            upper: dual.best.value,
            upper_se: dual.best.stderr,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut text = String::from("c,lower,lower_se,upper,upper_se\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.c, r.lower, r.lower_se, r.upper, r.upper_se
        ));
    }
    text
}

pub fn cmd_table1(cfg: &RunConfig) -> Result<i32> {
    let rows = run_penalty_sweep(cfg)?;
    println!("{:>5}  {:>9} {:>8}  {:>9} {:>8}", "c", "lower", "(se)", "upper", "(se)");
    for r in &rows {
        println!(
            "{:>5.2}  {:>9.3} ({:>5.3})  {:>9.3} ({:>5.3})",
            r.c, r.lower, r.lower_se, r.upper, r.upper_se
        );
    }
    let csv = sweep_csv(&rows);
    match &cfg.output.csv {
        Some(path) => std::fs::write(path, csv)
            .with_context(|| format!("writing {}", path.display()))?,
        None => {
            println!();
            print!("{csv}");
        }
    }
    Ok(0)
}

pub fn cmd_oracle(
    n_trees: usize,
    max_depth: usize,
    seed: u64,
    inject_corruption: bool,
    json_path: Option<&Path>,
) -> Result<i32> {
    let perturbation = if inject_corruption { 0.01 } else { 0.0 };
    let report = run_battery(n_trees, max_depth, seed, perturbation)
        .map_err(|e| anyhow::anyhow!("oracle battery: {e}"))?;
    let text = serde_json::to_string_pretty(&report).context("serializing report")?;
    println!("{text}");
    if let Some(path) = json_path {
        std::fs::write(path, format!("{text}\n"))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if report.passed { 0 } else { 2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DumpFormat {
    Csv,
    Binary,
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    n_paths: usize,
    seed: u64,
    format: DumpFormat,
    out: Option<&Path>,
) -> Result<i32> {
    cfg.validate()?;
    let paths = simulate_set(cfg, n_paths, seed)?;
    match (format, out) {
        (DumpFormat::Csv, Some(path)) => {
            let mut file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            dump_csv(&paths, &mut file)?;
        }
        (DumpFormat::Csv, None) => {
            let stdout = std::io::stdout();
            dump_csv(&paths, &mut stdout.lock())?;
        }
        (DumpFormat::Binary, Some(path)) => {
            let mut file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            dump_binary(&paths, &mut file)?;
        }
        (DumpFormat::Binary, None) => bail!("binary dumps need --out FILE"),
    }
    Ok(0)
}
