//! Run configuration: JSON-loadable, flag-overridable, validated up front.

use anyhow::{bail, Context, Result};
use riskstop::distortion::KusuokaFamily;
use riskstop::dual::DualSearchConfig;
use riskstop::market::{ExerciseGrid, GbmDynamics, GbmParams};
use riskstop::primal::SearchConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Market model completion used throughout: a two-asset max-call with nine
/// exercise dates after inception.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub s0: f64,
    pub r: f64,
    pub delta: f64,
    pub sigma: f64,
    pub strike: f64,
    pub horizon: f64,
    pub j_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 2,
            s0: 90.0,
            r: 0.05,
            delta: 0.1,
            sigma: 0.2,
            strike: 100.0,
            horizon: 3.0,
            j_max: 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Semidev,
    Expectile,
}

impl FamilyKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "semidev" => Ok(FamilyKind::Semidev),
            "expectile" => Ok(FamilyKind::Expectile),
            other => bail!("unknown risk family {other:?}; use semidev or expectile"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Semidev => "semidev",
            FamilyKind::Expectile => "expectile",
        }
    }
}

/// Risk functional: semideviation penalty strength `c`, or expectile level
/// `alpha`, depending on `family`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub family: FamilyKind,
    pub c: f64,
    pub alpha: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig { family: FamilyKind::Semidev, c: 1.0, alpha: 0.75 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed_train: u64,
    pub seed_test: u64,
    pub seed_outer: u64,
    pub seed_inner: u64,
    pub antithetic: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_train: 10_000,
            n_test: 10_000,
            n_outer: 10_000,
            n_inner: 1_000,
            seed_train: 271_828,
            seed_test: 314_159,
            seed_outer: 602_214,
            seed_inner: 662_607,
            antithetic: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub coarse_points: usize,
    pub x_tol_rel: f64,
    pub x_max_quantile: f64,
    /// Explicit family parameter grid; omitted selects the family default.
    pub param_grid: Option<Vec<f64>>,
    pub sweep_family: bool,
    pub refine_x: bool,
    pub refine_span_rel: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            coarse_points: 25,
            x_tol_rel: 1e-3,
            x_max_quantile: 0.995,
            param_grid: None,
            sweep_family: false,
            refine_x: false,
            refine_span_rel: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Copy the JSON result to this file in addition to stdout.
    pub json: Option<PathBuf>,
    /// Append a CSV row (bound commands) or write the CSV table (table1).
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub risk: RiskConfig,
    pub sampling: SamplingConfig,
    pub search: SearchSettings,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Reads a JSON config file, or the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let cfg: RunConfig = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gbm_params()
            .validate()
            .map_err(|e| anyhow::anyhow!("model: {e}"))?;
        let s = &self.sampling;
        for (name, n) in [
            ("n_train", s.n_train),
            ("n_test", s.n_test),
            ("n_outer", s.n_outer),
            ("n_inner", s.n_inner),
        ] {
            if n < 1 {
                bail!("sampling.{name} must be at least 1");
            }
        }
        let seeds = [
            ("seed_train", s.seed_train),
            ("seed_test", s.seed_test),
            ("seed_outer", s.seed_outer),
            ("seed_inner", s.seed_inner),
        ];
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                if seeds[i].1 == seeds[j].1 {
                    bail!(
                        "sampling.{} and sampling.{} must differ, both are {}",
                        seeds[i].0,
                        seeds[j].0,
                        seeds[i].1
                    );
                }
            }
        }
        if !(self.risk.c >= 0.0 && self.risk.c.is_finite()) {
            bail!("risk.c = {} must be finite and >= 0", self.risk.c);
        }
        if !(self.risk.alpha > 0.5 && self.risk.alpha < 1.0) {
            bail!("risk.alpha = {} must lie in (1/2, 1)", self.risk.alpha);
        }
        let q = &self.search;
        if q.coarse_points < 2 {
            bail!("search.coarse_points must be at least 2");
        }
        if !(q.x_tol_rel > 0.0 && q.x_tol_rel < 1.0) {
            bail!("search.x_tol_rel = {} outside (0, 1)", q.x_tol_rel);
        }
        if !(q.x_max_quantile > 0.0 && q.x_max_quantile <= 1.0) {
            bail!("search.x_max_quantile = {} outside (0, 1]", q.x_max_quantile);
        }
        if !(q.refine_span_rel > 0.0) {
            bail!("search.refine_span_rel = {} must be positive", q.refine_span_rel);
        }
        if self.sampling.antithetic && self.model_paths_odd() {
            bail!("antithetic sampling needs even path counts");
        }
        Ok(())
    }

    fn model_paths_odd(&self) -> bool {
        let s = &self.sampling;
        s.n_train % 2 != 0 || s.n_test % 2 != 0 || s.n_outer % 2 != 0
    }

    pub fn gbm_params(&self) -> GbmParams {
        let m = &self.model;
        GbmParams {
            d: m.d,
            s0: m.s0,
            r: m.r,
            delta: m.delta,
            sigma: m.sigma,
            strike: m.strike,
            horizon: m.horizon,
            j_max: m.j_max,
        }
    }

    pub fn dynamics(&self) -> Result<GbmDynamics> {
        let params = self.gbm_params();
        let grid = ExerciseGrid::equally_spaced(params.horizon, params.j_max)
            .map_err(|e| anyhow::anyhow!("grid: {e}"))?;
        GbmDynamics::new(params, grid).map_err(|e| anyhow::anyhow!("model: {e}"))
    }

    pub fn family(&self) -> KusuokaFamily<f64> {
        match self.risk.family {
            FamilyKind::Semidev => KusuokaFamily::Semidev { c: self.risk.c },
            FamilyKind::Expectile => KusuokaFamily::Expectile { alpha: self.risk.alpha },
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            coarse_points: self.search.coarse_points,
            x_tol_rel: self.search.x_tol_rel,
            x_max_quantile: self.search.x_max_quantile,
            param_grid: self.search.param_grid.clone(),
        }
    }

    pub fn dual_config(&self) -> DualSearchConfig {
        DualSearchConfig {
            sweep_family: self.search.sweep_family,
            refine_x: self.search.refine_x,
            refine_span_rel: self.search.refine_span_rel,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn duplicate_seeds_are_refused() {
        let mut cfg = RunConfig::default();
        cfg.sampling.seed_test = cfg.sampling.seed_train;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("seed_train"), "{err}");
    }

    #[test]
    fn unknown_fields_are_diagnosed() {
        let err = serde_json::from_str::<RunConfig>(r#"{"sampling":{"n_trian":5}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("n_trian"), "{err}");
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.sampling.seed_train, cfg.sampling.seed_train);
        assert_eq!(back.model.j_max, cfg.model.j_max);
    }
}
