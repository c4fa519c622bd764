//! Regression-based stopping policies and low-biased value estimates.
//!
//! The raw payoff is pushed through a compiled transform (see
//! [`crate::transform`]); a stopping rule is fitted by backward induction,
//! regressing realized continuation values on the dynamics' feature basis;
//! evaluating the fitted rule on an independent path set gives a low-biased
//! estimate of the optimal stopped value. [`lower_bound_search`] wraps the
//! outer maximization over a one-parameter distortion family and the inner
//! minimization over the threshold level `x`.

use crate::distortion::KusuokaFamily;
use crate::error::{Error, Result};
use crate::market::{Dynamics, PathSet};
use crate::measure::mu_from_distortion;
use crate::transform::{TransformedPayoff, ZSpec};
use rayon::prelude::*;
use serde::Serialize;

/// Paths per work unit in parallel passes. Fixed so that floating-point
/// reduction order, and therefore every fitted coefficient, is independent of
/// the thread count.
const CHUNK: usize = 1024;

/// Direction of the estimation bias of a Monte Carlo bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bias {
    Low,
    High,
}

/// A Monte Carlo estimate with its sampling error and provenance.
#[derive(Debug, Clone, Serialize)]
pub struct BoundEstimate {
    pub value: f64,
    /// Sample standard deviation divided by sqrt(n).
    pub stderr: f64,
    pub n: usize,
    pub bias: Bias,
    /// `(family parameter, threshold x)` that produced the value, when the
    /// estimate came out of a search.
    pub argmax: Option<(f64, f64)>,
}

/// A fitted exercise rule: stop at the first date where the transformed
/// payoff reaches the regressed continuation value, always stopping at the
/// last date. Dates `1..n_dates-1` carry one coefficient vector each; date 0
/// is never exercised unless `stop_at_start` is set.
#[derive(Debug, Clone, Serialize)]
pub struct Policy {
    pub train_seed: u64,
    pub n_dates: usize,
    pub n_features: usize,
    /// `betas[j - 1]` is the coefficient vector of date `j`.
    pub betas: Vec<Vec<f64>>,
    pub stop_at_start: bool,
}

impl Policy {
    /// Degenerate rule that exercises at date 0 on every path.
    pub fn always_stop_at_start(n_dates: usize, train_seed: u64) -> Policy {
        Policy { train_seed, n_dates, n_features: 0, betas: Vec::new(), stop_at_start: true }
    }

    /// Whether the rule exercises at `date` (in `1..n_dates-1`) given the
    /// current state and the transformed payoff there. `scratch` must hold
    /// `n_features` slots.
    pub fn stops(
        &self,
        dynamics: &impl Dynamics,
        state: &[f64],
        date: usize,
        exercise: f64,
        scratch: &mut [f64],
    ) -> bool {
        dynamics.features(state, date, exercise, scratch);
        let cont: f64 =
            self.betas[date - 1].iter().zip(scratch.iter()).map(|(b, f)| b * f).sum();
        exercise >= cont
    }
}

/// Raw payoffs of every path at every date, row-major `[path][date]`.
pub(crate) fn payoff_panel(dynamics: &impl Dynamics, paths: &PathSet) -> Vec<f64> {
    let n_dates = paths.n_dates;
    let mut panel = vec![0.0f64; paths.n_paths * n_dates];
    panel
        .par_chunks_mut(CHUNK * n_dates)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let base = chunk_idx * CHUNK;
            for (row, out) in chunk.chunks_mut(n_dates).enumerate() {
                let p = base + row;
                for (j, slot) in out.iter_mut().enumerate() {
                    *slot = dynamics.payoff(paths.state(p, j), j);
                }
            }
        });
    panel
}

/// Fits a stopping rule on training paths by backward induction.
///
/// At each date from the last-but-one down to 1, realized continuation values
/// (the transformed payoff collected by following the already-fitted rule
/// from the next date on) are regressed on the feature basis via ridge-
/// stabilised normal equations (ridge 1e-8); paths where the immediate
/// transformed payoff reaches the fitted continuation value switch to
/// stopping at that date.
pub fn fit_policy(
    dynamics: &impl Dynamics,
    train: &PathSet,
    transform: &TransformedPayoff<f64>,
) -> Result<Policy> {
    let panel = payoff_panel(dynamics, train);
    fit_policy_panel(dynamics, train, &panel, transform)
}

pub(crate) fn fit_policy_panel(
    dynamics: &impl Dynamics,
    train: &PathSet,
    payoffs: &[f64],
    transform: &TransformedPayoff<f64>,
) -> Result<Policy> {
    let nf = dynamics.n_features();
    if nf == 0 {
        return Err(Error::incompatible(
            "dynamics provides no regression features".to_string(),
        ));
    }
    let n = train.n_paths;
    if n < 10 * nf {
        return Err(Error::validation(format!(
            "{n} training paths for {nf} features; need at least {}",
            10 * nf
        )));
    }
    let n_dates = train.n_dates;
    let j_last = n_dates - 1;

    // transformed payoffs at dates 1..=J and features at dates 1..J
    let mut u = vec![0.0f64; n * n_dates];
    let regress_dates = j_last.saturating_sub(1);
    let feats_row = regress_dates * nf;
    let mut feats = vec![0.0f64; n * feats_row];
    u.par_chunks_mut(CHUNK * n_dates)
        .enumerate()
        .for_each(|(chunk_idx, u_chunk)| {
            let base = chunk_idx * CHUNK;
            for (row, u_row) in u_chunk.chunks_mut(n_dates).enumerate() {
                let p = base + row;
                for (j, slot) in u_row.iter_mut().enumerate() {
                    *slot = transform.value(payoffs[p * n_dates + j]);
                }
            }
        });
    if feats_row > 0 {
        feats
            .par_chunks_mut(CHUNK * feats_row)
            .enumerate()
            .for_each(|(chunk_idx, f_chunk)| {
                let base = chunk_idx * CHUNK;
                for (row, f_row) in f_chunk.chunks_mut(feats_row).enumerate() {
                    let p = base + row;
                    for j in 1..j_last {
                        dynamics.features(
                            train.state(p, j),
                            j,
                            u[p * n_dates + j],
                            &mut f_row[(j - 1) * nf..j * nf],
                        );
                    }
                }
            });
    }

    let mut value: Vec<f64> = (0..n).map(|p| u[p * n_dates + j_last]).collect();
    let mut betas: Vec<Vec<f64>> = vec![Vec::new(); regress_dates];

    for j in (1..j_last).rev() {
        // per-chunk partial normal equations, summed in chunk order
        let partials: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|chunk_idx| {
                let lo = chunk_idx * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let mut acc = vec![0.0f64; nf * nf + nf];
                for p in lo..hi {
                    let phi = &feats[p * feats_row + (j - 1) * nf..p * feats_row + j * nf];
                    let target = value[p];
                    for a in 0..nf {
                        let fa = phi[a];
                        let row = &mut acc[a * nf..(a + 1) * nf];
                        for b in a..nf {
                            row[b] += fa * phi[b];
                        }
                    }
                    for a in 0..nf {
                        acc[nf * nf + a] += phi[a] * target;
                    }
                }
                acc
            })
            .collect();
        let mut gram = vec![0.0f64; nf * nf];
        let mut rhs = vec![0.0f64; nf];
        for acc in &partials {
            for a in 0..nf {
                for b in a..nf {
                    gram[a * nf + b] += acc[a * nf + b];
                }
                rhs[a] += acc[nf * nf + a];
            }
        }
        let scale = 1.0 / n as f64;
        for a in 0..nf {
            for b in a..nf {
                gram[a * nf + b] *= scale;
                gram[b * nf + a] = gram[a * nf + b];
            }
            rhs[a] *= scale;
            gram[a * nf + a] += RIDGE;
        }
        let beta = cholesky_solve(&mut gram, &rhs, nf).ok_or_else(|| Error::Regression {
            date: j,
            reason: "normal equations singular despite ridge".to_string(),
        })?;

        value
            .par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(chunk_idx, vals)| {
                let base = chunk_idx * CHUNK;
                for (row, v) in vals.iter_mut().enumerate() {
                    let p = base + row;
                    let phi = &feats[p * feats_row + (j - 1) * nf..p * feats_row + j * nf];
                    let cont: f64 = beta.iter().zip(phi).map(|(b, f)| b * f).sum();
                    let exercise = u[p * n_dates + j];
                    if exercise >= cont {
                        *v = exercise;
                    }
                }
            });
        betas[j - 1] = beta;
    }

    Ok(Policy {
        train_seed: train.seed,
        n_dates,
        n_features: nf,
        betas,
        stop_at_start: false,
    })
}

/// Ridge added to the diagonal of the normal equations.
pub const RIDGE: f64 = 1e-8;

/// Solves the symmetric positive-definite system in place via Cholesky.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    // lower factor written into the lower triangle of `a`
    for k in 0..n {
        let mut d = a[k * n + k];
        for m in 0..k {
            d -= a[k * n + m] * a[k * n + m];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let lkk = d.sqrt();
        a[k * n + k] = lkk;
        for i in k + 1..n {
            let mut s = a[i * n + k];
            for m in 0..k {
                s -= a[i * n + m] * a[k * n + m];
            }
            a[i * n + k] = s / lkk;
        }
    }
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut s = b[i];
        for m in 0..i {
            s -= a[i * n + m] * y[m];
        }
        y[i] = s / a[i * n + i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for m in i + 1..n {
            s -= a[m * n + i] * x[m];
        }
        x[i] = s / a[i * n + i];
    }
    Some(x)
}

/// First date at which the policy stops on one path (dates use the panel
/// convention: payoff row of length `n_dates`).
#[inline]
fn stop_date(
    dynamics: &impl Dynamics,
    paths: &PathSet,
    policy: &Policy,
    transform: &TransformedPayoff<f64>,
    payoff_row: &[f64],
    p: usize,
    scratch: &mut [f64],
) -> usize {
    if policy.stop_at_start {
        return 0;
    }
    let j_last = policy.n_dates - 1;
    for j in 1..j_last {
        let exercise = transform.value(payoff_row[j]);
        if policy.stops(dynamics, paths.state(p, j), j, exercise, scratch) {
            return j;
        }
    }
    j_last
}

/// Evaluates a fitted policy on an independent path set.
///
/// Returns the mean transformed payoff at the policy's stopping dates with
/// its standard error; the estimate is biased low relative to the optimal
/// stopped value because the rule is suboptimal.
pub fn evaluate_policy(
    dynamics: &impl Dynamics,
    test: &PathSet,
    policy: &Policy,
    transform: &TransformedPayoff<f64>,
) -> Result<BoundEstimate> {
    let panel = payoff_panel(dynamics, test);
    evaluate_policy_panel(dynamics, test, &panel, policy, transform)
}

pub(crate) fn evaluate_policy_panel(
    dynamics: &impl Dynamics,
    test: &PathSet,
    payoffs: &[f64],
    policy: &Policy,
    transform: &TransformedPayoff<f64>,
) -> Result<BoundEstimate> {
    if test.seed == policy.train_seed {
        return Err(Error::SeedCollision(format!(
            "test paths share seed {} with training paths",
            test.seed
        )));
    }
    if test.n_dates != policy.n_dates {
        return Err(Error::incompatible(format!(
            "policy fitted on {} dates, paths have {}",
            policy.n_dates, test.n_dates
        )));
    }
    if !policy.stop_at_start && dynamics.n_features() != policy.n_features {
        return Err(Error::incompatible(format!(
            "policy has {} features, dynamics provides {}",
            policy.n_features,
            dynamics.n_features()
        )));
    }
    let n = test.n_paths;
    let n_dates = test.n_dates;
    let mut stopped = vec![0.0f64; n];
    stopped
        .par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(chunk_idx, vals)| {
            let base = chunk_idx * CHUNK;
            let mut scratch = vec![0.0f64; policy.n_features.max(1)];
            for (row, v) in vals.iter_mut().enumerate() {
                let p = base + row;
                let payoff_row = &payoffs[p * n_dates..(p + 1) * n_dates];
                let j = stop_date(dynamics, test, policy, transform, payoff_row, p, &mut scratch);
                *v = transform.value(payoff_row[j]);
            }
        });
    Ok(summarize(&stopped, Bias::Low, None))
}

pub(crate) fn summarize(samples: &[f64], bias: Bias, argmax: Option<(f64, f64)>) -> BoundEstimate {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    BoundEstimate { value: mean, stderr, n, bias, argmax }
}

/// Settings of [`lower_bound_search`].
#[derive(Debug, Clone, Serialize)]
pub struct SearchConfig {
    /// Points of the coarse threshold grid on `[0, x_max]`.
    pub coarse_points: usize,
    /// Golden-section tolerance as a fraction of `x_max`.
    pub x_tol_rel: f64,
    /// Quantile of pooled raw payoffs defining `x_max`.
    pub x_max_quantile: f64,
    /// Explicit family parameter grid; `None` selects the family default
    /// (kappa in {0.05, ..., 0.95} capped at 1/c, or 19 equispaced gammas).
    pub param_grid: Option<Vec<f64>>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { coarse_points: 25, x_tol_rel: 1e-3, x_max_quantile: 0.995, param_grid: None }
    }
}

/// One evaluated family point: the threshold minimum found for `param`.
#[derive(Debug, Clone, Serialize)]
pub struct SearchCell {
    pub param: f64,
    pub x_star: f64,
    pub value: f64,
    pub stderr: f64,
}

/// Result of a lower-bound search: the selected estimate plus the per-family
/// cells (used by the dual search to anchor its thresholds) and the threshold
/// cap that was searched.
#[derive(Debug, Clone, Serialize)]
pub struct SearchOutcome {
    pub best: BoundEstimate,
    pub cells: Vec<SearchCell>,
    pub x_max: f64,
}

/// Default parameter grid of a family.
pub fn default_param_grid(family: KusuokaFamily<f64>) -> Vec<f64> {
    match family {
        KusuokaFamily::Semidev { c } => {
            if c == 0.0 {
                // value does not depend on the kink; one representative point
                return vec![0.5];
            }
            (1..=19)
                .map(|k| 0.05 * k as f64)
                .filter(|&kappa| c * kappa <= 1.0 + 1e-12)
                .collect()
        }
        KusuokaFamily::Expectile { alpha } => {
            let lb = (1.0 - alpha) / alpha;
            let m = 19;
            (0..m).map(|i| lb + (1.0 - lb) * i as f64 / (m - 1) as f64).collect()
        }
    }
}

pub(crate) fn transform_for(
    family: KusuokaFamily<f64>,
    param: f64,
    x: f64,
) -> Result<TransformedPayoff<f64>> {
    let g = family.distortion(param)?;
    let mu = mu_from_distortion(&g)?;
    let interior = mu.atoms().map_or(0, |a| a.iter().filter(|&&(l, _)| l < 1.0).count());
    let z = ZSpec::finite_levels(vec![x; interior])?;
    TransformedPayoff::new(&mu, &z)
}

/// Pooled raw-payoff quantile used as the threshold cap.
fn threshold_cap(payoffs: &[f64], quantile: f64) -> f64 {
    let mut pool: Vec<f64> = payoffs.to_vec();
    pool.sort_by(|a, b| a.total_cmp(b));
    let k = ((quantile * pool.len() as f64).ceil() as usize).clamp(1, pool.len());
    pool[k - 1].max(0.0)
}

/// Maximizes the low-biased estimate over a distortion family.
///
/// For every grid value of the family parameter, the threshold `x` is
/// minimized over `[0, x_max]`: a coarse grid of `coarse_points` values seeds
/// a golden-section refinement to `x_tol_rel * x_max`, each objective
/// evaluation fitting a policy on `train` and evaluating it on `test` (the
/// path sets are reused across all cells, so the comparisons ride on common
/// random numbers). Ties in `x` resolve toward the smaller threshold. The
/// returned estimate is the maximum over the family of the per-parameter
/// minima.
pub fn lower_bound_search(
    dynamics: &impl Dynamics,
    train: &PathSet,
    test: &PathSet,
    family: KusuokaFamily<f64>,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    if cfg.coarse_points < 2 {
        return Err(Error::validation("need at least two coarse grid points".to_string()));
    }
    if !(cfg.x_tol_rel > 0.0 && cfg.x_tol_rel < 1.0) {
        return Err(Error::validation(format!(
            "x tolerance fraction {} outside (0,1)",
            cfg.x_tol_rel
        )));
    }
    if !(cfg.x_max_quantile > 0.0 && cfg.x_max_quantile <= 1.0) {
        return Err(Error::validation(format!(
            "quantile {} outside (0,1]",
            cfg.x_max_quantile
        )));
    }
    let grid = match &cfg.param_grid {
        Some(g) => g.clone(),
        None => default_param_grid(family),
    };
    if grid.is_empty() {
        return Err(Error::validation("empty family parameter grid".to_string()));
    }
    for &param in &grid {
        family.distortion(param)?;
    }

    let train_panel = payoff_panel(dynamics, train);
    let test_panel = payoff_panel(dynamics, test);
    let x_max = threshold_cap(&train_panel, cfg.x_max_quantile);

    let objective = |param: f64, x: f64| -> Result<(f64, f64)> {
        let tp = transform_for(family, param, x)?;
        let policy = fit_policy_panel(dynamics, train, &train_panel, &tp)?;
        let est = evaluate_policy_panel(dynamics, test, &test_panel, &policy, &tp)?;
        Ok((est.value, est.stderr))
    };

    let coarse_xs: Vec<f64> = if x_max > 0.0 {
        (0..cfg.coarse_points)
            .map(|i| x_max * i as f64 / (cfg.coarse_points - 1) as f64)
            .collect()
    } else {
        vec![0.0]
    };

    let cells: Vec<SearchCell> = grid
        .par_iter()
        .map(|&param| -> Result<SearchCell> {
            let mut best = (f64::INFINITY, 0.0, 0.0); // (value, x, stderr)
            let track = |x: f64, value: f64, stderr: f64, best: &mut (f64, f64, f64)| {
                if value < best.0 || (value == best.0 && x < best.1) {
                    *best = (value, x, stderr);
                }
            };
            let mut coarse_vals = Vec::with_capacity(coarse_xs.len());
            for &x in &coarse_xs {
                let (v, se) = objective(param, x)?;
                coarse_vals.push(v);
                track(x, v, se, &mut best);
            }
            if coarse_xs.len() > 1 {
                let i_star = coarse_vals
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                    .map(|(i, _)| i)
                    .expect("nonempty");
                let mut lo = coarse_xs[i_star.saturating_sub(1)];
                let mut hi = coarse_xs[(i_star + 1).min(coarse_xs.len() - 1)];
                let tol = cfg.x_tol_rel * x_max;
                let inv_phi = 0.618_033_988_749_894_9_f64;
                let mut x1 = hi - inv_phi * (hi - lo);
                let mut x2 = lo + inv_phi * (hi - lo);
                let (mut f1, se1) = objective(param, x1)?;
                let (mut f2, se2) = objective(param, x2)?;
                track(x1, f1, se1, &mut best);
                track(x2, f2, se2, &mut best);
                while hi - lo > tol {
                    if f1 <= f2 {
                        hi = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = hi - inv_phi * (hi - lo);
                        let (v, se) = objective(param, x1)?;
                        f1 = v;
                        track(x1, v, se, &mut best);
                    } else {
                        lo = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = lo + inv_phi * (hi - lo);
                        let (v, se) = objective(param, x2)?;
                        f2 = v;
                        track(x2, v, se, &mut best);
                    }
                }
            }
            Ok(SearchCell { param, x_star: best.1, value: best.0, stderr: best.2 })
        })
        .collect::<Result<_>>()?;

    let winner = cells
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.value.total_cmp(&b.1.value).then(b.0.cmp(&a.0)))
        .map(|(_, c)| c.clone())
        .expect("nonempty grid");

    let best = BoundEstimate {
        value: winner.value,
        stderr: winner.stderr,
        n: test.n_paths,
        bias: Bias::Low,
        argmax: Some((winner.param, winner.x_star)),
    };
    Ok(SearchOutcome { best, cells, x_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate, ExerciseGrid, GbmDynamics, GbmParams};
    use crate::rng::Substream;

    fn small_params() -> GbmParams {
        GbmParams {
            d: 2,
            s0: 90.0,
            r: 0.05,
            delta: 0.1,
            sigma: 0.2,
            strike: 100.0,
            horizon: 3.0,
            j_max: 4,
        }
    }

    fn dynamics() -> GbmDynamics {
        let p = small_params();
        GbmDynamics::new(p, ExerciseGrid::equally_spaced(p.horizon, p.j_max).unwrap()).unwrap()
    }

    #[test]
    fn cholesky_solves_spd_systems() {
        // A = L L^T with known solution
        let mut a = vec![4.0, 2.0, 0.0, 2.0, 5.0, 1.0, 0.0, 1.0, 3.0];
        let x_true = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| a[i * 3 + j] * x_true[j]).sum())
            .collect();
        let x = cholesky_solve(&mut a, &b, 3).unwrap();
        for (got, want) in x.iter().zip(x_true) {
            assert!((got - want).abs() < 1e-12);
        }
        let mut singular = vec![1.0, 1.0, 1.0, 1.0];
        assert!(cholesky_solve(&mut singular, &[1.0, 1.0], 2).is_none());
    }

    #[test]
    fn constant_payoff_gives_constant_continuation() {
        // sigma = 0, r = delta = 0: prices frozen at s0, payoff constant
        let params = GbmParams {
            sigma: 0.0,
            r: 0.0,
            delta: 0.0,
            s0: 101.0,
            ..small_params()
        };
        let grid = ExerciseGrid::equally_spaced(params.horizon, params.j_max).unwrap();
        let dynamics = GbmDynamics::new(params, grid).unwrap();
        let train = simulate(&dynamics, 200, 1).unwrap();
        let tp = TransformedPayoff::plain();
        let policy = fit_policy(&dynamics, &train, &tp).unwrap();
        let mut phi = vec![0.0f64; 12];
        dynamics.features(train.state(0, 1), 1, 1.0, &mut phi);
        for beta in &policy.betas {
            let cont: f64 = beta.iter().zip(&phi).map(|(b, f)| b * f).sum();
            assert!((cont - 1.0).abs() < 1e-8, "continuation {cont}");
        }
        let test = simulate(&dynamics, 50, 2).unwrap();
        let est = evaluate_policy(&dynamics, &test, &policy, &tp).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.bias, Bias::Low);
    }

    #[test]
    fn single_exercise_date_needs_no_regression() {
        let params = GbmParams { j_max: 1, ..small_params() };
        let grid = ExerciseGrid::equally_spaced(params.horizon, 1).unwrap();
        let dynamics = GbmDynamics::new(params, grid).unwrap();
        let train = simulate(&dynamics, 150, 3).unwrap();
        let tp = TransformedPayoff::plain();
        let policy = fit_policy(&dynamics, &train, &tp).unwrap();
        assert!(policy.betas.is_empty());
        let test = simulate(&dynamics, 150, 4).unwrap();
        let est = evaluate_policy(&dynamics, &test, &policy, &tp).unwrap();
        // every path stops at the single terminal date
        let panel = payoff_panel(&dynamics, &test);
        let mean: f64 = (0..150).map(|p| panel[p * 2 + 1]).sum::<f64>() / 150.0;
        assert!((est.value - mean).abs() < 1e-12);
    }

    #[test]
    fn seed_collision_is_rejected() {
        let d = dynamics();
        let train = simulate(&d, 200, 7).unwrap();
        let tp = TransformedPayoff::plain();
        let policy = fit_policy(&d, &train, &tp).unwrap();
        assert!(matches!(
            evaluate_policy(&d, &train, &policy, &tp),
            Err(Error::SeedCollision(_))
        ));
    }

    #[test]
    fn always_stop_at_start_returns_initial_payoff() {
        let d = dynamics();
        let test = simulate(&d, 40, 5).unwrap();
        let policy = Policy::always_stop_at_start(test.n_dates, 0);
        let tp = TransformedPayoff::plain();
        let est = evaluate_policy(&d, &test, &policy, &tp).unwrap();
        // payoff at t_0 is 0 at s0 = 90 < K
        assert_eq!(est.value, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn too_few_paths_is_rejected() {
        let d = dynamics();
        let train = simulate(&d, 40, 7).unwrap();
        let tp = TransformedPayoff::plain();
        assert!(matches!(fit_policy(&d, &train, &tp), Err(Error::Validation(_))));
    }

    /// Two-date dynamics whose single effective payoff is 0 or 10 with equal
    /// probability: a static problem in disguise.
    struct CoinFlip;

    impl Dynamics for CoinFlip {
        fn n_dates(&self) -> usize {
            2
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn initial_state(&self, out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn step(&self, state: &mut [f64], _from: usize, rng: &mut Substream) {
            state[0] = if rng.next_uniform() < 0.5 { 0.0 } else { 10.0 };
        }
        fn payoff(&self, state: &[f64], date: usize) -> f64 {
            if date == 0 {
                0.0
            } else {
                state[0]
            }
        }
        fn n_features(&self) -> usize {
            1
        }
        fn features(&self, _state: &[f64], _date: usize, _tp: f64, out: &mut [f64]) {
            out[0] = 1.0;
        }
    }

    #[test]
    fn static_search_recovers_semideviation() {
        // E[X] + c E[(X - EX)^+] for X uniform on {0, 10} and c = 1 is 7.5;
        // the kink probability P(X > EX) = 0.5 sits on the default grid.
        let d = CoinFlip;
        let train = simulate(&d, 4000, 11).unwrap();
        let test = simulate(&d, 4000, 12).unwrap();
        let out = lower_bound_search(
            &d,
            &train,
            &test,
            KusuokaFamily::Semidev { c: 1.0 },
            &SearchConfig::default(),
        )
        .unwrap();
        // sampling error of the 0/10 coin at n = 4000 is ~0.08
        assert!(
            (out.best.value - 7.5).abs() < 4.0 * out.best.stderr.max(0.05),
            "value {} stderr {}",
            out.best.value,
            out.best.stderr
        );
        let (kappa, _) = out.best.argmax.unwrap();
        assert!((kappa - 0.5).abs() < 0.101, "kappa* = {kappa}");
    }

    #[test]
    fn c_zero_search_degenerates_to_plain_policy() {
        let d = dynamics();
        let train = simulate(&d, 2000, 21).unwrap();
        let test = simulate(&d, 2000, 22).unwrap();
        let out = lower_bound_search(
            &d,
            &train,
            &test,
            KusuokaFamily::Semidev { c: 0.0 },
            &SearchConfig::default(),
        )
        .unwrap();
        let tp = TransformedPayoff::plain();
        let policy = fit_policy(&d, &train, &tp).unwrap();
        let plain = evaluate_policy(&d, &test, &policy, &tp).unwrap();
        assert!((out.best.value - plain.value).abs() < 1e-12);
        assert_eq!(out.best.argmax.unwrap().1, 0.0, "ties must resolve to x = 0");
    }

    #[test]
    fn stopping_decisions_ignore_additive_constants() {
        // the transform's constant term shifts exercise and continuation alike
        let d = dynamics();
        let train = simulate(&d, 2000, 31).unwrap();
        let test = simulate(&d, 500, 32).unwrap();
        let tp = transform_for(KusuokaFamily::Semidev { c: 1.0 }, 0.4, 20.0).unwrap();
        let shifted = {
            // same kinks and slope, constant term removed
            let base = tp.base();
            move |y: f64| tp.value(y) - base
        };
        let tp_plain = transform_for(KusuokaFamily::Semidev { c: 1.0 }, 0.4, 20.0).unwrap();

        let policy_a = fit_policy(&d, &train, &tp_plain).unwrap();

        // fit against the shifted transform by rebuilding the panel by hand
        struct Shifted<'a, D: Dynamics, F: Fn(f64) -> f64 + Sync> {
            inner: &'a D,
            map: F,
        }
        impl<D: Dynamics, F: Fn(f64) -> f64 + Sync> Dynamics for Shifted<'_, D, F> {
            fn n_dates(&self) -> usize {
                self.inner.n_dates()
            }
            fn state_dim(&self) -> usize {
                self.inner.state_dim()
            }
            fn initial_state(&self, out: &mut [f64]) {
                self.inner.initial_state(out)
            }
            fn step(&self, state: &mut [f64], from: usize, rng: &mut Substream) {
                self.inner.step(state, from, rng)
            }
            fn payoff(&self, state: &[f64], date: usize) -> f64 {
                (self.map)(self.inner.payoff(state, date))
            }
            fn n_features(&self) -> usize {
                self.inner.n_features()
            }
            fn features(&self, state: &[f64], date: usize, tp: f64, out: &mut [f64]) {
                self.inner.features(state, date, tp, out)
            }
        }
        let shifted_dyn = Shifted { inner: &d, map: shifted };
        let policy_b = fit_policy(&shifted_dyn, &train, &TransformedPayoff::plain()).unwrap();

        // identical stopping dates on every test path
        let panel = payoff_panel(&d, &test);
        let mut scratch = vec![0.0; 12];
        for p in 0..test.n_paths {
            let row = &panel[p * test.n_dates..(p + 1) * test.n_dates];
            let ja = stop_date(&d, &test, &policy_a, &tp_plain, row, p, &mut scratch);
            let shifted_row: Vec<f64> =
                row.iter().map(|&y| tp_plain.value(y) - tp_plain.base()).collect();
            let jb = stop_date(
                &shifted_dyn,
                &test,
                &policy_b,
                &TransformedPayoff::plain(),
                &shifted_row,
                p,
                &mut scratch,
            );
            assert_eq!(ja, jb, "path {p} stops at {ja} vs {jb}");
        }
    }
}
