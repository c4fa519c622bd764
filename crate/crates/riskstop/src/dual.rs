//! Nested-simulation martingale and high-biased value estimates.
//!
//! Along each outer path, conditional continuation values of a fitted policy
//! are estimated by inner simulation; the centered one-step differences form
//! an approximate Doob martingale `M`. The mean over outer paths of the
//! pathwise maximum of `U_j - M_j` is then biased high relative to the
//! optimal stopped value of the transformed payoff, whatever the quality of
//! the policy or the inner estimates.

use crate::error::{Error, Result};
use crate::market::{Dynamics, PathSet};
use crate::primal::{
    fit_policy_panel, payoff_panel, summarize, transform_for, Bias, BoundEstimate, Policy,
    SearchCell, SearchOutcome,
};
use crate::rng::Substream;
use crate::transform::TransformedPayoff;
use rayon::prelude::*;
use serde::Serialize;

/// Outer paths per parallel work unit. Rows are independent, so this only
/// balances load; results do not depend on it.
const CHUNK: usize = 8;

/// Martingale increments estimated along a set of outer paths.
///
/// `increments[p * n_dates + j]` holds the one-step difference at date `j`
/// (slot 0 is zero); partial sums give `M_j` with `M_0 = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleEstimate {
    pub n_paths: usize,
    pub n_dates: usize,
    pub n_inner: usize,
    pub seed: u64,
    pub increments: Vec<f64>,
}

/// Estimates the policy's Doob martingale increments by nested simulation.
///
/// For each outer path and date `j >= 1`, the date-`j` policy value (the
/// realized transformed payoff if the policy stops at `j`, else the inner
/// average of the transformed payoff at the policy's first stop after `j`) is
/// centered by the inner average launched from the date `j-1` state. Inner
/// substreams derive from `(seed, outer path, launch date, inner index)`, so
/// the estimate is reproducible under any thread count.
pub fn build_martingale(
    dynamics: &impl Dynamics,
    outer: &PathSet,
    policy: &Policy,
    transform: &TransformedPayoff<f64>,
    n_inner: usize,
    seed: u64,
) -> Result<MartingaleEstimate> {
    if n_inner == 0 {
        return Err(Error::validation("need at least one inner path".to_string()));
    }
    if seed == outer.seed || seed == policy.train_seed {
        return Err(Error::SeedCollision(format!(
            "inner seed {seed} collides with outer or training paths"
        )));
    }
    if outer.seed == policy.train_seed {
        return Err(Error::SeedCollision(format!(
            "outer paths share seed {} with training paths",
            outer.seed
        )));
    }
    if outer.n_dates != policy.n_dates {
        return Err(Error::incompatible(format!(
            "policy fitted on {} dates, paths have {}",
            policy.n_dates, outer.n_dates
        )));
    }
    if policy.stop_at_start {
        return Err(Error::incompatible(
            "a rule stopping at date 0 leaves no continuation values to estimate".to_string(),
        ));
    }
    if dynamics.n_features() != policy.n_features {
        return Err(Error::incompatible(format!(
            "policy has {} features, dynamics provides {}",
            policy.n_features,
            dynamics.n_features()
        )));
    }
    let n = outer.n_paths;
    let n_dates = outer.n_dates;
    let j_last = n_dates - 1;
    let mut increments = vec![0.0f64; n * n_dates];
    increments
        .par_chunks_mut(CHUNK * n_dates)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let mut state = vec![0.0f64; dynamics.state_dim()];
            let mut scratch = vec![0.0f64; policy.n_features.max(1)];
            let mut u_row = vec![0.0f64; n_dates];
            let mut stops = vec![false; n_dates];
            let mut c_vals = vec![0.0f64; n_dates + 1];
            let base = chunk_idx * CHUNK;
            for (row, inc_row) in chunk.chunks_mut(n_dates).enumerate() {
                let p = base + row;
                for (j, u) in u_row.iter_mut().enumerate() {
                    *u = transform.value(dynamics.payoff(outer.state(p, j), j));
                }
                for j in 1..j_last {
                    stops[j] = policy.stops(dynamics, outer.state(p, j), j, u_row[j], &mut scratch);
                }
                if j_last >= 1 {
                    stops[j_last] = true;
                }
                for j0 in 0..j_last {
                    let mut acc = 0.0f64;
                    for i in 0..n_inner {
                        let mut rng = Substream::new(seed, &[p as u64, j0 as u64, i as u64]);
                        state.copy_from_slice(outer.state(p, j0));
                        for k in j0 + 1..=j_last {
                            dynamics.step(&mut state, k - 1, &mut rng);
                            let u = transform.value(dynamics.payoff(&state, k));
                            if k == j_last
                                || policy.stops(dynamics, &state, k, u, &mut scratch)
                            {
                                acc += u;
                                break;
                            }
                        }
                    }
                    c_vals[j0 + 1] = acc / n_inner as f64;
                }
                for j in 1..=j_last {
                    let v_j = if stops[j] { u_row[j] } else { c_vals[j + 1] };
                    inc_row[j] = v_j - c_vals[j];
                }
            }
        });
    Ok(MartingaleEstimate { n_paths: n, n_dates, n_inner, seed, increments })
}

/// High-biased estimate: mean over outer paths of `max_j (U_j - M_j)`, the
/// maximum running over all dates including 0 where `M_0 = 0`.
pub fn upper_bound(
    dynamics: &impl Dynamics,
    outer: &PathSet,
    mart: &MartingaleEstimate,
    transform: &TransformedPayoff<f64>,
) -> Result<BoundEstimate> {
    if mart.n_paths != outer.n_paths || mart.n_dates != outer.n_dates {
        return Err(Error::incompatible(format!(
            "martingale covers {}x{} paths, outer set is {}x{}",
            mart.n_paths, mart.n_dates, outer.n_paths, outer.n_dates
        )));
    }
    if mart.seed == outer.seed {
        return Err(Error::SeedCollision(format!(
            "martingale inner seed {} collides with outer paths",
            mart.seed
        )));
    }
    let n_dates = outer.n_dates;
    let mut gaps = vec![0.0f64; outer.n_paths];
    gaps.par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let base = chunk_idx * CHUNK;
            for (row, out) in chunk.iter_mut().enumerate() {
                let p = base + row;
                let inc_row = &mart.increments[p * n_dates..(p + 1) * n_dates];
                let mut m = 0.0f64;
                let mut gap = transform.value(dynamics.payoff(outer.state(p, 0), 0));
                for j in 1..n_dates {
                    m += inc_row[j];
                    let u = transform.value(dynamics.payoff(outer.state(p, j), j));
                    gap = gap.max(u - m);
                }
                *out = gap;
            }
        });
    Ok(summarize(&gaps, Bias::High, None))
}

/// Settings of [`upper_bound_search`].
#[derive(Debug, Clone, Serialize)]
pub struct DualSearchConfig {
    /// Evaluate every family cell of the lower-bound search instead of only
    /// its winning parameter. Costs one nested simulation per cell.
    pub sweep_family: bool,
    /// Refine each anchored threshold over a local 5-point grid, keeping the
    /// smallest upper bound.
    pub refine_x: bool,
    /// Half-width of the refinement grid as a fraction of the lower-bound
    /// search's threshold cap.
    pub refine_span_rel: f64,
}

impl Default for DualSearchConfig {
    fn default() -> Self {
        DualSearchConfig { sweep_family: false, refine_x: false, refine_span_rel: 0.05 }
    }
}

/// High-biased counterpart of [`crate::primal::lower_bound_search`].
///
/// Fixing the threshold at a value found by the lower-bound search keeps the
/// estimate biased high for that family member, so by default one nested
/// simulation at the winning `(parameter, x*)` suffices; `sweep_family` runs
/// one per family cell and takes the largest, `refine_x` additionally takes
/// the smallest bound over a local threshold grid per cell.
#[allow(clippy::too_many_arguments)]
pub fn upper_bound_search(
    dynamics: &impl Dynamics,
    train: &PathSet,
    outer: &PathSet,
    family: crate::distortion::KusuokaFamily<f64>,
    primal: &SearchOutcome,
    n_inner: usize,
    inner_seed: u64,
    cfg: &DualSearchConfig,
) -> Result<SearchOutcome> {
    let (best_param, best_x) = primal.best.argmax.ok_or_else(|| {
        Error::validation("lower-bound outcome carries no (parameter, x) anchor".to_string())
    })?;
    if !(cfg.refine_span_rel > 0.0) {
        return Err(Error::validation(format!(
            "refinement span fraction {} must be positive",
            cfg.refine_span_rel
        )));
    }
    let anchors: Vec<(f64, f64)> = if cfg.sweep_family {
        if primal.cells.is_empty() {
            return Err(Error::validation("lower-bound outcome has no cells".to_string()));
        }
        primal.cells.iter().map(|c| (c.param, c.x_star)).collect()
    } else {
        vec![(best_param, best_x)]
    };

    let train_panel = payoff_panel(dynamics, train);
    let mut cells = Vec::with_capacity(anchors.len());
    for (param, x_anchor) in anchors {
        let xs: Vec<f64> = if cfg.refine_x {
            let h = cfg.refine_span_rel * primal.x_max;
            let mut grid: Vec<f64> = (-2..=2)
                .map(|k| (x_anchor + k as f64 * h).clamp(0.0, primal.x_max))
                .collect();
            grid.dedup();
            grid
        } else {
            vec![x_anchor]
        };
        let mut best: Option<(f64, f64, f64)> = None; // (value, x, stderr)
        for &x in &xs {
            let tp = transform_for(family, param, x)?;
            let policy = fit_policy_panel(dynamics, train, &train_panel, &tp)?;
            let mart = build_martingale(dynamics, outer, &policy, &tp, n_inner, inner_seed)?;
            let est = upper_bound(dynamics, outer, &mart, &tp)?;
            let replace = match best {
                None => true,
                Some((v, bx, _)) => est.value < v || (est.value == v && x < bx),
            };
            if replace {
                best = Some((est.value, x, est.stderr));
            }
        }
        let (value, x_star, stderr) = best.expect("nonempty threshold grid");
        cells.push(SearchCell { param, x_star, value, stderr });
    }

    let winner = cells
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.value.total_cmp(&b.1.value).then(b.0.cmp(&a.0)))
        .map(|(_, c)| c.clone())
        .expect("nonempty anchor list");
    let best = BoundEstimate {
        value: winner.value,
        stderr: winner.stderr,
        n: outer.n_paths,
        bias: Bias::High,
        argmax: Some((winner.param, winner.x_star)),
    };
    Ok(SearchOutcome { best, cells, x_max: primal.x_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortion::KusuokaFamily;
    use crate::market::{simulate, ExerciseGrid, GbmDynamics, GbmParams};
    use crate::primal::{evaluate_policy, fit_policy, lower_bound_search, SearchConfig};

    fn flat_growth_dynamics() -> GbmDynamics {
        // sigma = 0 with positive drift: the discounted payoff rises along
        // the one deterministic path, so stopping last is optimal
        let params = GbmParams {
            d: 2,
            s0: 120.0,
            r: 0.05,
            delta: 0.0,
            sigma: 0.0,
            strike: 100.0,
            horizon: 3.0,
            j_max: 4,
        };
        let grid = ExerciseGrid::equally_spaced(params.horizon, params.j_max).unwrap();
        GbmDynamics::new(params, grid).unwrap()
    }

    fn noisy_dynamics(j_max: usize) -> GbmDynamics {
        let params = GbmParams {
            d: 2,
            s0: 90.0,
            r: 0.05,
            delta: 0.1,
            sigma: 0.2,
            strike: 100.0,
            horizon: 3.0,
            j_max,
        };
        let grid = ExerciseGrid::equally_spaced(params.horizon, params.j_max).unwrap();
        GbmDynamics::new(params, grid).unwrap()
    }

    #[test]
    fn deterministic_dynamics_gives_zero_increments_and_zero_gap() {
        let d = flat_growth_dynamics();
        let train = simulate(&d, 150, 1).unwrap();
        let outer = simulate(&d, 20, 2).unwrap();
        let tp = TransformedPayoff::plain();
        let policy = fit_policy(&d, &train, &tp).unwrap();
        let mart = build_martingale(&d, &outer, &policy, &tp, 7, 3).unwrap();
        for (k, inc) in mart.increments.iter().enumerate() {
            assert!(inc.abs() < 1e-12, "increment {k} = {inc}");
        }
        let upper = upper_bound(&d, &outer, &mart, &tp).unwrap();
        let lower = evaluate_policy(&d, &outer, &policy, &tp).unwrap();
        assert!((upper.value - lower.value).abs() < 1e-9);
        assert_eq!(upper.bias, Bias::High);
        assert!(upper.stderr < 1e-12);
    }

    #[test]
    fn constant_payoff_increments_vanish_exactly() {
        struct ConstantOne;
        impl Dynamics for ConstantOne {
            fn n_dates(&self) -> usize {
                4
            }
            fn state_dim(&self) -> usize {
                1
            }
            fn initial_state(&self, out: &mut [f64]) {
                out[0] = 0.0;
            }
            fn step(&self, state: &mut [f64], _from: usize, rng: &mut Substream) {
                state[0] += rng.next_normal();
            }
            fn payoff(&self, _state: &[f64], _date: usize) -> f64 {
                1.0
            }
            fn n_features(&self) -> usize {
                1
            }
            fn features(&self, _state: &[f64], _date: usize, _tp: f64, out: &mut [f64]) {
                out[0] = 1.0;
            }
        }
        let d = ConstantOne;
        let train = simulate(&d, 50, 1).unwrap();
        let outer = simulate(&d, 30, 2).unwrap();
        let tp = TransformedPayoff::plain();
        let policy = fit_policy(&d, &train, &tp).unwrap();
        let mart = build_martingale(&d, &outer, &policy, &tp, 10, 3).unwrap();
        assert!(mart.increments.iter().all(|&x| x == 0.0));
        let upper = upper_bound(&d, &outer, &mart, &tp).unwrap();
        assert_eq!(upper.value, 1.0);
        assert_eq!(upper.stderr, 0.0);
    }

    #[test]
    fn increments_are_centered_date_by_date() {
        let d = noisy_dynamics(5);
        let train = simulate(&d, 2000, 11).unwrap();
        let outer = simulate(&d, 800, 12).unwrap();
        let tp = TransformedPayoff::plain();
        let policy = fit_policy(&d, &train, &tp).unwrap();
        let mart = build_martingale(&d, &outer, &policy, &tp, 24, 13).unwrap();
        let n = outer.n_paths as f64;
        for j in 1..outer.n_dates {
            let col: Vec<f64> =
                (0..outer.n_paths).map(|p| mart.increments[p * outer.n_dates + j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            assert!(
                mean.abs() <= 3.0 * se.max(1e-12),
                "date {j}: mean {mean} exceeds 3 x {se}"
            );
        }
    }

    #[test]
    fn zero_martingale_still_bounds_from_above() {
        let d = noisy_dynamics(4);
        let train = simulate(&d, 2000, 21).unwrap();
        let outer = simulate(&d, 500, 22).unwrap();
        let tp = TransformedPayoff::plain();
        let policy = fit_policy(&d, &train, &tp).unwrap();
        let zero = MartingaleEstimate {
            n_paths: outer.n_paths,
            n_dates: outer.n_dates,
            n_inner: 1,
            seed: 23,
            increments: vec![0.0; outer.n_paths * outer.n_dates],
        };
        let upper = upper_bound(&d, &outer, &zero, &tp).unwrap();
        let lower = evaluate_policy(&d, &outer, &policy, &tp).unwrap();
        assert!(upper.value >= lower.value - 1e-12);
    }

    #[test]
    fn single_date_problem_has_no_gap() {
        struct OnlyNow;
        impl Dynamics for OnlyNow {
            fn n_dates(&self) -> usize {
                1
            }
            fn state_dim(&self) -> usize {
                1
            }
            fn initial_state(&self, out: &mut [f64]) {
                out[0] = 2.5;
            }
            fn step(&self, _state: &mut [f64], _from: usize, _rng: &mut Substream) {
                unreachable!("single date")
            }
            fn payoff(&self, state: &[f64], _date: usize) -> f64 {
                state[0]
            }
            fn n_features(&self) -> usize {
                1
            }
            fn features(&self, _state: &[f64], _date: usize, _tp: f64, out: &mut [f64]) {
                out[0] = 1.0;
            }
        }
        let d = OnlyNow;
        let train = simulate(&d, 20, 1).unwrap();
        let outer = simulate(&d, 20, 2).unwrap();
        let tp = TransformedPayoff::plain();
        let policy = fit_policy(&d, &train, &tp).unwrap();
        let mart = build_martingale(&d, &outer, &policy, &tp, 5, 3).unwrap();
        let upper = upper_bound(&d, &outer, &mart, &tp).unwrap();
        let lower = evaluate_policy(&d, &outer, &policy, &tp).unwrap();
        assert_eq!(upper.value, lower.value);
        assert_eq!(upper.value, 2.5);
    }

    #[test]
    fn seed_and_shape_collisions_are_rejected() {
        let d = noisy_dynamics(3);
        let train = simulate(&d, 200, 31).unwrap();
        let outer = simulate(&d, 50, 32).unwrap();
        let tp = TransformedPayoff::plain();
        let policy = fit_policy(&d, &train, &tp).unwrap();
        assert!(matches!(
            build_martingale(&d, &outer, &policy, &tp, 4, 32),
            Err(Error::SeedCollision(_))
        ));
        assert!(matches!(
            build_martingale(&d, &outer, &policy, &tp, 4, 31),
            Err(Error::SeedCollision(_))
        ));
        assert!(matches!(
            build_martingale(&d, &outer, &policy, &tp, 0, 33),
            Err(Error::Validation(_))
        ));
        let stop_now = Policy::always_stop_at_start(outer.n_dates, 31);
        assert!(matches!(
            build_martingale(&d, &outer, &stop_now, &tp, 4, 33),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn search_brackets_the_lower_bound() {
        let d = noisy_dynamics(3);
        let train = simulate(&d, 1500, 41).unwrap();
        let test = simulate(&d, 1500, 42).unwrap();
        let outer = simulate(&d, 300, 43).unwrap();
        let family = KusuokaFamily::Semidev { c: 1.0 };
        let cfg = SearchConfig {
            coarse_points: 7,
            param_grid: Some(vec![0.3, 0.6]),
            ..SearchConfig::default()
        };
        let primal = lower_bound_search(&d, &train, &test, family, &cfg).unwrap();

        let dual_cfg = DualSearchConfig::default();
        let single =
            upper_bound_search(&d, &train, &outer, family, &primal, 24, 44, &dual_cfg).unwrap();
        assert_eq!(single.cells.len(), 1);
        assert_eq!(single.best.bias, Bias::High);
        let se = (single.best.stderr.powi(2) + primal.best.stderr.powi(2)).sqrt();
        assert!(
            single.best.value >= primal.best.value - 3.0 * se,
            "upper {} under lower {}",
            single.best.value,
            primal.best.value
        );

        let sweep_cfg = DualSearchConfig { sweep_family: true, refine_x: true, ..dual_cfg };
        let swept =
            upper_bound_search(&d, &train, &outer, family, &primal, 24, 44, &sweep_cfg).unwrap();
        assert_eq!(swept.cells.len(), primal.cells.len());
        for (cell, anchor) in swept.cells.iter().zip(&primal.cells) {
            assert_eq!(cell.param, anchor.param);
            assert!((cell.x_star - anchor.x_star).abs() <= 2.0 * 0.05 * primal.x_max + 1e-12);
        }
        assert!(swept.best.value >= primal.best.value - 3.0 * se);
    }
}
