//! Asset-price simulation on a Bermudan exercise grid.
//!
//! The model is a `d`-asset geometric Brownian motion under the pricing
//! measure, sampled only at the exercise dates (the transition over each
//! interval is exact in distribution, so no intermediate stepping is needed),
//! with the discounted max-call payoff. The [`Dynamics`] trait abstracts the
//! state process so the regression and dual machinery in [`crate::primal`]
//! and [`crate::dual`] also run on the exactly solvable trees of
//! [`crate::oracle`].

use crate::error::{Error, Result};
use crate::rng::Substream;
use rayon::prelude::*;
use std::io::Write;

/// Model parameters: `strike`, `horizon` and `j_max` are the strike `K`,
/// maturity `T` and index `J` of the last exercise date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmParams {
    pub d: usize,
    pub s0: f64,
    pub r: f64,
    pub delta: f64,
    pub sigma: f64,
    pub strike: f64,
    pub horizon: f64,
    pub j_max: usize,
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::validation("need at least one asset".to_string()));
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::validation(format!("s0 = {} must be positive", self.s0)));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::validation(format!("strike = {} must be positive", self.strike)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::validation(format!("sigma = {} must be >= 0", self.sigma)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::validation(format!("horizon = {} must be positive", self.horizon)));
        }
        if self.j_max < 1 {
            return Err(Error::validation("need at least one exercise date after t_0".to_string()));
        }
        if !self.r.is_finite() || !self.delta.is_finite() {
            return Err(Error::validation("rates must be finite".to_string()));
        }
        Ok(())
    }
}

/// Exercise dates `t_0 < t_1 < ... < t_J`, the last equal to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseGrid {
    dates: Vec<f64>,
}

impl ExerciseGrid {
    pub fn new(dates: Vec<f64>) -> Result<Self> {
        if dates.len() < 2 {
            return Err(Error::validation("grid needs at least two dates".to_string()));
        }
        if dates[0] < 0.0 {
            return Err(Error::validation("dates must be nonnegative".to_string()));
        }
        for w in dates.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::validation("dates must strictly increase".to_string()));
            }
        }
        Ok(ExerciseGrid { dates })
    }

    /// `j_max + 1` dates equally spaced on `[0, horizon]`.
    pub fn equally_spaced(horizon: f64, j_max: usize) -> Result<Self> {
        if j_max < 1 || !(horizon > 0.0) {
            return Err(Error::validation("need horizon > 0 and at least one step".to_string()));
        }
        let dates = (0..=j_max).map(|j| horizon * j as f64 / j_max as f64).collect();
        ExerciseGrid::new(dates)
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Checks the grid against model parameters: length `j_max + 1` and final
    /// date equal to the horizon.
    pub fn matches(&self, params: &GbmParams) -> Result<()> {
        if self.dates.len() != params.j_max + 1 {
            return Err(Error::incompatible(format!(
                "grid has {} dates, model expects {}",
                self.dates.len(),
                params.j_max + 1
            )));
        }
        let last = *self.dates.last().expect("nonempty");
        if (last - params.horizon).abs() > 1e-12 * params.horizon.max(1.0) {
            return Err(Error::incompatible(format!(
                "last date {last} differs from horizon {}",
                params.horizon
            )));
        }
        Ok(())
    }
}

/// An immutable bundle of simulated state paths.
///
/// Storage is row-major `[path][date][component]`. The substream id of path
/// `p` is `p` itself (or the pair index `p / 2` under antithetic sampling),
/// so any path can be regenerated in isolation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub n_paths: usize,
    pub n_dates: usize,
    pub dim: usize,
    pub seed: u64,
    values: Vec<f64>,
}

impl PathSet {
    /// State of one path at one date.
    #[inline]
    pub fn state(&self, path: usize, date: usize) -> &[f64] {
        let w = self.dim;
        let start = (path * self.n_dates + date) * w;
        &self.values[start..start + w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A discrete-date Markov state process with payoff and regression features.
pub trait Dynamics: Sync {
    /// Number of exercise dates including `t_0`.
    fn n_dates(&self) -> usize;
    /// Components of the state vector.
    fn state_dim(&self) -> usize;
    /// Writes the deterministic date-0 state.
    fn initial_state(&self, out: &mut [f64]);
    /// Advances the state from date `from` to `from + 1`.
    fn step(&self, state: &mut [f64], from: usize, rng: &mut Substream);
    /// Discounted exercise payoff of the state at a date.
    fn payoff(&self, state: &[f64], date: usize) -> f64;
    /// Length of the regression feature vector; 0 if regression is unsupported.
    fn n_features(&self) -> usize;
    /// Writes the feature vector for a state, given the transformed payoff
    /// there. `out` has length `n_features()`.
    fn features(&self, state: &[f64], date: usize, transformed_payoff: f64, out: &mut [f64]);
}

/// Simulates a path set from any dynamics; path `p` is driven by substream
/// `(seed, [p])`, so the result is independent of thread scheduling.
pub fn simulate(dynamics: &impl Dynamics, n_paths: usize, seed: u64) -> Result<PathSet> {
    if n_paths < 1 {
        return Err(Error::validation("need at least one path".to_string()));
    }
    let n_dates = dynamics.n_dates();
    let dim = dynamics.state_dim();
    let mut values = vec![0.0f64; n_paths * n_dates * dim];
    values
        .par_chunks_mut(n_dates * dim)
        .enumerate()
        .for_each(|(p, chunk)| {
            let mut rng = Substream::new(seed, &[p as u64]);
            let mut state = vec![0.0f64; dim];
            dynamics.initial_state(&mut state);
            chunk[..dim].copy_from_slice(&state);
            for j in 0..n_dates - 1 {
                dynamics.step(&mut state, j, &mut rng);
                chunk[(j + 1) * dim..(j + 2) * dim].copy_from_slice(&state);
            }
        });
    Ok(PathSet { n_paths, n_dates, dim, seed, values })
}

/// Geometric Brownian motion on an exercise grid with the max-call payoff.
#[derive(Debug, Clone)]
pub struct GbmDynamics {
    params: GbmParams,
    grid: ExerciseGrid,
    /// Per-interval drift `(r - delta - sigma^2/2) * dt`.
    drift: Vec<f64>,
    /// Per-interval volatility `sigma * sqrt(dt)`.
    vol: Vec<f64>,
}

impl GbmDynamics {
    pub fn new(params: GbmParams, grid: ExerciseGrid) -> Result<Self> {
        params.validate()?;
        grid.matches(&params)?;
        let mut drift = Vec::with_capacity(grid.len() - 1);
        let mut vol = Vec::with_capacity(grid.len() - 1);
        for w in grid.dates().windows(2) {
            let dt = w[1] - w[0];
            drift.push((params.r - params.delta - 0.5 * params.sigma * params.sigma) * dt);
            vol.push(params.sigma * dt.sqrt());
        }
        Ok(GbmDynamics { params, grid, drift, vol })
    }

    pub fn params(&self) -> &GbmParams {
        &self.params
    }

    pub fn grid(&self) -> &ExerciseGrid {
        &self.grid
    }

    #[inline]
    fn step_with(&self, state: &mut [f64], from: usize, rng: &mut Substream, sign: f64) {
        let (mu, s) = (self.drift[from], self.vol[from]);
        for price in state.iter_mut() {
            let xi = sign * rng.next_normal();
            *price *= (mu + s * xi).exp();
        }
    }
}

impl Dynamics for GbmDynamics {
    fn n_dates(&self) -> usize {
        self.grid.len()
    }

    fn state_dim(&self) -> usize {
        self.params.d
    }

    fn initial_state(&self, out: &mut [f64]) {
        out.fill(self.params.s0);
    }

    #[inline]
    fn step(&self, state: &mut [f64], from: usize, rng: &mut Substream) {
        self.step_with(state, from, rng, 1.0);
    }

    #[inline]
    fn payoff(&self, state: &[f64], date: usize) -> f64 {
        payoff_maxcall(state, self.grid.dates()[date], &self.params)
    }

    fn n_features(&self) -> usize {
        if self.params.d == 2 {
            N_FEATURES_2D
        } else {
            0
        }
    }

    #[inline]
    fn features(&self, state: &[f64], _date: usize, transformed_payoff: f64, out: &mut [f64]) {
        fill_basis_2d(state[0], state[1], transformed_payoff, self.params.strike, out);
    }
}

/// Discounted max-call payoff `e^{-rt} (max_i prices_i - K)^+`.
#[inline]
pub fn payoff_maxcall(prices: &[f64], t: f64, params: &GbmParams) -> f64 {
    let best = prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (best - params.strike).max(0.0) * (-params.r * t).exp()
}

/// Number of regression features for the two-asset max-call basis.
pub const N_FEATURES_2D: usize = 12;

#[inline]
fn fill_basis_2d(a: f64, b: f64, payoff: f64, strike: f64, out: &mut [f64]) {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let s1 = hi / strike;
    let s2 = lo / strike;
    out[0] = 1.0;
    out[1] = s1;
    out[2] = s1 * s1;
    out[3] = s1 * s1 * s1;
    out[4] = s2;
    out[5] = s2 * s2;
    out[6] = s2 * s2 * s2;
    out[7] = s1 * s2;
    out[8] = s1 * s1 * s2;
    out[9] = s1 * s2 * s2;
    out[10] = payoff;
    out[11] = payoff * s1;
}

/// Two-asset polynomial regression basis: monomials of the strike-scaled
/// sorted prices up to degree three plus the payoff and its cross term.
pub fn regression_basis(prices: &[f64], payoff: f64, strike: f64) -> Result<[f64; N_FEATURES_2D]> {
    if prices.len() != 2 {
        return Err(Error::incompatible(format!(
            "regression basis is defined for 2 assets, got {}",
            prices.len()
        )));
    }
    let mut out = [0.0; N_FEATURES_2D];
    fill_basis_2d(prices[0], prices[1], payoff, strike, &mut out);
    Ok(out)
}

/// Simulates GBM paths; path `p` uses substream `(seed, [p])`.
pub fn simulate_paths(
    params: &GbmParams,
    grid: &ExerciseGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    let dynamics = GbmDynamics::new(*params, grid.clone())?;
    simulate(&dynamics, n_paths, seed)
}

/// Simulates GBM paths in antithetic pairs: paths `2k` and `2k + 1` share the
/// substream `(seed, [k])` with mirrored normal draws. `n_paths` must be even.
pub fn simulate_paths_antithetic(
    params: &GbmParams,
    grid: &ExerciseGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    if n_paths < 2 || n_paths % 2 != 0 {
        return Err(Error::validation(format!(
            "antithetic sampling needs a positive even path count, got {n_paths}"
        )));
    }
    let dynamics = GbmDynamics::new(*params, grid.clone())?;
    let n_dates = dynamics.n_dates();
    let dim = dynamics.state_dim();
    let mut values = vec![0.0f64; n_paths * n_dates * dim];
    values
        .par_chunks_mut(n_dates * dim)
        .enumerate()
        .for_each(|(p, chunk)| {
            let mut rng = Substream::new(seed, &[(p / 2) as u64]);
            let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
            let mut state = vec![0.0f64; dim];
            dynamics.initial_state(&mut state);
            chunk[..dim].copy_from_slice(&state);
            for j in 0..n_dates - 1 {
                dynamics.step_with(&mut state, j, &mut rng, sign);
                chunk[(j + 1) * dim..(j + 2) * dim].copy_from_slice(&state);
            }
        });
    Ok(PathSet { n_paths, n_dates, dim, seed, values })
}

/// Writes a path set as CSV with columns `path_id,date_index,asset_index,price`.
pub fn dump_csv(paths: &PathSet, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "path_id,date_index,asset_index,price")?;
    for p in 0..paths.n_paths {
        for j in 0..paths.n_dates {
            let state = paths.state(p, j);
            for (a, price) in state.iter().enumerate() {
                writeln!(out, "{p},{j},{a},{price}")?;
            }
        }
    }
    Ok(())
}

/// Writes a path set in a little-endian binary layout: the magic bytes
/// `RSP1`, then `n_paths`, `n_dates`, `dim`, `seed` as `u64`, then all values
/// as `f64` in `[path][date][component]` order.
pub fn dump_binary(paths: &PathSet, out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(b"RSP1")?;
    for header in [paths.n_paths as u64, paths.n_dates as u64, paths.dim as u64, paths.seed] {
        out.write_all(&header.to_le_bytes())?;
    }
    for v in paths.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_params() -> GbmParams {
        GbmParams {
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

    #[test]
    fn zero_volatility_is_pure_drift() {
        let params = GbmParams { sigma: 0.0, j_max: 1, horizon: 1.0, ..table_params() };
        let grid = ExerciseGrid::equally_spaced(1.0, 1).unwrap();
        let paths = simulate_paths(&params, &grid, 3, 11).unwrap();
        let want = 90.0 * (params.r - params.delta).exp();
        for p in 0..3 {
            for &s in paths.state(p, 1) {
                assert!((s - want).abs() < 1e-12, "{s} vs {want}");
            }
        }
    }

    #[test]
    fn payoff_examples() {
        let params = table_params();
        assert_eq!(payoff_maxcall(&[90.0, 95.0], 1.0, &params), 0.0);
        assert_eq!(payoff_maxcall(&[120.0, 95.0], 0.0, &params), 20.0);
        let got = payoff_maxcall(&[120.0, 95.0], 1.0, &params);
        assert!((got - 20.0 * (-0.05f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let params = table_params();
        let grid = ExerciseGrid::equally_spaced(3.0, 9).unwrap();
        let a = simulate_paths(&params, &grid, 64, 123).unwrap();
        let b = simulate_paths(&params, &grid, 64, 123).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&params, &grid, 64, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn discounted_prices_have_flat_mean() {
        let params = GbmParams { j_max: 3, ..table_params() };
        let grid = ExerciseGrid::equally_spaced(3.0, 3).unwrap();
        let n = 100_000;
        let paths = simulate_paths(&params, &grid, n, 2024).unwrap();
        for (j, &t) in grid.dates().iter().enumerate() {
            let growth = ((params.r - params.delta) * t).exp();
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for p in 0..n {
                let x = paths.state(p, j)[0] / growth;
                sum += x;
                sumsq += x * x;
            }
            let mean = sum / n as f64;
            let sd = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
            assert!(
                (mean - params.s0).abs() <= 3.0 * sd.max(1e-12),
                "date {j}: mean {mean} vs {} (se {sd})",
                params.s0
            );
        }
    }

    #[test]
    fn prices_stay_positive_and_finite() {
        let params = table_params();
        let grid = ExerciseGrid::equally_spaced(3.0, 9).unwrap();
        let paths = simulate_paths(&params, &grid, 500, 9).unwrap();
        assert_eq!(paths.n_paths, 500);
        assert_eq!(paths.n_dates, 10);
        assert_eq!(paths.dim, 2);
        for v in paths.values() {
            assert!(v.is_finite() && *v > 0.0);
        }
    }

    #[test]
    fn basis_values_and_symmetry() {
        let b = regression_basis(&[100.0, 100.0], 0.0, 100.0).unwrap();
        assert_eq!(b, [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let x = regression_basis(&[80.0, 130.0], 2.5, 100.0).unwrap();
        let y = regression_basis(&[130.0, 80.0], 2.5, 100.0).unwrap();
        assert_eq!(x, y);
        for v in x {
            assert!(v.is_finite());
        }
        assert!(regression_basis(&[1.0], 0.0, 100.0).is_err());
    }

    #[test]
    fn antithetic_pairs_mirror_log_prices() {
        let params = table_params();
        let grid = ExerciseGrid::equally_spaced(3.0, 9).unwrap();
        let paths = simulate_paths_antithetic(&params, &grid, 32, 77).unwrap();
        let drift: f64 = (params.r - params.delta - 0.5 * params.sigma * params.sigma) * 3.0;
        for k in 0..16 {
            for a in 0..2 {
                let z0 = (paths.state(2 * k, 9)[a] / params.s0).ln() - drift;
                let z1 = (paths.state(2 * k + 1, 9)[a] / params.s0).ln() - drift;
                assert!((z0 + z1).abs() < 1e-10, "pair {k} asset {a}: {z0} vs {z1}");
            }
        }
        assert!(simulate_paths_antithetic(&params, &grid, 5, 77).is_err());
    }

    #[test]
    fn dumps_are_stable() {
        let params = GbmParams { j_max: 2, ..table_params() };
        let grid = ExerciseGrid::equally_spaced(3.0, 2).unwrap();
        let paths = simulate_paths(&params, &grid, 2, 5).unwrap();
        let mut csv = Vec::new();
        dump_csv(&paths, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("path_id,date_index,asset_index,price\n0,0,0,90\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 3 * 2);

        let mut bin = Vec::new();
        dump_binary(&paths, &mut bin).unwrap();
        assert_eq!(bin.len(), 4 + 4 * 8 + 2 * 3 * 2 * 8);
        assert_eq!(&bin[..4], b"RSP1");
    }
}
