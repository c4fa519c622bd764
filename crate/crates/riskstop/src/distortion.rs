//! Concave distortion functions on the unit interval.
//!
//! A distortion `g: [0,1] -> [0,1]` is nondecreasing and concave with
//! `g(0) = 0`, `g(1) = 1`. Applied to survival probabilities it reweights a
//! distribution toward its upper tail, which is how the risk functionals in
//! [`crate::empirical`] express risk aversion. Concavity makes the functional
//! monotone, positively homogeneous and translation-equivariant; it is also
//! subadditive exactly when `g` stays pointwise above the identity.

use crate::error::{Error, Result};
use crate::scalar::{tolerance, Real};

/// A parametric concave distortion.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionFn<T: Real> {
    /// `g(u) = u`; distorted expectation reduces to the plain mean.
    Identity,
    /// `g(u) = min(1, u / alpha)`: average of the worst `alpha` tail.
    AvarLevel { alpha: T },
    /// `g(u) = 1 - (1 - u^{1/(1+p)})^{1+p}`, the minmaxvar family.
    MinMaxVar { p: T },
    /// Two linear pieces with a kink at `kappa`; weights the mean together
    /// with an upper-semideviation penalty of strength `c`.
    SemidevKappa { c: T, kappa: T },
    /// Two linear pieces reproducing an expectile at level `alpha` mixed with
    /// the mean at weight `gamma`.
    ExpectileGamma { alpha: T, gamma: T },
    /// Arbitrary concave piecewise-linear distortion through the given knots.
    PiecewiseLinear { knots: Vec<(T, T)> },
}

impl<T: Real> DistortionFn<T> {
    pub fn identity() -> Self {
        DistortionFn::Identity
    }

    /// Tail-average distortion at level `alpha` in (0, 1].
    pub fn avar_level(alpha: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::validation(format!("avar level must lie in (0,1], got {alpha}")));
        }
        Ok(DistortionFn::AvarLevel { alpha })
    }

    /// Minmaxvar distortion with stress parameter `p >= 0`.
    pub fn minmaxvar(p: T) -> Result<Self> {
        if !(p >= T::zero() && p.is_finite()) {
            return Err(Error::validation(format!("minmaxvar parameter must be >= 0, got {p}")));
        }
        Ok(DistortionFn::MinMaxVar { p })
    }

    /// Semideviation distortion with penalty `c >= 0` and kink `kappa` in (0, 1).
    ///
    /// Requires `c * kappa <= 1` so the second slope stays nonnegative. Values
    /// `c > 1` are accepted but the distortion then dips below the identity,
    /// so the induced functional is no longer subadditive.
    pub fn semidev_kappa(c: T, kappa: T) -> Result<Self> {
        if !(c >= T::zero() && c.is_finite()) {
            return Err(Error::validation(format!("semideviation penalty must be >= 0, got {c}")));
        }
        if !(kappa > T::zero() && kappa < T::one()) {
            return Err(Error::validation(format!("kink must lie in (0,1), got {kappa}")));
        }
        if c * kappa > T::one() {
            return Err(Error::validation(format!(
                "c * kappa = {} exceeds 1; distortion would decrease",
                c * kappa
            )));
        }
        Ok(DistortionFn::SemidevKappa { c, kappa })
    }

    /// Expectile distortion at level `alpha` in (1/2, 1) with mean weight
    /// `gamma` in `[(1-alpha)/alpha, 1]`; both interval endpoints give the
    /// identity.
    pub fn expectile_gamma(alpha: T, gamma: T) -> Result<Self> {
        let half = T::of(0.5);
        if !(alpha > half && alpha < T::one()) {
            return Err(Error::validation(format!("expectile level must lie in (1/2,1), got {alpha}")));
        }
        let lb = expectile_gamma_lower_bound(alpha);
        if !(gamma >= lb && gamma <= T::one()) {
            return Err(Error::validation(format!(
                "gamma = {gamma} outside [{lb}, 1] for alpha = {alpha}"
            )));
        }
        Ok(DistortionFn::ExpectileGamma { alpha, gamma })
    }

    /// Concave piecewise-linear distortion through `knots`, which must start
    /// at (0,0), end at (1,1), have strictly increasing abscissae,
    /// nondecreasing values and nonincreasing slopes.
    pub fn piecewise_linear(knots: Vec<(T, T)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::validation("need at least two knots".to_string()));
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if first.0 != T::zero() || first.1 != T::zero() || last.0 != T::one() || last.1 != T::one() {
            return Err(Error::validation("knots must run from (0,0) to (1,1)".to_string()));
        }
        let tol: T = tolerance(1e-12);
        let mut prev_slope = T::infinity();
        for w in knots.windows(2) {
            let (u0, g0) = w[0];
            let (u1, g1) = w[1];
            if u1 <= u0 {
                return Err(Error::validation("knot abscissae must strictly increase".to_string()));
            }
            if g1 < g0 {
                return Err(Error::validation("knot values must be nondecreasing".to_string()));
            }
            let slope = (g1 - g0) / (u1 - u0);
            if slope > prev_slope + tol {
                return Err(Error::validation(format!(
                    "knots are not concave: slope rises from {prev_slope} to {slope}"
                )));
            }
            prev_slope = slope;
        }
        Ok(DistortionFn::PiecewiseLinear { knots })
    }

    /// Evaluates `g(u)` for `u` in [0, 1].
    pub fn eval(&self, u: T) -> Result<T> {
        if !(u >= T::zero() && u <= T::one()) {
            return Err(Error::domain(format!("distortion argument {u} outside [0,1]")));
        }
        Ok(match *self {
            DistortionFn::Identity => u,
            DistortionFn::AvarLevel { alpha } => (u / alpha).min(T::one()),
            DistortionFn::MinMaxVar { p } => {
                let q = T::one() + p;
                let inner = T::one() - u.powf(q.recip());
                T::one() - inner.powf(q)
            }
            DistortionFn::SemidevKappa { c, kappa } => {
                if u <= kappa {
                    (c * (T::one() - kappa) + T::one()) * u
                } else {
                    let at_kink = (c * (T::one() - kappa) + T::one()) * kappa;
                    at_kink + (T::one() - c * kappa) * (u - kappa)
                }
            }
            DistortionFn::ExpectileGamma { alpha, gamma } => {
                let split = expectile_split_level(alpha, gamma);
                if u <= split {
                    alpha * gamma / (T::one() - alpha) * u
                } else {
                    T::one() - gamma + gamma * u
                }
            }
            DistortionFn::PiecewiseLinear { ref knots } => {
                let i = segment_index(knots, u);
                let (u0, g0) = knots[i];
                let (u1, g1) = knots[i + 1];
                g0 + (g1 - g0) / (u1 - u0) * (u - u0)
            }
        })
    }

    /// Right derivative `g'(u+)` for `u` in (0, 1).
    pub fn right_derivative(&self, u: T) -> Result<T> {
        if !(u > T::zero() && u < T::one()) {
            return Err(Error::domain(format!("derivative argument {u} outside (0,1)")));
        }
        Ok(match *self {
            DistortionFn::Identity => T::one(),
            DistortionFn::AvarLevel { alpha } => {
                if u < alpha {
                    alpha.recip()
                } else {
                    T::zero()
                }
            }
            DistortionFn::MinMaxVar { p } => {
                if p == T::zero() {
                    return Ok(T::one());
                }
                let q = T::one() + p;
                let root = u.powf(q.recip());
                (T::one() - root).powf(p) * u.powf(-(p / q))
            }
            DistortionFn::SemidevKappa { c, kappa } => {
                if u < kappa {
                    c * (T::one() - kappa) + T::one()
                } else {
                    T::one() - c * kappa
                }
            }
            DistortionFn::ExpectileGamma { alpha, gamma } => {
                let split = expectile_split_level(alpha, gamma);
                if u < split {
                    alpha * gamma / (T::one() - alpha)
                } else {
                    gamma
                }
            }
            DistortionFn::PiecewiseLinear { ref knots } => {
                let i = segment_index(knots, u);
                let (u0, g0) = knots[i];
                let (u1, g1) = knots[i + 1];
                (g1 - g0) / (u1 - u0)
            }
        })
    }

    /// Checks the defining properties on an equispaced grid of `n` cells:
    /// boundary values, monotonicity, midpoint concavity, domination of the
    /// identity and a nonincreasing right derivative.
    pub fn validate_on_grid(&self, n: usize) -> Result<()> {
        let n = n.max(2);
        let tol: T = tolerance(1e-12);
        let grid: Vec<T> = (0..=n).map(|i| T::of(i as f64 / n as f64)).collect();
        let vals: Vec<T> = grid.iter().map(|&u| self.eval(u)).collect::<Result<_>>()?;
        if vals[0].abs() > tol {
            return Err(Error::validation(format!("g(0) = {} != 0", vals[0])));
        }
        if (vals[n] - T::one()).abs() > tol {
            return Err(Error::validation(format!("g(1) = {} != 1", vals[n])));
        }
        for i in 0..n {
            if vals[i + 1] < vals[i] - tol {
                return Err(Error::validation(format!("g decreases near u = {}", grid[i])));
            }
        }
        for i in 1..n {
            let mid = (vals[i - 1] + vals[i + 1]) * T::of(0.5);
            if vals[i] < mid - tol {
                return Err(Error::validation(format!("g not midpoint-concave near u = {}", grid[i])));
            }
        }
        for i in 0..=n {
            if vals[i] < grid[i] - tol {
                return Err(Error::validation(format!("g(u) < u at u = {}", grid[i])));
            }
        }
        let mut prev = T::infinity();
        for i in 1..n {
            let d = self.right_derivative(grid[i])?;
            if d > prev + tol {
                return Err(Error::validation(format!(
                    "right derivative increases near u = {}",
                    grid[i]
                )));
            }
            prev = d;
        }
        Ok(())
    }

}

/// Abscissa where the two linear pieces of the expectile distortion meet.
pub(crate) fn expectile_split_level<T: Real>(alpha: T, gamma: T) -> T {
    (T::one() - alpha) * (T::one() - gamma) / (gamma * (T::of(2.0) * alpha - T::one()))
}

/// Smallest admissible mean weight for the expectile distortion at level `alpha`.
pub fn expectile_gamma_lower_bound<T: Real>(alpha: T) -> T {
    (T::one() - alpha) / alpha
}

fn segment_index<T: Real>(knots: &[(T, T)], u: T) -> usize {
    // Last segment is closed on the right so eval(1) works.
    let mut i = 0;
    while i + 2 < knots.len() && u >= knots[i + 1].0 {
        i += 1;
    }
    i
}

/// One-parameter families of distortions swept by the bound searches.
///
/// Each family fixes the shape of the distortion and leaves one scalar free:
/// the kink position `kappa` for the semideviation family, the mean weight
/// `gamma` for the expectile family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KusuokaFamily<T: Real> {
    Semidev { c: T },
    Expectile { alpha: T },
}

impl<T: Real> KusuokaFamily<T> {
    /// Instantiates the family member at `param`.
    pub fn distortion(&self, param: T) -> Result<DistortionFn<T>> {
        match *self {
            KusuokaFamily::Semidev { c } => DistortionFn::semidev_kappa(c, param),
            KusuokaFamily::Expectile { alpha } => DistortionFn::expectile_gamma(alpha, param),
        }
    }

    /// Closed parameter interval of the family.
    pub fn param_range(&self) -> (T, T) {
        match *self {
            KusuokaFamily::Semidev { c } => {
                let hi = if c > T::one() { c.recip() } else { T::one() };
                (T::zero(), hi)
            }
            KusuokaFamily::Expectile { alpha } => (expectile_gamma_lower_bound(alpha), T::one()),
        }
    }
}

/// Builds the family member at `param` (see [`KusuokaFamily::distortion`]).
pub fn kusuoka_family<T: Real>(family: KusuokaFamily<T>, param: T) -> Result<DistortionFn<T>> {
    family.distortion(param)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmaxvar_values() {
        let g: DistortionFn<f64> = DistortionFn::minmaxvar(1.0).unwrap();
        assert!((g.eval(0.25).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(g.eval(0.0).unwrap(), 0.0);
        assert_eq!(g.eval(1.0).unwrap(), 1.0);
        let g0: DistortionFn<f64> = DistortionFn::minmaxvar(0.0).unwrap();
        assert!((g0.eval(0.3).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn semidev_values_and_slopes() {
        let g: DistortionFn<f64> = DistortionFn::semidev_kappa(1.0, 0.5).unwrap();
        assert!((g.eval(0.25).unwrap() - 0.375).abs() < 1e-15);
        assert!((g.right_derivative(0.25).unwrap() - 1.5).abs() < 1e-15);
        assert!((g.right_derivative(0.75).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(g.eval(1.0).unwrap(), 1.0);
    }

    #[test]
    fn avar_values_and_slopes() {
        let g: DistortionFn<f64> = DistortionFn::avar_level(0.5).unwrap();
        assert!((g.eval(0.25).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(g.eval(0.75).unwrap(), 1.0);
        assert!((g.right_derivative(0.25).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(g.right_derivative(0.75).unwrap(), 0.0);
    }

    #[test]
    fn semidev_rejects_decreasing_tail() {
        assert!(DistortionFn::semidev_kappa(3.0, 0.5).is_err());
        assert!(DistortionFn::semidev_kappa(1.5, 0.6).is_ok());
        assert!(DistortionFn::semidev_kappa(-0.1, 0.5).is_err());
    }

    #[test]
    fn expectile_interval_endpoints_are_identity() {
        let alpha = 0.75_f64;
        let lb = expectile_gamma_lower_bound(alpha);
        for gamma in [lb, 1.0] {
            let g = DistortionFn::expectile_gamma(alpha, gamma).unwrap();
            for u in [0.1, 0.33, 0.5, 0.9] {
                assert!((g.eval(u).unwrap() - u).abs() < 1e-14, "gamma={gamma} u={u}");
            }
        }
        assert!(DistortionFn::expectile_gamma(alpha, lb - 0.01).is_err());
        assert!(DistortionFn::expectile_gamma(0.5, 0.9).is_err());
    }

    #[test]
    fn expectile_is_continuous_at_split() {
        let g: DistortionFn<f64> = DistortionFn::expectile_gamma(0.75, 0.6).unwrap();
        let s = expectile_split_level(0.75_f64, 0.6);
        let below = g.eval(s - 1e-12).unwrap();
        let above = g.eval(s + 1e-12).unwrap();
        assert!((below - above).abs() < 1e-10);
        g.validate_on_grid(1000).unwrap();
    }

    #[test]
    fn piecewise_linear_validation() {
        let ok = DistortionFn::piecewise_linear(vec![(0.0_f64, 0.0), (0.25, 0.5), (1.0, 1.0)]);
        assert!(ok.is_ok());
        let g = ok.unwrap();
        assert!((g.eval(0.125).unwrap() - 0.25).abs() < 1e-15);
        assert!((g.eval(0.5).unwrap() - 0.5 / 0.75 * 0.25 - 0.5).abs() < 1e-15);

        let convex = DistortionFn::piecewise_linear(vec![(0.0, 0.0), (0.5, 0.2), (1.0, 1.0)]);
        assert!(convex.is_err());
        let bad_ends = DistortionFn::piecewise_linear(vec![(0.1, 0.0), (1.0, 1.0)]);
        assert!(bad_ends.is_err());
    }

    #[test]
    fn grid_validation_accepts_all_families() {
        let gs: Vec<DistortionFn<f64>> = vec![
            DistortionFn::identity(),
            DistortionFn::avar_level(0.3).unwrap(),
            DistortionFn::minmaxvar(2.5).unwrap(),
            DistortionFn::semidev_kappa(1.5, 0.4).unwrap(),
            DistortionFn::expectile_gamma(0.8, 0.5).unwrap(),
            DistortionFn::piecewise_linear(vec![(0.0, 0.0), (0.2, 0.6), (1.0, 1.0)]).unwrap(),
        ];
        for g in gs {
            g.validate_on_grid(500).unwrap();
        }
    }

    #[test]
    fn works_in_single_precision() {
        let g: DistortionFn<f32> = DistortionFn::minmaxvar(1.0f32).unwrap();
        assert!((g.eval(0.25f32).unwrap() - 0.75).abs() < 1e-6);
        g.validate_on_grid(100).unwrap();
    }

    #[test]
    fn semidev_above_one_is_still_a_valid_distortion() {
        let g: DistortionFn<f64> = DistortionFn::semidev_kappa(1.5, 0.3).unwrap();
        g.validate_on_grid(1000).unwrap();
        // slopes 2.05 then 0.55, so it stays above the identity
        assert!((g.eval(0.9).unwrap() - 0.945).abs() < 1e-15);
        assert!(DistortionFn::<f64>::semidev_kappa(1.5, 0.7).is_err());
    }
}
