//! Mixture representation of concave distortions.
//!
//! Every concave distortion `g` is a mixture of tail-average distortions:
//! there is a probability measure `mu` on (0, 1] with
//! `g(u) = integral of min(1, u/a) d mu(a)`, recovered from `g` by
//! `mu((0, z]) = g(z) - z g'(z)` and an atom of mass `g'(1-)` at 1.
//! Piecewise-linear distortions give finitely many atoms; the minmaxvar
//! family gives an absolutely continuous part that this module represents by
//! a fixed quadrature rule.

use crate::distortion::{expectile_split_level, DistortionFn};
use crate::error::{Error, Result};
use crate::scalar::Real;
use std::sync::OnceLock;

/// Number of quadrature nodes carried by an absolutely continuous measure.
pub const DENSITY_NODES: usize = 64;

/// A representing measure on the interval (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum RepMeasure<T: Real> {
    /// Finitely many atoms `(level, weight)`, levels ascending in (0, 1],
    /// weights positive.
    Discrete { atoms: Vec<(T, T)> },
    /// Absolutely continuous part of a minmaxvar distortion: quadrature
    /// nodes `(level, weight)` for its density plus a (possibly zero) atom
    /// at 1. The nodes are the Gauss-Legendre rule pushed forward through
    /// the inverse CDF of the measure, so their weights sum to one exactly.
    Density { p: T, nodes: Vec<(T, T)>, atom_at_one: T },
}

impl<T: Real> RepMeasure<T> {
    /// Total mass of the measure.
    pub fn mass(&self) -> T {
        match self {
            RepMeasure::Discrete { atoms } => {
                atoms.iter().fold(T::zero(), |acc, &(_, w)| acc + w)
            }
            RepMeasure::Density { nodes, atom_at_one, .. } => {
                nodes.iter().fold(*atom_at_one, |acc, &(_, w)| acc + w)
            }
        }
    }

    /// Lebesgue density of the absolutely continuous part at `z` in (0, 1).
    pub fn density_at(&self, z: T) -> Result<T> {
        match self {
            RepMeasure::Discrete { .. } => Err(Error::domain(
                "purely atomic measure has no density".to_string(),
            )),
            RepMeasure::Density { p, .. } => {
                if !(z > T::zero() && z < T::one()) {
                    return Err(Error::domain(format!("density argument {z} outside (0,1)")));
                }
                Ok(minmaxvar_density(*p, z))
            }
        }
    }

    /// Atoms of a discrete measure.
    pub fn atoms(&self) -> Option<&[(T, T)]> {
        match self {
            RepMeasure::Discrete { atoms } => Some(atoms),
            RepMeasure::Density { .. } => None,
        }
    }
}

/// Builds the representing measure of a distortion.
///
/// Piecewise-linear families yield [`RepMeasure::Discrete`] with one atom per
/// slope change (plus an atom at 1 carrying the terminal slope); the
/// minmaxvar family with `p > 0` yields [`RepMeasure::Density`].
pub fn mu_from_distortion<T: Real>(g: &DistortionFn<T>) -> Result<RepMeasure<T>> {
    let one = T::one();
    match *g {
        DistortionFn::Identity => Ok(discrete(vec![], vec![one])),
        DistortionFn::AvarLevel { alpha } => {
            if alpha == one {
                Ok(discrete(vec![], vec![one]))
            } else {
                Ok(discrete(vec![alpha], vec![alpha.recip(), T::zero()]))
            }
        }
        DistortionFn::SemidevKappa { c, kappa } => {
            let s1 = c * (one - kappa) + one;
            let s2 = one - c * kappa;
            Ok(discrete(vec![kappa], vec![s1, s2]))
        }
        DistortionFn::ExpectileGamma { alpha, gamma } => {
            let split = expectile_split_level(alpha, gamma);
            let a1 = alpha * gamma / (one - alpha);
            if split <= T::zero() {
                Ok(discrete(vec![], vec![gamma]))
            } else if split >= one {
                Ok(discrete(vec![], vec![a1]))
            } else {
                Ok(discrete(vec![split], vec![a1, gamma]))
            }
        }
        DistortionFn::PiecewiseLinear { ref knots } => {
            let mut breaks = Vec::with_capacity(knots.len().saturating_sub(2));
            let mut slopes = Vec::with_capacity(knots.len() - 1);
            for w in knots.windows(2) {
                let (u0, g0) = w[0];
                let (u1, g1) = w[1];
                slopes.push((g1 - g0) / (u1 - u0));
                if u1 < one {
                    breaks.push(u1);
                }
            }
            Ok(discrete(breaks, slopes))
        }
        DistortionFn::MinMaxVar { p } => {
            if p == T::zero() {
                return Ok(discrete(vec![], vec![one]));
            }
            let base = gauss_legendre_unit_64();
            let nodes = base
                .iter()
                .map(|&(v, w)| (minmaxvar_node(p, T::of(v)), T::of(w)))
                .collect();
            Ok(RepMeasure::Density { p, nodes, atom_at_one: T::zero() })
        }
    }
}

/// Atoms from interior breakpoints and per-piece slopes of a piecewise-linear
/// distortion: weight `b_i (s_{i-1} - s_i)` at each breakpoint and the
/// terminal slope at 1. Zero-weight atoms are dropped.
fn discrete<T: Real>(breaks: Vec<T>, slopes: Vec<T>) -> RepMeasure<T> {
    debug_assert_eq!(breaks.len() + 1, slopes.len());
    let mut atoms = Vec::with_capacity(breaks.len() + 1);
    for (i, &b) in breaks.iter().enumerate() {
        let w = b * (slopes[i] - slopes[i + 1]);
        if w > T::zero() {
            atoms.push((b, w));
        }
    }
    let last = slopes[slopes.len() - 1];
    if last > T::zero() {
        atoms.push((T::one(), last));
    }
    RepMeasure::Discrete { atoms }
}

/// Quantile map of the minmaxvar measure: the image of `v` uniform on (0, 1)
/// is distributed according to the density of the measure.
pub(crate) fn minmaxvar_node<T: Real>(p: T, v: T) -> T {
    let q = T::one() + p;
    (T::one() - (T::one() - v).powf(p.recip())).powf(q)
}

/// Inverse of [`minmaxvar_node`]: the mass of the measure on (0, z].
#[cfg(test)]
pub(crate) fn minmaxvar_cdf<T: Real>(p: T, z: T) -> T {
    let q = T::one() + p;
    T::one() - (T::one() - z.powf(q.recip())).powf(p)
}

/// Density of the minmaxvar representing measure at `z` in (0, 1).
pub(crate) fn minmaxvar_density<T: Real>(p: T, z: T) -> T {
    let q = T::one() + p;
    let root = z.powf(q.recip());
    p / q * (T::one() - root).powf(p - T::one()) * z.powf(-(p / q))
}

/// Gauss-Legendre rule with `n` nodes on (0, 1); weights sum to one.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut rule = Vec::with_capacity(n);
    for i in 1..=((n + 1) / 2) {
        // Newton iteration on the Legendre polynomial from the Chebyshev guess.
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((0.5 * (1.0 - x), 0.5 * w));
        if 2 * i <= n {
            rule.push((0.5 * (1.0 + x), 0.5 * w));
        }
    }
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

/// Cached 64-node rule used for density measures and mixture quadrature.
pub(crate) fn gauss_legendre_unit_64() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(DENSITY_NODES))
}
