//! Level functions and compiled payoff transforms.
//!
//! A level function `Z` assigns a threshold to every tail level in (0, 1]
//! with `Z(1) = 0`. Against a representing measure `mu` it turns a raw payoff
//! `y` into
//!
//! ```text
//! U(y) = sum_i w_i * [ (y - Z(a_i))^+ / a_i + Z(a_i) ]
//! ```
//!
//! which is affine-plus-kinks in `y`. [`TransformedPayoff`] precompiles the
//! sum into `base + linear * y + sum_j s_j (y - x_j)^+` so the path engine
//! can evaluate it in a few flops per payoff.

use crate::error::{Error, Result};
use crate::measure::RepMeasure;
use crate::scalar::Real;

/// A level function over tail levels.
#[derive(Debug, Clone, PartialEq)]
pub enum ZSpec<T: Real> {
    /// One nonnegative level per atom below 1 of a discrete measure, in
    /// ascending atom order; the atom at 1 always carries level 0.
    FiniteLevels { levels: Vec<T> },
    /// Bernstein polynomial `sum_{i<n} b_i B_{i,n}` with nonnegative
    /// coefficients (the coefficient of `B_{n,n}` is omitted and zero, so the
    /// polynomial vanishes at 1), plus an optional anchor step
    /// `delta * 1_{(0,a]}`.
    Bernstein { degree: usize, coeffs: Vec<T>, anchor: Option<(T, T)> },
}

impl<T: Real> ZSpec<T> {
    /// Levels for the atoms below 1 of a discrete measure.
    pub fn finite_levels(levels: Vec<T>) -> Result<Self> {
        for &x in &levels {
            if !(x >= T::zero() && x.is_finite()) {
                return Err(Error::validation(format!("level {x} must be finite and >= 0")));
            }
        }
        Ok(ZSpec::FiniteLevels { levels })
    }

    /// Bernstein level function of the given degree; `coeffs` has one entry
    /// per basis index `0..degree`, and `anchor = (delta, a)` adds a step of
    /// height `delta` on `(0, a]`.
    pub fn bernstein(degree: usize, coeffs: Vec<T>, anchor: Option<(T, T)>) -> Result<Self> {
        if coeffs.len() != degree {
            return Err(Error::validation(format!(
                "degree {degree} needs {degree} coefficients, got {}",
                coeffs.len()
            )));
        }
        for &b in &coeffs {
            if !(b >= T::zero() && b.is_finite()) {
                return Err(Error::validation(format!("coefficient {b} must be finite and >= 0")));
            }
        }
        if let Some((delta, a)) = anchor {
            if !(delta >= T::zero() && delta.is_finite()) {
                return Err(Error::validation(format!("anchor height {delta} must be >= 0")));
            }
            if !(a > T::zero() && a < T::one()) {
                return Err(Error::validation(format!("anchor cutoff {a} outside (0,1)")));
            }
        }
        Ok(ZSpec::Bernstein { degree, coeffs, anchor })
    }
}

/// Evaluates a Bernstein level function at a tail level in (0, 1].
///
/// Finite-level variants have no pointwise form (their levels attach to
/// measure atoms), so they are rejected.
pub fn zspec_eval<T: Real>(z: &ZSpec<T>, alpha: T) -> Result<T> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(Error::domain(format!("tail level {alpha} outside (0,1]")));
    }
    match z {
        ZSpec::FiniteLevels { .. } => Err(Error::incompatible(
            "finite-level variant is indexed by measure atoms, not evaluable pointwise"
                .to_string(),
        )),
        ZSpec::Bernstein { degree, coeffs, anchor } => {
            let n = *degree;
            let mut total = T::zero();
            // binomial(n, i) built incrementally
            let mut binom = T::one();
            for (i, &b) in coeffs.iter().enumerate() {
                let term = binom
                    * alpha.powi(i as i32)
                    * (T::one() - alpha).powi((n - i) as i32);
                total = total + b * term;
                binom = binom * T::of((n - i) as f64) / T::of((i + 1) as f64);
            }
            if let Some((delta, a)) = anchor {
                if alpha <= *a {
                    total = total + *delta;
                }
            }
            Ok(total)
        }
    }
}

/// A payoff transform compiled to `base + linear * y + sum s_j (y - x_j)^+`.
///
/// Valid for nonnegative payoffs `y`; thresholds are ascending and slopes
/// positive.
#[derive(Debug, Clone)]
pub struct TransformedPayoff<T: Real> {
    base: T,
    linear: T,
    kinks: Vec<(T, T)>,
}

impl<T: Real> TransformedPayoff<T> {
    /// Compiles the transform for a measure and a compatible level function:
    /// finite levels pair with the atoms of a discrete measure, a Bernstein
    /// function pairs with a density measure (levels read at the quadrature
    /// nodes).
    pub fn new(mu: &RepMeasure<T>, z: &ZSpec<T>) -> Result<Self> {
        let mut t = TransformedPayoff { base: T::zero(), linear: T::zero(), kinks: Vec::new() };
        match (mu, z) {
            (RepMeasure::Discrete { atoms }, ZSpec::FiniteLevels { levels }) => {
                let below: Vec<&(T, T)> = atoms.iter().filter(|&&(a, _)| a < T::one()).collect();
                if below.len() != levels.len() {
                    return Err(Error::incompatible(format!(
                        "{} levels for {} atoms below 1",
                        levels.len(),
                        below.len()
                    )));
                }
                for (&&(alpha, weight), &level) in below.iter().zip(levels) {
                    t.push_atom(alpha, weight, level);
                }
                if let Some(&(_, w1)) = atoms.iter().find(|&&(a, _)| a == T::one()) {
                    t.push_atom(T::one(), w1, T::zero());
                }
            }
            (RepMeasure::Density { nodes, atom_at_one, .. }, zb @ ZSpec::Bernstein { .. }) => {
                for &(alpha, weight) in nodes {
                    let level = zspec_eval(zb, alpha)?;
                    t.push_atom(alpha, weight, level);
                }
                if *atom_at_one > T::zero() {
                    t.push_atom(T::one(), *atom_at_one, T::zero());
                }
            }
            _ => {
                return Err(Error::incompatible(
                    "finite levels pair with discrete measures, Bernstein with density measures"
                        .to_string(),
                ))
            }
        }
        t.kinks.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite levels"));
        Ok(t)
    }

    /// Transform that leaves payoffs unchanged (identity measure, zero levels).
    pub fn plain() -> Self {
        TransformedPayoff { base: T::zero(), linear: T::one(), kinks: Vec::new() }
    }

    fn push_atom(&mut self, alpha: T, weight: T, level: T) {
        // w * [(y - L)^+ / a + L]; L = 0 collapses the kink into the linear term
        if level > T::zero() {
            self.base = self.base + weight * level;
            self.kinks.push((level, weight / alpha));
        } else {
            self.linear = self.linear + weight / alpha;
        }
    }

    /// Evaluates the transform at a nonnegative payoff.
    #[inline]
    pub fn value(&self, y: T) -> T {
        let mut v = self.base + self.linear * y;
        for &(level, slope) in &self.kinks {
            if y > level {
                v = v + slope * (y - level);
            } else {
                break;
            }
        }
        v
    }

    pub fn base(&self) -> T {
        self.base
    }

    pub fn linear(&self) -> T {
        self.linear
    }

    pub fn kinks(&self) -> &[(T, T)] {
        &self.kinks
    }
}

/// One-shot evaluation of the transform (see [`TransformedPayoff::new`]).
pub fn transformed_payoff<T: Real>(y: T, mu: &RepMeasure<T>, z: &ZSpec<T>) -> Result<T> {
    if !(y >= T::zero() && y.is_finite()) {
        return Err(Error::domain(format!("payoff {y} must be finite and >= 0")));
    }
    Ok(TransformedPayoff::new(mu, z)?.value(y))
}
