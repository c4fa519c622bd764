//! Monte Carlo engine for optimal stopping under concave probability distortions.
//!
//! The crate is organised in three layers:
//!
//! * a **risk kernel** ([`distortion`], [`measure`], [`empirical`], [`transform`])
//!   that evaluates distorted expectations of finite samples, builds the
//!   mixture representation of a concave distortion as a measure over tail
//!   levels, and compiles level functions into piecewise-linear payoff
//!   transforms;
//! * a **path engine** ([`market`], [`primal`], [`dual`]) that simulates
//!   exercise-date skeletons of a multi-asset Black-Scholes model, fits
//!   regression-based exercise policies for lower bounds, and builds dual
//!   martingales by nested simulation for upper bounds;
//! * an **exact oracle** ([`oracle`]) over small recombining-free binary trees
//!   where every stopping rule can be enumerated, used to verify the mixture
//!   and dual identities to floating-point accuracy.
//!
//! All randomness flows through counter-based substreams ([`rng`]), so every
//! result is reproducible from a seed and independent of thread scheduling.

pub mod distortion;
pub mod dual;
pub mod empirical;
mod error;
pub mod market;
pub mod measure;
pub mod oracle;
pub mod primal;
pub mod rng;
pub mod scalar;
pub mod transform;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision distortion function, the scalar type used by the path engine.
pub type Distortion64 = distortion::DistortionFn<f64>;
/// Double-precision representing measure.
pub type RepMeasure64 = measure::RepMeasure<f64>;
/// Double-precision weighted sample.
pub type Empirical64 = empirical::EmpiricalDist<f64>;
/// Double-precision level-function description.
pub type ZSpec64 = transform::ZSpec<f64>;
/// Double-precision compiled payoff transform.
pub type Transform64 = transform::TransformedPayoff<f64>;
/// Double-precision binary tree model.
pub type TreeModel64 = oracle::TreeModel<f64>;
