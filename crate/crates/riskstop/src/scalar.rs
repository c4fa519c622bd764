//! Scalar abstraction for the risk kernel.
//!
//! The distortion/measure/sample layer is generic over [`Real`] so the same
//! formulas run in `f32` or `f64`; the path engine works in `f64` throughout.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the risk kernel.
pub trait Real: Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    /// Converts an `f64` constant, panicking only for non-representable values
    /// (which no constant in this crate is).
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }

    /// Lossy view as `f64`, used for reports and diagnostics.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
}

/// Comparison tolerance scaled to the precision of `T`.
///
/// Equals `floor` in `f64` and widens for shorter mantissas.
pub fn tolerance<T: Real>(floor: f64) -> T {
    let eps_scale = T::epsilon() * T::of(256.0);
    T::of(floor).max(eps_scale)
}
