//! Scalar abstraction for the deterministic numerical kernels.
//!
//! The outcome model, the closed-form allocation rules and the logistic
//! regression fitter are written against [`Real`] so they can be run in
//! `f32` or `f64`. Monte Carlo paths (sampling, Gittins tables, exact tests)
//! are fixed to `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the generic kernels: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; constants are written as `f64` literals.
    fn of(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).unwrap_or_else(Self::nan)
    }
}

impl Real for f32 {}
impl Real for f64 {}
