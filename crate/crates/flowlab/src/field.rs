//! The time-dependent vector field abstraction.
//!
//! A vector field is a function `u: R^d x [0,1] -> R^d`. Analytic formulas,
//! closed-form oracles, and the trained network all implement [`VectorField`]
//! so that the integrators and PDE validators are generic over them.

use crate::error::Result;

/// A time-dependent vector-valued function `(x, t) -> u_t(x)`.
pub trait VectorField: Sync {
    /// Spatial dimension of inputs and outputs.
    fn dim(&self) -> usize;

    /// Evaluate the field at `(x, t)`.
    ///
    /// Implementations may fail at singular times (e.g. a conditional field
    /// at `t = 1` where its schedule denominator vanishes).
    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// A vector field backed by a plain closure, for tests and analytic probes.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok((self.f)(x, t))
    }
}

/// A scalar field `(x, t) -> R`, used for densities in the PDE validators.
pub trait ScalarField: Sync {
    fn eval(&self, x: &[f64], t: f64) -> Result<f64>;
}

/// A scalar field backed by a closure.
pub struct FnScalarField<F> {
    f: F,
}

impl<F> FnScalarField<F>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> ScalarField for FnScalarField<F>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
{
    fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok((self.f)(x, t))
    }
}
