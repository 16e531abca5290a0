//! flowlab: a desk-scale flow matching and diffusion model toolkit.
//!
//! Everything runs in low dimension with 64-bit floats and a finite dataset,
//! which makes the usually intractable marginal quantities (density, vector
//! field, score) closed-form. That turns the core identities of flow and
//! diffusion models into numerically testable statements:
//!
//! - Gaussian probability paths with analytic conditional velocity, flow and
//!   score, plus the score <-> velocity conversion formulas ([`paths`]).
//! - Exact marginal oracles for finite datasets and finite-difference
//!   continuity / Fokker-Planck residual validators ([`oracle`]).
//! - Euler, Heun and Euler-Maruyama integrators, Brownian motion and
//!   Langevin dynamics ([`dynamics`]).
//! - A hand-rolled MLP with exact reverse-mode gradients ([`net`]), trained
//!   by flow matching, score matching or noise prediction ([`train`]).
//! - Classifier-free guidance and guided ODE/SDE samplers ([`guidance`]).
//! - Toy 2D datasets and sample-quality metrics ([`data_eval`]).
//! - A CLI wiring it all to files ([`cli`]).

pub mod cli;
pub mod data_eval;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod guidance;
pub mod io;
pub mod net;
pub mod oracle;
pub mod paths;
pub mod rng;
pub mod train;

pub use error::{FlowError, Result};
pub use field::{FnField, FnScalarField, ScalarField, VectorField};
