//! Noise schedules and Gaussian conditional probability paths.
//!
//! A schedule is a pair of functions `(alpha_t, beta_t)` on `[0,1]` with
//! `alpha_0 = beta_1 = 0` and `alpha_1 = beta_0 = 1`. It defines the Gaussian
//! conditional path
//!
//! ```text
//! p_t(. | z) = N(alpha_t z, beta_t^2 I_d)
//! ```
//!
//! which interpolates a standard normal at `t = 0` and the point mass at `z`
//! at `t = 1`. This module houses the closed-form velocity, flow and score of
//! that path, and the formulas converting a score into a velocity and back.
//!
//! All singular divisions (`beta_t = 0` in the score, `alpha_t = 0` in the
//! conversion) return typed errors instead of non-finite values.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{FlowError, Result};
use crate::rng::{standard_normal, FlowRng};

/// Built-in noise schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `alpha = t`, `beta = 1 - t`. Constant derivatives.
    Condot,
    /// `alpha = sin(pi t / 2)`, `beta = cos(pi t / 2)`. Nonconstant derivatives.
    Trig,
}

/// A noise schedule: `(alpha_t, beta_t)` and their time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
}

/// One schedule evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEval {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_dot: f64,
    pub beta_dot: f64,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind) -> Self {
        Self { kind }
    }

    pub fn condot() -> Self {
        Self::new(ScheduleKind::Condot)
    }

    pub fn trig() -> Self {
        Self::new(ScheduleKind::Trig)
    }

    /// Evaluate `(alpha, beta, alpha_dot, beta_dot)` at `t`.
    ///
    /// Fails with a domain error for `t` outside `[0, 1]`.
    pub fn eval(&self, t: f64) -> Result<ScheduleEval> {
        if !(0.0..=1.0).contains(&t) {
            return Err(FlowError::Domain(format!(
                "schedule time t = {t} outside [0, 1]"
            )));
        }
        Ok(match self.kind {
            ScheduleKind::Condot => ScheduleEval {
                alpha: t,
                beta: 1.0 - t,
                alpha_dot: 1.0,
                beta_dot: -1.0,
            },
            ScheduleKind::Trig => {
                let half_pi = PI / 2.0;
                ScheduleEval {
                    alpha: (half_pi * t).sin(),
                    beta: (half_pi * t).cos(),
                    alpha_dot: half_pi * (half_pi * t).cos(),
                    beta_dot: -half_pi * (half_pi * t).sin(),
                }
            }
        })
    }
}

/// Clamp window keeping `t` away from the endpoint singularities.
///
/// `beta_t -> 0` as `t -> 1` makes the conditional score blow up, and
/// `alpha_t -> 0` as `t -> 0` does the same to the score-to-velocity
/// conversion. Clamping to `[eps_low, 1 - eps_high]` keeps both denominators
/// bounded away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeClamp {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for TimeClamp {
    /// Covers about 99.9% of the time axis while keeping condot denominators
    /// at or above 1e-3.
    fn default() -> Self {
        Self {
            eps_low: 1e-4,
            eps_high: 1e-3,
        }
    }
}

impl TimeClamp {
    pub fn new(eps_low: f64, eps_high: f64) -> Result<Self> {
        if eps_low < 0.0 || eps_high <= 0.0 || eps_low + eps_high >= 1.0 {
            return Err(FlowError::Domain(format!(
                "invalid time clamp (eps_low = {eps_low}, eps_high = {eps_high})"
            )));
        }
        Ok(Self { eps_low, eps_high })
    }

    /// Clamp `t` into `[eps_low, 1 - eps_high]`.
    pub fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.eps_low, 1.0 - self.eps_high)
    }

    pub fn low(&self) -> f64 {
        self.eps_low
    }

    pub fn high(&self) -> f64 {
        1.0 - self.eps_high
    }
}

/// A Gaussian conditional probability path `N(alpha_t z, beta_t^2 I_d)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPath {
    pub schedule: NoiseSchedule,
    pub dim: usize,
}

impl GaussianPath {
    pub fn new(schedule: NoiseSchedule, dim: usize) -> Self {
        Self { schedule, dim }
    }

    fn check_dim(&self, name: &str, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(FlowError::Domain(format!(
                "{name} has dimension {} but path has dimension {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Draw `x = alpha_t z + beta_t eps` with `eps ~ N(0, I)`.
    pub fn cond_sample(&self, z: &[f64], t: f64, rng: &mut FlowRng) -> Result<Vec<f64>> {
        self.check_dim("z", z)?;
        let s = self.schedule.eval(t)?;
        Ok(z.iter()
            .map(|&zi| s.alpha * zi + s.beta * standard_normal(rng))
            .collect())
    }

    /// The conditional vector field
    /// `u_t(x|z) = (alpha_dot - (beta_dot / beta) alpha) z + (beta_dot / beta) x`.
    ///
    /// For condot this simplifies to `(z - x) / (1 - t)`.
    pub fn cond_vector_field(&self, x: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim("x", x)?;
        self.check_dim("z", z)?;
        let s = self.schedule.eval(t)?;
        if s.beta == 0.0 {
            return Err(FlowError::Singularity {
                what: "beta_t = 0 in conditional vector field",
                t,
            });
        }
        let ratio = s.beta_dot / s.beta;
        let z_coef = s.alpha_dot - ratio * s.alpha;
        Ok(x.iter()
            .zip(z)
            .map(|(&xi, &zi)| z_coef * zi + ratio * xi)
            .collect())
    }

    /// The conditional flow `psi_t(x0|z) = alpha_t z + beta_t x0`.
    pub fn cond_flow(&self, x0: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim("x0", x0)?;
        self.check_dim("z", z)?;
        let s = self.schedule.eval(t)?;
        Ok(x0
            .iter()
            .zip(z)
            .map(|(&xi, &zi)| s.alpha * zi + s.beta * xi)
            .collect())
    }

    /// The conditional score `grad log p_t(x|z) = -(x - alpha_t z) / beta_t^2`.
    pub fn cond_score(&self, x: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim("x", x)?;
        self.check_dim("z", z)?;
        let s = self.schedule.eval(t)?;
        if s.beta == 0.0 {
            return Err(FlowError::Singularity {
                what: "beta_t = 0 in conditional score",
                t,
            });
        }
        let var = s.beta * s.beta;
        Ok(x.iter()
            .zip(z)
            .map(|(&xi, &zi)| -(xi - s.alpha * zi) / var)
            .collect())
    }

    /// Log density of the conditional path, `log N(x; alpha_t z, beta_t^2 I)`.
    pub fn cond_log_density(&self, x: &[f64], z: &[f64], t: f64) -> Result<f64> {
        self.check_dim("x", x)?;
        self.check_dim("z", z)?;
        let s = self.schedule.eval(t)?;
        if s.beta == 0.0 {
            return Err(FlowError::Singularity {
                what: "beta_t = 0 in conditional density",
                t,
            });
        }
        let var = s.beta * s.beta;
        let d = self.dim as f64;
        let sq: f64 = x
            .iter()
            .zip(z)
            .map(|(&xi, &zi)| {
                let r = xi - s.alpha * zi;
                r * r
            })
            .sum();
        Ok(-0.5 * d * (2.0 * PI * var).ln() - 0.5 * sq / var)
    }

    /// Coefficients `(score_coef, x_coef)` of the score-to-velocity
    /// conversion `u = score_coef * s + x_coef * x`, with
    /// `score_coef = beta^2 alpha_dot / alpha - beta_dot beta` and
    /// `x_coef = alpha_dot / alpha`.
    pub fn conversion_coefficients(&self, t: f64) -> Result<(f64, f64)> {
        let s = self.schedule.eval(t)?;
        if s.alpha == 0.0 {
            return Err(FlowError::Singularity {
                what: "alpha_t = 0 in score-to-velocity conversion",
                t,
            });
        }
        let score_coef = s.beta * s.beta * s.alpha_dot / s.alpha - s.beta_dot * s.beta;
        let x_coef = s.alpha_dot / s.alpha;
        Ok((score_coef, x_coef))
    }

    /// Convert a score into a velocity:
    /// `u = (beta^2 alpha_dot / alpha - beta_dot beta) s + (alpha_dot / alpha) x`.
    pub fn score_to_velocity(&self, x: &[f64], t: f64, score: &[f64]) -> Result<Vec<f64>> {
        self.check_dim("x", x)?;
        self.check_dim("score", score)?;
        let (score_coef, x_coef) = self.conversion_coefficients(t)?;
        Ok(x.iter()
            .zip(score)
            .map(|(&xi, &si)| score_coef * si + x_coef * xi)
            .collect())
    }

    /// Convert a velocity into a score:
    /// `s = (alpha u - alpha_dot x) / (beta^2 alpha_dot - alpha beta_dot beta)`.
    ///
    /// The denominator is positive for `t` in `[0, 1)` for both built-in
    /// schedules and vanishes exactly at `t = 1`.
    pub fn velocity_to_score(&self, x: &[f64], t: f64, velocity: &[f64]) -> Result<Vec<f64>> {
        self.check_dim("x", x)?;
        self.check_dim("velocity", velocity)?;
        let s = self.schedule.eval(t)?;
        let denom = s.beta * s.beta * s.alpha_dot - s.alpha * s.beta_dot * s.beta;
        if denom == 0.0 {
            return Err(FlowError::Singularity {
                what: "beta^2 alpha_dot - alpha beta_dot beta = 0 in velocity-to-score conversion",
                t,
            });
        }
        Ok(x.iter()
            .zip(velocity)
            .map(|(&xi, &ui)| (s.alpha * ui - s.alpha_dot * xi) / denom)
            .collect())
    }
}
