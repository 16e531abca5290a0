//! Brownian motion and ODE/SDE integrators.
//!
//! The simulation backbone: Euler and Heun for ODEs, Euler-Maruyama for SDEs,
//! and Langevin dynamics as an SDE with drift `(sigma^2 / 2) * score`.
//!
//! Update rules, with step size `h`:
//!
//! ```text
//! Euler:           X_{t+h} = X_t + h u_t(X_t)
//! Heun:            X'      = X_t + h u_t(X_t)
//!                  X_{t+h} = X_t + (h/2) (u_t(X_t) + u_{t+h}(X'))
//! Euler-Maruyama:  X_{t+h} = X_t + h u_t(X_t) + sqrt(h) sigma_t eps,  eps ~ N(0, I)
//! Brownian motion: W_{t+h} = W_t + sqrt(h) eps
//! ```
//!
//! Noise is drawn per step inside the integrator, so memory stays O(1) per
//! path. Euler and Euler-Maruyama evaluate the field at the left endpoint of
//! each step; with a zero diffusion coefficient, Euler-Maruyama skips the
//! noise draw entirely and is bitwise identical to Euler.

use crate::error::{FlowError, Result};
use crate::field::VectorField;
use crate::rng::{standard_normal, FlowRng};

/// A uniform time grid `start + k h`, `k = 0..n_steps`, `h = (end - start) / n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    start: f64,
    end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(FlowError::Domain("time grid needs at least one step".into()));
        }
        if !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(FlowError::Domain(format!(
                "invalid time grid [{start}, {end}]"
            )));
        }
        Ok(Self { start, end, n_steps })
    }

    /// The grid on `[0, 1]` used for sampling.
    pub fn unit(n_steps: usize) -> Result<Self> {
        Self::new(0.0, 1.0, n_steps)
    }

    pub fn step(&self) -> f64 {
        (self.end - self.start) / self.n_steps as f64
    }

    /// Grid point `k`; the last point is `end` exactly.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.end
        } else {
            self.start + k as f64 * self.step()
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }
}

/// One simulated path: a time grid plus the recorded states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Diffusion coefficient `sigma_t` of an SDE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffusionCoefficient {
    /// No diffusion: the SDE is a flow.
    Zero,
    /// A constant `sigma >= 0`.
    Constant(f64),
}

impl DiffusionCoefficient {
    pub fn constant(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(FlowError::Domain(format!(
                "diffusion coefficient must be >= 0, got {sigma}"
            )));
        }
        Ok(if sigma == 0.0 {
            DiffusionCoefficient::Zero
        } else {
            DiffusionCoefficient::Constant(sigma)
        })
    }

    pub fn eval(&self, _t: f64) -> f64 {
        match self {
            DiffusionCoefficient::Zero => 0.0,
            DiffusionCoefficient::Constant(s) => *s,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DiffusionCoefficient::Zero)
    }
}

fn check_finite(x: &[f64], t: f64, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::Simulation {
            t,
            detail: format!("{what} is non-finite: {x:?}"),
        });
    }
    Ok(())
}

fn check_start(field: &impl VectorField, x0: &[f64]) -> Result<()> {
    if x0.len() != field.dim() {
        return Err(FlowError::Domain(format!(
            "initial state has dimension {} but field has dimension {}",
            x0.len(),
            field.dim()
        )));
    }
    check_finite(x0, 0.0, "initial state")
}

/// Simulate an approximate Brownian motion on the grid, starting at 0.
pub fn brownian_path(rng: &mut FlowRng, grid: &TimeGrid, dim: usize) -> Trajectory {
    let h = grid.step();
    let sqrt_h = h.sqrt();
    let mut w = vec![0.0; dim];
    let mut times = Vec::with_capacity(grid.n_steps() + 1);
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    times.push(grid.time(0));
    states.push(w.clone());
    for k in 0..grid.n_steps() {
        for wi in w.iter_mut() {
            *wi += sqrt_h * standard_normal(rng);
        }
        times.push(grid.time(k + 1));
        states.push(w.clone());
    }
    Trajectory { times, states }
}

/// Euler simulation recording every state.
pub fn simulate_euler(
    field: &impl VectorField,
    x0: &[f64],
    grid: &TimeGrid,
) -> Result<Trajectory> {
    check_start(field, x0)?;
    let h = grid.step();
    let mut x = x0.to_vec();
    let mut times = vec![grid.time(0)];
    let mut states = vec![x.clone()];
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        euler_step(field, &mut x, t, h)?;
        times.push(grid.time(k + 1));
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Euler simulation returning only the terminal state.
pub fn euler_terminal(field: &impl VectorField, x0: &[f64], grid: &TimeGrid) -> Result<Vec<f64>> {
    check_start(field, x0)?;
    let h = grid.step();
    let mut x = x0.to_vec();
    for k in 0..grid.n_steps() {
        euler_step(field, &mut x, grid.time(k), h)?;
    }
    Ok(x)
}

fn euler_step(field: &impl VectorField, x: &mut [f64], t: f64, h: f64) -> Result<()> {
    let u = field.eval(x, t)?;
    check_finite(&u, t, "field value")?;
    for (xi, ui) in x.iter_mut().zip(&u) {
        *xi += h * ui;
    }
    check_finite(x, t, "state")
}

/// Heun (explicit trapezoidal) simulation recording every state.
///
/// Takes an Euler guess of the new state, then averages the field at the
/// current state and at the guess. Second-order accurate.
pub fn simulate_heun(field: &impl VectorField, x0: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    check_start(field, x0)?;
    let h = grid.step();
    let mut x = x0.to_vec();
    let mut times = vec![grid.time(0)];
    let mut states = vec![x.clone()];
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        let t_next = grid.time(k + 1);
        let u_here = field.eval(&x, t)?;
        check_finite(&u_here, t, "field value")?;
        let guess: Vec<f64> = x.iter().zip(&u_here).map(|(&xi, &ui)| xi + h * ui).collect();
        let u_guess = field.eval(&guess, t_next)?;
        check_finite(&u_guess, t_next, "field value")?;
        for ((xi, &uh), &ug) in x.iter_mut().zip(&u_here).zip(&u_guess) {
            *xi += 0.5 * h * (uh + ug);
        }
        check_finite(&x, t, "state")?;
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Heun simulation returning only the terminal state.
pub fn heun_terminal(field: &impl VectorField, x0: &[f64], grid: &TimeGrid) -> Result<Vec<f64>> {
    simulate_heun(field, x0, grid).map(|tr| tr.states.into_iter().last().unwrap())
}

/// Euler-Maruyama simulation recording every state.
pub fn simulate_em(
    field: &impl VectorField,
    sigma: &DiffusionCoefficient,
    x0: &[f64],
    grid: &TimeGrid,
    rng: &mut FlowRng,
) -> Result<Trajectory> {
    check_start(field, x0)?;
    let h = grid.step();
    let mut x = x0.to_vec();
    let mut times = vec![grid.time(0)];
    let mut states = vec![x.clone()];
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        em_step(field, sigma, &mut x, t, h, rng)?;
        times.push(grid.time(k + 1));
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Euler-Maruyama simulation returning only the terminal state.
pub fn em_terminal(
    field: &impl VectorField,
    sigma: &DiffusionCoefficient,
    x0: &[f64],
    grid: &TimeGrid,
    rng: &mut FlowRng,
) -> Result<Vec<f64>> {
    check_start(field, x0)?;
    let h = grid.step();
    let mut x = x0.to_vec();
    for k in 0..grid.n_steps() {
        em_step(field, sigma, &mut x, grid.time(k), h, rng)?;
    }
    Ok(x)
}

fn em_step(
    field: &impl VectorField,
    sigma: &DiffusionCoefficient,
    x: &mut [f64],
    t: f64,
    h: f64,
    rng: &mut FlowRng,
) -> Result<()> {
    let u = field.eval(x, t)?;
    check_finite(&u, t, "field value")?;
    let sig = sigma.eval(t);
    for (xi, ui) in x.iter_mut().zip(&u) {
        *xi += h * ui;
    }
    if sig > 0.0 {
        let scale = h.sqrt() * sig;
        for xi in x.iter_mut() {
            *xi += scale * standard_normal(rng);
        }
    }
    check_finite(x, t, "state")
}

/// Langevin dynamics `dX = (sigma^2 / 2) score(X, t) dt + sigma dW`.
///
/// Delegates to Euler-Maruyama with drift `(sigma^2 / 2) * score`.
pub fn simulate_langevin(
    score: &impl VectorField,
    sigma: f64,
    x0: &[f64],
    grid: &TimeGrid,
    rng: &mut FlowRng,
) -> Result<Trajectory> {
    let drift = langevin_drift(score, sigma)?;
    simulate_em(
        &drift,
        &DiffusionCoefficient::Constant(sigma),
        x0,
        grid,
        rng,
    )
}

/// Langevin dynamics returning only the terminal state.
pub fn langevin_terminal(
    score: &impl VectorField,
    sigma: f64,
    x0: &[f64],
    grid: &TimeGrid,
    rng: &mut FlowRng,
) -> Result<Vec<f64>> {
    let drift = langevin_drift(score, sigma)?;
    em_terminal(
        &drift,
        &DiffusionCoefficient::Constant(sigma),
        x0,
        grid,
        rng,
    )
}

fn langevin_drift<'a, F: VectorField>(score: &'a F, sigma: f64) -> Result<LangevinDrift<'a, F>> {
    if !(sigma > 0.0) {
        return Err(FlowError::Domain(format!(
            "langevin dynamics needs sigma > 0, got {sigma}"
        )));
    }
    Ok(LangevinDrift { score, sigma })
}

struct LangevinDrift<'a, F> {
    score: &'a F,
    sigma: f64,
}

impl<F: VectorField> VectorField for LangevinDrift<'_, F> {
    fn dim(&self) -> usize {
        self.score.dim()
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let half_sig2 = 0.5 * self.sigma * self.sigma;
        Ok(self
            .score
            .eval(x, t)?
            .into_iter()
            .map(|s| half_sig2 * s)
            .collect())
    }
}

/// Fit the empirical convergence order of terminal errors against step sizes
/// by least-squares on `log error = c - order * log h`.
pub fn fit_convergence_order(steps: &[f64], errors: &[f64]) -> f64 {
    assert_eq!(steps.len(), errors.len());
    let n = steps.len() as f64;
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}
