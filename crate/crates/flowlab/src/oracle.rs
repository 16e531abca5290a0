//! Closed-form marginal oracles for finite datasets and PDE residual
//! validators.
//!
//! For an empirical data distribution (a finite set of weighted points), the
//! marginal quantities of a Gaussian path reduce to finite sums:
//!
//! ```text
//! p_t(x)          = sum_i w_i N(x; alpha_t z_i, beta_t^2 I)
//! u_t(x)          = sum_i gamma_i(x, t) u_t(x | z_i)
//! grad log p_t(x) = sum_i gamma_i(x, t) grad log p_t(x | z_i)
//! ```
//!
//! where `gamma_i` are the posterior weights `w_i p_t(x|z_i) / p_t(x)`,
//! computed here with a log-sum-exp stabilized softmax: near `t = 1` the
//! Gaussian weights underflow, and direct sums fail exactly where diffusion
//! sampling operates.
//!
//! The module also hosts finite-difference residuals for the continuity
//! equation `d/dt p = -div(p u)` and the Fokker-Planck equation
//! `d/dt p = -div(p u) + (sigma^2 / 2) laplacian(p)`, plus a deterministic
//! quadrature probe for the flow-matching loss decomposition in d = 1.

use crate::dynamics::DiffusionCoefficient;
use crate::error::{FlowError, Result};
use crate::field::{ScalarField, VectorField};
use crate::paths::{GaussianPath, TimeClamp};
use crate::rng::FlowRng;

/// A finite set of weighted points in `R^d`, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    dim: usize,
}

impl Dataset {
    /// A dataset with explicit weights (must be non-negative and sum to 1
    /// within 1e-12) and optional labels.
    pub fn new(
        points: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(FlowError::Domain("dataset must be non-empty".into()));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(FlowError::Domain("dataset points need dimension >= 1".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(FlowError::Domain(format!(
                    "point {i} has dimension {} but point 0 has {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(FlowError::Domain(format!("point {i} is non-finite")));
            }
        }
        if let Some(ref labels) = labels {
            if labels.len() != points.len() {
                return Err(FlowError::Domain(format!(
                    "{} labels for {} points",
                    labels.len(),
                    points.len()
                )));
            }
        }
        let weights = match weights {
            Some(w) => {
                if w.len() != points.len() {
                    return Err(FlowError::Domain(format!(
                        "{} weights for {} points",
                        w.len(),
                        points.len()
                    )));
                }
                if w.iter().any(|&v| !(v >= 0.0)) {
                    return Err(FlowError::Domain("weights must be non-negative".into()));
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(FlowError::Domain(format!(
                        "weights sum to {total}, expected 1"
                    )));
                }
                w
            }
            None => vec![1.0 / points.len() as f64; points.len()],
        };
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        Ok(Self {
            points,
            labels,
            weights,
            cumulative,
            dim,
        })
    }

    /// Uniformly weighted, unlabeled.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(points, None, None)
    }

    /// Uniformly weighted with labels.
    pub fn labeled(points: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        Self::new(points, Some(labels), None)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// Number of distinct classes (`max label + 1`), or 0 when unlabeled.
    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|&m| m + 1))
            .unwrap_or(0)
    }

    /// Draw a point index according to the weights (inverse CDF).
    pub fn sample_index(&self, rng: &mut FlowRng) -> usize {
        let u: f64 = rand::Rng::gen::<f64>(rng);
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).unwrap())
        {
            Ok(i) | Err(i) => i.min(self.points.len() - 1),
        }
    }

    /// The sub-dataset of one class, uniformly re-weighted.
    pub fn class_subset(&self, class: usize) -> Result<Dataset> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| FlowError::Domain("dataset has no labels".into()))?;
        let points: Vec<Vec<f64>> = self
            .points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .map(|(p, _)| p.clone())
            .collect();
        if points.is_empty() {
            return Err(FlowError::Domain(format!("no points with label {class}")));
        }
        Dataset::uniform(points)
    }
}

fn check_path_data(path: &GaussianPath, data: &Dataset, x: &[f64]) -> Result<()> {
    if path.dim != data.dim() {
        return Err(FlowError::Domain(format!(
            "path dimension {} does not match dataset dimension {}",
            path.dim,
            data.dim()
        )));
    }
    if x.len() != path.dim {
        return Err(FlowError::Domain(format!(
            "x has dimension {} but path has {}",
            x.len(),
            path.dim
        )));
    }
    Ok(())
}

/// Log of the marginal density `log p_t(x)` via log-sum-exp over components.
pub fn marginal_log_density(
    path: &GaussianPath,
    data: &Dataset,
    x: &[f64],
    t: f64,
) -> Result<f64> {
    check_path_data(path, data, x)?;
    let mut terms = Vec::with_capacity(data.len());
    for (z, &w) in data.points().iter().zip(data.weights()) {
        if w == 0.0 {
            continue;
        }
        terms.push(w.ln() + path.cond_log_density(x, z, t)?);
    }
    Ok(log_sum_exp(&terms))
}

/// The marginal density `p_t(x) = sum_i w_i N(x; alpha_t z_i, beta_t^2 I)`.
pub fn marginal_density(path: &GaussianPath, data: &Dataset, x: &[f64], t: f64) -> Result<f64> {
    Ok(marginal_log_density(path, data, x, t)?.exp())
}

/// Posterior weights `gamma_i = w_i p_t(x|z_i) / p_t(x)` (softmax in log space).
pub fn posterior_weights(
    path: &GaussianPath,
    data: &Dataset,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_path_data(path, data, x)?;
    let mut logs = Vec::with_capacity(data.len());
    for (z, &w) in data.points().iter().zip(data.weights()) {
        if w == 0.0 {
            logs.push(f64::NEG_INFINITY);
        } else {
            logs.push(w.ln() + path.cond_log_density(x, z, t)?);
        }
    }
    let lse = log_sum_exp(&logs);
    Ok(logs.into_iter().map(|l| (l - lse).exp()).collect())
}

/// The marginal vector field: posterior-weighted sum of conditional fields.
pub fn marginal_vector_field(
    path: &GaussianPath,
    data: &Dataset,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let gamma = posterior_weights(path, data, x, t)?;
    let mut out = vec![0.0; path.dim];
    for (i, z) in data.points().iter().enumerate() {
        if gamma[i] == 0.0 {
            continue;
        }
        let u = path.cond_vector_field(x, z, t)?;
        for (o, ui) in out.iter_mut().zip(&u) {
            *o += gamma[i] * ui;
        }
    }
    Ok(out)
}

/// The marginal score: posterior-weighted sum of conditional scores.
pub fn marginal_score(path: &GaussianPath, data: &Dataset, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let gamma = posterior_weights(path, data, x, t)?;
    let mut out = vec![0.0; path.dim];
    for (i, z) in data.points().iter().enumerate() {
        if gamma[i] == 0.0 {
            continue;
        }
        let s = path.cond_score(x, z, t)?;
        for (o, si) in out.iter_mut().zip(&s) {
            *o += gamma[i] * si;
        }
    }
    Ok(out)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

/// [`ScalarField`] view of the marginal density.
pub struct MarginalDensity<'a> {
    pub path: &'a GaussianPath,
    pub data: &'a Dataset,
}

impl ScalarField for MarginalDensity<'_> {
    fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        marginal_density(self.path, self.data, x, t)
    }
}

/// [`VectorField`] view of the marginal vector field.
pub struct MarginalVelocity<'a> {
    pub path: &'a GaussianPath,
    pub data: &'a Dataset,
}

impl VectorField for MarginalVelocity<'_> {
    fn dim(&self) -> usize {
        self.path.dim
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        marginal_vector_field(self.path, self.data, x, t)
    }
}

/// [`VectorField`] view of the marginal score.
pub struct MarginalScoreField<'a> {
    pub path: &'a GaussianPath,
    pub data: &'a Dataset,
}

impl VectorField for MarginalScoreField<'_> {
    fn dim(&self) -> usize {
        self.path.dim
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        marginal_score(self.path, self.data, x, t)
    }
}

/// The SDE-extension drift `u_t(x) + (sigma^2 / 2) grad log p_t(x)`, which
/// follows the same probability path as the marginal ODE.
pub struct SdeExtensionDrift<'a> {
    pub path: &'a GaussianPath,
    pub data: &'a Dataset,
    pub sigma: f64,
}

impl VectorField for SdeExtensionDrift<'_> {
    fn dim(&self) -> usize {
        self.path.dim
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let u = marginal_vector_field(self.path, self.data, x, t)?;
        if self.sigma == 0.0 {
            return Ok(u);
        }
        let s = marginal_score(self.path, self.data, x, t)?;
        let half_sig2 = 0.5 * self.sigma * self.sigma;
        Ok(u.iter().zip(&s).map(|(ui, si)| ui + half_sig2 * si).collect())
    }
}

/// Central finite-difference step sizes for the residual validators.
///
/// The space step scales as `space * (1 + |x_i|)` per coordinate, balancing
/// truncation against round-off in 64-bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    pub space: f64,
    pub time: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self {
            space: 1e-4,
            time: 1e-4,
        }
    }
}

impl FdSteps {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            space: self.space * factor,
            time: self.time * factor,
        }
    }
}

/// Continuity-equation residual `d/dt p + div(p u)` at `(x, t)`.
///
/// Both derivatives are central differences; for a density/field pair that
/// actually satisfies the continuity equation the residual is pure
/// discretization error, second order in the steps.
pub fn continuity_residual(
    density: &impl ScalarField,
    field: &impl VectorField,
    x: &[f64],
    t: f64,
    steps: FdSteps,
) -> Result<f64> {
    let dp_dt = time_derivative(density, x, t, steps.time)?;
    let div = divergence_of_product(density, field, x, t, steps.space)?;
    Ok(dp_dt + div)
}

/// Fokker-Planck residual `d/dt p + div(p u) - (sigma_t^2 / 2) laplacian(p)`.
///
/// With `sigma = 0` this equals [`continuity_residual`] exactly. For the
/// SDE-extension drift `u + (sigma^2 / 2) grad log p` the residual vanishes
/// up to discretization error.
pub fn fokker_planck_residual(
    density: &impl ScalarField,
    field: &impl VectorField,
    sigma: &DiffusionCoefficient,
    x: &[f64],
    t: f64,
    steps: FdSteps,
) -> Result<f64> {
    let cont = continuity_residual(density, field, x, t, steps)?;
    let sig = sigma.eval(t);
    if sig == 0.0 {
        return Ok(cont);
    }
    let lap = laplacian(density, x, t, steps.space)?;
    Ok(cont - 0.5 * sig * sig * lap)
}

fn time_derivative(density: &impl ScalarField, x: &[f64], t: f64, ht: f64) -> Result<f64> {
    let clamp = TimeClamp::default();
    if t - ht < clamp.low() || t + ht > clamp.high() {
        return Err(FlowError::Domain(format!(
            "time stencil [{}, {}] exits [{}, {}]",
            t - ht,
            t + ht,
            clamp.low(),
            clamp.high()
        )));
    }
    let hi = density.eval(x, t + ht)?;
    let lo = density.eval(x, t - ht)?;
    Ok((hi - lo) / (2.0 * ht))
}

fn divergence_of_product(
    density: &impl ScalarField,
    field: &impl VectorField,
    x: &[f64],
    t: f64,
    h_space: f64,
) -> Result<f64> {
    let mut div = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = h_space * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let plus = density.eval(&probe, t)? * field.eval(&probe, t)?[i];
        probe[i] = x[i] - h;
        let minus = density.eval(&probe, t)? * field.eval(&probe, t)?[i];
        probe[i] = x[i];
        div += (plus - minus) / (2.0 * h);
    }
    Ok(div)
}

fn laplacian(density: &impl ScalarField, x: &[f64], t: f64, h_space: f64) -> Result<f64> {
    let center = density.eval(x, t)?;
    let mut lap = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = h_space * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let plus = density.eval(&probe, t)?;
        probe[i] = x[i] - h;
        let minus = density.eval(&probe, t)?;
        probe[i] = x[i];
        lap += (plus - 2.0 * center + minus) / (h * h);
    }
    Ok(lap)
}

/// A residual evaluation over a batch of probe points.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Probe locations as `(x, t)` pairs.
    pub probes: Vec<(Vec<f64>, f64)>,
    /// Residual at each probe.
    pub residuals: Vec<f64>,
    pub fd_step_space: f64,
    pub fd_step_time: f64,
}

impl ResidualReport {
    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r: &f64| m.max(r.abs()))
    }
}

/// Draw residual probes from the marginal path itself: `z` from the data,
/// `t` uniform in `[t_lo, t_hi]`, `x ~ p_t(.|z)`. Residuals matter where
/// probability mass lives, not on uniform grids.
pub fn mass_weighted_probes(
    path: &GaussianPath,
    data: &Dataset,
    n: usize,
    t_lo: f64,
    t_hi: f64,
    rng: &mut FlowRng,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut probes = Vec::with_capacity(n);
    for _ in 0..n {
        let i = data.sample_index(rng);
        let t = t_lo + (t_hi - t_lo) * rand::Rng::gen::<f64>(rng);
        let x = path.cond_sample(data.point(i), t, rng)?;
        probes.push((x, t));
    }
    Ok(probes)
}

/// Evaluate the Fokker-Planck residual at every probe.
pub fn residual_report(
    density: &impl ScalarField,
    field: &impl VectorField,
    sigma: &DiffusionCoefficient,
    probes: &[(Vec<f64>, f64)],
    steps: FdSteps,
) -> Result<ResidualReport> {
    let mut residuals = Vec::with_capacity(probes.len());
    for (x, t) in probes {
        let r = fokker_planck_residual(density, field, sigma, x, *t, steps)?;
        if !r.is_finite() {
            return Err(FlowError::Domain(format!(
                "non-finite residual at x = {x:?}, t = {t}"
            )));
        }
        residuals.push(r);
    }
    Ok(ResidualReport {
        probes: probes.to_vec(),
        residuals,
        fd_step_space: steps.space,
        fd_step_time: steps.time,
    })
}

/// Relative L2 distance between two fields under the marginal path measure,
/// evaluated on a `(t, x)` grid of quadrature nodes (d = 1):
///
/// ```text
/// sqrt( sum p_t(x) ||a - b||^2  /  sum p_t(x) ||b||^2 )
/// ```
///
/// This is the norm the matching losses themselves are stated in; grid
/// points carry exactly as much weight as the path assigns them.
pub fn mass_weighted_grid_error(
    path: &GaussianPath,
    data: &Dataset,
    approx: &impl VectorField,
    exact: &impl VectorField,
    t_nodes: &[f64],
    x_nodes: &[f64],
) -> Result<f64> {
    if path.dim != 1 {
        return Err(FlowError::Domain(
            "mass_weighted_grid_error requires d = 1".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &t in t_nodes {
        for &xv in x_nodes {
            let x = [xv];
            let p = marginal_density(path, data, &x, t)?;
            let a = approx.eval(&x, t)?[0];
            let b = exact.eval(&x, t)?[0];
            num += p * (a - b) * (a - b);
            den += p * b * b;
        }
    }
    if den == 0.0 {
        return Err(FlowError::Domain(
            "reference field vanishes on the whole grid".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// Tensor-product trapezoidal quadrature spec for the loss probe (d = 1).
#[derive(Debug, Clone, Copy)]
pub struct Quadrature1d {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_nodes: usize,
}

impl Default for Quadrature1d {
    fn default() -> Self {
        Self {
            x_lo: -10.0,
            x_hi: 10.0,
            n_nodes: 2001,
        }
    }
}

/// Default time nodes for the loss probe: 21 nodes on `[0.01, 0.99]`.
///
/// The lower cutoff keeps the late-time components wide enough for the
/// x-grid to resolve (trapezoid needs roughly `beta >= node spacing`).
pub fn default_loss_gap_t_nodes() -> Vec<f64> {
    (0..21).map(|k| 0.01 + 0.049 * k as f64).collect()
}

/// Quadrature probe for the flow-matching loss decomposition in d = 1.
///
/// Computes, for each of the two fields, the marginal-regression loss and
/// the conditional-regression loss by deterministic quadrature over `(t, x)`
/// (the data variable is a finite sum), and returns the two differences
/// `L_marginal - L_conditional`. The difference is a constant independent of
/// the field: the field-dependent terms cancel identically at the level of
/// the discrete sums, so the two returned gaps agree to rounding regardless
/// of quadrature resolution.
pub fn loss_gap_probe(
    path: &GaussianPath,
    data: &Dataset,
    field_a: &impl VectorField,
    field_b: &impl VectorField,
    quad: Quadrature1d,
    t_nodes: &[f64],
) -> Result<(f64, f64)> {
    if path.dim != 1 || data.dim() != 1 {
        return Err(FlowError::Domain("loss_gap_probe requires d = 1".into()));
    }
    if quad.n_nodes < 2 || t_nodes.len() < 2 {
        return Err(FlowError::Domain("quadrature needs at least 2 nodes".into()));
    }

    // Reject ranges that clip more than ~1e-8 of any component's mass
    // (6 standard deviations).
    for &t in t_nodes {
        let s = path.schedule.eval(t)?;
        for z in data.points() {
            let mean = s.alpha * z[0];
            if mean - 6.0 * s.beta < quad.x_lo || mean + 6.0 * s.beta > quad.x_hi {
                return Err(FlowError::Domain(format!(
                    "quadrature range [{}, {}] clips component at {mean} (beta = {}) at t = {t}",
                    quad.x_lo, quad.x_hi, s.beta
                )));
            }
        }
    }

    let hx = (quad.x_hi - quad.x_lo) / (quad.n_nodes - 1) as f64;
    let t_span = t_nodes[t_nodes.len() - 1] - t_nodes[0];

    let mut loss_marginal = [0.0f64; 2];
    let mut loss_conditional = [0.0f64; 2];

    for (ti, &t) in t_nodes.iter().enumerate() {
        // Trapezoid weight in t, normalized to average over the node range.
        let wt_raw = if ti == 0 {
            0.5 * (t_nodes[1] - t_nodes[0])
        } else if ti == t_nodes.len() - 1 {
            0.5 * (t_nodes[ti] - t_nodes[ti - 1])
        } else {
            0.5 * (t_nodes[ti + 1] - t_nodes[ti - 1])
        };
        let wt = wt_raw / t_span;

        for k in 0..quad.n_nodes {
            let x = [quad.x_lo + k as f64 * hx];
            let wx = if k == 0 || k == quad.n_nodes - 1 { 0.5 * hx } else { hx };

            // Component densities and conditional targets.
            let mut p = 0.0;
            let mut cond: Vec<(f64, f64)> = Vec::with_capacity(data.len());
            for (z, &w) in data.points().iter().zip(data.weights()) {
                if w == 0.0 {
                    continue;
                }
                let pi = w * path.cond_log_density(&x, z, t)?.exp();
                p += pi;
                if pi > 0.0 {
                    let u = path.cond_vector_field(&x, z, t)?[0];
                    cond.push((pi, u));
                }
            }
            if p == 0.0 {
                continue;
            }
            // Marginal target consistent with the same component sums.
            let u_marg: f64 = cond.iter().map(|(pi, u)| pi * u).sum::<f64>() / p;

            let fa = field_a.eval(&x, t)?[0];
            let fb = field_b.eval(&x, t)?[0];
            for (which, f) in [(0usize, fa), (1usize, fb)] {
                let dm = f - u_marg;
                loss_marginal[which] += wt * wx * p * dm * dm;
                for &(pi, u) in &cond {
                    let dc = f - u;
                    loss_conditional[which] += wt * wx * pi * dc * dc;
                }
            }
        }
    }

    Ok((
        loss_marginal[0] - loss_conditional[0],
        loss_marginal[1] - loss_conditional[1],
    ))
}
