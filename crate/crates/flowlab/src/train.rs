//! Training loops: conditional flow matching, conditional score matching,
//! and noise prediction, with label-drop guidance training and a fixed Adam
//! optimizer.
//!
//! Every loss draws `(z, t, eps)` per item, forms the corrupted point
//! `x = alpha_t z + beta_t eps`, and regresses the network onto a per-sample
//! target:
//!
//! ```text
//! cfm:       target = alpha_dot_t z + beta_dot_t eps   (condot: z - eps)
//! csm:       target = -eps / beta_t                    (t clamped away from 1)
//! ddpm_eps:  target = eps
//! ```
//!
//! When the network is class-conditional, each item's label is replaced by
//! the null label with probability `label_drop_eta`, which trains the
//! conditional and unconditional fields in one network.
//!
//! Runs are bit-reproducible: the parameter trajectory is a deterministic
//! function of `(seed, config, data)`.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::net::{GradSet, Mlp, MlpSpec, TrainItem};
use crate::oracle::Dataset;
use crate::paths::{GaussianPath, ScheduleKind, TimeClamp};
use crate::rng::{standard_normal_vec, stream, FlowRng};

/// Which per-sample regression target to train on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Regress a velocity net onto the conditional vector field.
    Cfm,
    /// Regress a score net onto the conditional score.
    Csm,
    /// Regress a noise predictor onto the corrupting noise; the score is
    /// recovered afterwards as `s = -eps_net / beta_t`.
    DdpmEps,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// Probability of replacing an item's label with the null label.
    #[serde(default = "default_label_drop_eta")]
    pub label_drop_eta: f64,
    /// Time window for score-based losses; cfm and ddpm_eps use all of
    /// [0, 1). Defaults to a beta floor of 0.05: score targets stay bounded
    /// by 20 |eps| and the window covers every evaluation grid.
    #[serde(default = "default_train_clamp")]
    pub t_clamp: TimeClamp,
    #[serde(default)]
    pub seed: u64,
}

fn default_schedule() -> ScheduleKind {
    ScheduleKind::Condot
}
fn default_batch_size() -> usize {
    256
}
fn default_n_steps() -> usize {
    5000
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_label_drop_eta() -> f64 {
    0.1
}
fn default_train_clamp() -> TimeClamp {
    TimeClamp { eps_low: 1e-4, eps_high: 0.05 }
}

impl TrainConfig {
    pub fn new(loss_kind: LossKind) -> Self {
        Self {
            loss_kind,
            schedule: default_schedule(),
            batch_size: default_batch_size(),
            n_steps: default_n_steps(),
            learning_rate: default_learning_rate(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            label_drop_eta: default_label_drop_eta(),
            t_clamp: default_train_clamp(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(FlowError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(FlowError::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.label_drop_eta) {
            return Err(FlowError::InvalidConfig(format!(
                "label_drop_eta must be in [0, 1], got {}",
                self.label_drop_eta
            )));
        }
        Ok(())
    }
}

/// Adam moment accumulators, shaped like the flattened parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: usize,
    /// Planned total steps for the cosine learning-rate decay (0 = constant).
    pub horizon: usize,
}

impl OptimizerState {
    pub fn new(spec: &MlpSpec) -> Self {
        Self::with_horizon(spec, 0)
    }

    /// `horizon` is the total number of planned steps; 0 disables the decay
    /// and keeps the learning rate constant.
    pub fn with_horizon(spec: &MlpSpec, horizon: usize) -> Self {
        let n = spec.param_count();
        Self {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
            horizon,
        }
    }

    /// Cosine-decayed learning rate over the training horizon. Constant-rate
    /// Adam stalls at a gradient-noise floor on the conditional regression
    /// targets; the decay removes it while staying fully deterministic.
    fn scheduled_lr(&self, config: &TrainConfig) -> f64 {
        if self.horizon == 0 {
            return config.learning_rate;
        }
        // Hold the configured rate for the first half of the run, then
        // anneal with a cosine to zero.
        let progress = (self.step as f64 - 1.0).max(0.0) / self.horizon as f64;
        if progress < 0.5 {
            config.learning_rate
        } else {
            let phase = (progress - 0.5) * 2.0;
            config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
        }
    }
}

/// One Adam update with bias correction. Deterministic; fails on non-finite
/// gradients with the current step index.
pub fn adam_step(
    mlp: &mut Mlp,
    grads: &GradSet,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(FlowError::Training {
            step: state.step,
            detail: "non-finite gradients".into(),
        });
    }
    let g = Mlp::flatten_grads(grads);
    let mut params = mlp.flatten();
    if g.len() != params.len() {
        return Err(FlowError::Domain(format!(
            "gradient size {} does not match parameter size {}",
            g.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let bias1 = 1.0 - b1.powf(t);
    let bias2 = 1.0 - b2.powf(t);
    let lr = state.scheduled_lr(config);
    for i in 0..params.len() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = b1 * *m + (1.0 - b1) * g[i];
        *v = b2 * *v + (1.0 - b2) * g[i] * g[i];
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
    mlp.set_from_flat(&params)
}

/// Draw one training batch.
///
/// Per item the generator is consumed in a fixed order: data index, time,
/// noise vector, then (conditional nets only) the label-drop coin.
pub fn draw_batch(
    path: &GaussianPath,
    data: &Dataset,
    config: &TrainConfig,
    conditional: bool,
    rng: &mut FlowRng,
) -> Result<Vec<TrainItem>> {
    if conditional && data.labels().is_none() {
        return Err(FlowError::Domain(
            "conditional training requires a labeled dataset".into(),
        ));
    }
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.batch_size {
        let i = data.sample_index(rng);
        let u: f64 = rand::Rng::gen(rng);
        let t = match config.loss_kind {
            // Score targets divide by beta_t; keep t inside the clamp window.
            LossKind::Csm => config.t_clamp.low() + u * (config.t_clamp.high() - config.t_clamp.low()),
            LossKind::Cfm | LossKind::DdpmEps => u,
        };
        let eps = standard_normal_vec(rng, path.dim);
        let s = path.schedule.eval(t)?;
        let z = data.point(i);
        let x: Vec<f64> = z
            .iter()
            .zip(&eps)
            .map(|(&zi, &ei)| s.alpha * zi + s.beta * ei)
            .collect();
        let target: Vec<f64> = match config.loss_kind {
            LossKind::Cfm => z
                .iter()
                .zip(&eps)
                .map(|(&zi, &ei)| s.alpha_dot * zi + s.beta_dot * ei)
                .collect(),
            LossKind::Csm => eps.iter().map(|&ei| -ei / s.beta).collect(),
            LossKind::DdpmEps => eps.clone(),
        };
        let y = if conditional {
            let drop: f64 = rand::Rng::gen(rng);
            if drop < config.label_drop_eta {
                None
            } else {
                data.label(i)
            }
        } else {
            None
        };
        batch.push(TrainItem { x, t, y, target });
    }
    Ok(batch)
}

/// Flow-matching batch loss: regress onto `alpha_dot z + beta_dot eps`.
pub fn cfm_batch_loss(
    mlp: &Mlp,
    path: &GaussianPath,
    data: &Dataset,
    rng: &mut FlowRng,
    config: &TrainConfig,
) -> Result<(f64, GradSet)> {
    let cfg = TrainConfig { loss_kind: LossKind::Cfm, ..config.clone() };
    let batch = draw_batch(path, data, &cfg, false, rng)?;
    mlp.mse_loss_and_grads(&batch)
}

/// Score-matching batch loss: regress onto `-eps / beta_t`.
pub fn csm_batch_loss(
    mlp: &Mlp,
    path: &GaussianPath,
    data: &Dataset,
    rng: &mut FlowRng,
    config: &TrainConfig,
) -> Result<(f64, GradSet)> {
    let cfg = TrainConfig { loss_kind: LossKind::Csm, ..config.clone() };
    let batch = draw_batch(path, data, &cfg, false, rng)?;
    mlp.mse_loss_and_grads(&batch)
}

/// Noise-prediction batch loss: regress onto `eps`.
pub fn ddpm_eps_batch_loss(
    mlp: &Mlp,
    path: &GaussianPath,
    data: &Dataset,
    rng: &mut FlowRng,
    config: &TrainConfig,
) -> Result<(f64, GradSet)> {
    let cfg = TrainConfig { loss_kind: LossKind::DdpmEps, ..config.clone() };
    let batch = draw_batch(path, data, &cfg, false, rng)?;
    mlp.mse_loss_and_grads(&batch)
}

/// Guidance training batch loss: flow matching with per-item label drop.
/// The regression target does not depend on the label.
pub fn cfg_batch_loss(
    mlp: &Mlp,
    path: &GaussianPath,
    data: &Dataset,
    rng: &mut FlowRng,
    config: &TrainConfig,
) -> Result<(f64, GradSet)> {
    if !mlp.spec.conditional() {
        return Err(FlowError::Domain(
            "cfg_batch_loss requires a class-conditional network".into(),
        ));
    }
    let cfg = TrainConfig { loss_kind: LossKind::Cfm, ..config.clone() };
    let batch = draw_batch(path, data, &cfg, true, rng)?;
    mlp.mse_loss_and_grads(&batch)
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub mlp: Mlp,
    /// `(step, batch loss)` recorded every 50 steps, starting at step 0.
    pub history: Vec<(usize, f64)>,
}

/// Interval at which the training loop records `(step, loss)` pairs.
pub const LOSS_RECORD_INTERVAL: usize = 50;

/// Run `n_steps` of batch loss + Adam. Labels are used whenever the network
/// is class-conditional (with label-drop), regardless of loss kind.
///
/// Initialization draws from stream 0 of the seed and batches from stream 1,
/// so the two never overlap.
pub fn train(config: &TrainConfig, data: &Dataset, spec: &MlpSpec) -> Result<TrainResult> {
    config.validate()?;
    spec.validate()?;
    if spec.dim != data.dim() {
        return Err(FlowError::InvalidConfig(format!(
            "model dim {} does not match dataset dim {}",
            spec.dim,
            data.dim()
        )));
    }
    if spec.conditional() {
        if data.labels().is_none() {
            return Err(FlowError::InvalidConfig(
                "conditional model requires a labeled dataset".into(),
            ));
        }
        if data.n_classes() > spec.n_classes {
            return Err(FlowError::InvalidConfig(format!(
                "dataset has {} classes but model supports {}",
                data.n_classes(),
                spec.n_classes
            )));
        }
    }
    let path = GaussianPath::new(crate::paths::NoiseSchedule::new(config.schedule), spec.dim);
    let mut mlp = Mlp::init(spec.clone(), config.seed)?;
    let mut opt = OptimizerState::with_horizon(spec, config.n_steps);
    let mut rng = stream(config.seed, 1);
    let mut history = Vec::new();
    for step in 0..config.n_steps {
        let batch = draw_batch(&path, data, config, spec.conditional(), &mut rng)?;
        let (loss, grads) = mlp.mse_loss_and_grads(&batch)?;
        if !loss.is_finite() {
            return Err(FlowError::Training {
                step,
                detail: format!("non-finite loss {loss}"),
            });
        }
        if step % LOSS_RECORD_INTERVAL == 0 {
            history.push((step, loss));
        }
        adam_step(&mut mlp, &grads, &mut opt, config)?;
    }
    Ok(TrainResult { mlp, history })
}
