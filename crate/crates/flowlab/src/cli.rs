//! Command-line entry point:
//!
//! - `flowlab train --config run.json --out dir` trains a model and writes
//!   `checkpoint.json` plus `loss_history.csv`.
//! - `flowlab sample --checkpoint ck.json --sampler euler|heun|em ...`
//!   generates samples and writes a CSV (and optionally a PPM scatter).
//! - `flowlab validate --suite <name>` runs a numerical check suite and
//!   writes one CSV row per check; exits 1 if any check fails.
//! - `flowlab export-path --config run.json --times 0,0.25,...` draws
//!   marginal-path samples at each time and writes CSVs/histograms.
//!
//! Exit codes: 0 success, 1 validation failure, 2 config error, 3 runtime
//! divergence. All commands are deterministic: identical inputs and seeds
//! produce byte-identical outputs.

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::data_eval::{histogram2d, make_dataset, DatasetSpec};
use crate::dynamics::{
    euler_terminal, fit_convergence_order, heun_terminal, DiffusionCoefficient, TimeGrid,
};
use crate::error::{FlowError, Result};
use crate::field::FnField;
use crate::guidance::{
    sample_diffusion, sample_flow, sample_flow_heun, sample_guided_ode, sample_guided_sde,
    GuidanceConfig, GuidedField, ScoreSource,
};
use crate::io::{
    heatmap_ppm, scatter_ppm, write_checks_csv, write_histogram_csv, write_loss_csv, write_ppm,
    write_samples_csv, CheckRow, Checkpoint,
};
use crate::net::{grad_check, Activation, Mlp, MlpField, MlpSpec, TrainItem};
use crate::oracle::{
    continuity_residual, default_loss_gap_t_nodes, fokker_planck_residual, loss_gap_probe,
    mass_weighted_probes, Dataset, FdSteps, MarginalDensity, MarginalVelocity, Quadrature1d,
    SdeExtensionDrift,
};
use crate::paths::{GaussianPath, NoiseSchedule, ScheduleKind};
use crate::rng::{seeded, standard_normal, standard_normal_vec, stream};
use crate::train::{train, TrainConfig};

/// One training/sampling run, parsed strictly: unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: MlpSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate().map_err(reclass_config)?;
        self.train.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| FlowError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| FlowError::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

fn reclass_config(e: FlowError) -> FlowError {
    match e {
        FlowError::Domain(msg) => FlowError::InvalidConfig(msg),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerKind {
    Euler,
    Heun,
    Em,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    #[value(name = "csv+ppm")]
    CsvPpm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Gradcheck,
    Continuity,
    FokkerPlanck,
    Conversion,
    LossGap,
    IntegratorOrder,
}

#[derive(Parser, Debug)]
#[command(name = "flowlab", version, about = "Flow matching and diffusion toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutputFormat,
    },
    /// Sample from a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "euler")]
        sampler: SamplerKind,
        /// Number of samples.
        #[arg(long, default_value_t = 4096)]
        n: usize,
        /// Number of integration steps.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Diffusion coefficient (em only; euler/heun ignore it).
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Class label for guided sampling.
        #[arg(long)]
        label: Option<usize>,
        /// Guidance scale (requires --label).
        #[arg(long)]
        w: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutputFormat,
        /// Scatter-plot bounds as x_min,x_max,y_min,y_max.
        #[arg(long, default_value = "-4,4,-4,4")]
        bounds: String,
    },
    /// Run a numerical validation suite.
    Validate {
        #[arg(long, value_enum)]
        suite: Suite,
        /// Optional checkpoint; the gradcheck suite includes it if given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export marginal-path samples and histograms at chosen times.
    ExportPath {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated times in [0, 1].
        #[arg(long)]
        times: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutputFormat,
    },
}

/// Entry point: parse arguments, dispatch, map errors to exit codes.
pub fn run() -> i32 {
    configure_threads();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Honor FLOWLAB_THREADS (0 or unset = automatic).
fn configure_threads() {
    if let Ok(val) = std::env::var("FLOWLAB_THREADS") {
        if let Ok(n) = val.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train { config, out, seed, format: _ } => {
            cmd_train(&config, &out, seed)?;
            Ok(0)
        }
        Command::Sample {
            checkpoint,
            sampler,
            n,
            steps,
            sigma,
            label,
            w,
            seed,
            out,
            format,
            bounds,
        } => {
            cmd_sample(
                &checkpoint,
                sampler,
                n,
                steps,
                sigma,
                label,
                w,
                seed,
                &out,
                format,
                &bounds,
            )?;
            Ok(0)
        }
        Command::Validate { suite, checkpoint, out, seed } => {
            let ck = match checkpoint {
                Some(p) => Some(Checkpoint::load(&p)?.to_model()?),
                None => None,
            };
            let rows = run_suite(suite, ck.as_ref(), seed)?;
            fs::create_dir_all(&out)?;
            let name = format!("validate_{}.csv", suite_name(suite));
            write_checks_csv(&out.join(name), &rows)?;
            let mut all_pass = true;
            for r in &rows {
                println!(
                    "{}:{} value={:.6e} threshold={:.6e} {}",
                    r.check,
                    r.probe,
                    r.value,
                    r.threshold,
                    if r.pass { "pass" } else { "FAIL" }
                );
                all_pass &= r.pass;
            }
            Ok(if all_pass { 0 } else { 1 })
        }
        Command::ExportPath { config, times, out, seed, format } => {
            cmd_export_path(&config, &times, &out, seed, format)?;
            Ok(0)
        }
    }
}

fn suite_name(suite: Suite) -> &'static str {
    match suite {
        Suite::Gradcheck => "gradcheck",
        Suite::Continuity => "continuity",
        Suite::FokkerPlanck => "fokker_planck",
        Suite::Conversion => "conversion",
        Suite::LossGap => "loss_gap",
        Suite::IntegratorOrder => "integrator_order",
    }
}

/// Train from a config file; writes `checkpoint.json` and
/// `loss_history.csv` into the output directory.
pub fn cmd_train(config_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        config.train.seed = seed;
    }
    let data = make_dataset(&config.dataset)?;
    let result = train(&config.train, &data, &config.model)?;
    fs::create_dir_all(out_dir)?;
    let ck = Checkpoint::from_model(
        &result.mlp,
        config.train.schedule,
        config.train.seed,
        config.train.n_steps,
    );
    ck.save(&out_dir.join("checkpoint.json"))?;
    write_loss_csv(&out_dir.join("loss_history.csv"), &result.history)?;
    Ok(())
}

fn parse_bounds(spec: &str) -> Result<(f64, f64, f64, f64)> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| FlowError::InvalidConfig(format!("bounds '{spec}': {e}")))?;
    if parts.len() != 4 {
        return Err(FlowError::InvalidConfig(format!(
            "bounds '{spec}' needs 4 comma-separated numbers"
        )));
    }
    Ok((parts[0], parts[1], parts[2], parts[3]))
}

/// Sample from a checkpoint; writes `samples.csv` (and `samples.ppm`).
#[allow(clippy::too_many_arguments)]
pub fn cmd_sample(
    checkpoint_path: &Path,
    sampler: SamplerKind,
    n: usize,
    steps: usize,
    sigma: f64,
    label: Option<usize>,
    w: Option<f64>,
    seed: u64,
    out_dir: &Path,
    format: OutputFormat,
    bounds: &str,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint_path)?;
    let mlp = ck.to_model()?;
    let dim = mlp.spec.dim;
    let path = GaussianPath::new(NoiseSchedule::new(ck.schedule), dim);

    if label.is_none() && w.is_some() {
        return Err(FlowError::InvalidConfig(
            "--w requires --label (guidance needs a class)".into(),
        ));
    }
    if let Some(y) = label {
        if !mlp.spec.conditional() {
            return Err(FlowError::InvalidConfig(
                "--label given but the checkpoint is unconditional".into(),
            ));
        }
        if y >= mlp.spec.n_classes {
            return Err(FlowError::InvalidConfig(format!(
                "--label {y} out of range (n_classes = {})",
                mlp.spec.n_classes
            )));
        }
    }
    let guidance_scale = w.unwrap_or(1.0);

    let samples: Vec<Vec<f64>> = if n == 0 {
        Vec::new()
    } else {
        let grid = TimeGrid::unit(steps)?;
        let sig = DiffusionCoefficient::constant(sigma).map_err(reclass_config)?;
        match label {
            None => {
                let field = MlpField { mlp: &mlp, label: None };
                match sampler {
                    SamplerKind::Euler => sample_flow(&field, &grid, n, seed)?,
                    SamplerKind::Heun => sample_flow_heun(&field, &grid, n, seed)?,
                    SamplerKind::Em => sample_diffusion(&field, &path, &sig, &grid, n, seed)?,
                }
            }
            Some(y) => {
                let config = GuidanceConfig {
                    w: guidance_scale,
                    sigma: sig,
                    grid,
                    n_samples: n,
                };
                match sampler {
                    SamplerKind::Euler => sample_guided_ode(&mlp, y, &config, seed)?,
                    SamplerKind::Heun => {
                        let field = GuidedField { model: &mlp, label: y, w: guidance_scale };
                        sample_flow_heun(&field, &grid, n, seed)?
                    }
                    SamplerKind::Em => {
                        sample_guided_sde(&mlp, ScoreSource::Convert, &path, y, &config, seed)?
                    }
                }
            }
        }
    };

    fs::create_dir_all(out_dir)?;
    write_samples_csv(
        &out_dir.join("samples.csv"),
        &samples,
        dim,
        label,
        label.map(|_| guidance_scale),
    )?;
    if format == OutputFormat::CsvPpm {
        if dim != 2 {
            return Err(FlowError::InvalidConfig(
                "PPM output requires a 2D model".into(),
            ));
        }
        let b = parse_bounds(bounds)?;
        write_ppm(&out_dir.join("samples.ppm"), &scatter_ppm(&samples, b))?;
    }
    Ok(())
}

/// Export marginal-path samples at each requested time.
pub fn cmd_export_path(
    config_path: &Path,
    times: &str,
    out_dir: &Path,
    seed: u64,
    format: OutputFormat,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let data = make_dataset(&config.dataset)?;
    let path = GaussianPath::new(NoiseSchedule::new(config.train.schedule), data.dim());
    let times: Vec<f64> = times
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| FlowError::InvalidConfig(format!("times '{times}': {e}")))?;
    for &t in &times {
        if !(0.0..=1.0).contains(&t) {
            return Err(FlowError::InvalidConfig(format!(
                "time {t} outside [0, 1]"
            )));
        }
    }
    fs::create_dir_all(out_dir)?;
    let bound = 4.0;
    for (idx, &t) in times.iter().enumerate() {
        let mut rng = stream(seed, idx as u64);
        let mut samples = Vec::with_capacity(data.len());
        for _ in 0..data.len() {
            let i = data.sample_index(&mut rng);
            samples.push(path.cond_sample(data.point(i), t, &mut rng)?);
        }
        let tag = format!("{t:.3}");
        write_samples_csv(
            &out_dir.join(format!("path_samples_t{tag}.csv")),
            &samples,
            data.dim(),
            None,
            None,
        )?;
        if data.dim() == 2 {
            let hist = histogram2d(&samples, (-bound, bound, -bound, bound), (64, 64))?;
            write_histogram_csv(&out_dir.join(format!("path_hist_t{tag}.csv")), &hist)?;
            if format == OutputFormat::CsvPpm {
                write_ppm(&out_dir.join(format!("path_t{tag}.ppm")), &heatmap_ppm(&hist))?;
            }
        }
    }
    Ok(())
}

fn row(check: &str, probe: String, value: f64, threshold: f64, pass: bool) -> CheckRow {
    CheckRow { check: check.to_string(), probe, value, threshold, pass }
}

fn abs_row(check: &str, probe: String, value: f64, threshold: f64) -> CheckRow {
    row(check, probe, value, threshold, value.abs() <= threshold)
}

/// Run one validation suite. The optional model is included in the
/// gradcheck suite.
pub fn run_suite(suite: Suite, model: Option<&Mlp>, seed: u64) -> Result<Vec<CheckRow>> {
    match suite {
        Suite::Conversion => conversion_suite(),
        Suite::Gradcheck => gradcheck_suite(model, seed),
        Suite::Continuity => continuity_suite(seed),
        Suite::FokkerPlanck => fokker_planck_suite(seed),
        Suite::LossGap => loss_gap_suite(seed),
        Suite::IntegratorOrder => integrator_order_suite(),
    }
}

fn conversion_suite() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for kind in [ScheduleKind::Condot, ScheduleKind::Trig] {
        let path = GaussianPath::new(NoiseSchedule::new(kind), 1);
        let mut max_identity: f64 = 0.0;
        let mut max_round_trip: f64 = 0.0;
        let mut max_score_fd: f64 = 0.0;
        for ti in 0..19 {
            let t = 0.05 * (ti + 1) as f64;
            for xi in 0..61 {
                let x = [-3.0 + 0.1 * xi as f64];
                for zi in [-2.0, 0.5, 3.0] {
                    let z = [zi];
                    let score = path.cond_score(&x, &z, t)?;
                    let u = path.score_to_velocity(&x, t, &score)?;
                    let u_ref = path.cond_vector_field(&x, &z, t)?;
                    max_identity = max_identity.max((u[0] - u_ref[0]).abs());
                    let back = path.velocity_to_score(&x, t, &u)?;
                    max_round_trip = max_round_trip.max((back[0] - score[0]).abs());
                    let h = 1e-6;
                    let fd = (path.cond_log_density(&[x[0] + h], &z, t)?
                        - path.cond_log_density(&[x[0] - h], &z, t)?)
                        / (2.0 * h);
                    max_score_fd = max_score_fd.max((score[0] - fd).abs());
                }
            }
        }
        let probe = format!("{kind:?}").to_lowercase();
        rows.push(abs_row("conversion_identity", probe.clone(), max_identity, 1e-12));
        rows.push(abs_row("conversion_round_trip", probe.clone(), max_round_trip, 1e-12));
        rows.push(abs_row("score_vs_fd_gradient", probe, max_score_fd, 1e-6));
    }
    Ok(rows)
}

fn gradcheck_suite(model: Option<&Mlp>, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let mut rng = seeded(seed);
    for activation in [Activation::Silu, Activation::Tanh] {
        for n_classes in [0usize, 2] {
            let spec = MlpSpec {
                dim: 2,
                hidden: vec![16, 12],
                n_time_features: 4,
                n_classes,
                embed_dim: 4,
                activation,
            };
            let mut worst: f64 = 0.0;
            for probe in 0..5 {
                let mlp = Mlp::init(spec.clone(), seed.wrapping_add(probe))?;
                // Targets sit near the network output: small residuals keep
                // the finite-difference quotients well conditioned.
                let batch: Vec<TrainItem> = (0..4)
                    .map(|i| {
                        let x = standard_normal_vec(&mut rng, 2);
                        let t = rand::Rng::gen::<f64>(&mut rng);
                        let y = if n_classes > 0 && i % 2 == 0 {
                            Some(i % n_classes)
                        } else {
                            None
                        };
                        let out = mlp.forward(&x, t, y).expect("probe forward");
                        let target = out
                            .iter()
                            .map(|o| o + 0.1 * standard_normal(&mut rng))
                            .collect();
                        TrainItem { x, t, y, target }
                    })
                    .collect();
                worst = worst.max(grad_check(&mlp, &batch)?);
            }
            rows.push(abs_row(
                "grad_check",
                format!("{activation:?}_k{n_classes}").to_lowercase(),
                worst,
                1e-5,
            ));
        }
    }
    if let Some(mlp) = model {
        let mut rng = seeded(seed ^ 0x5eed);
        let batch: Vec<TrainItem> = (0..4)
            .map(|_| TrainItem {
                x: standard_normal_vec(&mut rng, mlp.spec.dim),
                t: rand::Rng::gen::<f64>(&mut rng),
                y: None,
                target: standard_normal_vec(&mut rng, mlp.spec.dim),
            })
            .collect();
        rows.push(abs_row(
            "grad_check",
            "checkpoint".to_string(),
            grad_check(mlp, &batch)?,
            1e-5,
        ));
    }
    Ok(rows)
}

fn three_point_dataset() -> Dataset {
    Dataset::uniform(vec![vec![0.0], vec![1.0], vec![3.0]]).expect("static dataset")
}

fn continuity_suite(seed: u64) -> Result<Vec<CheckRow>> {
    let path = GaussianPath::new(NoiseSchedule::condot(), 1);
    let data = three_point_dataset();
    let mut rows = Vec::new();

    // Conditional pair: single-point dataset.
    let single = Dataset::uniform(vec![vec![0.8]])?;
    let density = MarginalDensity { path: &path, data: &single };
    let field = MarginalVelocity { path: &path, data: &single };
    let probes = mass_weighted_probes(&path, &single, 100, 0.1, 0.8, &mut seeded(seed))?;
    let mut max_r: f64 = 0.0;
    for (x, t) in &probes {
        max_r = max_r.max(continuity_residual(&density, &field, x, *t, FdSteps::default())?.abs());
    }
    rows.push(abs_row("continuity_residual", "conditional".into(), max_r, 1e-4));

    // Marginal pair: three-point dataset.
    let density = MarginalDensity { path: &path, data: &data };
    let field = MarginalVelocity { path: &path, data: &data };
    let probes = mass_weighted_probes(&path, &data, 100, 0.1, 0.8, &mut seeded(seed ^ 1))?;
    let mut max_r: f64 = 0.0;
    for (x, t) in &probes {
        max_r = max_r.max(continuity_residual(&density, &field, x, *t, FdSteps::default())?.abs());
    }
    rows.push(abs_row("continuity_residual", "marginal_3pt".into(), max_r, 1e-4));
    Ok(rows)
}

fn fokker_planck_suite(seed: u64) -> Result<Vec<CheckRow>> {
    let path = GaussianPath::new(NoiseSchedule::condot(), 1);
    let data = three_point_dataset();
    let density = MarginalDensity { path: &path, data: &data };
    let mut rows = Vec::new();
    for (i, sigma) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let drift = SdeExtensionDrift { path: &path, data: &data, sigma };
        let coeff = DiffusionCoefficient::constant(sigma)?;
        let probes =
            mass_weighted_probes(&path, &data, 100, 0.1, 0.8, &mut seeded(seed + i as u64))?;
        let mut max_r: f64 = 0.0;
        for (x, t) in &probes {
            max_r = max_r
                .max(fokker_planck_residual(&density, &drift, &coeff, x, *t, FdSteps::default())?
                    .abs());
        }
        rows.push(abs_row("fokker_planck_residual", format!("sigma{sigma}"), max_r, 1e-4));
    }

    // Second-order convergence: quartering the steps shrinks the residual
    // by ~16x (the value reported is the shrink factor; pass within 2x).
    let drift = SdeExtensionDrift { path: &path, data: &data, sigma: 0.5 };
    let coeff = DiffusionCoefficient::constant(0.5)?;
    let coarse = FdSteps { space: 1e-2, time: 1e-2 };
    let (x, t) = ([0.6], 0.45);
    let rc = fokker_planck_residual(&density, &drift, &coeff, &x, t, coarse)?.abs();
    let rf = fokker_planck_residual(&density, &drift, &coeff, &x, t, coarse.scaled(0.25))?.abs();
    let factor = rc / rf;
    rows.push(row(
        "fokker_planck_fd_order",
        "shrink_factor".into(),
        factor,
        16.0,
        (8.0..=32.0).contains(&factor),
    ));
    Ok(rows)
}

fn loss_gap_suite(seed: u64) -> Result<Vec<CheckRow>> {
    let path = GaussianPath::new(NoiseSchedule::condot(), 1);
    let data = Dataset::uniform(vec![vec![-1.0], vec![1.0]])?;
    let spec = MlpSpec {
        dim: 1,
        hidden: vec![16, 16],
        n_time_features: 4,
        n_classes: 0,
        embed_dim: 8,
        activation: Activation::Silu,
    };
    let nets: Vec<Mlp> = (0..3)
        .map(|i| Mlp::init(spec.clone(), seed + i))
        .collect::<Result<_>>()?;
    let fields: Vec<MlpField> = nets.iter().map(|mlp| MlpField { mlp, label: None }).collect();
    let mut gaps = Vec::new();
    for f in &fields {
        let (gap, _) = loss_gap_probe(
            &path,
            &data,
            f,
            &fields[0],
            Quadrature1d::default(),
            &default_loss_gap_t_nodes(),
        )?;
        gaps.push(gap);
    }
    let spread = gaps
        .iter()
        .map(|g| (g - gaps[0]).abs())
        .fold(0.0f64, f64::max);
    let mut rows = vec![abs_row(
        "loss_gap_field_invariance",
        format!("{}_random_nets", gaps.len()),
        spread,
        1e-4,
    )];
    rows.push(row(
        "loss_gap_is_negative_constant",
        "gap".into(),
        gaps[0],
        0.0,
        gaps[0] < 0.0,
    ));
    Ok(rows)
}

fn integrator_order_suite() -> Result<Vec<CheckRow>> {
    let field = FnField::new(1, |x: &[f64], _t| vec![-x[0]]);
    let exact = (-1.0f64).exp();
    let steps = [0.1f64, 0.05, 0.025, 0.0125];
    let euler_errors: Vec<f64> = steps
        .iter()
        .map(|&h| {
            let grid = TimeGrid::unit((1.0 / h).round() as usize)?;
            Ok((euler_terminal(&field, &[1.0], &grid)?[0] - exact).abs())
        })
        .collect::<Result<_>>()?;
    let heun_errors: Vec<f64> = steps
        .iter()
        .map(|&h| {
            let grid = TimeGrid::unit((1.0 / h).round() as usize)?;
            Ok((heun_terminal(&field, &[1.0], &grid)?[0] - exact).abs())
        })
        .collect::<Result<_>>()?;
    let euler_order = fit_convergence_order(&steps, &euler_errors);
    let heun_order = fit_convergence_order(&steps, &heun_errors);
    Ok(vec![
        row(
            "euler_order",
            "u=-x".into(),
            euler_order,
            0.2,
            (0.8..=1.2).contains(&euler_order),
        ),
        row(
            "heun_order",
            "u=-x".into(),
            heun_order,
            0.3,
            (1.7..=2.3).contains(&heun_order),
        ),
    ])
}
