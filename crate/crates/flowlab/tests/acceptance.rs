//! Acceptance suite: every numerical claim the toolkit makes, checked end to
//! end at pinned tolerances. One test per criterion; each prints a single
//! `ACCEPTANCE <n> <name>: pass|FAIL` line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::Instant;

use flowlab::cli::{cmd_sample, cmd_train, run_suite, OutputFormat, SamplerKind, Suite};
use flowlab::data_eval::{
    class_purity, energy_distance, gmm_means, make_dataset, DatasetKind, DatasetSpec,
};
use flowlab::dynamics::{brownian_path, em_terminal, DiffusionCoefficient, TimeGrid};
use flowlab::field::FnField;
use flowlab::guidance::{
    sample_diffusion, sample_flow, sample_guided_ode, sample_guided_sde, GuidanceConfig,
    ScoreSource,
};
use flowlab::net::{MlpField, MlpSpec};
use flowlab::oracle::{
    default_loss_gap_t_nodes, loss_gap_probe, mass_weighted_grid_error, Dataset,
    MarginalScoreField, MarginalVelocity, Quadrature1d,
};
use flowlab::paths::{GaussianPath, NoiseSchedule};
use flowlab::rng::{standard_normal_vec, stream};
use flowlab::train::{train, LossKind, TrainConfig};
use flowlab::VectorField;

fn report(number: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {number} {name}: {} ({detail})",
        if pass { "pass" } else { "FAIL" }
    );
    assert!(pass, "criterion {number} {name}: {detail}");
}

fn t_grid(max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1;
    loop {
        let t = 0.05 * k as f64;
        if t > max + 1e-9 {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

fn x_grid() -> Vec<f64> {
    (0..61).map(|k| -3.0 + 0.1 * k as f64).collect()
}

/// Conversion formulas hold to 1e-12 on a 19 x 61 grid and the conditional
/// score matches the finite-difference log-density gradient to 1e-6.
#[test]
fn criterion_01_analytic_identities() {
    let start = Instant::now();
    let rows = run_suite(Suite::Conversion, None, 1).unwrap();
    let pass = rows.iter().all(|r| r.pass);
    let worst = rows
        .iter()
        .map(|r| r.value / r.threshold)
        .fold(0.0f64, f64::max);
    let elapsed = start.elapsed();
    report(
        1,
        "analytic_identities",
        pass && elapsed.as_secs_f64() < 1.0,
        &format!("worst value/threshold ratio {worst:.2e}, {elapsed:?}"),
    );
}

/// Euler fitted order in [0.8, 1.2] and Heun in [1.7, 2.3] on u = -x.
#[test]
fn criterion_02_integrator_orders() {
    let start = Instant::now();
    let rows = run_suite(Suite::IntegratorOrder, None, 1).unwrap();
    let euler = rows.iter().find(|r| r.check == "euler_order").unwrap();
    let heun = rows.iter().find(|r| r.check == "heun_order").unwrap();
    let elapsed = start.elapsed();
    report(
        2,
        "integrator_orders",
        euler.pass && heun.pass && elapsed.as_secs_f64() < 1.0,
        &format!("euler {:.3}, heun {:.3}, {elapsed:?}", euler.value, heun.value),
    );
}

/// Brownian increment variance within 2% of h over 1e5 draws; OU terminal
/// variance within 5% of sigma^2 / (2 theta).
#[test]
fn criterion_03_stochastic_laws() {
    let start = Instant::now();
    // 1e5 Brownian increments at h = 0.01.
    let grid = TimeGrid::new(0.0, 0.01, 1).unwrap();
    let mut rng = flowlab::rng::seeded(3);
    let n = 100_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let p = brownian_path(&mut rng, &grid, 1);
        let d = p.states[1][0];
        sum += d;
        sumsq += d * d;
    }
    let nf = n as f64;
    let var_bm = sumsq / nf - (sum / nf).powi(2);
    let bm_ok = (var_bm - 0.01).abs() / 0.01 < 0.02;

    // OU with theta = 0.25, sigma = 1 to t = 20 at h = 0.01: variance 2.
    let field = FnField::new(1, |x: &[f64], _t| vec![-0.25 * x[0]]);
    let sigma = DiffusionCoefficient::Constant(1.0);
    let ou_grid = TimeGrid::new(0.0, 20.0, 2000).unwrap();
    let paths = 10_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for i in 0..paths {
        let mut rng = stream(33, i);
        let x = em_terminal(&field, &sigma, &[0.0], &ou_grid, &mut rng).unwrap();
        sum += x[0];
        sumsq += x[0] * x[0];
    }
    let pf = paths as f64;
    let var_ou = sumsq / pf - (sum / pf).powi(2);
    let ou_ok = (var_ou - 2.0).abs() / 2.0 < 0.05;

    let elapsed = start.elapsed();
    report(
        3,
        "stochastic_laws",
        bm_ok && ou_ok && elapsed.as_secs_f64() < 30.0,
        &format!("bm var {var_bm:.5} (target 0.01), ou var {var_ou:.4} (target 2), {elapsed:?}"),
    );
}

/// Continuity and Fokker-Planck residuals below 1e-4 at 100 mass-weighted
/// probes (3-point dataset, sigma in {0, 0.5, 1}); residual shrinks ~16x
/// when the finite-difference steps are quartered.
#[test]
fn criterion_04_pde_residuals() {
    let start = Instant::now();
    let continuity = run_suite(Suite::Continuity, None, 4).unwrap();
    let fokker = run_suite(Suite::FokkerPlanck, None, 4).unwrap();
    let pass = continuity.iter().chain(&fokker).all(|r| r.pass);
    let max_res = continuity
        .iter()
        .chain(&fokker)
        .filter(|r| r.check.ends_with("residual"))
        .map(|r| r.value)
        .fold(0.0f64, f64::max);
    let shrink = fokker
        .iter()
        .find(|r| r.check == "fokker_planck_fd_order")
        .unwrap()
        .value;
    let elapsed = start.elapsed();
    report(
        4,
        "pde_residuals",
        pass && elapsed.as_secs_f64() < 10.0,
        &format!("max residual {max_res:.2e}, fd shrink factor {shrink:.1}, {elapsed:?}"),
    );
}

/// The quadrature-computed marginal/conditional loss gap agrees across three
/// random networks within 1e-4.
#[test]
fn criterion_05_loss_equivalence() {
    let start = Instant::now();
    let path = GaussianPath::new(NoiseSchedule::condot(), 1);
    let data = Dataset::uniform(vec![vec![-1.0], vec![1.0]]).unwrap();
    let spec = MlpSpec {
        dim: 1,
        hidden: vec![24, 24],
        n_time_features: 4,
        n_classes: 0,
        embed_dim: 8,
        activation: flowlab::net::Activation::Silu,
    };
    let nets: Vec<flowlab::net::Mlp> = (0..3)
        .map(|i| flowlab::net::Mlp::init(spec.clone(), 500 + i).unwrap())
        .collect();
    let mut gaps = Vec::new();
    for net in &nets {
        let field = MlpField { mlp: net, label: None };
        let (gap, _) = loss_gap_probe(
            &path,
            &data,
            &field,
            &field,
            Quadrature1d::default(),
            &default_loss_gap_t_nodes(),
        )
        .unwrap();
        gaps.push(gap);
    }
    let spread = gaps
        .iter()
        .flat_map(|a| gaps.iter().map(move |b| (a - b).abs()))
        .fold(0.0f64, f64::max);
    let elapsed = start.elapsed();
    report(
        5,
        "loss_equivalence",
        spread < 1e-4 && elapsed.as_secs_f64() < 30.0,
        &format!("gaps {gaps:?}, max spread {spread:.2e}, {elapsed:?}"),
    );
}

/// Analytic gradients match central finite differences within 1e-5 relative
/// on 5 random probes, both activations, with and without labels.
#[test]
fn criterion_06_gradient_checks() {
    let start = Instant::now();
    let rows = run_suite(Suite::Gradcheck, None, 6).unwrap();
    let pass = rows.iter().all(|r| r.pass);
    let worst = rows.iter().map(|r| r.value).fold(0.0f64, f64::max);
    let elapsed = start.elapsed();
    report(
        6,
        "gradient_checks",
        pass && elapsed.as_secs_f64() < 30.0,
        &format!("worst max-rel-error {worst:.2e}, {elapsed:?}"),
    );
}

/// CFM, CSM and converted DDPM training on the 1D dataset {-1, +1} recover
/// the closed-form marginal field/score within 5% relative L2 in the
/// path-weighted norm on the evaluation grid.
#[test]
fn criterion_07_oracle_recovery() {
    let start = Instant::now();
    let data = Dataset::uniform(vec![vec![-1.0], vec![1.0]]).unwrap();
    let path = GaussianPath::new(NoiseSchedule::condot(), 1);
    let spec = MlpSpec::new(1);
    let xs = x_grid();

    // Flow matching vs marginal vector field, t in [0.05, 0.95].
    let config = TrainConfig { seed: 42, ..TrainConfig::new(LossKind::Cfm) };
    let cfm = train(&config, &data, &spec).unwrap();
    let cfm_rel = mass_weighted_grid_error(
        &path,
        &data,
        &MlpField { mlp: &cfm.mlp, label: None },
        &MarginalVelocity { path: &path, data: &data },
        &t_grid(0.95),
        &xs,
    )
    .unwrap();
    let cfm_time = start.elapsed();

    // Score matching vs marginal score, t in [0.05, 0.9].
    let score_start = Instant::now();
    let config = TrainConfig { seed: 42, ..TrainConfig::new(LossKind::Csm) };
    let csm = train(&config, &data, &spec).unwrap();
    let csm_rel = mass_weighted_grid_error(
        &path,
        &data,
        &MlpField { mlp: &csm.mlp, label: None },
        &MarginalScoreField { path: &path, data: &data },
        &t_grid(0.90),
        &xs,
    )
    .unwrap();
    let csm_time = score_start.elapsed();

    // Noise prediction, converted to a score via s = -eps_net / beta_t.
    let ddpm_start = Instant::now();
    let config = TrainConfig { seed: 42, ..TrainConfig::new(LossKind::DdpmEps) };
    let ddpm = train(&config, &data, &spec).unwrap();
    struct ConvertedScore<'a> {
        mlp: &'a flowlab::net::Mlp,
        path: &'a GaussianPath,
    }
    impl VectorField for ConvertedScore<'_> {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], t: f64) -> flowlab::Result<Vec<f64>> {
            let s = self.path.schedule.eval(t)?;
            Ok(self
                .mlp
                .forward(x, t, None)?
                .into_iter()
                .map(|e| -e / s.beta)
                .collect())
        }
    }
    let ddpm_rel = mass_weighted_grid_error(
        &path,
        &data,
        &ConvertedScore { mlp: &ddpm.mlp, path: &path },
        &MarginalScoreField { path: &path, data: &data },
        &t_grid(0.90),
        &xs,
    )
    .unwrap();
    let ddpm_time = ddpm_start.elapsed();

    let each_under_limit = cfm_time.as_secs_f64() < 120.0
        && csm_time.as_secs_f64() < 120.0
        && ddpm_time.as_secs_f64() < 120.0;
    report(
        7,
        "oracle_recovery",
        cfm_rel < 0.05 && csm_rel < 0.05 && ddpm_rel < 0.05 && each_under_limit,
        &format!(
            "cfm {cfm_rel:.4} ({cfm_time:?}), csm {csm_rel:.4} ({csm_time:?}), ddpm {ddpm_rel:.4} ({ddpm_time:?})"
        ),
    );
}

/// A CFM-trained checkerboard model generates samples at least 5x closer to
/// held-out data (energy distance) than standard normal draws, for both the
/// Euler sampler and the sigma = 0.5 Euler-Maruyama sampler with the score
/// obtained through the conversion formula.
#[test]
fn criterion_08_generation_2d() {
    let start = Instant::now();
    let data = make_dataset(&DatasetSpec::new(DatasetKind::Checkerboard, 4096, 11)).unwrap();
    let held = make_dataset(&DatasetSpec::new(DatasetKind::Checkerboard, 4096, 12)).unwrap();
    let config = TrainConfig { seed: 21, ..TrainConfig::new(LossKind::Cfm) };
    let result = train(&config, &data, &MlpSpec::new(2)).unwrap();
    let path = GaussianPath::new(NoiseSchedule::condot(), 2);
    let grid = TimeGrid::unit(100).unwrap();
    let field = MlpField { mlp: &result.mlp, label: None };

    let generated = sample_flow(&field, &grid, 4096, 77).unwrap();
    let baseline: Vec<Vec<f64>> = (0..4096u64)
        .map(|i| standard_normal_vec(&mut stream(78, i), 2))
        .collect();
    let ed_gen = energy_distance(&generated, held.points()).unwrap();
    let ed_init = energy_distance(&baseline, held.points()).unwrap();

    let sigma = DiffusionCoefficient::constant(0.5).unwrap();
    let generated_em = sample_diffusion(&field, &path, &sigma, &grid, 4096, 79).unwrap();
    let ed_em = energy_distance(&generated_em, held.points()).unwrap();

    let elapsed = start.elapsed();
    report(
        8,
        "generation_2d",
        ed_init / ed_gen >= 5.0 && ed_init / ed_em >= 5.0 && elapsed.as_secs_f64() < 300.0,
        &format!(
            "euler ratio {:.1}, em ratio {:.1} (baseline {ed_init:.4}), {elapsed:?}",
            ed_init / ed_gen,
            ed_init / ed_em
        ),
    );
}

/// Guided sampling on a labeled 2-component mixture: class purity >= 0.95 at
/// w = 3, purity non-decreasing from w = 1 to w = 3, and the w = 1 sampler
/// bit-identical to the conditional sampler under shared seeds.
#[test]
fn criterion_09_guidance() {
    let start = Instant::now();
    let data = make_dataset(&DatasetSpec::new(DatasetKind::Gmm, 4096, 31)).unwrap();
    let spec = MlpSpec::with_classes(2, 2);
    let config = TrainConfig { seed: 41, ..TrainConfig::new(LossKind::Cfm) };
    let result = train(&config, &data, &spec).unwrap();
    let means = gmm_means(2, 2.0);
    let grid = TimeGrid::unit(100).unwrap();

    let purity_at = |w: f64, label: usize| -> f64 {
        let config = GuidanceConfig {
            w,
            sigma: DiffusionCoefficient::Zero,
            grid,
            n_samples: 2048,
        };
        let samples = sample_guided_ode(&result.mlp, label, &config, 55).unwrap();
        class_purity(&samples, label, &means)
    };
    let p1 = purity_at(1.0, 0).min(purity_at(1.0, 1));
    let p3 = purity_at(3.0, 0).min(purity_at(3.0, 1));

    // Bit-identity at w = 1: the guided sampler collapses to the plain
    // conditional sampler.
    let config_w1 = GuidanceConfig {
        w: 1.0,
        sigma: DiffusionCoefficient::Zero,
        grid,
        n_samples: 256,
    };
    let guided = sample_guided_ode(&result.mlp, 0, &config_w1, 91).unwrap();
    let conditional =
        sample_flow(&MlpField { mlp: &result.mlp, label: Some(0) }, &grid, 256, 91).unwrap();
    let bit_identical = guided == conditional;

    // Guided SDE sampling with the conversion-formula score keeps purity.
    let config_sde = GuidanceConfig {
        w: 3.0,
        sigma: DiffusionCoefficient::constant(0.5).unwrap(),
        grid,
        n_samples: 2048,
    };
    let path = GaussianPath::new(NoiseSchedule::condot(), 2);
    let sde_samples =
        sample_guided_sde(&result.mlp, ScoreSource::Convert, &path, 0, &config_sde, 57).unwrap();
    let sde_purity = class_purity(&sde_samples, 0, &means);

    let elapsed = start.elapsed();
    report(
        9,
        "guidance",
        p3 >= 0.95 && p3 >= p1 && bit_identical && sde_purity >= 0.95
            && elapsed.as_secs_f64() < 120.0,
        &format!(
            "purity w=1 {p1:.4}, w=3 {p3:.4}, sde w=3 {sde_purity:.4}, w=1 bit-identical {bit_identical}, {elapsed:?}"
        ),
    );
}

/// Repeated `train` and `sample` commands with identical config and seed
/// produce byte-identical outputs.
#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.json");
    std::fs::write(
        &config_path,
        r#"{
  "dataset": {"kind": "checkerboard", "n_points": 512, "seed": 3},
  "model": {"dim": 2, "hidden": [16, 16], "n_time_features": 4},
  "train": {"loss_kind": "cfm", "n_steps": 150, "batch_size": 64, "seed": 5}
}"#,
    )
    .unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    cmd_train(&config_path, &out_a, None).unwrap();
    cmd_train(&config_path, &out_b, None).unwrap();
    let ck_a = std::fs::read(out_a.join("checkpoint.json")).unwrap();
    let ck_b = std::fs::read(out_b.join("checkpoint.json")).unwrap();
    let loss_a = std::fs::read(out_a.join("loss_history.csv")).unwrap();
    let loss_b = std::fs::read(out_b.join("loss_history.csv")).unwrap();
    let train_identical = ck_a == ck_b && loss_a == loss_b;

    let s_a = dir.path().join("sa");
    let s_b = dir.path().join("sb");
    for out in [&s_a, &s_b] {
        cmd_sample(
            &out_a.join("checkpoint.json"),
            SamplerKind::Em,
            512,
            50,
            0.5,
            None,
            None,
            9,
            out,
            OutputFormat::CsvPpm,
            "-4,4,-4,4",
        )
        .unwrap();
    }
    let sample_identical = std::fs::read(s_a.join("samples.csv")).unwrap()
        == std::fs::read(s_b.join("samples.csv")).unwrap()
        && std::fs::read(s_a.join("samples.ppm")).unwrap()
            == std::fs::read(s_b.join("samples.ppm")).unwrap();

    let elapsed = start.elapsed();
    report(
        10,
        "determinism",
        train_identical && sample_identical,
        &format!("train byte-identical {train_identical}, sample byte-identical {sample_identical}, {elapsed:?}"),
    );
}
