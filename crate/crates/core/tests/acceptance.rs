//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::f64::consts::SQRT_2;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use nelson_core::classical::{
    duhamel_residual, energy_drift, gronwall_ensemble, integrate, IntegrateOptions, Picture,
};
use nelson_core::config::RunConfig;
use nelson_core::correspondence::{
    characteristic_quantum, characteristic_residual, gaussian_cloud, hbar_sweep, test_panel,
    weyl_arguments,
};
use nelson_core::estimates::{classical_cases, run_suite, SuiteReport, SuiteSettings, PROPAGATION_CASES};
use nelson_core::fock::FockBasis;
use nelson_core::linalg;
use nelson_core::model::{ClassicalState, KGrid, Model, ModelConfig};
use nelson_core::quantum::{EvolveOptions, HamiltonianAssembly, ParticleGrid};
use nelson_core::{Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn default_model() -> Model {
    Model::new(ModelConfig::default()).unwrap()
}

fn default_state(model: &Model) -> ClassicalState {
    RunConfig::default().initial_state(model).unwrap()
}

fn direct(dt: f64, stride: usize) -> IntegrateOptions {
    IntegrateOptions {
        dt,
        picture: Picture::Direct,
        stride,
    }
}

fn classical_conservation() -> Result<Outcome> {
    let m = default_model();
    let u0 = default_state(&m);
    let start = Instant::now();
    let drift = energy_drift(&m, &integrate(&m, &u0, 0.0, 10.0, direct(1e-3, 1))?)?;
    let elapsed = start.elapsed().as_secs_f64();
    // halving measured where truncation error still dominates rounding
    let coarse: Vec<f64> = [0.005, 0.0025, 0.00125]
        .iter()
        .map(|&dt| energy_drift(&m, &integrate(&m, &u0, 0.0, 10.0, direct(dt, 1))?))
        .collect::<Result<_>>()?;
    let ratios = [coarse[0] / coarse[1], coarse[1] / coarse[2]];
    let ok = drift < 1e-6 && ratios.iter().all(|r| (8.0..=32.0).contains(r)) && elapsed < 10.0;
    outcome(
        ok,
        format!(
            "drift {drift:.2e} at dt 1e-3 in {elapsed:.1}s, halving ratios {:.1} and {:.1}",
            ratios[0], ratios[1]
        ),
    )
}

fn picture_equivalence() -> Result<Outcome> {
    let m = default_model();
    let u0 = default_state(&m);
    let a = integrate(&m, &u0, 0.0, 5.0, direct(1e-3, usize::MAX))?;
    let b = integrate(
        &m,
        &u0,
        0.0,
        5.0,
        IntegrateOptions {
            picture: Picture::Interaction,
            ..direct(1e-3, usize::MAX)
        },
    )?;
    let gap = m.xsigma_norm(&a.last_direct(&m).sub(&b.last_direct(&m)));
    outcome(gap < 1e-8, format!("X^sigma gap at T=5: {gap:.2e}"))
}

fn duhamel_order() -> Result<Outcome> {
    let m = default_model();
    let u0 = default_state(&m);
    let r: Vec<f64> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&dt| duhamel_residual(&m, &integrate(&m, &u0, 0.0, 2.0, direct(dt, 1))?))
        .collect::<Result<_>>()?;
    let orders = [(r[0] / r[1]).log2(), (r[1] / r[2]).log2()];
    let ok = orders.iter().all(|&o| o >= 3.5);
    outcome(
        ok,
        format!(
            "residuals {:.2e} {:.2e} {:.2e}, orders {:.2} {:.2}",
            r[0], r[1], r[2], orders[0], orders[1]
        ),
    )
}

fn interaction_bounds() -> Result<Outcome> {
    let cases = classical_cases(&default_model(), 1000, 2024);
    let ok = cases.iter().all(|c| c.passed && c.samples == 1000);
    let detail = cases
        .iter()
        .map(|c| format!("{} worst ratio {:.3}", c.name, c.worst_ratio))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(ok, detail)
}

fn gronwall() -> Result<Outcome> {
    let m = default_model();
    let u0 = default_state(&m);
    let reports = gronwall_ensemble(&m, &u0, 100, 1e-2, 5.0, 1e-2, 99)?;
    let violations: usize = reports.iter().map(|r| r.violations()).sum();
    let worst = reports
        .iter()
        .flat_map(|r| r.distance.iter().zip(&r.bound).skip(1).map(|(d, b)| d / b))
        .fold(0.0, f64::max);
    outcome(
        violations == 0 && reports.len() == 100,
        format!("100 pairs, {violations} violations, worst gap/bound {worst:.2e}"),
    )
}

fn quantum_model() -> Model {
    RunConfig::default().quantum_model().unwrap()
}

fn suite() -> Result<SuiteReport> {
    let cfg = RunConfig::default();
    let model = quantum_model();
    run_suite(&model, &cfg.suite_settings(&model)?)
}

const FOCK_CASES: [&str; 9] = [
    "ccr",
    "annihilation_number",
    "creation_number",
    "annihilation_field",
    "creation_field",
    "field_number",
    "number_interpolation",
    "coupling_annihilation",
    "coupling_creation",
];

fn summarize(report: &SuiteReport, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in names {
        let cases: Vec<_> = report.cases.iter().filter(|c| c.name == *name).collect();
        let trend = report.trends.iter().find(|t| t.name == *name);
        let passed = cases.len() >= 4 && cases.iter().all(|c| c.passed) && trend.is_some_and(|t| t.flat);
        ok &= passed;
        let worst = cases.iter().map(|c| c.worst_ratio).fold(0.0, f64::max);
        parts.push(format!("{name} {worst:.3}{}", if passed { "" } else { " (failed)" }));
    }
    (ok, parts.join(", "))
}

fn fock_algebra(report: &SuiteReport) -> Result<Outcome> {
    let (mut ok, detail) = summarize(report, &FOCK_CASES);
    for c in report.cases.iter().filter(|c| FOCK_CASES.contains(&c.name.as_str())) {
        ok &= c.samples >= if c.name.starts_with("coupling") { 200 } else { 1000 };
    }
    let hbars: Vec<_> = report.cases.iter().filter(|c| c.name == "ccr").map(|c| c.hbar).collect();
    ok &= hbars == [Some(0.4), Some(0.2), Some(0.1), Some(0.05)];
    outcome(ok, detail)
}

fn nelson_assembly() -> Result<Outcome> {
    let model = Model::new(ModelConfig {
        grid: KGrid { k_max: 1.0, n_k: 3 },
        ..ModelConfig::default()
    })?;
    let basis = FockBasis::new(3, 4)?;
    let grid = ParticleGrid::new(64, 16.0)?;
    let h = HamiltonianAssembly::with_options(&model, grid, basis, 0.1, EvolveOptions::default())?;
    let defect = h.hermiticity_defect(nelson_core::quantum::Terms::FULL);
    let start = Instant::now();
    h.eigen()?;
    let eig_time = start.elapsed().as_secs_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut psi: Vec<C64> = (0..h.dim())
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    linalg::normalize(&mut psi);
    let times: Vec<f64> = (0..=20).map(|i| 0.1 * i as f64).collect();
    let drift = h
        .evolve_series(&psi, &times)?
        .iter()
        .map(|s| (linalg::norm(s) - 1.0).abs())
        .fold(0.0, f64::max);
    let settings = SuiteSettings {
        hbar_list: vec![0.4, 0.2, 0.1, 0.05],
        samples: 1000,
        sandwich_samples: 200,
        seed: 7,
        grid,
        n_max: 4,
        momentum_window: 3.0,
        propagation: None,
        evolve: EvolveOptions::default(),
    };
    let report = run_suite(&model, &settings)?;
    let (sandwich_ok, sandwich) = summarize(&report, &["sandwich_lower", "sandwich_upper"]);
    let samples_ok = report
        .cases
        .iter()
        .filter(|c| c.name.starts_with("sandwich"))
        .all(|c| c.samples >= 200);
    let ok = h.dim() == 2240 && defect < 1e-12 && drift < 1e-10 && eig_time < 60.0 && sandwich_ok && samples_ok;
    outcome(
        ok,
        format!(
            "dim {}, hermiticity {defect:.1e}, unitarity drift {drift:.1e}, eigendecomposition {eig_time:.1}s, {sandwich}",
            h.dim()
        ),
    )
}

/// Closed form of `<W1(p_z, q_z) (x) W2(beta)>` in a coherent state centred at
/// `(q_c, p_c)` with field `alpha_c`.
fn coherent_oracle(model: &Model, hbar: f64, center: &ClassicalState, xi: &ClassicalState) -> C64 {
    let (pz, qz, beta) = weyl_arguments(xi);
    let (qc, pc) = (center.q[0], center.p[0]);
    let particle = C64::new(-hbar * (pz * pz + qz * qz) / 4.0, pz * qc - qz * pc).exp();
    let mut pairing = C64::new(0.0, 0.0);
    let mut beta_sq = 0.0;
    for (b, a) in beta.values.iter().zip(&center.alpha) {
        pairing += b.conj() * a * model.dk;
        beta_sq += b.norm_sqr() * model.dk;
    }
    let field = C64::new(-hbar * beta_sq / 4.0, SQRT_2 * pairing.re).exp();
    particle * field
}

fn coherent_moments() -> Result<Outcome> {
    let cfg = RunConfig::default();
    let model = quantum_model();
    let u0 = cfg.initial_state(&model)?;
    let basis = FockBasis::new(model.n_modes(), cfg.quantum.n_max)?;
    let panel = test_panel(model.n_modes(), 8, cfg.correspondence.panel_seed);
    let mut moment_err: f64 = 0.0;
    let mut char_err: f64 = 0.0;
    for hbar in [0.4, 0.2, 0.1, 0.05] {
        let h = HamiltonianAssembly::with_options(&model, cfg.particle_grid()?, basis.clone(), hbar, cfg.quantum.evolve)?;
        let psi = h.coherent_state(&u0)?;
        let expected = model.field_norm(&u0.alpha, model.cfg.sigma).powi(2);
        moment_err = moment_err.max((h.observables(&psi).dgamma_sigma - expected).abs());
        for tp in &panel {
            let z = characteristic_quantum(&h, &psi, &tp.xi)?;
            char_err = char_err.max((z - coherent_oracle(&model, hbar, &u0, &tp.xi)).norm());
        }
    }
    outcome(
        moment_err < 1e-6 && char_err < 1e-6,
        format!("dGamma moment error {moment_err:.1e}, characteristic error {char_err:.1e} over 16 points and 4 hbar"),
    )
}

fn bohr_correspondence() -> Result<Outcome> {
    let cfg = RunConfig::default();
    let model = quantum_model();
    let u0 = cfg.initial_state(&model)?;
    let settings = cfg.sweep_settings(model.n_modes())?;
    let start = Instant::now();
    let report = hbar_sweep(&model, &u0, &settings)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut ok = report.failures.is_empty() && settings.panel.len() == 16 && elapsed < 900.0;
    let mut bad = Vec::new();
    for t in [0.5, 1.0] {
        for chk in report.monotonicity(t, 0.1) {
            if !chk.monotone {
                ok = false;
                bad.push(format!("{}@{}", chk.column, chk.t));
            }
        }
    }
    let last = report
        .rows
        .iter()
        .filter(|r| r.hbar == 0.05)
        .map(|r| r.char_error)
        .fold(0.0, f64::max);
    ok &= last < 0.05;
    outcome(
        ok,
        format!(
            "{} rows in {elapsed:.1}s, non-monotone columns {bad:?}, characteristic error at hbar 0.05: {last:.4}",
            report.rows.len()
        ),
    )
}

fn liouville() -> Result<Outcome> {
    let cfg = RunConfig::default();
    let model = quantum_model();
    let u0 = cfg.initial_state(&model)?;
    let panel = test_panel(model.n_modes(), 8, cfg.correspondence.panel_seed);
    let y = &panel[7].xi;
    let r: Vec<f64> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&dt| Ok(characteristic_residual(&model, std::slice::from_ref(&u0), y, 0.0, 1.0, dt)?.residual))
        .collect::<Result<_>>()?;
    let orders = [(r[0] / r[1]).log2(), (r[1] / r[2]).log2()];
    let cloud = gaussian_cloud(&u0, 0.1, 0.02, 512, cfg.seed)?;
    let mut cloud_ok = true;
    let mut worst: f64 = 0.0;
    for tp in &panel {
        let rep = characteristic_residual(&model, &cloud, &tp.xi, 0.0, 1.0, 1e-2)?;
        cloud_ok &= rep.residual < 3.0 * rep.standard_error;
        worst = worst.max(rep.residual / rep.standard_error);
    }
    outcome(
        orders.iter().all(|&o| o >= 1.8) && cloud_ok,
        format!(
            "Dirac residuals {:.2e} {:.2e} {:.2e}, orders {:.2} {:.2}; cloud residual/SE at most {worst:.2e}",
            r[0], r[1], r[2], orders[0], orders[1]
        ),
    )
}

fn propagation(report: &SuiteReport) -> Result<Outcome> {
    let (ok, detail) = summarize(report, &PROPAGATION_CASES);
    outcome(ok, detail)
}

fn main() -> ExitCode {
    let start = Instant::now();
    let suite = Arc::new(suite());
    let shared = |f: fn(&SuiteReport) -> Result<Outcome>| {
        let s = suite.clone();
        move || match s.as_ref() {
            Ok(r) => f(r),
            Err(e) => Err(nelson_core::Error::Evolution(e.to_string())),
        }
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Result<Outcome>>)> = vec![
        ("classical conservation", Box::new(classical_conservation)),
        ("picture equivalence", Box::new(picture_equivalence)),
        ("Duhamel residual order", Box::new(duhamel_order)),
        ("interaction gradient bounds", Box::new(interaction_bounds)),
        ("Gronwall envelope", Box::new(gronwall)),
        ("Fock algebra and estimates", Box::new(shared(fock_algebra))),
        ("Nelson assembly", Box::new(nelson_assembly)),
        ("coherent-state moments", Box::new(coherent_moments)),
        ("Bohr correspondence", Box::new(bohr_correspondence)),
        ("characteristic equation", Box::new(liouville)),
        ("propagation envelopes", Box::new(shared(propagation))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (passed, detail) = match check() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!("{} {:>2} {name}: {detail}", if passed { "PASS" } else { "FAIL" }, i + 1);
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
