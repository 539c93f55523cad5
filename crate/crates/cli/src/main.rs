use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nelson_core::classical::{self, energy_drift, gronwall_ensemble, IntegrateOptions};
use nelson_core::config::RunConfig;
use nelson_core::correspondence::{characteristic_residual, gaussian_cloud, hbar_sweep, MonotoneCheck};
use nelson_core::estimates::run_full_suite;
use nelson_core::export::{self, certificate_table, num, observables_table, sweep_table, trajectory_table, Table};
use nelson_core::fock::{FockBasis, LEAKAGE_THRESHOLD};
use nelson_core::model::Model;
use nelson_core::quantum::{HamiltonianAssembly, Terms};
use nelson_core::{Error, Result};

#[derive(Parser)]
#[command(name = "nelson", version, about = "Classical and quantum particle-field simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the classical particle-field equation.
    Classical(RunArgs),
    /// Evolve a coherent state at a single hbar and record observables.
    Quantum(RunArgs),
    /// Compare quantum and classical dynamics along an hbar sweep.
    Correspondence(RunArgs),
    /// Check the operator estimates on random states.
    Verify(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Classical(_) => "classical",
            Command::Quantum(_) => "quantum",
            Command::Correspondence(_) => "correspondence",
            Command::Verify(_) => "verify",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Classical(a) | Command::Quantum(a) | Command::Correspondence(a) | Command::Verify(a) => a,
        }
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "nelson-out")]
    out: PathBuf,
    /// Overrides the `seed` key of the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    config_path: Option<PathBuf>,
    output_dir: PathBuf,
    seed: u64,
    timestamp: u64,
    config_hash: String,
}

struct Run {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
    subcommand: &'static str,
}

impl Run {
    fn metadata(&self) -> Vec<(&'static str, String)> {
        vec![
            ("subcommand", self.subcommand.to_string()),
            ("config_hash", self.hash.clone()),
            ("seed", self.cfg.seed.to_string()),
        ]
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_csv(&self, name: &str, table: &Table) -> Result<()> {
        table.write(&self.path(name), &self.metadata())
    }

    fn write_json<T: Serialize>(&self, name: &str, data: &T) -> Result<()> {
        export::write_json(&self.path(name), &self.metadata(), data)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("nelson {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: &Command) -> Result<u8> {
    let args = command.args();
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let run = Run {
        hash: cfg.hash(),
        cfg,
        out: args.out.clone(),
        subcommand: command.name(),
    };
    let manifest = RunManifest {
        subcommand: run.subcommand.to_string(),
        config_path: args.config.clone(),
        output_dir: args.out.clone(),
        seed: run.cfg.seed,
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        config_hash: run.hash.clone(),
    };
    export::write_json(&run.path("manifest.json"), &[], &manifest)?;
    export::write_text(&run.path("config.toml"), &run.cfg.to_toml())?;
    match command {
        Command::Classical(_) => cmd_classical(&run),
        Command::Quantum(_) => cmd_quantum(&run),
        Command::Correspondence(_) => cmd_correspondence(&run),
        Command::Verify(_) => cmd_verify(&run),
    }
}

fn write_assumptions(run: &Run, model: &Model, name: &str) -> Result<()> {
    run.write_json(name, &model.assumption_report(&run.cfg.ceilings))
}

fn cmd_classical(run: &Run) -> Result<u8> {
    let cfg = &run.cfg;
    let model = cfg.model()?;
    write_assumptions(run, &model, "assumptions.json")?;
    model.check_assumptions(&cfg.ceilings)?;
    let u0 = cfg.initial_state(&model)?;
    let opts = cfg.integrate_options();
    let traj = classical::integrate(&model, &u0, 0.0, cfg.classical.t_end, opts)?;
    run.write_csv("trajectory.csv", &trajectory_table(&model, &traj)?)?;

    let drift = energy_drift(&model, &traj)?;
    let coarse = classical::integrate(
        &model,
        &u0,
        0.0,
        cfg.classical.t_end,
        IntegrateOptions {
            dt: 2.0 * opts.dt,
            stride: usize::MAX,
            ..opts
        },
    )?;
    let drift_coarse = energy_drift(&model, &coarse)?;
    #[derive(Serialize)]
    struct DriftReport {
        t_end: f64,
        dt: f64,
        relative_drift: f64,
        relative_drift_at_double_dt: f64,
        halving_ratio: f64,
    }
    let report = DriftReport {
        t_end: cfg.classical.t_end,
        dt: opts.dt,
        relative_drift: drift,
        relative_drift_at_double_dt: drift_coarse,
        halving_ratio: drift_coarse / drift,
    };
    run.write_json("energy_drift.json", &report)?;
    println!("relative energy drift {drift:.3e} (dt {}), {drift_coarse:.3e} at 2 dt", opts.dt);

    let c = &cfg.classical;
    let reports = gronwall_ensemble(
        &model,
        &u0,
        c.gronwall_pairs,
        c.gronwall_perturbation,
        c.gronwall_t_end,
        c.gronwall_dt,
        cfg.seed,
    )?;
    let mut table = Table::new(["pair", "constant", "initial_distance", "max_distance_over_bound", "violations"]);
    let mut violations = 0;
    for (i, r) in reports.iter().enumerate() {
        let worst = r
            .distance
            .iter()
            .zip(&r.bound)
            .map(|(d, b)| d / b)
            .fold(0.0, f64::max);
        violations += r.violations();
        table.push(vec![
            i.to_string(),
            num(r.constant),
            num(r.distance[0]),
            num(worst),
            r.violations().to_string(),
        ]);
    }
    run.write_csv("gronwall.csv", &table)?;
    println!("Gronwall envelope: {} pairs, {violations} violations", reports.len());
    if violations > 0 {
        return Err(Error::PropertyFailure(format!(
            "{violations} Gronwall envelope violations, see gronwall.csv"
        )));
    }
    Ok(0)
}

fn cmd_quantum(run: &Run) -> Result<u8> {
    let cfg = &run.cfg;
    let q = &cfg.quantum;
    let model = cfg.quantum_model()?;
    write_assumptions(run, &model, "assumptions.json")?;
    model.check_assumptions(&cfg.ceilings)?;
    let u0 = cfg.initial_state(&model)?;
    let basis = FockBasis::new(model.n_modes(), q.n_max)?;
    let h = HamiltonianAssembly::with_options(&model, cfg.particle_grid()?, basis, q.hbar, q.evolve)?;
    let psi0 = h.coherent_state(&u0)?;
    let steps = (q.t_end / q.dt_out).round().max(1.0) as usize;
    let times: Vec<f64> = (0..=steps).map(|i| q.t_end * i as f64 / steps as f64).collect();
    let states = h.evolve_series(&psi0, &times)?;
    let series: Vec<_> = times.iter().zip(&states).map(|(&t, s)| (t, h.observables(s))).collect();
    run.write_csv("observables.csv", &observables_table(q.hbar, &series))?;

    let e0 = h.expectation(Terms::FULL, &psi0);
    #[derive(Serialize)]
    struct Summary {
        hbar: f64,
        dim: usize,
        dense: bool,
        hermiticity_defect: f64,
        max_norm_drift: f64,
        max_energy_drift: f64,
        max_leakage: f64,
    }
    let summary = Summary {
        hbar: q.hbar,
        dim: h.dim(),
        dense: h.uses_dense(),
        hermiticity_defect: h.hermiticity_probe(8, cfg.seed),
        max_norm_drift: series.iter().map(|(_, o)| (o.norm - 1.0).abs()).fold(0.0, f64::max),
        max_energy_drift: series.iter().map(|(_, o)| (o.energy - e0).abs()).fold(0.0, f64::max),
        max_leakage: series.iter().map(|(_, o)| o.leakage).fold(0.0, f64::max),
    };
    run.write_json("summary.json", &summary)?;
    println!(
        "dim {}, norm drift {:.2e}, energy drift {:.2e}, leakage {:.2e}",
        summary.dim, summary.max_norm_drift, summary.max_energy_drift, summary.max_leakage
    );
    if summary.max_leakage > LEAKAGE_THRESHOLD {
        return Err(Error::TruncationOverflow {
            leakage: summary.max_leakage,
            threshold: LEAKAGE_THRESHOLD,
        });
    }
    Ok(0)
}

fn cmd_correspondence(run: &Run) -> Result<u8> {
    let cfg = &run.cfg;
    let c = &cfg.correspondence;
    let model = cfg.quantum_model()?;
    write_assumptions(run, &model, "assumptions.json")?;
    model.check_assumptions(&cfg.ceilings)?;
    let u0 = cfg.initial_state(&model)?;
    let settings = cfg.sweep_settings(model.n_modes())?;
    let report = hbar_sweep(&model, &u0, &settings)?;
    for f in &report.failures {
        eprintln!("warning: hbar = {} skipped: {}", f.hbar, f.reason);
    }
    let checks: Vec<MonotoneCheck> = c.times.iter().flat_map(|&t| report.monotonicity(t, c.slack)).collect();
    run.write_csv("sweep.csv", &sweep_table(&report))?;
    #[derive(Serialize)]
    struct SweepDoc<'a> {
        report: &'a nelson_core::correspondence::SweepReport,
        monotonicity: &'a [MonotoneCheck],
        panel_seed: u64,
    }
    run.write_json(
        "sweep.json",
        &SweepDoc {
            report: &report,
            monotonicity: &checks,
            panel_seed: c.panel_seed,
        },
    )?;

    let cloud = gaussian_cloud(
        &u0,
        c.cloud_width_particle,
        c.cloud_width_field,
        c.residual_samples,
        cfg.seed,
    )?;
    let mut table = Table::new(["point", "measure", "samples", "residual", "standard_error"]);
    for tp in &settings.panel {
        for (measure, samples) in [("dirac", std::slice::from_ref(&u0)), ("gaussian_cloud", &cloud[..])] {
            let r = characteristic_residual(&model, samples, &tp.xi, 0.0, c.residual_t, c.residual_dt)?;
            table.push(vec![
                tp.label.clone(),
                measure.to_string(),
                r.samples.to_string(),
                num(r.residual),
                num(r.standard_error),
            ]);
        }
    }
    run.write_csv("residual.csv", &table)?;

    let done = report.completed_hbar();
    println!("completed hbar values: {done:?} of {:?}", c.hbar_list);
    for chk in checks.iter().filter(|m| !m.monotone) {
        eprintln!(
            "warning: {} at t = {} is not monotone in hbar: {:?}",
            chk.column, chk.t, chk.values
        );
    }
    if c.hbar_list.len() == 1 && done.len() == 1 {
        eprintln!("warning: a single hbar value was requested; monotonicity in hbar cannot be assessed");
        return Ok(0);
    }
    if done.len() < 2 {
        return Err(Error::config(format!(
            "only {} of {} hbar values completed; increase quantum.n_max or quantum.n_x, or use larger hbar values",
            done.len(),
            c.hbar_list.len()
        )));
    }
    Ok(0)
}

fn cmd_verify(run: &Run) -> Result<u8> {
    let cfg = &run.cfg;
    let model = cfg.model()?;
    let qmodel = cfg.quantum_model()?;
    write_assumptions(run, &model, "assumptions.json")?;
    if let Err(e) = model
        .check_assumptions(&cfg.ceilings)
        .and_then(|_| qmodel.check_assumptions(&cfg.ceilings))
    {
        return Err(match e {
            Error::AssumptionViolation(msg) => Error::PropertyFailure(format!("assumption check: {msg}")),
            other => other,
        });
    }
    let report = run_full_suite(&model, &qmodel, &cfg.suite_settings(&qmodel)?)?;
    run.write_csv("certificates.csv", &certificate_table(&report))?;
    run.write_json("certificates.json", &report)?;
    let failing: Vec<_> = report.cases.iter().filter_map(|c| c.replay.as_ref()).collect();
    if !failing.is_empty() {
        let dir = run.path("replay");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, r) in failing.iter().enumerate() {
            write_replay(&dir, i, r)?;
        }
    }
    let passed = report.cases.iter().filter(|c| c.passed).count();
    println!("{passed} of {} cases passed", report.cases.len());
    report.into_result().map(|_| 0)
}

fn write_replay(dir: &Path, index: usize, r: &nelson_core::estimates::Replay) -> Result<()> {
    export::write_text(&dir.join(format!("{index:03}_{}.txt", r.case)), &r.to_text())
}
