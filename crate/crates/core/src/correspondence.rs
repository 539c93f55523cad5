//! The `hbar -> 0` harness: Weyl characteristic functions of quantum states,
//! the classical symbol `b(s, xi)`, residuals of the characteristic equation, and
//! sweeps comparing quantum expectations with the classical flow.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classical::{self, IntegrateOptions, Picture};
use crate::error::{Error, Result};
use crate::fock::{FockBasis, ModeFunction, LEAKAGE_THRESHOLD};
use crate::linalg::{self, CMat};
use crate::model::{ClassicalState, Model};
use crate::quantum::{EvolveOptions, HamiltonianAssembly, ParticleGrid};

/// A phase-space direction `xi = (p0, q0, alpha0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub label: String,
    pub xi: ClassicalState,
}

/// Eight fixed directions (particle-only, field-only, mixed) followed by
/// `n_random` seeded ones. Components stay at or below 0.15 in magnitude.
pub fn test_panel(n_modes: usize, n_random: usize, seed: u64) -> Vec<TestPoint> {
    let z = C64::new(0.0, 0.0);
    let mk = |label: &str, p: f64, q: f64, alpha: Vec<C64>| TestPoint {
        label: label.to_string(),
        xi: ClassicalState {
            p: vec![p],
            q: vec![q],
            alpha,
        },
    };
    let field = |f: &dyn Fn(usize) -> C64| (0..n_modes).map(f).collect::<Vec<_>>();
    let first = 0;
    let mid = n_modes / 2;
    let last = n_modes - 1;
    let mut panel = vec![
        mk("momentum", 0.15, 0.0, field(&|_| z)),
        mk("position", 0.0, 0.15, field(&|_| z)),
        mk("phase-space", 0.1, -0.1, field(&|_| z)),
        mk("field-real", 0.0, 0.0, field(&|i| if i == first { C64::new(0.15, 0.0) } else { z })),
        mk("field-imag", 0.0, 0.0, field(&|i| if i == mid { C64::new(0.0, 0.15) } else { z })),
        mk("field-spread", 0.0, 0.0, field(&|_| C64::new(0.05, 0.05))),
        mk("mixed-a", 0.08, 0.08, field(&|i| if i == first { C64::new(0.08, 0.0) } else { z })),
        mk("mixed-b", -0.1, 0.06, field(&|i| {
            if i == last {
                C64::new(0.0, 0.06)
            } else if i == first {
                C64::new(0.04, 0.0)
            } else {
                z
            }
        })),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |a: f64| a * (2.0 * rng.random::<f64>() - 1.0);
    for r in 0..n_random {
        let p = u(0.1);
        let q = u(0.1);
        let alpha = (0..n_modes).map(|_| C64::new(u(0.07), u(0.07))).collect();
        panel.push(mk(&format!("random-{r}"), p, q, alpha));
    }
    panel
}

/// `Re <xi, u>_{X^0}`.
pub fn x0_pairing(model: &Model, xi: &ClassicalState, u: &ClassicalState) -> f64 {
    model.xs_inner(xi, u, 0.0).re
}

/// Limit value `e^{2 pi i Re<xi, u>}` of the characteristic function at a point mass.
pub fn characteristic_limit(model: &Model, xi: &ClassicalState, u: &ClassicalState) -> C64 {
    C64::cis(2.0 * PI * x0_pairing(model, xi, u))
}

/// `Q(xi, u) = i Im<z, z0> + sqrt(2) i Re<alpha0, alpha>` with `Im<z, z'> = q.p' - p.q'`.
pub fn q_phase(model: &Model, xi: &ClassicalState, u: &ClassicalState) -> C64 {
    let mut im_zz = 0.0;
    for j in 0..u.p.len() {
        im_zz += u.q[j] * xi.p[j] - u.p[j] * xi.q[j];
    }
    let re_aa = model.field_inner(&xi.alpha, &u.alpha, 0.0).re;
    C64::new(0.0, im_zz + SQRT_2 * re_aa)
}

/// Weyl parameters used by [`characteristic_quantum`]: the particle pair
/// `(p_z, q_z) = (2 pi q0, -2 pi p0)` and the field argument `sqrt(2) pi alpha0`.
pub fn weyl_arguments(xi: &ClassicalState) -> (f64, f64, ModeFunction) {
    let beta = xi.alpha.iter().map(|a| a * (SQRT_2 * PI)).collect();
    (2.0 * PI * xi.q[0], -2.0 * PI * xi.p[0], ModeFunction::new(beta))
}

/// Field Weyl matrix for a test point, for reuse across states.
pub fn field_weyl(h: &HamiltonianAssembly, xi: &ClassicalState) -> Result<CMat> {
    let (_, _, beta) = weyl_arguments(xi);
    h.fock.weyl_field(&beta)
}

/// `<psi, W_1(2 pi q0, -2 pi p0) (x) W_2(sqrt(2) pi alpha0) psi>`.
pub fn characteristic_quantum(h: &HamiltonianAssembly, psi: &[C64], xi: &ClassicalState) -> Result<C64> {
    let w2 = field_weyl(h, xi)?;
    characteristic_with(h, psi, xi, &w2)
}

/// As [`characteristic_quantum`] with a precomputed field Weyl matrix.
///
/// Fails when the field displacement pushes more than the leakage threshold into
/// the top occupation shell.
pub fn characteristic_with(h: &HamiltonianAssembly, psi: &[C64], xi: &ClassicalState, w2: &CMat) -> Result<C64> {
    let (pz, qz, _) = weyl_arguments(xi);
    let shifted = h.apply_fock_matrix(w2, psi);
    let leak = h.leakage(&shifted) - h.leakage(psi);
    if leak > LEAKAGE_THRESHOLD {
        return Err(Error::TruncationOverflow {
            leakage: leak,
            threshold: LEAKAGE_THRESHOLD,
        });
    }
    let out = h.weyl_particle(&shifted, pz, qz)?;
    Ok(linalg::dot(psi, &out))
}

/// Classical symbol `b(s, xi)` evaluated at an interaction-picture state `u`.
pub fn b_symbol(model: &Model, s: f64, xi: &ClassicalState, u: &ClassicalState) -> f64 {
    let kin = model.cfg.kinetic;
    let grad_v = model.cfg.potential.gradient(&u.q);
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..u.p.len() {
        acc -= kin.df(u.p[j], model.cfg.masses[j]) * xi.p[j];
        acc -= grad_v[j] * xi.q[j];
        let mut g = vec![C64::new(0.0, 0.0); model.n_modes()];
        let mut b0 = vec![C64::new(0.0, 0.0); model.n_modes()];
        for i in 0..model.n_modes() {
            let e = C64::cis(-2.0 * PI * model.k[i] * u.q[j] + s * model.omega[i]);
            g[i] = e * model.coupling[i];
            b0[i] = C64::new(0.0, 2.0 * PI * model.k[i] * xi.q[j]) * g[i];
        }
        let ab = model.field_inner(&u.alpha, &b0, 0.0);
        acc += ab + ab.conj();
        let ag = model.field_inner(&xi.alpha, &g, 0.0);
        let ga = model.field_inner(&g, &xi.alpha, 0.0);
        acc += C64::new(0.0, 1.0 / SQRT_2) * (ag - ga);
    }
    acc.re
}

/// Gaussian cloud of direct-picture states around `center`.
pub fn gaussian_cloud(
    center: &ClassicalState,
    width_particle: f64,
    width_field: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<ClassicalState>> {
    let np = Normal::new(0.0, width_particle)
        .map_err(|e| Error::config(format!("particle cloud width: {e}")))?;
    let nf = Normal::new(0.0, width_field).map_err(|e| Error::config(format!("field cloud width: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mut u = center.clone();
            u.p.iter_mut().for_each(|x| *x += np.sample(&mut rng));
            u.q.iter_mut().for_each(|x| *x += np.sample(&mut rng));
            u.alpha
                .iter_mut()
                .for_each(|a| *a += C64::new(nf.sample(&mut rng), nf.sample(&mut rng)));
            u
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub residual: f64,
    /// Monte-Carlo standard error of the sample mean of `e^{2 pi i Re<y, u_t>}`.
    pub standard_error: f64,
    pub samples: usize,
}

/// Residual of the characteristic equation for the empirical measure of `samples`
/// (direct-picture data at `t0`), transported by the interaction-picture flow:
///
/// `| mu_t(phi) - mu_t0(phi) - 2 pi i int_t0^t mu_s(phi Re<v(s, .), y>) ds |`
/// with `phi = e^{2 pi i Re<y, .>}` and the trapezoid rule of step `dt`.
pub fn characteristic_residual(
    model: &Model,
    samples: &[ClassicalState],
    y: &ClassicalState,
    t0: f64,
    t: f64,
    dt: f64,
) -> Result<ResidualReport> {
    if samples.is_empty() {
        return Err(Error::config("characteristic residual needs at least one sample"));
    }
    if t < t0 {
        return Err(Error::config("characteristic residual needs t >= t0"));
    }
    let n = samples.len() as f64;
    let mut total = C64::new(0.0, 0.0);
    let mut end_values = Vec::with_capacity(samples.len());
    for u0 in samples {
        if t == t0 {
            end_values.push(characteristic_limit(model, y, u0));
            continue;
        }
        let traj = classical::integrate(
            model,
            u0,
            t0,
            t,
            IntegrateOptions {
                dt,
                picture: Picture::Interaction,
                stride: 1,
            },
        )?;
        let m = traj.states.len() - 1;
        let h = (t - t0) / m as f64;
        let mut integral = C64::new(0.0, 0.0);
        for (idx, (s, u)) in traj.times.iter().zip(&traj.states).enumerate() {
            let w = if idx == 0 || idx == m { 0.5 * h } else { h };
            let v = classical::vector_field_v(model, *s, u);
            integral += characteristic_limit(model, y, u) * x0_pairing(model, y, &v) * w;
        }
        let start = characteristic_limit(model, y, &traj.states[0]);
        let end = characteristic_limit(model, y, &traj.states[m]);
        end_values.push(end);
        total += end - start - C64::new(0.0, 2.0 * PI) * integral;
    }
    let mean: C64 = end_values.iter().sum::<C64>() / n;
    let var = if samples.len() > 1 {
        end_values.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ResidualReport {
        residual: (total / n).norm(),
        standard_error: (var / n).sqrt(),
        samples: samples.len(),
    })
}

/// Compare two evaluation orders of `int phi d(Phi_t)_# mu`: flow every sample and
/// then average the test functions, versus averaging `phi o Phi_t` sample by sample
/// with `flow_model` supplying the flow. Returns the worst gap over the panel.
pub fn pushforward_check_with(
    model: &Model,
    flow_model: &Model,
    samples: &[ClassicalState],
    t: f64,
    panel: &[TestPoint],
    dt: f64,
) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let flowed: Vec<ClassicalState> = samples
        .iter()
        .map(|u| classical::flow_at(model, u, &[t], dt).map(|mut v| v.remove(0)))
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let mut worst: f64 = 0.0;
    for tp in panel {
        let pushed: C64 = flowed.iter().map(|u| characteristic_limit(model, &tp.xi, u)).sum::<C64>() / n;
        let mut composed = C64::new(0.0, 0.0);
        for u in samples {
            let moved = classical::flow_at(flow_model, u, &[t], dt)?.remove(0);
            composed += characteristic_limit(model, &tp.xi, &moved);
        }
        worst = worst.max((pushed - composed / n).norm());
    }
    Ok(worst)
}

pub fn pushforward_check(
    model: &Model,
    samples: &[ClassicalState],
    t: f64,
    panel: &[TestPoint],
    dt: f64,
) -> Result<f64> {
    pushforward_check_with(model, model, samples, t, panel, dt)
}

/// Settings of an `hbar` sweep.
#[derive(Clone, Debug)]
pub struct SweepSettings {
    /// Strictly decreasing values in `(0, 1]`.
    pub hbar_list: Vec<f64>,
    /// Non-negative, non-decreasing report times.
    pub times: Vec<f64>,
    pub grid: ParticleGrid,
    pub n_max: usize,
    pub classical_dt: f64,
    pub panel: Vec<TestPoint>,
    pub evolve: EvolveOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hbar: f64,
    pub t: f64,
    pub q_error: f64,
    pub p_error: f64,
    /// `|<a_i> - sqrt(dk) alpha_cl,i|` per mode.
    pub mode_errors: Vec<f64>,
    /// Worst characteristic-function error over the panel.
    pub char_error: f64,
    /// Worst field error in the interaction picture against the pulled-back classical field.
    pub interaction_field_error: f64,
    pub leakage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub hbar: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
    pub hbar_list: Vec<f64>,
    pub times: Vec<f64>,
    pub panel: Vec<TestPoint>,
    pub dim: usize,
}

/// Outcome of the monotonicity test for one error column at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    pub column: String,
    pub t: f64,
    pub values: Vec<f64>,
    pub monotone: bool,
}

/// Errors below this are treated as equal when testing monotonicity.
pub const MONOTONE_FLOOR: f64 = 1e-9;

impl SweepReport {
    pub fn completed_hbar(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.hbar) {
                out.push(r.hbar);
            }
        }
        out
    }

    /// Error column names, in row order.
    pub fn column_names(&self) -> Vec<String> {
        let modes = self.rows.first().map_or(0, |r| r.mode_errors.len());
        let mut names = vec!["q_error".to_string(), "p_error".to_string()];
        names.extend((0..modes).map(|i| format!("mode_{i}_error")));
        names.push("char_error".to_string());
        names.push("interaction_field_error".to_string());
        names
    }

    fn row_columns(r: &SweepRow) -> Vec<f64> {
        let mut v = vec![r.q_error, r.p_error];
        v.extend(&r.mode_errors);
        v.push(r.char_error);
        v.push(r.interaction_field_error);
        v
    }

    /// Every error column at time `t` must be non-increasing along the (decreasing)
    /// `hbar` values, allowing each step to grow by the factor `1 + slack`.
    pub fn monotonicity(&self, t: f64, slack: f64) -> Vec<MonotoneCheck> {
        let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| (r.t - t).abs() < 1e-12).collect();
        self.column_names()
            .into_iter()
            .enumerate()
            .map(|(c, column)| {
                let values: Vec<f64> = rows.iter().map(|r| Self::row_columns(r)[c]).collect();
                let monotone = values
                    .windows(2)
                    .all(|w| w[1] <= (1.0 + slack) * w[0] + MONOTONE_FLOOR);
                MonotoneCheck {
                    column,
                    t,
                    values,
                    monotone,
                }
            })
            .collect()
    }

    pub fn max_leakage(&self) -> f64 {
        self.rows.iter().map(|r| r.leakage).fold(0.0, f64::max)
    }
}

/// Run the quantum model from coherent states at `u0` for every `hbar` and compare
/// with the classical flow of `u0` on the same mode set.
///
/// Guard failures at one `hbar` are recorded and the sweep moves on.
pub fn hbar_sweep(model: &Model, u0: &ClassicalState, settings: &SweepSettings) -> Result<SweepReport> {
    let hs = &settings.hbar_list;
    if hs.is_empty() || hs.iter().any(|&h| !(h > 0.0 && h <= 1.0)) {
        return Err(Error::config("correspondence.hbar_list entries must lie in (0, 1]"));
    }
    if hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("correspondence.hbar_list must be strictly decreasing"));
    }
    if settings.times.iter().any(|&t| t < 0.0) || settings.times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("correspondence.times must be non-negative and sorted"));
    }
    let classical_states = classical::flow_at(model, u0, &settings.times, settings.classical_dt)?;
    let basis = FockBasis::new(model.n_modes(), settings.n_max)?;
    let sdk = model.dk.sqrt();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut dim = 0;
    for &hbar in hs {
        match sweep_one(model, u0, settings, &basis, hbar, &classical_states, sdk) {
            Ok((mut r, d)) => {
                dim = d;
                rows.append(&mut r);
            }
            Err(e) => failures.push(SweepFailure {
                hbar,
                reason: e.to_string(),
            }),
        }
    }
    Ok(SweepReport {
        rows,
        failures,
        hbar_list: hs.clone(),
        times: settings.times.clone(),
        panel: settings.panel.clone(),
        dim,
    })
}

fn sweep_one(
    model: &Model,
    u0: &ClassicalState,
    settings: &SweepSettings,
    basis: &Arc<FockBasis>,
    hbar: f64,
    classical_states: &[ClassicalState],
    sdk: f64,
) -> Result<(Vec<SweepRow>, usize)> {
    let h = HamiltonianAssembly::with_options(model, settings.grid, basis.clone(), hbar, settings.evolve)?;
    let psi0 = h.coherent_state(u0)?;
    let states = h.evolve_series(&psi0, &settings.times)?;
    let weyls: Vec<CMat> = settings
        .panel
        .iter()
        .map(|tp| field_weyl(&h, &tp.xi))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(states.len());
    for ((&t, psi), ucl) in settings.times.iter().zip(&states).zip(classical_states) {
        let obs = h.observables(psi);
        if obs.leakage > LEAKAGE_THRESHOLD {
            return Err(Error::TruncationOverflow {
                leakage: obs.leakage,
                threshold: LEAKAGE_THRESHOLD,
            });
        }
        let mode_errors: Vec<f64> = obs
            .modes
            .iter()
            .zip(&ucl.alpha)
            .map(|(a, c)| (a - c * sdk).norm())
            .collect();
        let mut char_error: f64 = 0.0;
        for (tp, w2) in settings.panel.iter().zip(&weyls) {
            let val = characteristic_with(&h, psi, &tp.xi, w2)?;
            char_error = char_error.max((val - characteristic_limit(model, &tp.xi, ucl)).norm());
        }
        let ip = h.observables(&h.interaction_picture(psi, t));
        let pulled = classical::free_flow(model, -t, ucl);
        let interaction_field_error = ip
            .modes
            .iter()
            .zip(&pulled.alpha)
            .map(|(a, c)| (a - c * sdk).norm())
            .fold(0.0, f64::max);
        rows.push(SweepRow {
            hbar,
            t,
            q_error: (obs.q - ucl.q[0]).abs(),
            p_error: (obs.p - ucl.p[0]).abs(),
            mode_errors,
            char_error,
            interaction_field_error,
            leakage: obs.leakage,
        });
    }
    Ok((rows, h.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FormFactorShape, KGrid, ModelConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn model() -> Model {
        Model::new(ModelConfig::default()).unwrap()
    }

    fn small_model(amplitude: f64) -> Model {
        Model::new(ModelConfig {
            grid: KGrid { k_max: 1.0, n_k: 3 },
            form_factor: FormFactorShape::Gaussian {
                amplitude,
                cutoff: 2.0,
            },
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn random_state(m: &Model, rng: &mut ChaCha8Rng) -> ClassicalState {
        let mut u = m.zero_state();
        u.p[0] = rng.random::<f64>() * 2.0 - 1.0;
        u.q[0] = rng.random::<f64>() * 2.0 - 1.0;
        for a in u.alpha.iter_mut() {
            *a = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        }
        u
    }

    #[test]
    fn panel_layout() {
        let p = test_panel(3, 8, 1);
        assert_eq!(p.len(), 16);
        for tp in &p {
            assert!(tp.xi.p[0].abs() <= 0.15 && tp.xi.q[0].abs() <= 0.15);
            assert!(tp.xi.alpha.iter().all(|a| a.norm() <= 0.15));
        }
        assert_eq!(test_panel(3, 8, 1), p);
    }

    #[test]
    fn q_phase_particle_only() {
        let m = model();
        let mut u = m.zero_state();
        u.p[0] = 0.7;
        u.q[0] = -0.3;
        let mut xi = m.zero_state();
        xi.p[0] = 0.2;
        xi.q[0] = 0.5;
        let q = q_phase(&m, &xi, &u);
        assert!((q - C64::new(0.0, -0.3 * 0.2 - 0.7 * 0.5)).norm() < 1e-15);
        assert_eq!(q_phase(&m, &m.zero_state(), &u), C64::new(0.0, 0.0));
    }

    #[test]
    fn b_symbol_free_particle() {
        let m = small_model(0.0);
        let m = Model::new(ModelConfig {
            potential: crate::model::Potential::Zero,
            ..m.cfg.clone()
        })
        .unwrap();
        let mut u = m.zero_state();
        u.p[0] = 0.6;
        let mut xi = m.zero_state();
        xi.p[0] = 0.3;
        xi.alpha[1] = C64::new(0.2, 0.1);
        let expect = -m.cfg.kinetic.df(0.6, 1.0) * 0.3;
        assert!((b_symbol(&m, 0.4, &xi, &u) - expect).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn b_symbol_matches_vector_field(seed in any::<u64>(), s in -3.0f64..3.0) {
            let m = small_model(0.5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_state(&m, &mut rng);
            let xi = random_state(&m, &mut rng);
            // xi~ = (-q0 / 2 pi, p0 / 2 pi, alpha0 / (sqrt 2 pi))
            let mut tilde = m.zero_state();
            tilde.p[0] = -xi.q[0] / (2.0 * PI);
            tilde.q[0] = xi.p[0] / (2.0 * PI);
            tilde.alpha = xi.alpha.iter().map(|a| a / (SQRT_2 * PI)).collect();
            let v = classical::vector_field_v(&m, s, &u);
            let rhs = -2.0 * PI * x0_pairing(&m, &tilde, &v);
            prop_assert!((b_symbol(&m, s, &xi, &u) - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_trivial_cases() {
        let m = small_model(0.5);
        let mut u = m.zero_state();
        u.p[0] = 0.3;
        u.alpha[0] = C64::new(0.1, 0.0);
        let y = test_panel(3, 0, 0)[6].xi.clone();
        let r = characteristic_residual(&m, &[u.clone()], &y, 0.0, 0.0, 0.01).unwrap();
        assert_eq!(r.residual, 0.0);
        let r = characteristic_residual(&m, &[u], &m.zero_state(), 0.0, 1.0, 0.05).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn residual_shrinks_with_step() {
        let m = small_model(0.5);
        let mut u = m.zero_state();
        u.p[0] = 0.5;
        u.q[0] = 0.2;
        u.alpha[1] = C64::new(0.1, -0.05);
        let y = test_panel(3, 0, 0)[7].xi.clone();
        let a = characteristic_residual(&m, &[u.clone()], &y, 0.0, 1.0, 0.04).unwrap().residual;
        let b = characteristic_residual(&m, &[u], &y, 0.0, 1.0, 0.02).unwrap().residual;
        assert!(b < a / 3.0, "{a} {b}");
    }

    #[test]
    fn pushforward_orders_agree_and_fault_is_seen() {
        let m = small_model(0.5);
        let mut c = m.zero_state();
        c.p[0] = 0.4;
        let samples = gaussian_cloud(&c, 0.1, 0.05, 8, 3).unwrap();
        let panel = test_panel(3, 2, 5);
        assert_eq!(pushforward_check(&m, &samples, 0.0, &panel, 0.01).unwrap(), 0.0);
        assert!(pushforward_check(&m, &samples, 0.5, &panel, 0.01).unwrap() <= 1e-12);
        let faulty = m.with_coupling_scaled(-1.0);
        assert!(pushforward_check_with(&m, &faulty, &samples, 0.5, &panel, 0.01).unwrap() > 1e-6);
    }

    #[test]
    fn characteristic_of_zero_point_is_one() {
        let m = small_model(0.05);
        let basis = FockBasis::new(3, 6).unwrap();
        let h = HamiltonianAssembly::new(&m, ParticleGrid::new(64, 4.0).unwrap(), basis, 0.2).unwrap();
        let mut u = m.zero_state();
        u.p[0] = 0.3;
        let psi = h.coherent_state(&u).unwrap();
        let v = characteristic_quantum(&h, &psi, &m.zero_state()).unwrap();
        assert!((v - C64::new(1.0, 0.0)).norm() < 1e-12);
        for tp in test_panel(3, 4, 2) {
            assert!(characteristic_quantum(&h, &psi, &tp.xi).unwrap().norm() <= 1.0 + 1e-12);
        }
    }
}
