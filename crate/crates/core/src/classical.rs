//! Classical particle-field dynamics.
//!
//! The equation `du/dt = L u + N(u)` with `L(p, q, alpha) = (0, 0, -i omega alpha)`
//! is integrated in two independent ways: exponential time differencing
//! (ETDRK4) in the direct picture, and classical RK4 on the interaction-picture
//! field `v(t, u) = Phi_{-t} N(Phi_t u)`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassicalState, Model};

pub const BLOWUP_NORM: f64 = 1e12;

/// `N(u)`: particle forces, particle velocities and the field source term.
pub fn nonlinearity(model: &Model, u: &ClassicalState) -> ClassicalState {
    let kin = model.cfg.kinetic;
    let n = model.n_particles();
    let nk = model.n_modes();
    let grad_v = model.cfg.potential.gradient(&u.q);
    let mut out = ClassicalState::zeros(n, nk);
    for j in 0..n {
        out.q[j] = kin.df(u.p[j], model.cfg.masses[j]);
        let mut grad_i = 0.0;
        for i in 0..nk {
            let e = C64::cis(2.0 * PI * model.k[i] * u.q[j]);
            let w = u.alpha[i] * e;
            grad_i += -4.0 * PI * model.k[i] * model.coupling[i] * w.im;
            // -i c e^{-2 pi i k q}
            out.alpha[i] += C64::new(0.0, -model.coupling[i]) * e.conj();
        }
        out.p[j] = -grad_v[j] - grad_i * model.dk;
    }
    out
}

/// `Phi^f_t (p, q, alpha) = (p, q, e^{-i t omega} alpha)`.
pub fn free_flow(model: &Model, t: f64, u: &ClassicalState) -> ClassicalState {
    let mut out = u.clone();
    for (a, w) in out.alpha.iter_mut().zip(&model.omega) {
        *a *= C64::cis(-t * w);
    }
    out
}

/// Interaction-picture vector field `v(t, u) = Phi_{-t} N(Phi_t u)`.
pub fn vector_field_v(model: &Model, t: f64, u: &ClassicalState) -> ClassicalState {
    let direct = free_flow(model, t, u);
    let n = nonlinearity(model, &direct);
    free_flow(model, -t, &n)
}

/// Integrand `Re <v(t, u), y>_{X^sigma}` of the characteristic equation.
pub fn pfe_rhs(model: &Model, t: f64, u: &ClassicalState, y: &ClassicalState) -> f64 {
    let v = vector_field_v(model, t, u);
    model.xs_inner(&v, y, model.cfg.sigma).re
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Picture {
    Direct,
    Interaction,
}

/// Stored trajectory. `states` are in the variables of `picture`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub picture: Picture,
    pub times: Vec<f64>,
    pub states: Vec<ClassicalState>,
}

impl Trajectory {
    pub fn direct_state(&self, model: &Model, idx: usize) -> ClassicalState {
        match self.picture {
            Picture::Direct => self.states[idx].clone(),
            Picture::Interaction => free_flow(model, self.times[idx], &self.states[idx]),
        }
    }

    pub fn interaction_state(&self, model: &Model, idx: usize) -> ClassicalState {
        match self.picture {
            Picture::Interaction => self.states[idx].clone(),
            Picture::Direct => free_flow(model, -self.times[idx], &self.states[idx]),
        }
    }

    pub fn direct_states(&self, model: &Model) -> Vec<ClassicalState> {
        (0..self.states.len())
            .map(|i| self.direct_state(model, i))
            .collect()
    }

    pub fn last_direct(&self, model: &Model) -> ClassicalState {
        self.direct_state(model, self.states.len() - 1)
    }

    pub fn energies(&self, model: &Model) -> Result<Vec<f64>> {
        (0..self.states.len())
            .map(|i| model.hamiltonian(&self.direct_state(model, i)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IntegrateOptions {
    pub dt: f64,
    pub picture: Picture,
    /// Keep every `stride`-th step (the final state is always kept).
    pub stride: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            dt: 1e-3,
            picture: Picture::Direct,
            stride: 1,
        }
    }
}

/// Integrate from direct-picture data `u0` at `t0` up to `t_end`.
///
/// The step is shrunk slightly so that an integer number of steps lands on `t_end`.
pub fn integrate(
    model: &Model,
    u0: &ClassicalState,
    t0: f64,
    t_end: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory> {
    if !(opts.dt.is_finite() && opts.dt > 0.0) {
        return Err(Error::config(format!("dt must be positive, got {}", opts.dt)));
    }
    if !(t_end.is_finite() && t_end >= t0) {
        return Err(Error::config(format!(
            "final time {t_end} must not precede start time {t0}"
        )));
    }
    check_shape(model, u0)?;
    let span = t_end - t0;
    let steps = ((span / opts.dt) - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 { 0.0 } else { span / steps as f64 };
    let stride = opts.stride.max(1);

    let mut state = match opts.picture {
        Picture::Direct => u0.clone(),
        Picture::Interaction => free_flow(model, -t0, u0),
    };
    let mut times = vec![t0];
    let mut states = vec![state.clone()];
    let etd = (opts.picture == Picture::Direct && steps > 0).then(|| EtdCoefficients::new(model, h));

    for n in 0..steps {
        let t = t0 + n as f64 * h;
        let next = match &etd {
            Some(c) => etdrk4_step(model, c, &state),
            None => rk4_step(model, t, h, &state),
        };
        let t_next = t0 + (n + 1) as f64 * h;
        if !next.is_finite() || model.xsigma_norm(&next) > BLOWUP_NORM {
            let reason = if next.is_finite() {
                format!("X^sigma norm exceeded {BLOWUP_NORM:e}")
            } else {
                "non-finite state".to_string()
            };
            let last = match opts.picture {
                Picture::Direct => state,
                Picture::Interaction => free_flow(model, t, &state),
            };
            return Err(Error::Blowup {
                t: t_next,
                reason,
                last_finite: Box::new(last),
            });
        }
        state = next;
        if (n + 1) % stride == 0 || n + 1 == steps {
            times.push(t_next);
            states.push(state.clone());
        }
    }
    Ok(Trajectory {
        picture: opts.picture,
        times,
        states,
    })
}

fn check_shape(model: &Model, u: &ClassicalState) -> Result<()> {
    let n = model.n_particles();
    if u.p.len() != n || u.q.len() != n || u.alpha.len() != model.n_modes() {
        return Err(Error::config(format!(
            "state shape (p {}, q {}, alpha {}) does not match the model ({} particles, {} modes)",
            u.p.len(),
            u.q.len(),
            u.alpha.len(),
            n,
            model.n_modes()
        )));
    }
    Ok(())
}

fn rk4_step(model: &Model, t: f64, h: f64, u: &ClassicalState) -> ClassicalState {
    let k1 = vector_field_v(model, t, u);
    let mut y = u.clone();
    y.axpy(0.5 * h, &k1);
    let k2 = vector_field_v(model, t + 0.5 * h, &y);
    let mut y = u.clone();
    y.axpy(0.5 * h, &k2);
    let k3 = vector_field_v(model, t + 0.5 * h, &y);
    let mut y = u.clone();
    y.axpy(h, &k3);
    let k4 = vector_field_v(model, t + h, &y);
    let mut out = u.clone();
    out.axpy(h / 6.0, &k1);
    out.axpy(h / 3.0, &k2);
    out.axpy(h / 3.0, &k3);
    out.axpy(h / 6.0, &k4);
    out
}

/// `phi_1, phi_2, phi_3` of the exponential integrators.
fn phi123(z: C64) -> (C64, C64, C64) {
    if z.norm() < 0.5 {
        // phi_k(z) = sum_m z^m / (m + k)!
        let mut out = [C64::new(0.0, 0.0); 3];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut term = C64::new(1.0, 0.0);
            for j in 1..=k + 1 {
                term /= j as f64;
            }
            let mut acc = term;
            for m in 1..30 {
                term *= z / (m + k + 1) as f64;
                acc += term;
            }
            *slot = acc;
        }
        (out[0], out[1], out[2])
    } else {
        let e = z.exp();
        let one = C64::new(1.0, 0.0);
        let p1 = (e - one) / z;
        let p2 = (e - one - z) / (z * z);
        let p3 = (e - one - z - z * z * 0.5) / (z * z * z);
        (p1, p2, p3)
    }
}

/// Cox-Matthews ETDRK4 coefficients for the field modes.
struct EtdCoefficients {
    h: f64,
    e: Vec<C64>,
    e2: Vec<C64>,
    q: Vec<C64>,
    f1: Vec<C64>,
    f2: Vec<C64>,
    f3: Vec<C64>,
}

impl EtdCoefficients {
    fn new(model: &Model, h: f64) -> Self {
        let nk = model.n_modes();
        let mut c = EtdCoefficients {
            h,
            e: Vec::with_capacity(nk),
            e2: Vec::with_capacity(nk),
            q: Vec::with_capacity(nk),
            f1: Vec::with_capacity(nk),
            f2: Vec::with_capacity(nk),
            f3: Vec::with_capacity(nk),
        };
        for &w in &model.omega {
            let z = C64::new(0.0, -w * h);
            let (half1, _, _) = phi123(z * 0.5);
            let (p1, p2, p3) = phi123(z);
            c.e.push(z.exp());
            c.e2.push((z * 0.5).exp());
            c.q.push(half1 * (0.5 * h));
            c.f1.push((p1 - p2 * 3.0 + p3 * 4.0) * h);
            c.f2.push((p2 - p3 * 2.0) * h);
            c.f3.push((p3 * 4.0 - p2) * h);
        }
        c
    }
}

fn etdrk4_step(model: &Model, c: &EtdCoefficients, u: &ClassicalState) -> ClassicalState {
    let h = c.h;
    // p and q carry no linear part, where the scheme reduces to classical RK4 weights.
    let half_step = |base: &ClassicalState, src: &ClassicalState| {
        let mut out = base.clone();
        for j in 0..out.p.len() {
            out.p[j] += 0.5 * h * src.p[j];
            out.q[j] += 0.5 * h * src.q[j];
        }
        for i in 0..out.alpha.len() {
            out.alpha[i] = c.e2[i] * base.alpha[i] + c.q[i] * src.alpha[i];
        }
        out
    };
    let nu = nonlinearity(model, u);
    let a = half_step(u, &nu);
    let na = nonlinearity(model, &a);
    let b = half_step(u, &na);
    let nb = nonlinearity(model, &b);
    let mut src = nb.scaled(2.0);
    src.axpy(-1.0, &nu);
    let cc = half_step(&a, &src);
    let nc = nonlinearity(model, &cc);

    let mut out = u.clone();
    for j in 0..out.p.len() {
        out.p[j] += h / 6.0 * (nu.p[j] + 2.0 * (na.p[j] + nb.p[j]) + nc.p[j]);
        out.q[j] += h / 6.0 * (nu.q[j] + 2.0 * (na.q[j] + nb.q[j]) + nc.q[j]);
    }
    for i in 0..out.alpha.len() {
        out.alpha[i] = c.e[i] * u.alpha[i]
            + c.f1[i] * nu.alpha[i]
            + c.f2[i] * (na.alpha[i] + nb.alpha[i]) * 2.0
            + c.f3[i] * nc.alpha[i];
    }
    out
}

/// Largest `|H(u(t)) - H(u(0))| / max(1, |H(u(0))|)` along a trajectory.
pub fn energy_drift(model: &Model, traj: &Trajectory) -> Result<f64> {
    let e = traj.energies(model)?;
    let scale = e[0].abs().max(1.0);
    Ok(e.iter().map(|h| (h - e[0]).abs()).fold(0.0, f64::max) / scale)
}

/// `|| u(T) - Phi_T u(0) - int_0^T Phi_{T-s} N(u(s)) ds ||_{X^sigma}` on a trajectory
/// stored at every step. The time integral uses composite Simpson weights (with a
/// 3/8 panel at the end for an odd number of intervals).
pub fn duhamel_residual(model: &Model, traj: &Trajectory) -> Result<f64> {
    let m = traj.times.len() - 1;
    if m < 2 {
        return Err(Error::config("Duhamel residual needs at least two steps"));
    }
    let t0 = traj.times[0];
    let t_end = traj.times[m];
    let h = (t_end - t0) / m as f64;
    for w in traj.times.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::config(
                "Duhamel residual needs a uniformly sampled trajectory (stride 1)",
            ));
        }
    }
    let weights = simpson_weights(m, h);
    let direct = traj.direct_states(model);
    let mut acc = free_flow(model, t_end - t0, &direct[0]);
    for (idx, u) in direct.iter().enumerate() {
        let n = nonlinearity(model, u);
        let moved = free_flow(model, t_end - traj.times[idx], &n);
        acc.axpy(weights[idx], &moved);
    }
    Ok(model.xsigma_norm(&direct[m].sub(&acc)))
}

/// Composite Simpson weights on `m` equal intervals.
pub fn simpson_weights(m: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; m + 1];
    let simpson_end = if m.is_multiple_of(2) { m } else { m - 3 };
    let mut i = 0;
    while i < simpson_end {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if m % 2 == 1 {
        let s = simpson_end;
        w[s] += 3.0 * h / 8.0;
        w[s + 1] += 9.0 * h / 8.0;
        w[s + 2] += 9.0 * h / 8.0;
        w[s + 3] += 3.0 * h / 8.0;
    }
    w
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GronwallReport {
    pub constant: f64,
    pub times: Vec<f64>,
    pub distance: Vec<f64>,
    pub bound: Vec<f64>,
}

impl GronwallReport {
    pub fn violations(&self) -> usize {
        self.distance
            .iter()
            .zip(&self.bound)
            .filter(|(d, b)| d > b)
            .count()
    }
}

/// X^0 Lipschitz constant of `N` along solutions whose field stays below `alpha_sup`
/// in the `G^sigma` norm:
///
/// * momenta: `sup ||Hess V|| + 8 sqrt(2) pi^2 ||omega^(3/2-sigma) chi|| alpha_sup` in q
///   and `sqrt(n) 4 pi ||omega^(1/2) chi||` in alpha,
/// * positions: `max_j 1/M_j` in p,
/// * field: `2 pi sqrt(n) ||omega^(-1/2) |k| chi||` in q,
///
/// combined through the Frobenius norm of the 3x3 block matrix.
pub fn lipschitz_constant(model: &Model, alpha_sup: f64) -> f64 {
    let n = model.n_particles() as f64;
    let sigma = model.cfg.sigma;
    let a = model.cfg.potential.sup_hessian()
        + 8.0 * 2f64.sqrt() * PI * PI * model.chi_weighted_norm(1.5 - sigma) * alpha_sup;
    let b = n.sqrt() * 4.0 * PI * model.chi_weighted_norm(0.5);
    let lf = model
        .cfg
        .masses
        .iter()
        .map(|&m| model.cfg.kinetic.lipschitz_df(m))
        .fold(0.0, f64::max);
    let k_chi: f64 = (0..model.n_modes())
        .map(|i| (model.k[i] * model.chi[i]).powi(2) / model.omega[i])
        .sum::<f64>()
        * model.dk;
    let d = 2.0 * PI * n.sqrt() * k_chi.sqrt();
    (a * a + b * b + lf * lf + d * d).sqrt()
}

/// Distance of two solutions against the Gronwall bound `||du(0)|| e^{C t}`.
pub fn gronwall_divergence(
    model: &Model,
    u1: &ClassicalState,
    u2: &ClassicalState,
    t_end: f64,
    dt: f64,
) -> Result<GronwallReport> {
    let opts = IntegrateOptions {
        dt,
        picture: Picture::Direct,
        stride: 1,
    };
    let a = integrate(model, u1, 0.0, t_end, opts)?;
    let b = integrate(model, u2, 0.0, t_end, opts)?;
    let sigma = model.cfg.sigma;
    let alpha_sup = a
        .states
        .iter()
        .chain(&b.states)
        .map(|u| model.field_norm(&u.alpha, sigma))
        .fold(0.0, f64::max);
    let constant = lipschitz_constant(model, alpha_sup);
    let d0 = model.xs_norm(&u1.sub(u2), 0.0);
    let distance: Vec<f64> = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| model.xs_norm(&x.sub(y), 0.0))
        .collect();
    let bound = a.times.iter().map(|t| d0 * (constant * t).exp()).collect();
    Ok(GronwallReport {
        constant,
        times: a.times,
        distance,
        bound,
    })
}

/// Random perturbation of X^0 size `eps`, drawn from a seeded gaussian direction.
pub fn random_perturbation(model: &Model, u: &ClassicalState, eps: f64, rng: &mut impl Rng) -> ClassicalState {
    let mut d = model.zero_state();
    d.p.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
    d.q.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
    d.alpha
        .iter_mut()
        .for_each(|a| *a = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let n = model.xs_norm(&d, 0.0);
    let mut out = u.clone();
    out.axpy(eps / n, &d);
    out
}

/// [`gronwall_divergence`] for `pairs` seeded perturbations of `u0`.
pub fn gronwall_ensemble(
    model: &Model,
    u0: &ClassicalState,
    pairs: usize,
    eps: f64,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<GronwallReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let u1 = random_perturbation(model, u0, eps, &mut rng);
            let u2 = random_perturbation(model, u0, eps, &mut rng);
            gronwall_divergence(model, &u1, &u2, t_end, dt)
        })
        .collect()
}

/// Direct-picture states at the requested (sorted, non-negative) times.
pub fn flow_at(model: &Model, u0: &ClassicalState, times: &[f64], dt: f64) -> Result<Vec<ClassicalState>> {
    let mut out = Vec::with_capacity(times.len());
    let mut t_prev = 0.0;
    let mut u = u0.clone();
    for &t in times {
        if t < t_prev {
            return Err(Error::config("flow_at needs non-decreasing times starting at 0"));
        }
        let traj = integrate(
            model,
            &u,
            t_prev,
            t,
            IntegrateOptions {
                dt,
                picture: Picture::Direct,
                stride: usize::MAX,
            },
        )?;
        u = traj.last_direct(model);
        t_prev = t;
        out.push(u.clone());
    }
    Ok(out)
}
