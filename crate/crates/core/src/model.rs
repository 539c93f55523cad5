//! Static model data: momentum grid, dispersion, form factor, external
//! potential and the classical phase-space state `u = (p, q, alpha)`.
//!
//! Every k-integral is a Riemann sum with weight `dk` over a symmetric
//! uniform grid on `[-K, K]`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric uniform grid with `n_k` points on `[-k_max, k_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KGrid {
    pub k_max: f64,
    pub n_k: usize,
}

impl Default for KGrid {
    fn default() -> Self {
        KGrid {
            k_max: 8.0,
            n_k: 161,
        }
    }
}

impl KGrid {
    pub fn new(k_max: f64, n_k: usize) -> Result<Self> {
        let grid = KGrid { k_max, n_k };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_max.is_finite() && self.k_max > 0.0) {
            return Err(Error::config(format!(
                "grid.k_max must be positive and finite, got {}",
                self.k_max
            )));
        }
        if self.n_k < 2 {
            return Err(Error::config(format!(
                "grid.n_k must be at least 2, got {}",
                self.n_k
            )));
        }
        Ok(())
    }

    pub fn dk(&self) -> f64 {
        2.0 * self.k_max / (self.n_k - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let dk = self.dk();
        (0..self.n_k).map(|i| -self.k_max + i as f64 * dk).collect()
    }

    /// Same spacing, twice the range.
    pub fn extended(&self) -> KGrid {
        KGrid {
            k_max: 2.0 * self.k_max,
            n_k: 2 * (self.n_k - 1) + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub m_field: f64,
}

impl Dispersion {
    pub fn omega(&self, k: f64) -> f64 {
        (k * k + self.m_field * self.m_field).sqrt()
    }
}

/// `omega(k_i) = sqrt(k_i^2 + m_f^2)` on every grid point.
pub fn omega_eval(grid: &KGrid, disp: &Dispersion) -> Vec<f64> {
    grid.points().into_iter().map(|k| disp.omega(k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormFactorShape {
    /// `amplitude * exp(-k^2 / cutoff^2)`
    Gaussian { amplitude: f64, cutoff: f64 },
    /// Smooth bump supported in `|k| < width`.
    Bump { amplitude: f64, width: f64 },
    /// `amplitude * omega(k)^exponent`; grows without bound for positive exponents.
    Power { amplitude: f64, exponent: f64 },
    /// Explicit values on the grid points, taken as zero off the grid.
    Custom { values: Vec<f64> },
}

impl FormFactorShape {
    fn eval(&self, k: f64, omega: f64) -> f64 {
        match *self {
            FormFactorShape::Gaussian { amplitude, cutoff } => {
                amplitude * (-(k * k) / (cutoff * cutoff)).exp()
            }
            FormFactorShape::Bump { amplitude, width } => {
                let s = k / width;
                if s.abs() < 1.0 {
                    amplitude * (1.0 - 1.0 / (1.0 - s * s)).exp()
                } else {
                    0.0
                }
            }
            FormFactorShape::Power {
                amplitude,
                exponent,
            } => amplitude * omega.powf(exponent),
            FormFactorShape::Custom { .. } => unreachable!("custom values are sampled by index"),
        }
    }

    pub fn sample(&self, grid: &KGrid, disp: &Dispersion) -> Result<Vec<f64>> {
        let values = match self {
            FormFactorShape::Custom { values } => {
                if values.len() != grid.n_k {
                    return Err(Error::config(format!(
                        "formfactor.values has {} entries but the grid has {} points",
                        values.len(),
                        grid.n_k
                    )));
                }
                values.clone()
            }
            shape => grid
                .points()
                .into_iter()
                .map(|k| shape.eval(k, disp.omega(k)))
                .collect(),
        };
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("form factor value {v} is not finite")));
        }
        Ok(values)
    }

    /// Values on a wider grid with the same spacing. Custom data is padded with zeros.
    fn sample_on(&self, base: &KGrid, wide: &KGrid, disp: &Dispersion) -> Vec<f64> {
        match self {
            FormFactorShape::Custom { values } => {
                let pad = (wide.n_k - base.n_k) / 2;
                let mut out = vec![0.0; wide.n_k];
                out[pad..pad + values.len()].copy_from_slice(values);
                out
            }
            shape => wide
                .points()
                .into_iter()
                .map(|k| shape.eval(k, disp.omega(k)))
                .collect(),
        }
    }
}

/// Separable external potential `V(q) = sum_j v(q_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    Zero,
    /// `v(x) = -depth * exp(-x^2 / width^2)`
    GaussianWell { depth: f64, width: f64 },
    /// `v(x) = stiffness * x^2`, unbounded.
    Harmonic { stiffness: f64 },
}

impl Potential {
    pub fn v1(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::GaussianWell { depth, width } => -depth * (-(x * x) / (width * width)).exp(),
            Potential::Harmonic { stiffness } => stiffness * x * x,
        }
    }

    pub fn dv1(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::GaussianWell { depth, width } => {
                let w2 = width * width;
                2.0 * depth * x / w2 * (-(x * x) / w2).exp()
            }
            Potential::Harmonic { stiffness } => 2.0 * stiffness * x,
        }
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        q.iter().map(|&x| self.v1(x)).sum()
    }

    pub fn gradient(&self, q: &[f64]) -> Vec<f64> {
        q.iter().map(|&x| self.dv1(x)).collect()
    }

    /// `sup |V|` over `R^n`.
    pub fn sup_value(&self, n: usize) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::GaussianWell { depth, .. } => n as f64 * depth.abs(),
            Potential::Harmonic { stiffness } => {
                if stiffness == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `sup |grad V|` (Euclidean norm) over `R^n`.
    pub fn sup_gradient(&self, n: usize) -> f64 {
        let one = match *self {
            Potential::Zero => 0.0,
            // maximum of |v'| sits at x = width / sqrt(2)
            Potential::GaussianWell { depth, width } => {
                (2.0f64).sqrt() * depth.abs() * (-0.5f64).exp() / width
            }
            Potential::Harmonic { stiffness } => {
                if stiffness == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        };
        (n as f64).sqrt() * one
    }

    /// `sup ||Hess V||` (operator norm); the Hessian is diagonal for separable potentials.
    pub fn sup_hessian(&self) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::GaussianWell { depth, width } => 2.0 * depth.abs() / (width * width),
            Potential::Harmonic { stiffness } => 2.0 * stiffness.abs(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Potential::GaussianWell { depth, width } => {
                if !(depth.is_finite() && width.is_finite() && width > 0.0) {
                    return Err(Error::config(format!(
                        "potential.width must be positive and depth finite (depth {depth}, width {width})"
                    )));
                }
            }
            Potential::Harmonic { stiffness } if !stiffness.is_finite() => {
                return Err(Error::config("potential.stiffness must be finite"));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kinetic {
    /// `f(p) = sqrt(p^2 + M^2)`
    SemiRelativistic,
    /// `f(p) = p^2 / (2M)`
    NonRelativistic,
}

impl Kinetic {
    pub fn f(&self, p: f64, mass: f64) -> f64 {
        match self {
            Kinetic::SemiRelativistic => (p * p + mass * mass).sqrt(),
            Kinetic::NonRelativistic => p * p / (2.0 * mass),
        }
    }

    pub fn df(&self, p: f64, mass: f64) -> f64 {
        match self {
            Kinetic::SemiRelativistic => p / (p * p + mass * mass).sqrt(),
            Kinetic::NonRelativistic => p / mass,
        }
    }

    /// Upper bound on `|f''|`, equal to `1/M` in both cases.
    pub fn lipschitz_df(&self, mass: f64) -> f64 {
        1.0 / mass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Spatial dimension. Only `d = 1` is implemented.
    pub dim: usize,
    /// One mass per particle.
    pub masses: Vec<f64>,
    pub kinetic: Kinetic,
    pub m_field: f64,
    pub sigma: f64,
    pub grid: KGrid,
    pub form_factor: FormFactorShape,
    pub potential: Potential,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 1,
            masses: vec![1.0],
            kinetic: Kinetic::SemiRelativistic,
            m_field: 1.0,
            sigma: 0.5,
            grid: KGrid::default(),
            form_factor: FormFactorShape::Gaussian {
                amplitude: 0.5,
                cutoff: 2.0,
            },
            potential: Potential::GaussianWell {
                depth: 1.0,
                width: 1.0,
            },
        }
    }
}

/// Validated model with the grid quantities precomputed.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub k: Vec<f64>,
    pub omega: Vec<f64>,
    pub chi: Vec<f64>,
    /// `chi / sqrt(omega)` on the grid.
    pub coupling: Vec<f64>,
    pub dk: f64,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        if cfg.dim != 1 {
            return Err(Error::config(format!(
                "model.dim = {} is not supported; only d = 1 is implemented",
                cfg.dim
            )));
        }
        if cfg.masses.is_empty() {
            return Err(Error::config("model.masses must list at least one particle"));
        }
        if let Some(m) = cfg.masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::config(format!("model.masses entries must be positive, got {m}")));
        }
        if !(cfg.m_field.is_finite() && cfg.m_field > 0.0) {
            return Err(Error::config(format!(
                "model.m_field must be positive, got {}",
                cfg.m_field
            )));
        }
        if !(cfg.sigma.is_finite() && cfg.sigma >= 0.0) {
            return Err(Error::config(format!(
                "model.sigma must be non-negative, got {}",
                cfg.sigma
            )));
        }
        cfg.grid.validate()?;
        cfg.potential.validate()?;
        let disp = Dispersion {
            m_field: cfg.m_field,
        };
        let k = cfg.grid.points();
        let omega = omega_eval(&cfg.grid, &disp);
        let chi = cfg.form_factor.sample(&cfg.grid, &disp)?;
        let coupling = chi.iter().zip(&omega).map(|(c, w)| c / w.sqrt()).collect();
        let dk = cfg.grid.dk();
        Ok(Model {
            cfg,
            k,
            omega,
            chi,
            coupling,
            dk,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.cfg.masses.len()
    }

    pub fn n_modes(&self) -> usize {
        self.k.len()
    }

    pub fn dispersion(&self) -> Dispersion {
        Dispersion {
            m_field: self.cfg.m_field,
        }
    }

    /// Same model with the form factor replaced by `scale * chi`.
    pub fn with_coupling_scaled(&self, scale: f64) -> Model {
        let mut m = self.clone();
        for c in m.chi.iter_mut() {
            *c *= scale;
        }
        for c in m.coupling.iter_mut() {
            *c *= scale;
        }
        m.cfg.form_factor = FormFactorShape::Custom { values: m.chi.clone() };
        m
    }

    pub fn zero_state(&self) -> ClassicalState {
        ClassicalState::zeros(self.n_particles(), self.n_modes())
    }

    /// `|| omega^s * chi ||_{L^2}` on the grid.
    pub fn chi_weighted_norm(&self, s: f64) -> f64 {
        weighted_norm(&self.chi, &self.omega, s, self.dk)
    }

    /// `|| omega^s * alpha ||_{L^2}`; `s = sigma` gives the field part of the X^sigma norm.
    pub fn field_norm(&self, alpha: &[C64], s: f64) -> f64 {
        self.field_inner(alpha, alpha, s).re.max(0.0).sqrt()
    }

    /// `sum dk omega^{2s} conj(a) b`.
    pub fn field_inner(&self, a: &[C64], b: &[C64], s: f64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..a.len() {
            acc += self.omega[i].powf(2.0 * s) * a[i].conj() * b[i];
        }
        acc * self.dk
    }

    /// Real-linear phase-space inner product weighted by `omega^{2s}` in the field slot,
    /// antilinear in the first argument.
    pub fn xs_inner(&self, u: &ClassicalState, v: &ClassicalState, s: f64) -> C64 {
        let mut pq = 0.0;
        for j in 0..u.p.len() {
            pq += u.p[j] * v.p[j] + u.q[j] * v.q[j];
        }
        C64::new(pq, 0.0) + self.field_inner(&u.alpha, &v.alpha, s)
    }

    pub fn xsigma_norm(&self, u: &ClassicalState) -> f64 {
        self.xs_norm(u, self.cfg.sigma)
    }

    pub fn xs_norm(&self, u: &ClassicalState, s: f64) -> f64 {
        self.xs_inner(u, u, s).re.max(0.0).sqrt()
    }

    /// `I_j` for a particle at `q`, returned as the two complex half-sums whose
    /// imaginary parts cancel.
    fn interaction_parts(&self, q: f64, alpha: &[C64]) -> (C64, C64) {
        let mut fwd = C64::new(0.0, 0.0);
        let mut bwd = C64::new(0.0, 0.0);
        for i in 0..alpha.len() {
            let e = C64::cis(2.0 * PI * self.k[i] * q);
            fwd += self.coupling[i] * alpha[i] * e;
            bwd += self.coupling[i] * alpha[i].conj() * e.conj();
        }
        (fwd * self.dk, bwd * self.dk)
    }

    pub fn interaction(&self, q: f64, alpha: &[C64]) -> f64 {
        let (a, b) = self.interaction_parts(q, alpha);
        (a + b).re
    }

    /// `d/dq I_j(q, alpha)`.
    pub fn grad_interaction(&self, q: f64, alpha: &[C64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..alpha.len() {
            let w = alpha[i] * C64::cis(2.0 * PI * self.k[i] * q);
            // 2 pi i k c (w - conj w) = -4 pi k c Im w
            acc += -4.0 * PI * self.k[i] * self.coupling[i] * w.im;
        }
        acc * self.dk
    }

    pub fn hamiltonian(&self, u: &ClassicalState) -> Result<f64> {
        let kin = self.cfg.kinetic;
        let mut h = 0.0;
        for (j, &m) in self.cfg.masses.iter().enumerate() {
            h += kin.f(u.p[j], m);
        }
        h += self.cfg.potential.value(&u.q);
        let field = self.field_inner(&u.alpha, &u.alpha, 0.5);
        let mut inter = C64::new(0.0, 0.0);
        for &q in &u.q {
            let (a, b) = self.interaction_parts(q, &u.alpha);
            inter += a + b;
        }
        let total = field + inter;
        let residue = total.im.abs();
        if !(residue <= 1e-12 * total.re.abs().max(1.0)) {
            return Err(Error::NumericalConsistency {
                quantity: "classical Hamiltonian".into(),
                residue,
            });
        }
        Ok(h + total.re)
    }

    pub fn check_assumptions(&self, ceilings: &Ceilings) -> Result<AssumptionReport> {
        let report = self.assumption_report(ceilings);
        let failed: Vec<String> = report
            .entries
            .iter()
            .filter(|e| !e.within_ceiling())
            .map(|e| format!("{} = {} exceeds ceiling {}", e.name, e.value, e.ceiling))
            .collect();
        if failed.is_empty() {
            Ok(report)
        } else {
            Err(Error::AssumptionViolation(failed.join("; ")))
        }
    }

    /// Report without the pass/fail decision.
    pub fn assumption_report(&self, ceilings: &Ceilings) -> AssumptionReport {
        let sigma = self.cfg.sigma;
        let disp = self.dispersion();
        let wide = self.cfg.grid.extended();
        let wide_omega = omega_eval(&wide, &disp);
        let wide_chi = self
            .cfg
            .form_factor
            .sample_on(&self.cfg.grid, &wide, &disp);
        let n = self.n_particles();
        let mut entries = Vec::new();
        for (name, s) in [
            ("||omega^(3/2-sigma) chi||", 1.5 - sigma),
            ("||omega^(1/2) chi||", 0.5),
            ("||omega^(-1/2) chi||", -0.5),
        ] {
            let value = self.chi_weighted_norm(s);
            let wider = weighted_norm(&wide_chi, &wide_omega, s, self.dk);
            let rel = (wider - value).abs() / value.abs().max(f64::MIN_POSITIVE);
            entries.push(AssumptionEntry {
                name: name.to_string(),
                value,
                ceiling: ceilings.form_factor,
                truncation_dependent: rel > ceilings.truncation_rel_tol,
            });
        }
        let pot = &self.cfg.potential;
        for (name, value) in [
            ("||V||_inf", pot.sup_value(n)),
            ("||grad V||_inf", pot.sup_gradient(n)),
            ("||Hess V||_inf", pot.sup_hessian()),
        ] {
            entries.push(AssumptionEntry {
                name: name.to_string(),
                value,
                ceiling: ceilings.potential,
                truncation_dependent: false,
            });
        }
        AssumptionReport { entries }
    }
}

fn weighted_norm(values: &[f64], omega: &[f64], s: f64, dk: f64) -> f64 {
    values
        .iter()
        .zip(omega)
        .map(|(v, w)| w.powf(2.0 * s) * v * v)
        .sum::<f64>()
        .sqrt()
        * dk.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ceilings {
    pub form_factor: f64,
    pub potential: f64,
    /// Relative change under grid doubling above which a norm is flagged.
    pub truncation_rel_tol: f64,
}

impl Default for Ceilings {
    fn default() -> Self {
        Ceilings {
            form_factor: 1e6,
            potential: 1e6,
            truncation_rel_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionEntry {
    pub name: String,
    pub value: f64,
    pub ceiling: f64,
    pub truncation_dependent: bool,
}

impl AssumptionEntry {
    pub fn within_ceiling(&self) -> bool {
        self.value.is_finite() && self.value <= self.ceiling
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub entries: Vec<AssumptionEntry>,
}

impl AssumptionReport {
    pub fn get(&self, name: &str) -> Option<&AssumptionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn truncation_dependent(&self) -> bool {
        self.entries.iter().any(|e| e.truncation_dependent)
    }
}

/// Phase-space point `u = (p, q, alpha)` with `alpha` sampled on the k-grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub alpha: Vec<C64>,
}

impl ClassicalState {
    pub fn zeros(n: usize, n_k: usize) -> Self {
        ClassicalState {
            p: vec![0.0; n],
            q: vec![0.0; n],
            alpha: vec![C64::new(0.0, 0.0); n_k],
        }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ClassicalState) {
        for (x, y) in self.p.iter_mut().zip(&other.p) {
            *x += a * y;
        }
        for (x, y) in self.q.iter_mut().zip(&other.q) {
            *x += a * y;
        }
        for (x, y) in self.alpha.iter_mut().zip(&other.alpha) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> ClassicalState {
        let mut out = self.clone();
        out.p.iter_mut().for_each(|x| *x *= a);
        out.q.iter_mut().for_each(|x| *x *= a);
        out.alpha.iter_mut().for_each(|x| *x *= a);
        out
    }

    pub fn sub(&self, other: &ClassicalState) -> ClassicalState {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.q).all(|x| x.is_finite())
            && self.alpha.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}
