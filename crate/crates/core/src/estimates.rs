//! Randomized certification of the operator inequalities behind the quantum
//! estimates: creation/annihilation bounds, field versus number bounds, the
//! quadratic-form equivalence of `H` and `H0`, Weyl-operator bounds, and the
//! exponential propagation envelopes of second moments.
//!
//! Constants are assembled from the norms of `chi`, `omega` and `V`; only the
//! propagation envelopes are fitted, once, at the largest `hbar`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockBasis, FockSpace, ModeFunction};
use crate::linalg;
use crate::model::{ClassicalState, Model};
use crate::quantum::{EvolveOptions, HamiltonianAssembly, ParticleGrid, Terms};

/// Allowed relative growth of a worst ratio between the largest `hbar` and any smaller one.
pub const TREND_SLACK: f64 = 0.2;
/// Tolerance of exact-identity cases.
pub const IDENTITY_TOL: f64 = 1e-9;
/// Tolerance of the canonical commutation relation.
pub const CCR_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationSettings {
    pub u0: ClassicalState,
    pub t_end: f64,
    pub steps: usize,
    /// Multiplier applied to the fitted prefactor `C1`.
    pub safety: f64,
}

#[derive(Clone, Debug)]
pub struct SuiteSettings {
    pub hbar_list: Vec<f64>,
    pub samples: usize,
    pub sandwich_samples: usize,
    pub seed: u64,
    pub grid: ParticleGrid,
    pub n_max: usize,
    /// Physical momentum window `|p| <= momentum_window` of the random particle states.
    pub momentum_window: f64,
    pub propagation: Option<PropagationSettings>,
    pub evolve: EvolveOptions,
}

/// A violating sample, kept for replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub case: String,
    /// `None` for classical cases.
    pub hbar: Option<f64>,
    pub seed: u64,
    pub sample: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub state: Vec<C64>,
}

impl Replay {
    /// Text form: `#`-prefixed `key: value` headers, then one `index:re,im` line per coefficient.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# case: {}", self.case);
        if let Some(h) = self.hbar {
            let _ = writeln!(s, "# hbar: {h:e}");
        }
        let _ = writeln!(s, "# seed: {}", self.seed);
        let _ = writeln!(s, "# sample: {}", self.sample);
        let _ = writeln!(s, "# lhs: {:e}", self.lhs);
        let _ = writeln!(s, "# rhs: {:e}", self.rhs);
        for (i, z) in self.state.iter().enumerate() {
            let _ = writeln!(s, "{i}:{:e},{:e}", z.re, z.im);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Replay> {
        let bad = |line: usize, msg: &str| Error::config(format!("replay line {}: {msg}", line + 1));
        let mut r = Replay {
            case: String::new(),
            hbar: None,
            seed: 0,
            sample: 0,
            lhs: f64::NAN,
            rhs: f64::NAN,
            state: Vec::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let (k, v) = h.split_once(':').ok_or_else(|| bad(n, "header without ':'"))?;
                let v = v.trim();
                let num = |v: &str| v.parse::<f64>().map_err(|_| bad(n, "bad number"));
                match k.trim() {
                    "case" => r.case = v.to_string(),
                    "hbar" => r.hbar = Some(num(v)?),
                    "seed" => r.seed = v.parse().map_err(|_| bad(n, "bad seed"))?,
                    "sample" => r.sample = v.parse().map_err(|_| bad(n, "bad sample index"))?,
                    "lhs" => r.lhs = num(v)?,
                    "rhs" => r.rhs = num(v)?,
                    _ => {}
                }
                continue;
            }
            let (idx, val) = line.split_once(':').ok_or_else(|| bad(n, "expected index:value"))?;
            let idx: usize = idx.parse().map_err(|_| bad(n, "bad index"))?;
            if idx != r.state.len() {
                return Err(bad(n, "indices must be consecutive from 0"));
            }
            let (re, im) = val.split_once(',').ok_or_else(|| bad(n, "value must be re,im"))?;
            let re: f64 = re.parse().map_err(|_| bad(n, "bad real part"))?;
            let im: f64 = im.parse().map_err(|_| bad(n, "bad imaginary part"))?;
            r.state.push(C64::new(re, im));
        }
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateCase {
    pub name: String,
    pub lemma: String,
    /// How the constant is assembled.
    pub constants: String,
    /// `None` for classical cases.
    pub hbar: Option<f64>,
    pub samples: usize,
    pub tolerance: f64,
    pub worst_ratio: f64,
    pub passed: bool,
    #[serde(skip)]
    pub replay: Option<Replay>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub name: String,
    pub hbar: Vec<Option<f64>>,
    pub worst_ratio: Vec<f64>,
    pub flat: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<EstimateCase>,
    pub trends: Vec<TrendCheck>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed) && self.trends.iter().all(|t| t.flat)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .cases
            .iter()
            .filter(|c| !c.passed)
            .map(|c| match c.hbar {
                Some(h) => format!("{} at hbar = {h}: worst ratio {:e}", c.name, c.worst_ratio),
                None => format!("{}: worst ratio {:e}", c.name, c.worst_ratio),
            })
            .collect();
        out.extend(
            self.trends
                .iter()
                .filter(|t| !t.flat)
                .map(|t| format!("{}: worst ratio grows along the sweep {:?}", t.name, t.worst_ratio)),
        );
        out
    }

    /// `Err(PropertyFailure)` listing every failing case.
    pub fn into_result(self) -> Result<SuiteReport> {
        if self.all_passed() {
            Ok(self)
        } else {
            Err(Error::PropertyFailure(self.failures().join("; ")))
        }
    }
}

/// Running worst ratio of `lhs / rhs` over samples.
struct Tracker {
    name: &'static str,
    hbar: Option<f64>,
    seed: u64,
    worst: f64,
    count: usize,
    replay: Option<Replay>,
    tolerance: f64,
}

impl Tracker {
    fn new(name: &'static str, hbar: Option<f64>, seed: u64, tolerance: f64) -> Self {
        Tracker {
            name,
            hbar,
            seed,
            worst: 0.0,
            count: 0,
            replay: None,
            tolerance,
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64, state: impl FnOnce() -> Vec<C64>) {
        let ratio = if lhs == 0.0 {
            0.0
        } else if rhs == 0.0 {
            f64::INFINITY
        } else {
            lhs / rhs
        };
        if ratio > 1.0 + self.tolerance && self.replay.is_none() {
            self.replay = Some(Replay {
                case: self.name.to_string(),
                hbar: self.hbar,
                seed: self.seed,
                sample: self.count,
                lhs,
                rhs,
                state: state(),
            });
        }
        self.worst = self.worst.max(ratio);
        self.count += 1;
    }

    fn finish(self, lemma: &str, constants: String) -> EstimateCase {
        EstimateCase {
            name: self.name.to_string(),
            lemma: lemma.to_string(),
            constants,
            hbar: self.hbar,
            samples: self.count,
            tolerance: self.tolerance,
            passed: self.worst <= 1.0 + self.tolerance,
            worst_ratio: self.worst,
            replay: self.replay,
        }
    }
}

fn gaussian_c64(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// Haar-random Fock vector supported on occupations `<= cap`, with `cap` drawn
/// uniformly from `0..=max_cap`.
fn random_fock(fock: &FockSpace, max_cap: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let cap = rng.random_range(0..=max_cap);
    let mut v: Vec<C64> = (0..fock.dim())
        .map(|b| {
            if fock.basis.total(b) <= cap {
                gaussian_c64(rng)
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    linalg::normalize(&mut v);
    v
}

fn random_mode_function(modes: usize, rng: &mut ChaCha8Rng) -> ModeFunction {
    ModeFunction::new((0..modes).map(|_| gaussian_c64(rng)).collect())
}

/// Haar-random state on `{|p| <= P_c} (x) {occupation <= cap}` with `P_c` uniform
/// in `(0, window]` and `cap` uniform in `0..=max_cap`.
fn random_full(h: &HamiltonianAssembly, window: f64, max_cap: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let cap = rng.random_range(0..=max_cap);
    let p_cap = window * (1.0 - rng.random::<f64>());
    let nx = h.n_x();
    let mut coeffs = vec![C64::new(0.0, 0.0); h.dim()];
    for b in 0..h.fock.dim() {
        if h.fock.basis.total(b) > cap {
            continue;
        }
        for (m, p) in h.momenta().iter().enumerate() {
            if p.abs() <= p_cap || m == 0 {
                coeffs[b * nx + m] = gaussian_c64(rng);
            }
        }
    }
    let mut psi = h.from_fourier(&coeffs);
    linalg::normalize(&mut psi);
    psi
}

fn case_seed(seed: u64, case: u64, hbar_index: usize) -> u64 {
    seed ^ (case.wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ ((hbar_index as u64 + 1) << 48)
}

fn sq(x: f64) -> f64 {
    x * x
}

impl SuiteReport {
    /// Group cases by name and check each group for an increasing trend along the sweep.
    pub fn from_cases(cases: Vec<EstimateCase>) -> SuiteReport {
        let mut names: Vec<String> = Vec::new();
        for c in &cases {
            if !names.contains(&c.name) {
                names.push(c.name.clone());
            }
        }
        let trends = names
            .into_iter()
            .map(|name| {
                let rows: Vec<&EstimateCase> = cases.iter().filter(|c| c.name == name).collect();
                let worst: Vec<f64> = rows.iter().map(|c| c.worst_ratio).collect();
                let first = worst[0];
                let flat = worst.iter().all(|&r| r <= (1.0 + TREND_SLACK) * first + 1e-9);
                TrendCheck {
                    name,
                    hbar: rows.iter().map(|c| c.hbar).collect(),
                    worst_ratio: worst,
                    flat,
                }
            })
            .collect();
        SuiteReport { cases, trends }
    }
}

/// Run every quantum case for every `hbar` in the sweep.
pub fn run_suite(model: &Model, settings: &SuiteSettings) -> Result<SuiteReport> {
    if settings.hbar_list.is_empty() {
        return Err(Error::config("verify.hbar_list must not be empty"));
    }
    let basis = FockBasis::new(model.n_modes(), settings.n_max)?;
    let mut cases = Vec::new();
    for (hi, &hbar) in settings.hbar_list.iter().enumerate() {
        let fock = FockSpace::new(basis.clone(), hbar, model.dk)?;
        cases.extend(fock_cases(model, &fock, settings, hi));
        let h = HamiltonianAssembly::with_options(model, settings.grid, basis.clone(), hbar, settings.evolve)?;
        cases.extend(coupled_cases(model, &h, settings, hi)?);
    }
    if let Some(prop) = &settings.propagation {
        cases.extend(propagation_cases(model, settings, prop, &basis)?);
    }
    Ok(SuiteReport::from_cases(cases))
}

/// Classical cases on `classical_model` followed by [`run_suite`] on `quantum_model`.
pub fn run_full_suite(classical_model: &Model, quantum_model: &Model, settings: &SuiteSettings) -> Result<SuiteReport> {
    let mut cases = classical_cases(classical_model, settings.samples, settings.seed);
    cases.extend(run_suite(quantum_model, settings)?.cases);
    Ok(SuiteReport::from_cases(cases))
}

/// Bounds on the gradient of the interaction term for random `(q, alpha)`.
pub fn classical_cases(model: &Model, samples: usize, seed: u64) -> Vec<EstimateCase> {
    let seed = case_seed(seed, 0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = model.cfg.sigma;
    let c_half = model.chi_weighted_norm(0.5);
    let c_top = model.chi_weighted_norm(1.5 - sigma);
    let lip_q = 8.0 * std::f64::consts::SQRT_2 * PI * PI * c_top;
    let mut grad = Tracker::new("interaction_gradient", None, seed, 0.0);
    let mut lip = Tracker::new("interaction_lipschitz", None, seed, 0.0);
    let random_field = |rng: &mut ChaCha8Rng| -> Vec<C64> {
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        (0..model.n_modes()).map(|_| gaussian_c64(rng) * scale).collect()
    };
    let pack = |q: &[f64], a: &[C64]| -> Vec<C64> {
        q.iter().map(|&x| C64::new(x, 0.0)).chain(a.iter().copied()).collect()
    };
    for _ in 0..samples {
        let q1 = 10.0 * (rng.random::<f64>() - 0.5);
        let q2 = if rng.random::<bool>() {
            q1 + 0.1 * (rng.random::<f64>() - 0.5)
        } else {
            10.0 * (rng.random::<f64>() - 0.5)
        };
        let a1 = random_field(&mut rng);
        let a2 = random_field(&mut rng);
        let g1 = model.grad_interaction(q1, &a1);
        grad.record(g1.abs(), 4.0 * PI * c_half * model.field_norm(&a1, 0.0), || pack(&[q1], &a1));
        let diff: Vec<C64> = a1.iter().zip(&a2).map(|(x, y)| x - y).collect();
        let lhs = (g1 - model.grad_interaction(q2, &a2)).abs();
        let rhs = 4.0 * PI * c_half * model.field_norm(&diff, 0.0)
            + lip_q * (q1 - q2).abs() * model.field_norm(&a2, sigma);
        lip.record(lhs, rhs, || {
            let mut v = pack(&[q1], &a1);
            v.extend(pack(&[q2], &a2));
            v
        });
    }
    vec![
        grad.finish(
            "bound on the interaction gradient",
            format!("|grad I| <= 4 pi |omega^(1/2) chi| |alpha|, |omega^(1/2) chi| = {c_half:.6}"),
        ),
        lip.finish(
            "Lipschitz bound on the interaction gradient",
            format!(
                "4 pi |omega^(1/2) chi| |a1 - a2| + 8 sqrt(2) pi^2 |omega^(3/2 - sigma) chi| |q1 - q2| |a2|_sigma, |omega^(3/2 - sigma) chi| = {c_top:.6}"
            ),
        ),
    ]
}

fn fock_cases(model: &Model, fock: &FockSpace, settings: &SuiteSettings, hi: usize) -> Vec<EstimateCase> {
    let hbar = fock.hbar;
    let dk = fock.dk;
    let modes = fock.modes();
    let safe = settings.n_max.saturating_sub(1);
    let omega = &model.omega;
    let inv_sqrt_omega: Vec<f64> = omega.iter().map(|w| 1.0 / w.sqrt()).collect();
    let ones = vec![1.0; modes];
    let norm_sq = |v: &[C64]| linalg::norm(v).powi(2);
    let n = settings.samples;
    let mut out = Vec::new();

    // [a(f), a*(g)] = hbar <f, g>
    let seed = case_seed(settings.seed, 1, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("ccr", Some(hbar), seed, CCR_TOL);
    for _ in 0..n {
        let psi = random_fock(fock, safe, &mut rng);
        let mut f = random_mode_function(modes, &mut rng);
        let mut g = random_mode_function(modes, &mut rng);
        f = f.scaled(C64::new(1.0 / f.norm(dk), 0.0));
        g = g.scaled(C64::new(1.0 / g.norm(dk), 0.0));
        let (cg, _) = fock.create(&g, &psi);
        let a_cg = fock.annihilate(&f, &cg);
        let (c_ag, _) = fock.create(&g, &fock.annihilate(&f, &psi));
        let c = f.inner(&g, dk) * hbar;
        let resid: Vec<C64> = (0..psi.len()).map(|i| a_cg[i] - c_ag[i] - c * psi[i]).collect();
        t.record(1.0 + linalg::norm(&resid), 1.0, || psi.clone());
    }
    out.push(t.finish(
        "canonical commutation relation",
        "identity, residual |[a(f), a*(g)] psi - hbar <f,g> psi| for unit f, g".into(),
    ));

    let seed = case_seed(settings.seed, 2, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ann_n = Tracker::new("annihilation_number", Some(hbar), seed, 0.0);
    let mut cre_n = Tracker::new("creation_number", Some(hbar), seed, 0.0);
    let mut ann_f = Tracker::new("annihilation_field", Some(hbar), seed, 0.0);
    let mut cre_f = Tracker::new("creation_field", Some(hbar), seed, 0.0);
    for _ in 0..n {
        let psi = random_fock(fock, safe, &mut rng);
        let f = random_mode_function(modes, &mut rng);
        let f_norm = f.norm(dk);
        let f_w = ModeFunction::new(f.values.iter().zip(&inv_sqrt_omega).map(|(v, s)| v * s).collect()).norm(dk);
        let a = fock.annihilate(&f, &psi);
        let (c, _) = fock.create(&f, &psi);
        let n_exp = linalg::dot(&psi, &fock.dgamma(&ones, &psi)).re;
        let h02_exp = linalg::dot(&psi, &fock.dgamma(omega, &psi)).re;
        let pn = norm_sq(&psi);
        ann_n.record(linalg::norm(&a), n_exp.sqrt() * f_norm, || psi.clone());
        cre_n.record(linalg::norm(&c), (n_exp + pn).sqrt() * f_norm, || psi.clone());
        ann_f.record(linalg::norm(&a), f_w * (h02_exp + pn).sqrt(), || psi.clone());
        cre_f.record(
            norm_sq(&c).sqrt(),
            (sq(f_w) * (h02_exp + pn) + hbar * sq(f_norm) * pn).sqrt(),
            || psi.clone(),
        );
    }
    out.push(ann_n.finish(
        "creation-annihilation estimate (number form)",
        "|a(f) psi| <= |f| |N^(1/2) psi|".into(),
    ));
    out.push(cre_n.finish(
        "creation-annihilation estimate (number form)",
        "|a*(f) psi| <= |f| |(N+1)^(1/2) psi|".into(),
    ));
    out.push(ann_f.finish(
        "creation-annihilation estimate (field form)",
        "|a(f) psi| <= |f/sqrt(omega)| |(H02+1)^(1/2) psi|".into(),
    ));
    out.push(cre_f.finish(
        "creation-annihilation estimate (field form)",
        "|a*(f) psi|^2 <= |f/sqrt(omega)|^2 |(H02+1)^(1/2) psi|^2 + hbar |f|^2 |psi|^2".into(),
    ));

    let seed = case_seed(settings.seed, 3, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m_f = model.cfg.m_field;
    let eps = 1.0f64;
    let (ca, cb) = ((eps / 2.0).sqrt(), (1.0 + 1.0 / (2.0 * eps)).sqrt());
    let mut fnum = Tracker::new("field_number", Some(hbar), seed, 0.0);
    let mut interp = Tracker::new("number_interpolation", Some(hbar), seed, 0.0);
    for _ in 0..n {
        let psi = random_fock(fock, settings.n_max, &mut rng);
        let npsi = fock.dgamma(&ones, &psi);
        let hpsi = fock.dgamma(omega, &psi);
        fnum.record(m_f * linalg::norm(&npsi), linalg::norm(&hpsi), || psi.clone());
        let n_exp = linalg::dot(&psi, &npsi).re;
        let pn = norm_sq(&psi);
        interp.record((n_exp + pn).sqrt(), ca * linalg::norm(&npsi) + cb * pn.sqrt(), || psi.clone());
    }
    out.push(fnum.finish(
        "field and number estimate (1)",
        format!("m_f |N psi| <= |H02 psi| with m_f = {m_f}"),
    ));
    out.push(interp.finish(
        "field and number estimate (2)",
        format!("|(N+1)^(1/2) psi| <= {ca:.6} |N psi| + {cb:.6} |psi| (eps = {eps})"),
    ));

    // |N^(1/2) W2(alpha) psi|^2 <= max(2, hbar^2 |alpha|^2) |(N+1)^(1/2) psi|^2
    let seed = case_seed(settings.seed, 4, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weyl = Tracker::new("weyl_field_number", Some(hbar), seed, 0.0);
    let half = settings.n_max / 2;
    for _ in 0..n.min(200) {
        let psi = random_fock(fock, half, &mut rng);
        let mut alpha = random_mode_function(modes, &mut rng);
        let scale = rng.random::<f64>() / alpha.norm(dk);
        alpha = alpha.scaled(C64::new(scale, 0.0));
        let w = match fock.weyl_field(&alpha) {
            Ok(w) => w,
            Err(_) => continue,
        };
        let wpsi = linalg::matvec(&w, &psi);
        let lhs = linalg::dot(&wpsi, &fock.dgamma(&ones, &wpsi)).re;
        let c2 = f64::max(2.0, sq(hbar) * sq(alpha.norm(dk)));
        let rhs = c2 * (linalg::dot(&psi, &fock.dgamma(&ones, &psi)).re + norm_sq(&psi));
        weyl.record(lhs.sqrt(), rhs.sqrt(), || psi.clone());
    }
    out.push(weyl.finish(
        "Weyl operator estimate (field)",
        "|N^(1/2) W2(alpha) psi| <= max(2, hbar^2 |alpha|^2)^(1/2) |(N+1)^(1/2) psi|".into(),
    ));
    out
}

fn coupled_cases(
    model: &Model,
    h: &HamiltonianAssembly,
    settings: &SuiteSettings,
    hi: usize,
) -> Result<Vec<EstimateCase>> {
    let hbar = h.hbar;
    let mut out = Vec::new();
    let kappa = model.n_particles() as f64 * model.chi_weighted_norm(-1.0);
    let g_norm = model.chi_weighted_norm(-0.5);
    let v_sup = model.cfg.potential.sup_value(model.n_particles());
    let b = 1.0;
    let a = v_sup + 2.0 * kappa * kappa + 1.0;
    let k_up = f64::max(2.0, v_sup + kappa * kappa + a);
    let window = settings.momentum_window;

    // interaction operator a(G) with G(x)(k) = chi(k) / sqrt(omega(k)) e^{-2 pi i k x}
    let seed = case_seed(settings.seed, 5, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ann = Tracker::new("coupling_annihilation", Some(hbar), seed, 0.0);
    let mut cre = Tracker::new("coupling_creation", Some(hbar), seed, 0.0);
    let samples = settings.sandwich_samples;
    for _ in 0..samples {
        let psi = random_full(h, window, settings.n_max.saturating_sub(1), &mut rng);
        let a_psi = h.annihilate_coupling(&psi);
        let c_psi = h.create_coupling(&psi);
        let h02 = h.expectation(Terms::FIELD, &psi);
        ann.record(linalg::norm(&a_psi), kappa * (h02 + 1.0).sqrt(), || psi.clone());
        cre.record(
            linalg::norm(&c_psi),
            (kappa * kappa * (h02 + 1.0) + hbar * g_norm * g_norm).sqrt(),
            || psi.clone(),
        );
    }
    out.push(ann.finish(
        "creation-annihilation estimate (field form), x-dependent G",
        format!("|a(G) psi| <= |chi/omega| |(H02+1)^(1/2) psi|, |chi/omega| = {kappa:.6}"),
    ));
    out.push(cre.finish(
        "creation-annihilation estimate (field form), x-dependent G",
        format!("|a*(G) psi|^2 <= |chi/omega|^2 |(H02+1)^(1/2) psi|^2 + hbar |chi/sqrt(omega)|^2, |chi/sqrt(omega)| = {g_norm:.6}"),
    ));

    let seed = case_seed(settings.seed, 6, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lower = Tracker::new("sandwich_lower", Some(hbar), seed, 0.0);
    let mut upper = Tracker::new("sandwich_upper", Some(hbar), seed, 0.0);
    for _ in 0..samples {
        let psi = random_full(h, window, settings.n_max, &mut rng);
        let h_full = h.expectation(Terms::FULL, &psi);
        let h0 = h.expectation(Terms::FREE, &psi);
        lower.record(h0 + b, 2.0 * (h_full + a), || psi.clone());
        upper.record(h_full + a, k_up * (h0 + b), || psi.clone());
    }
    let recipe = format!(
        "kappa = n |chi/omega| = {kappa:.6}, |V|_inf = {v_sup:.6}, a = |V|_inf + 2 kappa^2 + 1 = {a:.6}, b = 1"
    );
    out.push(lower.finish(
        "equivalence between H and H0 (lower)",
        format!("<H0 + b> <= 2 <H + a>; {recipe}"),
    ));
    out.push(upper.finish(
        "equivalence between H and H0 (upper)",
        format!("<H + a> <= C <H0 + b>, C = max(2, |V|_inf + kappa^2 + a) = {k_up:.6}; {recipe}"),
    ));

    // <W1 psi, (q^2 + p^2) W1 psi> <= max(2, 2 hbar^2 |z|^2) <psi, (q^2 + p^2 + 1) psi>
    let seed = case_seed(settings.seed, 7, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w1 = Tracker::new("weyl_particle_moment", Some(hbar), seed, 0.0);
    let envelope_width = h.grid.length / 10.0;
    let reach = 0.2 * h.grid.length;
    for _ in 0..samples {
        let mut psi = random_full(h, window, 0, &mut rng);
        for (j, z) in psi.iter_mut().take(h.n_x()).enumerate() {
            let x = h.x()[j];
            *z *= (-0.5 * sq(x / envelope_width)).exp();
        }
        linalg::normalize(&mut psi);
        let pz = reach / hbar * (2.0 * rng.random::<f64>() - 1.0);
        let qz = reach / hbar * (2.0 * rng.random::<f64>() - 1.0);
        let moved = h.weyl_particle(&psi, pz, qz)?;
        let after = h.observables(&moved);
        let before = h.observables(&psi);
        let c2 = f64::max(2.0, 2.0 * sq(hbar) * (pz * pz + qz * qz));
        w1.record(
            (after.q2 + after.p2).sqrt(),
            (c2 * (before.q2 + before.p2 + 1.0)).sqrt(),
            || psi.clone(),
        );
    }
    out.push(w1.finish(
        "Weyl operator estimate (particle)",
        "|(q^2+p^2)^(1/2) W1(z) psi| <= max(2, 2 hbar^2 |z|^2)^(1/2) |(q^2+p^2+1)^(1/2) psi|".into(),
    ));
    Ok(out)
}

/// Fitted envelope `C1 e^{C2 t}` for one normalized second moment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub c1: f64,
    pub c2: f64,
}

impl Envelope {
    /// Fit to `r(t)`: `C2` is the smallest rate with `r(t) <= r(0) e^{C2 t}`, and `C1`
    /// is `safety` times the largest `r(t) e^{-C2 t}`.
    pub fn fit(times: &[f64], values: &[f64], safety: f64) -> Envelope {
        let r0 = values[0].max(f64::MIN_POSITIVE);
        let c2 = times
            .iter()
            .zip(values)
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, v)| (v.max(f64::MIN_POSITIVE) / r0).ln() / t)
            .fold(0.0, f64::max);
        let c1 = safety
            * times
                .iter()
                .zip(values)
                .map(|(t, v)| v * (-c2 * t).exp())
                .fold(0.0, f64::max);
        Envelope { c1, c2 }
    }

    pub fn bound(&self, t: f64) -> f64 {
        self.c1 * (self.c2 * t.abs()).exp()
    }
}

/// `(t, <q^2>, <p^2>, <dGamma(omega^{2 sigma})>)` normalized by `<psi0, (H0 + q^2 + 1) psi0>`.
pub fn propagation_series(h: &HamiltonianAssembly, u0: &ClassicalState, times: &[f64]) -> Result<Vec<[f64; 4]>> {
    let psi0 = h.coherent_state(u0)?;
    let o0 = h.observables(&psi0);
    let norm = h.expectation(Terms::FREE, &psi0) + o0.q2 + 1.0;
    let states = h.evolve_series(&psi0, times)?;
    Ok(times
        .iter()
        .zip(&states)
        .map(|(&t, psi)| {
            let o = h.observables(psi);
            [t, o.q2 / norm, o.p2 / norm, o.dgamma_sigma / norm]
        })
        .collect())
}

pub const PROPAGATION_CASES: [&str; 3] = ["propagation_q2", "propagation_p2", "propagation_dgamma"];

fn propagation_cases(
    model: &Model,
    settings: &SuiteSettings,
    prop: &PropagationSettings,
    basis: &Arc<FockBasis>,
) -> Result<Vec<EstimateCase>> {
    let times: Vec<f64> = (0..=prop.steps)
        .map(|i| prop.t_end * i as f64 / prop.steps as f64)
        .collect();
    let mut series = Vec::new();
    for &hbar in &settings.hbar_list {
        let h = HamiltonianAssembly::with_options(model, settings.grid, basis.clone(), hbar, settings.evolve)?;
        series.push((hbar, propagation_series(&h, &prop.u0, &times)?));
    }
    let mut out = Vec::new();
    for (c, name) in PROPAGATION_CASES.iter().enumerate() {
        let first: Vec<f64> = series[0].1.iter().map(|row| row[c + 1]).collect();
        let env = Envelope::fit(&times, &first, prop.safety);
        for (hbar, rows) in &series {
            let mut t = Tracker::new(name, Some(*hbar), settings.seed, 0.0);
            for row in rows {
                t.record(row[c + 1], env.bound(row[0]), Vec::new);
            }
            out.push(t.finish(
                "propagation of second moments in time",
                format!(
                    "<O>(t) / <(H0 + q^2 + 1)>(0) <= C1 e^(C2 t), C1 = {:.6}, C2 = {:.6}, fitted at hbar = {}",
                    env.c1, env.c2, series[0].0
                ),
            ));
        }
    }
    Ok(out)
}
