//! Discretized quantum model on `L^2(periodic grid) (x) truncated Fock space`.
//!
//! States are stored Fock-major: `psi[b * n_x + j]` is the amplitude of Fock basis
//! vector `b` at grid point `x_j`. The momentum operator is the Fourier multiplier
//! `hbar * 2 pi m / L`, so `[q, p] = i hbar` up to the grid.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockBasis, FockSpace, ModeFunction, LEAKAGE_THRESHOLD, NONE};
use crate::linalg::{self, CMat, HermitianEigen, KrylovOptions};
use crate::model::{ClassicalState, Model};

/// Periodic particle grid on `[-L/2, L/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleGrid {
    pub n_x: usize,
    pub length: f64,
}

impl ParticleGrid {
    pub fn new(n_x: usize, length: f64) -> Result<Self> {
        if n_x < 2 || !n_x.is_power_of_two() {
            return Err(Error::config(format!(
                "quantum.n_x must be a power of two, got {n_x}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::config(format!(
                "quantum.length must be positive, got {length}"
            )));
        }
        Ok(ParticleGrid { n_x, length })
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_x as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_x)
            .map(|j| -0.5 * self.length + j as f64 * dx)
            .collect()
    }

    /// Angular wavenumbers `2 pi m / L` in FFT order, `m` taken nearest to zero.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_x as i64;
        (0..n)
            .map(|j| {
                let m = if j < n / 2 { j } else { j - n };
                2.0 * PI * m as f64 / self.length
            })
            .collect()
    }
}

/// Which parts of `H = H01 + V + H02 + H1` to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub kinetic: bool,
    pub potential: bool,
    pub field: bool,
    pub interaction: bool,
}

impl Terms {
    pub const FULL: Terms = Terms {
        kinetic: true,
        potential: true,
        field: true,
        interaction: true,
    };
    /// `H0 = H01 + H02`.
    pub const FREE: Terms = Terms {
        kinetic: true,
        potential: false,
        field: true,
        interaction: false,
    };
    pub const FIELD: Terms = Terms {
        kinetic: false,
        potential: false,
        field: true,
        interaction: false,
    };
    pub const INTERACTION: Terms = Terms {
        kinetic: false,
        potential: false,
        field: false,
        interaction: true,
    };
}

/// Propagation settings for [`HamiltonianAssembly::evolve`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveOptions {
    /// Largest dimension handled by a full eigendecomposition.
    pub dense_threshold: usize,
    /// Krylov time step.
    pub dt: f64,
    pub krylov_tol: f64,
    pub krylov_dim: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            dense_threshold: 4096,
            dt: 0.01,
            krylov_tol: 1e-10,
            krylov_dim: 40,
        }
    }
}

/// Assembled Nelson Hamiltonian at one value of `hbar`.
///
/// Operators are applied matrix-free; the dense matrix and its eigendecomposition
/// are built on first use and cached.
pub struct HamiltonianAssembly {
    pub model: Model,
    pub grid: ParticleGrid,
    pub fock: FockSpace,
    pub hbar: f64,
    pub options: EvolveOptions,
    x: Vec<f64>,
    momentum: Vec<f64>,
    kinetic: Vec<f64>,
    potential: Vec<f64>,
    field: Vec<f64>,
    /// `sqrt(dk) c_i e^{2 pi i k_i x_j}`, indexed `[i][j]`.
    couple: Vec<Vec<C64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    eigen: OnceLock<std::result::Result<HermitianEigen, String>>,
}

impl std::fmt::Debug for HamiltonianAssembly {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HamiltonianAssembly")
            .field("grid", &self.grid)
            .field("modes", &self.fock.modes())
            .field("n_max", &self.fock.basis.n_max)
            .field("hbar", &self.hbar)
            .field("dim", &self.dim())
            .finish()
    }
}

impl HamiltonianAssembly {
    /// Assemble on the field modes of `model`, one Fock mode per grid point of `model`.
    pub fn new(model: &Model, grid: ParticleGrid, basis: Arc<FockBasis>, hbar: f64) -> Result<Self> {
        Self::with_options(model, grid, basis, hbar, EvolveOptions::default())
    }

    pub fn with_options(
        model: &Model,
        grid: ParticleGrid,
        basis: Arc<FockBasis>,
        hbar: f64,
        options: EvolveOptions,
    ) -> Result<Self> {
        if !(hbar > 0.0 && hbar <= 1.0) {
            return Err(Error::config(format!("hbar must lie in (0, 1], got {hbar}")));
        }
        if model.n_particles() != 1 {
            return Err(Error::config(
                "the quantum model is implemented for a single particle",
            ));
        }
        if basis.modes != model.n_modes() {
            return Err(Error::config(format!(
                "Fock basis has {} modes but the model grid has {}",
                basis.modes,
                model.n_modes()
            )));
        }
        let fock = FockSpace::new(basis, hbar, model.dk)?;
        let x = grid.points();
        let momentum: Vec<f64> = grid.wavenumbers().iter().map(|k| hbar * k).collect();
        let mass = model.cfg.masses[0];
        let kinetic = momentum.iter().map(|&p| model.cfg.kinetic.f(p, mass)).collect();
        let potential = x.iter().map(|&xi| model.cfg.potential.v1(xi)).collect();
        let field = fock.dgamma_diagonal(&model.omega);
        let sdk = model.dk.sqrt();
        let couple = (0..model.n_modes())
            .map(|i| {
                x.iter()
                    .map(|&xj| C64::cis(2.0 * PI * model.k[i] * xj) * (sdk * model.coupling[i]))
                    .collect()
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(grid.n_x);
        let ifft = planner.plan_fft_inverse(grid.n_x);
        let h = HamiltonianAssembly {
            model: model.clone(),
            grid,
            fock,
            hbar,
            options,
            x,
            momentum,
            kinetic,
            potential,
            field,
            couple,
            fft,
            ifft,
            eigen: OnceLock::new(),
        };
        let defect = h.hermiticity_probe(4, 0x5eed);
        if defect > 1e-12 {
            return Err(Error::NotHermitian { defect });
        }
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.grid.n_x * self.fock.dim()
    }

    pub fn n_x(&self) -> usize {
        self.grid.n_x
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Momentum eigenvalues `hbar 2 pi m / L` in FFT order.
    pub fn momenta(&self) -> &[f64] {
        &self.momentum
    }

    pub fn field_diagonal(&self) -> &[f64] {
        &self.field
    }

    fn block<'a>(&self, psi: &'a [C64], b: usize) -> &'a [C64] {
        &psi[b * self.grid.n_x..(b + 1) * self.grid.n_x]
    }

    /// Apply a Fourier multiplier to every Fock block.
    pub fn fourier_multiply(&self, psi: &[C64], symbol: &[C64]) -> Vec<C64> {
        let nx = self.grid.n_x;
        let scale = 1.0 / nx as f64;
        let mut out = psi.to_vec();
        for blk in out.chunks_mut(nx) {
            if blk.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                continue;
            }
            self.fft.process(blk);
            for (z, s) in blk.iter_mut().zip(symbol) {
                *z *= s * scale;
            }
            self.ifft.process(blk);
        }
        out
    }

    /// Position amplitudes from per-block discrete Fourier coefficients (unitary normalization).
    pub fn from_fourier(&self, coeffs: &[C64]) -> Vec<C64> {
        let nx = self.grid.n_x;
        let scale = 1.0 / (nx as f64).sqrt();
        let mut out = coeffs.to_vec();
        for blk in out.chunks_mut(nx) {
            self.ifft.process(blk);
            blk.iter_mut().for_each(|z| *z *= scale);
        }
        out
    }

    fn real_symbol(v: &[f64]) -> Vec<C64> {
        v.iter().map(|&x| C64::new(x, 0.0)).collect()
    }

    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        self.apply_terms(Terms::FULL, psi)
    }

    pub fn apply_terms(&self, terms: Terms, psi: &[C64]) -> Vec<C64> {
        let nx = self.grid.n_x;
        let mut out = if terms.kinetic {
            self.fourier_multiply(psi, &Self::real_symbol(&self.kinetic))
        } else {
            vec![C64::new(0.0, 0.0); psi.len()]
        };
        for b in 0..self.fock.dim() {
            let src = self.block(psi, b);
            let dst = &mut out[b * nx..(b + 1) * nx];
            let diag = if terms.field { self.field[b] } else { 0.0 };
            for j in 0..nx {
                let pot = if terms.potential { self.potential[j] } else { 0.0 };
                dst[j] += (pot + diag) * src[j];
            }
        }
        if terms.interaction {
            let a = self.annihilate_coupling(psi);
            let c = self.create_coupling(psi);
            for ((o, x), y) in out.iter_mut().zip(a).zip(c) {
                *o += x + y;
            }
        }
        out
    }

    /// `a_hbar(G) psi` with `G(x)(k) = chi(k) / sqrt(omega(k)) e^{-2 pi i k x}`.
    pub fn annihilate_coupling(&self, psi: &[C64]) -> Vec<C64> {
        let nx = self.grid.n_x;
        let basis = &self.fock.basis;
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        for b in 0..self.fock.dim() {
            let occ = basis.occupation(b);
            for i in 0..self.fock.modes() {
                let lo = basis.lower(b, i);
                if lo == NONE {
                    continue;
                }
                let amp = (self.hbar * occ[i] as f64).sqrt();
                let src = &psi[b * nx..(b + 1) * nx];
                let dst = &mut out[lo * nx..(lo + 1) * nx];
                for j in 0..nx {
                    dst[j] += self.couple[i][j] * amp * src[j];
                }
            }
        }
        out
    }

    /// `a_hbar^*(G) psi` restricted to the truncation.
    pub fn create_coupling(&self, psi: &[C64]) -> Vec<C64> {
        let nx = self.grid.n_x;
        let basis = &self.fock.basis;
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        for b in 0..self.fock.dim() {
            let occ = basis.occupation(b);
            for i in 0..self.fock.modes() {
                let lo = basis.lower(b, i);
                if lo == NONE {
                    continue;
                }
                let amp = (self.hbar * occ[i] as f64).sqrt();
                let src = &psi[lo * nx..(lo + 1) * nx];
                let dst = &mut out[b * nx..(b + 1) * nx];
                for j in 0..nx {
                    dst[j] += self.couple[i][j].conj() * amp * src[j];
                }
            }
        }
        out
    }

    /// `<psi, A psi>` for the selected terms (real part; the imaginary part is rounding).
    pub fn expectation(&self, terms: Terms, psi: &[C64]) -> f64 {
        linalg::dot(psi, &self.apply_terms(terms, psi)).re
    }

    /// Dense matrix of the selected terms, built column by column.
    pub fn dense_matrix(&self, terms: Terms) -> CMat {
        let n = self.dim();
        let mut m = CMat::zeros(n, n);
        let mut e = vec![C64::new(0.0, 0.0); n];
        for col in 0..n {
            e[col] = C64::new(1.0, 0.0);
            let img = self.apply_terms(terms, &e);
            for (row, v) in img.into_iter().enumerate() {
                m[(row, col)] = v;
            }
            e[col] = C64::new(0.0, 0.0);
        }
        m
    }

    /// `max |H_ij - conj(H_ji)|` of the assembled dense matrix.
    pub fn hermiticity_defect(&self, terms: Terms) -> f64 {
        linalg::hermiticity_defect(&self.dense_matrix(terms))
    }

    /// `max |<x, H y> - <H x, y>|` over seeded random unit vectors.
    pub fn hermiticity_probe(&self, pairs: usize, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rand_vec = |n: usize| {
            let mut v: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            linalg::normalize(&mut v);
            v
        };
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let x = rand_vec(self.dim());
            let y = rand_vec(self.dim());
            let lhs = linalg::dot(&x, &self.apply(&y));
            let rhs = linalg::dot(&self.apply(&x), &y);
            worst = worst.max((lhs - rhs).norm());
        }
        worst
    }

    /// Cached eigendecomposition of the full Hamiltonian.
    pub fn eigen(&self) -> Result<&HermitianEigen> {
        let cell = self.eigen.get_or_init(|| {
            let m = self.dense_matrix(Terms::FULL);
            let defect = linalg::hermiticity_defect(&m);
            if defect > 1e-12 {
                return Err(format!("Hamiltonian is not Hermitian: defect {defect:e}"));
            }
            HermitianEigen::new(&m).map_err(|e| e.to_string())
        });
        cell.as_ref().map_err(|e| Error::Evolution(e.clone()))
    }

    pub fn uses_dense(&self) -> bool {
        self.dim() <= self.options.dense_threshold
    }

    /// `exp(-i t H / hbar) psi`.
    pub fn evolve(&self, psi: &[C64], t: f64) -> Result<Vec<C64>> {
        if t == 0.0 {
            return Ok(psi.to_vec());
        }
        if self.uses_dense() {
            return Ok(self.eigen()?.apply_exp_i(-t / self.hbar, psi));
        }
        let steps = (t.abs() / self.options.dt - 1e-9).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut cur = psi.to_vec();
        for _ in 0..steps {
            cur = self.krylov_step(&cur, h, 0)?;
        }
        Ok(cur)
    }

    fn krylov_step(&self, psi: &[C64], h: f64, depth: usize) -> Result<Vec<C64>> {
        let opts = KrylovOptions {
            tol: self.options.krylov_tol,
            max_dim: self.options.krylov_dim,
        };
        match linalg::lanczos_expm(&|v: &[C64]| self.apply(v), psi, h / self.hbar, opts) {
            Ok((out, _)) => Ok(out),
            Err(_) if depth < 8 => {
                let half = self.krylov_step(psi, 0.5 * h, depth + 1)?;
                self.krylov_step(&half, 0.5 * h, depth + 1)
            }
            Err(e) => Err(e),
        }
    }

    /// States at the given non-decreasing times, starting from `psi0` at `t = 0`.
    pub fn evolve_series(&self, psi0: &[C64], times: &[f64]) -> Result<Vec<Vec<C64>>> {
        let mut out = Vec::with_capacity(times.len());
        let mut t_prev = 0.0;
        let mut cur = psi0.to_vec();
        for &t in times {
            if t < t_prev {
                return Err(Error::config("evolution times must be non-decreasing from 0"));
            }
            if self.uses_dense() {
                cur = self.evolve(psi0, t)?;
            } else {
                cur = self.evolve(&cur, t - t_prev)?;
            }
            t_prev = t;
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// `exp(i t H02 / hbar) psi`, diagonal in the occupation basis.
    pub fn interaction_picture(&self, psi: &[C64], t: f64) -> Vec<C64> {
        let nx = self.grid.n_x;
        let mut out = psi.to_vec();
        for (b, blk) in out.chunks_mut(nx).enumerate() {
            let ph = C64::cis(t * self.field[b] / self.hbar);
            blk.iter_mut().for_each(|z| *z *= ph);
        }
        out
    }

    /// `W_1(z) psi = e^{i p_z q} e^{-i q_z p} e^{-i hbar p_z q_z / 2} psi`.
    ///
    /// The translation by `hbar q_z` is exact in Fourier space; it must stay below
    /// a quarter of the box so that localized states do not wrap around.
    pub fn weyl_particle(&self, psi: &[C64], p_z: f64, q_z: f64) -> Result<Vec<C64>> {
        let shift = self.hbar * q_z;
        if shift.abs() > 0.25 * self.grid.length {
            return Err(Error::config(format!(
                "particle translation {shift} exceeds a quarter of the box length {}",
                self.grid.length
            )));
        }
        let symbol: Vec<C64> = self.momentum.iter().map(|&p| C64::cis(-q_z * p)).collect();
        let mut out = if q_z == 0.0 {
            psi.to_vec()
        } else {
            self.fourier_multiply(psi, &symbol)
        };
        let global = C64::cis(-0.5 * self.hbar * p_z * q_z);
        let phases: Vec<C64> = self.x.iter().map(|&x| C64::cis(p_z * x) * global).collect();
        for blk in out.chunks_mut(self.grid.n_x) {
            for (z, ph) in blk.iter_mut().zip(&phases) {
                *z *= ph;
            }
        }
        Ok(out)
    }

    /// Apply a Fock-space matrix to every grid point.
    pub fn apply_fock_matrix(&self, w: &CMat, psi: &[C64]) -> Vec<C64> {
        let nx = self.grid.n_x;
        let d = self.fock.dim();
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        for col in 0..d {
            let src = &psi[col * nx..(col + 1) * nx];
            if src.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                continue;
            }
            let wc = w.col(col);
            for row in 0..d {
                let c = wc[row];
                if c == C64::new(0.0, 0.0) {
                    continue;
                }
                let dst = &mut out[row * nx..(row + 1) * nx];
                for j in 0..nx {
                    dst[j] += c * src[j];
                }
            }
        }
        out
    }

    /// `W_2(alpha) psi` on the full space.
    pub fn weyl_field(&self, psi: &[C64], alpha: &ModeFunction) -> Result<Vec<C64>> {
        let w = self.fock.weyl_field(alpha)?;
        Ok(self.apply_fock_matrix(&w, psi))
    }

    /// Centered gaussian `(pi hbar)^{-1/4} e^{-x^2 / 2 hbar}` on the grid, normalized.
    pub fn gaussian(&self) -> Vec<C64> {
        let mut g: Vec<C64> = self
            .x
            .iter()
            .map(|&x| C64::new((-x * x / (2.0 * self.hbar)).exp(), 0.0))
            .collect();
        linalg::normalize(&mut g);
        g
    }

    /// Coherent product state centered at `u0 = (p0, q0, alpha0)`:
    /// `W_1(z0 / hbar) psi_gauss (x) W_2(sqrt(2) alpha0 / (i hbar)) Omega`.
    ///
    /// The particle factor has `<q> = q0` and `<p> = p0`; the field factor has
    /// `<a(f)> = <f, alpha0>`.
    pub fn coherent_state(&self, u0: &ClassicalState) -> Result<Vec<C64>> {
        if u0.p.len() != 1 || u0.q.len() != 1 || u0.alpha.len() != self.fock.modes() {
            return Err(Error::config("initial state does not match the quantum model"));
        }
        let dx = self.grid.dx();
        let width = self.hbar.sqrt();
        if width < 4.0 * dx {
            return Err(Error::config(format!(
                "gaussian width sqrt(hbar) = {width:.4} is below 4 grid spacings ({:.4}); \
                 refine quantum.n_x or increase hbar",
                4.0 * dx
            )));
        }
        let spread = 6.0 * (0.5 * self.hbar).sqrt();
        let p_max = self.hbar * PI / dx;
        if u0.p[0].abs() + spread > p_max {
            return Err(Error::config(format!(
                "momentum {} does not fit the grid window |p| <= {p_max:.4}; refine quantum.n_x",
                u0.p[0]
            )));
        }
        if u0.q[0].abs() + spread > 0.5 * self.grid.length {
            return Err(Error::config(format!(
                "position {} does not fit the box of length {}",
                u0.q[0], self.grid.length
            )));
        }
        let field = self
            .fock
            .coherent_field(&ModeFunction::new(u0.alpha.clone()), LEAKAGE_THRESHOLD)
            .map_err(|e| match e {
                Error::TruncationOverflow { leakage, threshold } => Error::config(format!(
                    "coherent field needs more than N_max = {} quanta (tail {leakage:e} > {threshold:e}); \
                     raise quantum.n_max or increase hbar",
                    self.fock.basis.n_max
                )),
                other => other,
            })?;
        let g = self.gaussian();
        let nx = self.grid.n_x;
        let mut particle = vec![C64::new(0.0, 0.0); nx];
        particle.copy_from_slice(&g);
        // W_1 acts on the particle factor only, so apply it to a one-block state.
        let moved = {
            let mut tmp = vec![C64::new(0.0, 0.0); self.dim()];
            tmp[..nx].copy_from_slice(&particle);
            self.weyl_particle(&tmp, u0.p[0] / self.hbar, u0.q[0] / self.hbar)?
        };
        let particle = &moved[..nx];
        let mut psi = vec![C64::new(0.0, 0.0); self.dim()];
        for (b, &fb) in field.iter().enumerate() {
            if fb == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..nx {
                psi[b * nx + j] = fb * particle[j];
            }
        }
        linalg::normalize(&mut psi);
        Ok(psi)
    }

    /// `<a_hbar(e_i)> = <a_i>` for every mode.
    pub fn mode_expectations(&self, psi: &[C64]) -> Vec<C64> {
        let nx = self.grid.n_x;
        let basis = &self.fock.basis;
        let mut out = vec![C64::new(0.0, 0.0); self.fock.modes()];
        for b in 0..self.fock.dim() {
            let occ = basis.occupation(b);
            for (i, o) in out.iter_mut().enumerate() {
                let lo = basis.lower(b, i);
                if lo == NONE {
                    continue;
                }
                let amp = (self.hbar * occ[i] as f64).sqrt();
                let s = linalg::dot(&psi[lo * nx..(lo + 1) * nx], &psi[b * nx..(b + 1) * nx]);
                *o += s * amp;
            }
        }
        out
    }

    /// Weight of the top occupation shell `sum m_i = N_max`.
    pub fn leakage(&self, psi: &[C64]) -> f64 {
        let nx = self.grid.n_x;
        let n_max = self.fock.basis.n_max;
        (0..self.fock.dim())
            .filter(|&b| self.fock.basis.total(b) == n_max)
            .map(|b| linalg::norm(&psi[b * nx..(b + 1) * nx]).powi(2))
            .sum()
    }

    fn fock_diag_expectation(&self, diag: &[f64], psi: &[C64]) -> f64 {
        let nx = self.grid.n_x;
        diag.iter()
            .enumerate()
            .map(|(b, d)| d * linalg::norm(&psi[b * nx..(b + 1) * nx]).powi(2))
            .sum()
    }

    pub fn observables(&self, psi: &[C64]) -> Observables {
        let nx = self.grid.n_x;
        let mut density = vec![0.0; nx];
        for blk in psi.chunks(nx) {
            for (d, z) in density.iter_mut().zip(blk) {
                *d += z.norm_sqr();
            }
        }
        let norm2: f64 = density.iter().sum();
        let q = density.iter().zip(&self.x).map(|(d, x)| d * x).sum::<f64>() / norm2;
        let q2 = density.iter().zip(&self.x).map(|(d, x)| d * x * x).sum::<f64>() / norm2;
        let mut mom = vec![0.0; nx];
        let scale = 1.0 / nx as f64;
        for blk in psi.chunks(nx) {
            let mut buf = blk.to_vec();
            self.fft.process(&mut buf);
            for (m, z) in mom.iter_mut().zip(&buf) {
                *m += z.norm_sqr() * scale;
            }
        }
        let p = mom.iter().zip(&self.momentum).map(|(w, p)| w * p).sum::<f64>() / norm2;
        let p2 = mom.iter().zip(&self.momentum).map(|(w, p)| w * p * p).sum::<f64>() / norm2;
        let number_diag = self.fock.dgamma_diagonal(&vec![1.0; self.fock.modes()]);
        let sigma = self.model.cfg.sigma;
        let w2s: Vec<f64> = self.model.omega.iter().map(|w| w.powf(2.0 * sigma)).collect();
        let dgamma_diag = self.fock.dgamma_diagonal(&w2s);
        Observables {
            norm: norm2.sqrt(),
            q,
            p,
            q2,
            p2,
            modes: self.mode_expectations(psi).iter().map(|z| z / norm2).collect(),
            number: self.fock_diag_expectation(&number_diag, psi) / norm2,
            dgamma_sigma: self.fock_diag_expectation(&dgamma_diag, psi) / norm2,
            energy: self.expectation(Terms::FULL, psi) / norm2,
            leakage: self.leakage(psi) / norm2,
        }
    }
}

/// Expectation values of a quantum state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub norm: f64,
    pub q: f64,
    pub p: f64,
    pub q2: f64,
    pub p2: f64,
    /// `<a_hbar(e_i)>` per mode.
    pub modes: Vec<C64>,
    pub number: f64,
    /// `<dGamma(omega^{2 sigma})>`
    pub dgamma_sigma: f64,
    pub energy: f64,
    /// Weight in the top occupation shell.
    pub leakage: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FormFactorShape, KGrid, Kinetic, ModelConfig, Potential};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model(amplitude: f64, potential: Potential, kinetic: Kinetic) -> Model {
        Model::new(ModelConfig {
            grid: KGrid { k_max: 1.0, n_k: 3 },
            form_factor: FormFactorShape::Gaussian {
                amplitude,
                cutoff: 2.0,
            },
            potential,
            kinetic,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn assembly(amplitude: f64, n_x: usize, length: f64, n_max: usize, hbar: f64) -> HamiltonianAssembly {
        let model = small_model(
            amplitude,
            Potential::GaussianWell {
                depth: 1.0,
                width: 1.0,
            },
            Kinetic::SemiRelativistic,
        );
        let basis = FockBasis::new(3, n_max).unwrap();
        HamiltonianAssembly::new(&model, ParticleGrid::new(n_x, length).unwrap(), basis, hbar).unwrap()
    }

    fn random_state(h: &HamiltonianAssembly, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<C64> = (0..h.dim())
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        linalg::normalize(&mut v);
        v
    }

    #[test]
    fn grid_requires_power_of_two() {
        assert!(ParticleGrid::new(48, 1.0).is_err());
        assert!(ParticleGrid::new(64, 0.0).is_err());
        let g = ParticleGrid::new(8, 4.0).unwrap();
        assert_eq!(g.points()[0], -2.0);
        assert_eq!(g.wavenumbers()[4], -2.0 * PI * 4.0 / 4.0);
    }

    #[test]
    fn assembled_matrix_is_hermitian() {
        let h = assembly(0.5, 16, 8.0, 3, 0.3);
        assert!(h.hermiticity_defect(Terms::FULL) < 1e-12);
        assert!(h.hermiticity_defect(Terms::INTERACTION) < 1e-12);
    }

    #[test]
    fn decoupled_ground_state_is_smallest_symbol() {
        let model = small_model(0.0, Potential::Zero, Kinetic::NonRelativistic);
        let basis = FockBasis::new(3, 2).unwrap();
        let h = HamiltonianAssembly::new(&model, ParticleGrid::new(16, 4.0).unwrap(), basis, 0.5).unwrap();
        let e = h.eigen().unwrap();
        // smallest p^2 / 2M over Fourier modes is 0 at m = 0, field vacuum contributes 0
        assert!(e.values[0].abs() < 1e-12);
        // next level: either the first momentum mode or one field quantum hbar * m_f
        let p1 = 0.5 * 2.0 * PI / 4.0;
        let expect = (p1 * p1 / 2.0).min(0.5 * 1.0);
        assert!((e.values[1] - expect).abs() < 1e-12, "{}", e.values[1]);
    }

    #[test]
    fn dense_evolution_conserves_norm_and_energy() {
        let h = assembly(0.5, 16, 8.0, 3, 0.3);
        let psi = random_state(&h, 5);
        let e0 = h.expectation(Terms::FULL, &psi);
        for t in [0.5, 1.0, 2.0] {
            let out = h.evolve(&psi, t).unwrap();
            assert!((linalg::norm(&out) - 1.0).abs() < 1e-10);
            assert!((h.expectation(Terms::FULL, &out) - e0).abs() < 1e-9);
        }
    }

    #[test]
    fn krylov_agrees_with_dense() {
        let model = small_model(
            0.5,
            Potential::GaussianWell {
                depth: 1.0,
                width: 1.0,
            },
            Kinetic::SemiRelativistic,
        );
        let basis = FockBasis::new(3, 3).unwrap();
        let grid = ParticleGrid::new(16, 8.0).unwrap();
        let dense = HamiltonianAssembly::new(&model, grid, basis.clone(), 0.3).unwrap();
        let kry = HamiltonianAssembly::with_options(
            &model,
            grid,
            basis,
            0.3,
            EvolveOptions {
                dense_threshold: 0,
                ..EvolveOptions::default()
            },
        )
        .unwrap();
        let psi = random_state(&dense, 9);
        let a = dense.evolve(&psi, 0.3).unwrap();
        let b = kry.evolve(&psi, 0.3).unwrap();
        let diff: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!(linalg::norm(&diff) < 1e-8);
    }

    #[test]
    fn interaction_picture_round_trip() {
        let h = assembly(0.5, 16, 8.0, 3, 0.3);
        let psi = random_state(&h, 2);
        let back = h.interaction_picture(&h.interaction_picture(&psi, 0.7), -0.7);
        let diff: Vec<C64> = psi.iter().zip(&back).map(|(x, y)| x - y).collect();
        assert!(linalg::norm(&diff) < 1e-14);
        let vac = h.interaction_picture(&psi, 1.3);
        for j in 0..h.n_x() {
            assert_eq!(vac[j], psi[j]);
        }
    }

    #[test]
    fn weyl_particle_conjugation_and_composition() {
        let h = assembly(0.0, 128, 6.4, 1, 0.1);
        let u = ClassicalState {
            p: vec![0.3],
            q: vec![-0.4],
            alpha: vec![C64::new(0.0, 0.0); 3],
        };
        let psi = h.coherent_state(&u).unwrap();
        let before = h.observables(&psi);
        let (pz, qz) = (1.5, -2.0);
        let moved = h.weyl_particle(&psi, pz, qz).unwrap();
        let after = h.observables(&moved);
        // <W psi, q W psi> = <q> + hbar q_z, <W psi, p W psi> = <p> + hbar p_z
        assert!((after.q - before.q - h.hbar * qz).abs() < 1e-8);
        assert!((after.p - before.p - h.hbar * pz).abs() < 1e-8);

        let (pz2, qz2) = (-0.7, 0.9);
        let ab = h.weyl_particle(&h.weyl_particle(&psi, pz2, qz2).unwrap(), pz, qz).unwrap();
        let sum = h.weyl_particle(&psi, pz + pz2, qz + qz2).unwrap();
        // Im<z, z'> = q p' - p q'
        let im = qz * pz2 - pz * qz2;
        let phase = C64::cis(-0.5 * h.hbar * im);
        let diff: Vec<C64> = ab.iter().zip(&sum).map(|(x, y)| x - phase * y).collect();
        assert!(linalg::norm(&diff) < 1e-10);
    }

    #[test]
    fn weyl_particle_translation_guard() {
        let h = assembly(0.0, 64, 4.0, 1, 0.1);
        let psi = random_state(&h, 1);
        assert!(h.weyl_particle(&psi, 0.0, 20.0).is_err());
    }

    #[test]
    fn coherent_state_moments() {
        let h = assembly(0.5, 128, 6.4, 6, 0.1);
        let u = ClassicalState {
            p: vec![0.5],
            q: vec![0.2],
            alpha: vec![C64::new(0.05, 0.02), C64::new(-0.03, 0.0), C64::new(0.0, 0.04)],
        };
        let psi = h.coherent_state(&u).unwrap();
        let obs = h.observables(&psi);
        assert!((obs.norm - 1.0).abs() < 1e-12);
        assert!((obs.q - 0.2).abs() < 1e-10);
        assert!((obs.p - 0.5).abs() < 1e-10);
        assert!((obs.q2 - (0.2 * 0.2 + 0.05)).abs() < 1e-10);
        assert!((obs.p2 - (0.5 * 0.5 + 0.05)).abs() < 1e-10);
        let expected = h.model.field_norm(&u.alpha, h.model.cfg.sigma).powi(2);
        assert!((obs.dgamma_sigma - expected).abs() < 1e-6);
        for i in 0..3 {
            assert!((obs.modes[i] - u.alpha[i] * h.model.dk.sqrt()).norm() < 1e-6);
        }
    }

    #[test]
    fn coherent_state_guards() {
        let h = assembly(0.5, 64, 16.0, 4, 0.1);
        let u = ClassicalState::zeros(1, 3);
        assert!(matches!(h.coherent_state(&u), Err(Error::Config(_))));
        let h = assembly(0.5, 128, 6.4, 2, 0.1);
        let mut u = ClassicalState::zeros(1, 3);
        u.alpha[0] = C64::new(1.0, 0.0);
        assert!(matches!(h.coherent_state(&u), Err(Error::Config(_))));
    }

    #[test]
    fn decoupled_evolution_keeps_product_form() {
        let h = assembly(0.0, 64, 8.0, 3, 0.5);
        let u = ClassicalState {
            p: vec![0.3],
            q: vec![0.0],
            alpha: vec![C64::new(0.1, 0.0), C64::new(0.0, 0.1), C64::new(0.05, 0.05)],
        };
        let psi = h.coherent_state(&u).unwrap();
        let out = h.evolve(&psi, 1.0).unwrap();
        // a product state has rank one as an (n_fock x n_x) matrix: all 2x2 minors vanish
        let nx = h.n_x();
        let mut worst: f64 = 0.0;
        for b in 1..h.fock.dim() {
            for j in 1..nx {
                let minor = out[j] * out[b * nx] - out[b * nx + j] * out[0];
                worst = worst.max(minor.norm());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }
}
