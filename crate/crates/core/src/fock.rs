//! Truncated bosonic Fock space over a finite set of field modes.
//!
//! Basis vectors are occupation tuples `(m_1, .., m_M)` with `sum m_i <= N_max`,
//! ordered lexicographically and ranked in closed form. Ladder operators carry
//! the semiclassical scaling `[a_i, a_j^*] = hbar delta_ij`, and a mode function
//! `f` enters as `a(f) = sum_i sqrt(dk) conj(f_i) a_i`.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, HermitianEigen};

pub const NONE: usize = usize::MAX;

/// `binom(n, k)` in floating point free integer arithmetic.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Number of occupation tuples over `modes` modes with total at most `budget`.
fn count(modes: usize, budget: usize) -> usize {
    binomial(modes + budget, modes)
}

#[derive(Debug)]
pub struct FockBasis {
    pub modes: usize,
    pub n_max: usize,
    states: Vec<Vec<u32>>,
    totals: Vec<u32>,
    lower: Vec<usize>,
    raise: Vec<usize>,
}

impl FockBasis {
    pub fn new(modes: usize, n_max: usize) -> Result<Arc<Self>> {
        if modes == 0 {
            return Err(Error::config("Fock space needs at least one mode"));
        }
        let dim = count(modes, n_max);
        if dim > 5_000_000 {
            return Err(Error::config(format!(
                "Fock dimension {dim} for {modes} modes and N_max = {n_max} is too large"
            )));
        }
        let mut states = Vec::with_capacity(dim);
        let mut cur = vec![0u32; modes];
        enumerate(&mut cur, 0, n_max, &mut states);
        debug_assert_eq!(states.len(), dim);
        let mut basis = FockBasis {
            modes,
            n_max,
            totals: states.iter().map(|s| s.iter().sum()).collect(),
            states,
            lower: vec![NONE; dim * modes],
            raise: vec![NONE; dim * modes],
        };
        for b in 0..dim {
            let mut occ = basis.states[b].clone();
            for i in 0..modes {
                if occ[i] > 0 {
                    occ[i] -= 1;
                    basis.lower[b * modes + i] = basis.rank(&occ).expect("lowered state exists");
                    occ[i] += 1;
                }
                if (basis.totals[b] as usize) < n_max {
                    occ[i] += 1;
                    basis.raise[b * modes + i] = basis.rank(&occ).expect("raised state exists");
                    occ[i] -= 1;
                }
            }
        }
        Ok(Arc::new(basis))
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    /// Lexicographic rank, `None` when the tuple is outside the truncation.
    pub fn rank(&self, occ: &[u32]) -> Option<usize> {
        if occ.len() != self.modes {
            return None;
        }
        let total: usize = occ.iter().map(|&m| m as usize).sum();
        if total > self.n_max {
            return None;
        }
        let mut budget = self.n_max;
        let mut r = 0;
        for (i, &m) in occ.iter().enumerate() {
            let rest = self.modes - i - 1;
            for v in 0..m as usize {
                r += count(rest, budget - v);
            }
            budget -= m as usize;
        }
        Some(r)
    }

    pub fn occupation(&self, index: usize) -> &[u32] {
        &self.states[index]
    }

    pub fn total(&self, index: usize) -> usize {
        self.totals[index] as usize
    }

    /// Index of `occ - e_i`, or [`NONE`].
    pub fn lower(&self, index: usize, mode: usize) -> usize {
        self.lower[index * self.modes + mode]
    }

    /// Index of `occ + e_i`, or [`NONE`] at the truncation edge.
    pub fn raise(&self, index: usize, mode: usize) -> usize {
        self.raise[index * self.modes + mode]
    }
}

fn enumerate(cur: &mut Vec<u32>, pos: usize, budget: usize, out: &mut Vec<Vec<u32>>) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    for v in 0..=budget {
        cur[pos] = v as u32;
        enumerate(cur, pos + 1, budget - v, out);
    }
    cur[pos] = 0;
}

/// Field mode function sampled on the retained modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeFunction {
    pub values: Vec<C64>,
}

impl ModeFunction {
    pub fn new(values: Vec<C64>) -> Self {
        ModeFunction { values }
    }

    /// Unit vector concentrated on mode `i`, normalised in the `dk`-weighted norm.
    pub fn unit(modes: usize, i: usize, dk: f64) -> Self {
        let mut values = vec![C64::new(0.0, 0.0); modes];
        values[i] = C64::new(1.0 / dk.sqrt(), 0.0);
        ModeFunction { values }
    }

    /// `<self, other> = sum dk conj(f) g`.
    pub fn inner(&self, other: &ModeFunction, dk: f64) -> C64 {
        linalg::dot(&self.values, &other.values) * dk
    }

    pub fn norm(&self, dk: f64) -> f64 {
        self.inner(self, dk).re.sqrt()
    }

    pub fn scaled(&self, s: C64) -> ModeFunction {
        ModeFunction {
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

/// Default threshold on weight pushed out of the truncation by `create`.
pub const LEAKAGE_THRESHOLD: f64 = 1e-6;

/// Truncated Fock space at a given `hbar` and mode spacing `dk`.
#[derive(Clone, Debug)]
pub struct FockSpace {
    pub basis: Arc<FockBasis>,
    pub hbar: f64,
    pub dk: f64,
}

impl FockSpace {
    pub fn new(basis: Arc<FockBasis>, hbar: f64, dk: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::config(format!("hbar must be positive, got {hbar}")));
        }
        if !(dk > 0.0 && dk.is_finite()) {
            return Err(Error::config(format!("mode spacing must be positive, got {dk}")));
        }
        Ok(FockSpace { basis, hbar, dk })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn modes(&self) -> usize {
        self.basis.modes
    }

    pub fn vacuum(&self) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); self.dim()];
        v[0] = C64::new(1.0, 0.0);
        v
    }

    fn check_mode_fn(&self, f: &ModeFunction) {
        assert_eq!(f.values.len(), self.modes(), "mode function length");
    }

    /// `a_hbar(f) psi`.
    pub fn annihilate(&self, f: &ModeFunction, psi: &[C64]) -> Vec<C64> {
        self.check_mode_fn(f);
        let b = &self.basis;
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        let s = self.dk.sqrt();
        for idx in 0..self.dim() {
            let x = psi[idx];
            if x == C64::new(0.0, 0.0) {
                continue;
            }
            let occ = b.occupation(idx);
            for i in 0..self.modes() {
                let tgt = b.lower(idx, i);
                if tgt != NONE {
                    out[tgt] += f.values[i].conj() * (s * (self.hbar * occ[i] as f64).sqrt()) * x;
                }
            }
        }
        out
    }

    /// `a_hbar^*(f) psi` restricted to the truncated space, with the squared norm
    /// of the part that left the truncation.
    pub fn create(&self, f: &ModeFunction, psi: &[C64]) -> (Vec<C64>, f64) {
        self.check_mode_fn(f);
        let b = &self.basis;
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        let s = self.dk.sqrt();
        for idx in 0..self.dim() {
            let x = psi[idx];
            if x == C64::new(0.0, 0.0) {
                continue;
            }
            let occ = b.occupation(idx);
            for i in 0..self.modes() {
                let tgt = b.raise(idx, i);
                if tgt != NONE {
                    out[tgt] += f.values[i] * (s * (self.hbar * (occ[i] as f64 + 1.0)).sqrt()) * x;
                }
            }
        }
        // |a^* psi|^2 = hbar |f|^2 |psi|^2 + |a psi|^2 on the untruncated space
        let full = self.hbar * f.inner(f, self.dk).re * linalg::norm(psi).powi(2)
            + linalg::norm(&self.annihilate(f, psi)).powi(2);
        let kept = linalg::norm(&out).powi(2);
        (out, (full - kept).max(0.0))
    }

    /// `create`, failing when the leaked weight exceeds `threshold`.
    pub fn create_checked(&self, f: &ModeFunction, psi: &[C64], threshold: f64) -> Result<Vec<C64>> {
        let (out, leak) = self.create(f, psi);
        if leak > threshold {
            return Err(Error::TruncationOverflow {
                leakage: leak,
                threshold,
            });
        }
        Ok(out)
    }

    /// Diagonal of `dGamma(w) = hbar sum_i w_i a_i^* a_i / hbar`.
    pub fn dgamma_diagonal(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.modes());
        (0..self.dim())
            .map(|idx| {
                let occ = self.basis.occupation(idx);
                self.hbar * occ.iter().zip(weights).map(|(&m, w)| m as f64 * w).sum::<f64>()
            })
            .collect()
    }

    pub fn dgamma(&self, weights: &[f64], psi: &[C64]) -> Vec<C64> {
        self.dgamma_diagonal(weights)
            .iter()
            .zip(psi)
            .map(|(d, x)| x * d)
            .collect()
    }

    /// `N_hbar = dGamma(1)`.
    pub fn number(&self, psi: &[C64]) -> Vec<C64> {
        self.dgamma(&vec![1.0; self.modes()], psi)
    }

    /// Weight in the top occupation shell `sum m_i = N_max`.
    pub fn edge_weight(&self, psi: &[C64]) -> f64 {
        (0..self.dim())
            .filter(|&i| self.basis.total(i) == self.basis.n_max)
            .map(|i| psi[i].norm_sqr())
            .sum()
    }

    /// Matrix of `a_hbar(f)` on the truncated space.
    pub fn annihilation_matrix(&self, f: &ModeFunction) -> CMat {
        let n = self.dim();
        let mut a = CMat::zeros(n, n);
        for col in 0..n {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[col] = C64::new(1.0, 0.0);
            let img = self.annihilate(f, &e);
            for (row, v) in img.into_iter().enumerate() {
                if v != C64::new(0.0, 0.0) {
                    a[(row, col)] = v;
                }
            }
        }
        a
    }

    /// `(a(f) + a^*(f)) / sqrt(2)` on the truncated space.
    pub fn field_quadrature(&self, f: &ModeFunction) -> CMat {
        let a = self.annihilation_matrix(f);
        let n = self.dim();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut x = CMat::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                x[(i, j)] = (a[(i, j)] + a[(j, i)].conj()) * s;
            }
        }
        x
    }

    /// `W_2(alpha) = exp(i (a(alpha) + a^*(alpha)) / sqrt(2))` by exact exponentiation of
    /// the truncated Hermitian generator.
    pub fn weyl_field(&self, alpha: &ModeFunction) -> Result<CMat> {
        let x = self.field_quadrature(alpha);
        Ok(HermitianEigen::new(&x)?.exp_i(1.0))
    }

    /// Coherent vector `W_2(sqrt(2) alpha0 / (i hbar)) Omega`, whose annihilation
    /// expectations are `<a(f)> = <f, alpha0>`.
    ///
    /// Fails when the Poisson tail of the mean occupation `|alpha0|^2 / hbar` beyond
    /// `N_max` exceeds `threshold`.
    pub fn coherent_field(&self, alpha0: &ModeFunction, threshold: f64) -> Result<Vec<C64>> {
        let mean = alpha0.inner(alpha0, self.dk).re / self.hbar;
        let tail = poisson_tail(mean, self.basis.n_max);
        if tail > threshold {
            return Err(Error::TruncationOverflow {
                leakage: tail,
                threshold,
            });
        }
        let beta = alpha0.scaled(C64::new(0.0, -std::f64::consts::SQRT_2 / self.hbar));
        let w = self.weyl_field(&beta)?;
        let mut psi = linalg::matvec(&w, &self.vacuum());
        linalg::normalize(&mut psi);
        Ok(psi)
    }
}

/// `P(N > n)` for `N ~ Poisson(mean)`.
pub fn poisson_tail(mean: f64, n: usize) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let mut term = (-mean).exp();
    let mut cdf = term;
    for k in 1..=n {
        term *= mean / k as f64;
        cdf += term;
    }
    // sum the tail directly to avoid cancellation in 1 - cdf
    let mut tail = 0.0;
    let mut t = term;
    let mut k = n;
    loop {
        k += 1;
        t *= mean / k as f64;
        tail += t;
        if t < 1e-18 * tail.max(1e-300) || k > n + 10_000 {
            break;
        }
    }
    if tail > 0.0 {
        tail
    } else {
        (1.0 - cdf).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(space: &FockSpace, max_total: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        let mut v: Vec<C64> = (0..space.dim())
            .map(|i| {
                if space.basis.total(i) <= max_total {
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect();
        linalg::normalize(&mut v);
        v
    }

    #[test]
    fn dimension_is_binomial() {
        for (m, n) in [(1usize, 5usize), (3, 4), (4, 6), (5, 3)] {
            let b = FockBasis::new(m, n).unwrap();
            assert_eq!(b.dim(), binomial(m + n, n));
        }
        assert_eq!(FockBasis::new(3, 4).unwrap().dim(), 35);
    }

    #[test]
    fn rank_inverts_enumeration() {
        let b = FockBasis::new(4, 5).unwrap();
        for i in 0..b.dim() {
            assert_eq!(b.rank(b.occupation(i)), Some(i));
        }
        assert_eq!(b.rank(&[6, 0, 0, 0]), None);
        assert_eq!(b.occupation(0), &[0, 0, 0, 0]);
    }

    #[test]
    fn commutator_on_safe_sector() {
        let basis = FockBasis::new(3, 6).unwrap();
        let sp = FockSpace::new(basis, 0.1, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = ModeFunction::new(vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.5), C64::new(1.0, 0.0)]);
        let g = ModeFunction::new(vec![C64::new(0.7, -0.4), C64::new(0.1, 0.2), C64::new(-0.3, 0.6)]);
        let psi = random_state(&sp, 5, &mut rng);
        let (cg, leak) = sp.create(&g, &psi);
        assert!(leak < 1e-14);
        let lhs_a = sp.annihilate(&f, &cg);
        let (cg2, _) = sp.create(&g, &sp.annihilate(&f, &psi));
        let expect = f.inner(&g, sp.dk) * sp.hbar;
        for i in 0..sp.dim() {
            let comm = lhs_a[i] - cg2[i];
            assert!((comm - expect * psi[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn leakage_is_measured_at_the_edge() {
        let basis = FockBasis::new(2, 3).unwrap();
        let sp = FockSpace::new(basis.clone(), 1.0, 1.0).unwrap();
        let mut psi = vec![C64::new(0.0, 0.0); sp.dim()];
        psi[basis.rank(&[3, 0]).unwrap()] = C64::new(1.0, 0.0);
        let f = ModeFunction::unit(2, 0, 1.0);
        let (out, leak) = sp.create(&f, &psi);
        assert!(linalg::norm(&out) < 1e-15);
        assert!((leak - 4.0).abs() < 1e-12);
        assert!(sp.create_checked(&f, &psi, LEAKAGE_THRESHOLD).is_err());
    }

    #[test]
    fn number_operator_is_sum_of_mode_numbers() {
        let basis = FockBasis::new(3, 5).unwrap();
        let sp = FockSpace::new(basis, 0.2, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = random_state(&sp, 4, &mut rng);
        let mut acc = vec![C64::new(0.0, 0.0); sp.dim()];
        for i in 0..3 {
            let e = ModeFunction::unit(3, i, sp.dk);
            let (x, _) = sp.create(&e, &sp.annihilate(&e, &psi));
            for (a, b) in acc.iter_mut().zip(x) {
                *a += b;
            }
        }
        let n = sp.number(&psi);
        for (a, b) in acc.iter().zip(&n) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn weyl_composition_phase() {
        let basis = FockBasis::new(2, 24).unwrap();
        let sp = FockSpace::new(basis, 0.5, 1.0).unwrap();
        let a = ModeFunction::new(vec![C64::new(0.3, 0.2), C64::new(-0.1, 0.25)]);
        let b = ModeFunction::new(vec![C64::new(-0.2, 0.1), C64::new(0.15, -0.3)]);
        let sum = ModeFunction::new(a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect());
        let wa = sp.weyl_field(&a).unwrap();
        let wb = sp.weyl_field(&b).unwrap();
        let wab = sp.weyl_field(&sum).unwrap();
        let phase = C64::cis(-0.5 * sp.hbar * a.inner(&b, sp.dk).im);
        // compare on vectors with at most two quanta
        for col in 0..sp.dim() {
            if sp.basis.total(col) > 2 {
                continue;
            }
            let mut e = vec![C64::new(0.0, 0.0); sp.dim()];
            e[col] = C64::new(1.0, 0.0);
            let lhs = linalg::matvec(&wa, &linalg::matvec(&wb, &e));
            let rhs = linalg::matvec(&wab, &e);
            let err = lhs.iter().zip(&rhs).map(|(x, y)| (x - phase * y).norm()).fold(0.0, f64::max);
            assert!(err < 1e-8, "col {col}: {err}");
        }
    }

    #[test]
    fn weyl_shifts_annihilation() {
        let basis = FockBasis::new(2, 24).unwrap();
        let sp = FockSpace::new(basis, 0.3, 1.0).unwrap();
        let a0 = ModeFunction::new(vec![C64::new(0.2, -0.1), C64::new(0.1, 0.3)]);
        let f = ModeFunction::new(vec![C64::new(1.0, 0.5), C64::new(-0.4, 0.2)]);
        let w = sp.weyl_field(&a0).unwrap();
        let psi = sp.vacuum();
        // <W^* psi, a(f) W^* psi> = <psi, W a(f) W^* psi> = <a(f)> - i hbar/sqrt2 <f, a0>
        let wstar = linalg::adjoint_matvec(&w, &psi);
        let val = linalg::dot(&wstar, &sp.annihilate(&f, &wstar));
        let expect = C64::new(0.0, -sp.hbar / 2f64.sqrt()) * f.inner(&a0, sp.dk);
        assert!((val - expect).norm() < 1e-10);
    }

    #[test]
    fn coherent_matches_product_form() {
        let basis = FockBasis::new(3, 12).unwrap();
        let sp = FockSpace::new(basis.clone(), 0.2, 0.5).unwrap();
        let a0 = ModeFunction::new(vec![C64::new(0.2, 0.1), C64::new(-0.15, 0.0), C64::new(0.0, 0.25)]);
        let psi = sp.coherent_field(&a0, LEAKAGE_THRESHOLD).unwrap();
        // independent product of single-mode coherent states with amplitudes sqrt(dk/hbar) a0_i
        let z: Vec<C64> = a0.values.iter().map(|v| v * (sp.dk / sp.hbar).sqrt()).collect();
        let norm0: f64 = z.iter().map(|x| x.norm_sqr()).sum::<f64>();
        let mut max_err: f64 = 0.0;
        for idx in 0..sp.dim() {
            let occ = basis.occupation(idx);
            let mut amp = C64::new((-0.5 * norm0).exp(), 0.0);
            for (zi, &m) in z.iter().zip(occ) {
                let fact: f64 = (1..=m).map(|k| k as f64).product();
                amp *= zi.powu(m) / fact.sqrt();
            }
            max_err = max_err.max((amp - psi[idx]).norm());
        }
        assert!(max_err < 1e-8, "{max_err}");
        let e1 = ModeFunction::unit(3, 1, sp.dk);
        let mean = linalg::dot(&psi, &sp.annihilate(&e1, &psi));
        assert!((mean - e1.inner(&a0, sp.dk)).norm() < 1e-8);
    }

    #[test]
    fn coherent_guard_trips_on_large_amplitude() {
        let basis = FockBasis::new(1, 4).unwrap();
        let sp = FockSpace::new(basis, 0.1, 1.0).unwrap();
        let a0 = ModeFunction::new(vec![C64::new(1.0, 0.0)]);
        assert!(matches!(
            sp.coherent_field(&a0, LEAKAGE_THRESHOLD),
            Err(Error::TruncationOverflow { .. })
        ));
    }

    #[test]
    fn poisson_tail_oracle() {
        // P(N > 2) for mean 1: 1 - e^{-1}(1 + 1 + 1/2)
        let exact = 1.0 - (-1.0f64).exp() * 2.5;
        assert!((poisson_tail(1.0, 2) - exact).abs() < 1e-15);
        assert_eq!(poisson_tail(0.0, 3), 0.0);
    }

    proptest! {
        #[test]
        fn rank_is_a_bijection(m in 1usize..5, n in 0usize..7, seed in any::<u64>()) {
            let b = FockBasis::new(m, n).unwrap();
            let idx = (seed % b.dim() as u64) as usize;
            prop_assert_eq!(b.rank(b.occupation(idx)), Some(idx));
            for i in 0..m {
                let lo = b.lower(idx, i);
                if lo != NONE {
                    prop_assert_eq!(b.occupation(lo)[i] + 1, b.occupation(idx)[i]);
                    prop_assert_eq!(b.raise(lo, i), idx);
                }
            }
        }

        #[test]
        fn annihilation_bound(seed in any::<u64>()) {
            let basis = FockBasis::new(3, 5).unwrap();
            let sp = FockSpace::new(basis, 0.3, 0.7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let psi = random_state(&sp, 5, &mut rng);
            let f = ModeFunction::new((0..3).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect());
            let lhs = linalg::norm(&sp.annihilate(&f, &psi));
            let n_half = linalg::dot(&psi, &sp.number(&psi)).re.sqrt();
            prop_assert!(lhs <= n_half * f.norm(sp.dk) * (1.0 + 1e-12));
        }
    }
}
