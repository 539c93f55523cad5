//! Dense Hermitian eigendecompositions and Krylov propagation.

use faer::{Mat, Side};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMat = Mat<C64>;

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn normalize(a: &mut [C64]) -> f64 {
    let n = norm(a);
    if n > 0.0 {
        a.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub fn matvec(m: &CMat, v: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); m.nrows()];
    for j in 0..m.ncols() {
        let vj = v[j];
        if vj == C64::new(0.0, 0.0) {
            continue;
        }
        let col = m.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * vj;
        }
    }
    out
}

pub fn adjoint_matvec(m: &CMat, v: &[C64]) -> Vec<C64> {
    (0..m.ncols())
        .map(|j| {
            let col = m.col(j);
            (0..m.nrows()).map(|i| col[i].conj() * v[i]).sum()
        })
        .collect()
}

/// `max |A - A^*|` over all entries.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigen pairs of a Hermitian matrix (eigenvalues ascending, eigenvectors as columns).
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn new(m: &CMat) -> Result<Self> {
        let evd = m
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Evolution(format!("eigendecomposition failed: {e:?}")))?;
        let s = evd.S().column_vector();
        let values = (0..m.nrows()).map(|i| s[i].re).collect();
        Ok(HermitianEigen {
            values,
            vectors: evd.U().to_owned(),
        })
    }

    /// `exp(i theta A)` as a dense matrix.
    pub fn exp_i(&self, theta: f64) -> CMat {
        let n = self.values.len();
        let u = &self.vectors;
        let mut scaled = u.clone();
        for j in 0..n {
            let ph = C64::cis(theta * self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= ph;
            }
        }
        &scaled * u.adjoint()
    }

    /// `exp(i theta A) v`.
    pub fn apply_exp_i(&self, theta: f64, v: &[C64]) -> Vec<C64> {
        let mut c = adjoint_matvec(&self.vectors, v);
        for (x, l) in c.iter_mut().zip(&self.values) {
            *x *= C64::cis(theta * l);
        }
        matvec(&self.vectors, &c)
    }
}

/// Settings for the Lanczos propagator `exp(-i tau A) v`.
#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions {
    pub tol: f64,
    pub max_dim: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions {
            tol: 1e-10,
            max_dim: 40,
        }
    }
}

/// One Lanczos step `exp(-i tau A) v` for Hermitian `A` given as a matvec.
///
/// Returns the propagated vector and the a posteriori error estimate
/// `beta_m |e_m^T exp(-i tau T_m) e_1|` scaled by `|v|`.
pub fn lanczos_expm<F>(apply: &F, v: &[C64], tau: f64, opts: KrylovOptions) -> Result<(Vec<C64>, f64)>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let beta0 = norm(v);
    if beta0 == 0.0 {
        return Ok((v.to_vec(), 0.0));
    }
    let n = v.len();
    let max_dim = opts.max_dim.min(n).max(1);
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(max_dim);
    let mut alpha = Vec::with_capacity(max_dim);
    let mut beta: Vec<f64> = Vec::with_capacity(max_dim);
    basis.push(v.iter().map(|x| x / beta0).collect());
    let mut last_err = f64::INFINITY;
    for m in 0..max_dim {
        let mut w = apply(&basis[m]);
        let a = dot(&basis[m], &w).re;
        alpha.push(a);
        // full reorthogonalisation, twice
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                for (x, y) in w.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
        }
        let b_next = norm(&w);
        let (coef, err) = small_propagator(&alpha, &beta, b_next, tau)?;
        last_err = err * beta0;
        let breakdown = b_next <= 1e-14 * (a.abs() + 1.0);
        if last_err <= opts.tol || breakdown || m + 1 == max_dim {
            if last_err > opts.tol && !breakdown {
                return Err(Error::Evolution(format!(
                    "Krylov propagation did not converge: error estimate {last_err:e} with {} vectors (tau = {tau})",
                    m + 1
                )));
            }
            let mut out = vec![C64::new(0.0, 0.0); n];
            for (c, b) in coef.iter().zip(&basis) {
                for (o, x) in out.iter_mut().zip(b) {
                    *o += c * x * beta0;
                }
            }
            return Ok((out, if breakdown { 0.0 } else { last_err }));
        }
        beta.push(b_next);
        basis.push(w.into_iter().map(|x| x / b_next).collect());
    }
    Err(Error::Evolution(format!(
        "Krylov propagation did not converge: error estimate {last_err:e}"
    )))
}

/// `exp(-i tau T) e_1` for the symmetric tridiagonal `T` and the error estimate.
fn small_propagator(alpha: &[f64], beta: &[f64], b_next: f64, tau: f64) -> Result<(Vec<C64>, f64)> {
    let m = alpha.len();
    let mut t = Mat::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let evd = t
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Evolution(format!("tridiagonal eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut coef = vec![C64::new(0.0, 0.0); m];
    for k in 0..m {
        let w = C64::cis(-tau * s[k]) * u[(0, k)];
        for (i, c) in coef.iter_mut().enumerate() {
            *c += u[(i, k)] * w;
        }
    }
    let err = b_next * coef[m - 1].norm();
    Ok((coef, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = if i == j {
                    C64::new(rng.random::<f64>() - 0.5, 0.0)
                } else {
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                };
                a[(i, j)] = v;
                a[(j, i)] = v.conj();
            }
        }
        a
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let a = random_hermitian(30, 1);
        let e = HermitianEigen::new(&a).unwrap();
        let v: Vec<C64> = (0..30).map(|i| C64::new(i as f64, 1.0)).collect();
        let direct = matvec(&a, &v);
        let mut c = adjoint_matvec(&e.vectors, &v);
        for (x, l) in c.iter_mut().zip(&e.values) {
            *x *= l;
        }
        let back = matvec(&e.vectors, &c);
        let err: f64 = direct.iter().zip(&back).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn lanczos_matches_dense_exponential() {
        let a = random_hermitian(200, 2);
        let e = HermitianEigen::new(&a).unwrap();
        let mut v: Vec<C64> = (0..200).map(|i| C64::new((i as f64 * 0.1).sin(), 0.2)).collect();
        normalize(&mut v);
        let tau = 0.7;
        let dense = e.apply_exp_i(-tau, &v);
        let (kry, est) = lanczos_expm(&|x: &[C64]| matvec(&a, x), &v, tau, KrylovOptions::default()).unwrap();
        let err = norm(&dense.iter().zip(&kry).map(|(x, y)| x - y).collect::<Vec<_>>());
        assert!(err < 1e-9, "err {err}, estimate {est}");
    }

    #[test]
    fn lanczos_reports_non_convergence() {
        let a = random_hermitian(200, 3);
        let v = vec![C64::new(1.0, 0.0); 200];
        let opts = KrylovOptions { tol: 1e-12, max_dim: 3 };
        assert!(lanczos_expm(&|x: &[C64]| matvec(&a, x), &v, 50.0, opts).is_err());
    }
}
