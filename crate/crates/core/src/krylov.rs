//! Matrix-free symmetric Krylov methods on flat real vectors.
//!
//! Vectors are plain `[f64]` slices paired through an optional diagonal weight,
//! so half spectra (with their doubled modes) and grid fields share one code path.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Inner<'a> {
    weights: Option<&'a [f64]>,
}

impl<'a> Inner<'a> {
    pub fn euclidean() -> Self {
        Self { weights: None }
    }

    pub fn weighted(w: &'a [f64]) -> Self {
        Self { weights: Some(w) }
    }

    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.weights {
            None => crate::grid::dot_raw(a, b),
            Some(w) => a.iter().zip(b).zip(w).map(|((x, y), w)| w * x * y).sum(),
        }
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Residual norm relative to the right-hand side, recomputed at exit.
    pub relative_residual: f64,
    pub converged: bool,
}

/// MINRES for a symmetric (possibly indefinite) operator.
///
/// `x0` is the starting guess; iteration stops once the recurrence residual
/// drops below `tol * |b|`, after which the true residual is recomputed.
pub fn minres(
    mut op: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<&[f64]>,
    inner: Inner<'_>,
    tol: f64,
    max_iter: usize,
) -> MinresOutcome {
    let n = b.len();
    let bnorm = inner.norm(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], |v| v.to_vec());
    let mut tmp = vec![0.0; n];
    if bnorm == 0.0 {
        return MinresOutcome { solution: vec![0.0; n], iterations: 0, relative_residual: 0.0, converged: true };
    }
    let mut r1 = b.to_vec();
    if x0.is_some() {
        op(&x, &mut tmp);
        axpy(&mut r1, -1.0, &tmp);
    }
    let beta1 = inner.norm(&r1);
    if beta1 <= tol * bnorm {
        return MinresOutcome { solution: x, iterations: 0, relative_residual: beta1 / bnorm, converged: true };
    }
    let mut r2 = r1.clone();
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut y = vec![0.0; n];
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let s = 1.0 / beta;
        for (vi, ri) in v.iter_mut().zip(&r2) {
            *vi = s * ri;
        }
        op(&v, &mut y);
        if iterations >= 2 {
            axpy(&mut y, -beta / oldb, &r1);
        }
        let alfa = inner.dot(&v, &y);
        axpy(&mut y, -alfa / beta, &r2);
        std::mem::swap(&mut r1, &mut r2);
        std::mem::swap(&mut r2, &mut y);
        oldb = beta;
        beta = inner.norm(&r2);
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
        }
        axpy(&mut x, phi, &w);
        if phibar <= tol * bnorm {
            converged = true;
            break;
        }
        if beta == 0.0 {
            break;
        }
    }
    op(&x, &mut tmp);
    for (t, bi) in tmp.iter_mut().zip(b) {
        *t = bi - *t;
    }
    let relative_residual = inner.norm(&tmp) / bnorm;
    MinresOutcome { solution: x, iterations, relative_residual, converged }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RitzValue {
    pub value: f64,
    /// Residual bound `|beta_m * s_m|` of the Ritz pair.
    pub residual: f64,
}

/// Plain Lanczos without a stored basis. Returns all Ritz values of the final
/// tridiagonal matrix with their residual bounds; lost orthogonality shows up
/// only as repeated copies of converged values.
pub fn lanczos(
    mut op: impl FnMut(&[f64], &mut [f64]),
    start: &[f64],
    inner: Inner<'_>,
    steps: usize,
) -> Result<Vec<RitzValue>> {
    let n = start.len();
    let s0 = inner.norm(start);
    if !(s0 > 0.0) {
        return Err(Error::EigenFailure("zero start vector".into()));
    }
    let mut q_prev = vec![0.0; n];
    let mut q: Vec<f64> = start.iter().map(|v| v / s0).collect();
    let mut z = vec![0.0; n];
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);
    let mut beta_prev = 0.0;
    for _ in 0..steps {
        op(&q, &mut z);
        let a = inner.dot(&q, &z);
        for i in 0..n {
            z[i] -= a * q[i] + beta_prev * q_prev[i];
        }
        // one local reorthogonalization pass against the last two vectors
        let c1 = inner.dot(&q, &z);
        let c0 = inner.dot(&q_prev, &z);
        for i in 0..n {
            z[i] -= c1 * q[i] + c0 * q_prev[i];
        }
        alphas.push(a + c1);
        let b = inner.norm(&z);
        betas.push(b);
        if b <= 1e-14 * a.abs().max(1.0) {
            break;
        }
        std::mem::swap(&mut q_prev, &mut q);
        for i in 0..n {
            q[i] = z[i] / b;
        }
        beta_prev = b;
    }
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::try_new(t, 1e-15, 10_000)
        .ok_or_else(|| Error::EigenFailure("tridiagonal eigensolver did not converge".into()))?;
    let last_beta = betas[m - 1];
    let mut out: Vec<RitzValue> = (0..m)
        .map(|j| RitzValue {
            value: eig.eigenvalues[j],
            residual: (last_beta * eig.eigenvectors[(m - 1, j)]).abs(),
        })
        .collect();
    out.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(out)
}

/// Deterministic pseudo-random sequence (splitmix64) in `[-1, 1)`.
pub fn probe_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    (0..len)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(n: usize) -> DMatrix<f64> {
        let r = probe_vector(n * n, 11);
        let m = DMatrix::from_vec(n, n, r);
        let mut a = &m + m.transpose();
        for i in 0..n {
            a[(i, i)] += if i % 7 == 0 { -3.0 } else { 2.5 };
        }
        a
    }

    #[test]
    fn minres_solves_indefinite_system() {
        let n = 50;
        let a = test_matrix(n);
        let b = probe_vector(n, 3);
        let out = minres(
            |x, y| {
                let v = &a * nalgebra::DVector::from_column_slice(x);
                y.copy_from_slice(v.as_slice());
            },
            &b,
            None,
            Inner::euclidean(),
            1e-12,
            500,
        );
        assert!(out.converged);
        assert!(out.relative_residual < 1e-10, "{}", out.relative_residual);
    }

    #[test]
    fn minres_with_weights_and_warm_start() {
        let w: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        // D^{-1} S is self-adjoint in the D-weighted product when S is symmetric
        let s = [4.0, 1.0, 0.0, 0.0, 0.0, 0.5];
        let op = |x: &[f64], y: &mut [f64]| {
            for i in 0..6 {
                let mut acc = s[0] * x[i];
                acc += s[1] * (x[(i + 1) % 6] + x[(i + 5) % 6]);
                y[i] = acc / w[i] - 0.7 * x[i];
            }
        };
        let b = probe_vector(6, 5);
        let guess = vec![0.1; 6];
        let out = minres(op, &b, Some(&guess), Inner::weighted(&w), 1e-13, 100);
        assert!(out.relative_residual < 1e-11);
    }

    #[test]
    fn lanczos_finds_extreme_eigenvalues() {
        let n = 200;
        let diag: Vec<f64> = (0..n).map(|i| if i < 3 { 2.0 - 0.25 * i as f64 } else { 1.0 / (i as f64) }).collect();
        let ritz = lanczos(
            |x, y| {
                for i in 0..n {
                    y[i] = diag[i] * x[i];
                }
            },
            &probe_vector(n, 1),
            Inner::euclidean(),
            40,
        )
        .unwrap();
        let top = ritz.last().unwrap();
        assert!((top.value - 2.0).abs() < 1e-10 && top.residual < 1e-8);
        assert!(ritz.iter().any(|r| (r.value - 1.5).abs() < 1e-10));
    }
}
