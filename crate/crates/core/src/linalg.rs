//! Small matrix-free solvers used by the exact backend.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub solution: Vec<C64>,
    /// Final relative residual `||b - A x|| / ||b||`.
    pub relative_residual: f64,
    pub iterations: usize,
}

/// Restarted GMRES for `A x = b` with `A` applied through `apply(input, output)`.
pub fn gmres<F>(apply: F, b: &[C64], x0: Vec<C64>, tol: f64, max_iter: usize, restart: usize) -> SolveOutcome
where
    F: Fn(&[C64], &mut [C64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0;
    if bnorm == 0.0 {
        return SolveOutcome {
            solution: vec![ZERO; n],
            relative_residual: 0.0,
            iterations: 0,
        };
    }
    let mut work = vec![ZERO; n];
    let mut iterations = 0;
    let residual = |x: &[C64], work: &mut Vec<C64>| -> Vec<C64> {
        apply(x, work);
        b.iter().zip(work.iter()).map(|(bi, ai)| bi - ai).collect()
    };
    let mut r = residual(&x, &mut work);
    let mut rel = norm(&r) / bnorm;
    while rel > tol && iterations < max_iter {
        let beta = norm(&r);
        let m = restart.min(max_iter - iterations).max(1);
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![ZERO; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![ZERO; m];
        let mut g = vec![ZERO; m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut used = 0;
        for k in 0..m {
            apply(&basis[k], &mut work);
            let mut w = work.clone();
            for (j, v) in basis.iter().enumerate() {
                let h = dot(v, &w);
                hess[j][k] = h;
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= h * vi;
                }
            }
            let wn = norm(&w);
            hess[k + 1][k] = C64::new(wn, 0.0);
            for j in 0..k {
                let (a, bb) = (hess[j][k], hess[j + 1][k]);
                hess[j][k] = cs[j] * a + sn[j] * bb;
                hess[j + 1][k] = -sn[j].conj() * a + cs[j] * bb;
            }
            let (a, bb) = (hess[k][k], hess[k + 1][k]);
            let rr = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if rr == 0.0 {
                cs[k] = 1.0;
                sn[k] = ZERO;
            } else if a.norm() == 0.0 {
                cs[k] = 0.0;
                sn[k] = C64::new(1.0, 0.0);
            } else {
                cs[k] = a.norm() / rr;
                sn[k] = (a / a.norm()) * bb.conj() / rr;
            }
            hess[k][k] = cs[k] * a + sn[k] * bb;
            hess[k + 1][k] = ZERO;
            let gk = g[k];
            g[k] = cs[k] * gk;
            g[k + 1] = -sn[k].conj() * gk;
            used = k + 1;
            iterations += 1;
            if g[k + 1].norm() / bnorm <= tol * 0.1 || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![ZERO; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for j in i + 1..used {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&basis[j]) {
                *xi += yj * vi;
            }
        }
        r = residual(&x, &mut work);
        let new_rel = norm(&r) / bnorm;
        if !(new_rel < rel) && new_rel > tol {
            rel = new_rel;
            break;
        }
        rel = new_rel;
    }
    SolveOutcome {
        solution: x,
        relative_residual: rel,
        iterations,
    }
}

/// `exp(-i H tau) v` restricted to a Lanczos space of at most `dim` vectors
/// for a Hermitian `H`.
pub fn lanczos_expm<F>(apply: F, v: &[C64], tau: f64, dim: usize) -> Vec<C64>
where
    F: Fn(&[C64], &mut [C64]),
{
    let n = v.len();
    let beta0 = norm(v);
    if beta0 == 0.0 {
        return vec![ZERO; n];
    }
    let m = dim.min(n).max(1);
    let mut basis: Vec<Vec<C64>> = vec![v.iter().map(|x| x / beta0).collect()];
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut w = vec![ZERO; n];
    for j in 0..m {
        apply(&basis[j], &mut w);
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        // full reorthogonalization keeps the small basis accurate
        for _ in 0..2 {
            for v in &basis {
                let h = dot(v, &w);
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= h * vi;
                }
            }
        }
        let b = norm(&w);
        if j + 1 == m || b < 1e-13 * a.abs().max(1.0) {
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |r, c| {
        if r == c {
            alpha[r]
        } else if r + 1 == c {
            beta[r]
        } else if c + 1 == r {
            beta[c]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let coeffs: Vec<C64> = (0..k)
        .map(|r| {
            (0..k)
                .map(|q| {
                    let phase = C64::from_polar(1.0, -eig.eigenvalues[q] * tau);
                    phase * eig.eigenvectors[(r, q)] * eig.eigenvectors[(0, q)]
                })
                .sum::<C64>()
                * beta0
        })
        .collect();
    let mut out = vec![ZERO; n];
    for (c, v) in coeffs.iter().zip(&basis) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o += c * vi;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn gmres_matches_lu() {
        let n = 40;
        let m = random_matrix(n, 1) * C64::new(0.1, 0.0) + DMatrix::identity(n, n);
        let b: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let out = gmres(
            |x, y| {
                let r = &m * DVector::from_column_slice(x);
                y.copy_from_slice(r.as_slice());
            },
            &b,
            vec![ZERO; n],
            1e-13,
            400,
            15,
        );
        let exact = m.lu().solve(&DVector::from_column_slice(&b)).unwrap();
        assert!(out.relative_residual < 1e-13);
        for (a, e) in out.solution.iter().zip(exact.iter()) {
            assert!((a - e).norm() < 1e-10);
        }
    }

    #[test]
    fn lanczos_matches_dense_exponential() {
        let n = 24;
        let a = random_matrix(n, 2);
        let h = (&a + a.adjoint()) * C64::new(0.5, 0.0);
        let v: Vec<C64> = (0..n).map(|i| C64::new(1.0, i as f64 * 0.1)).collect();
        let tau = 0.3;
        let out = lanczos_expm(
            |x, y| {
                let r = &h * DVector::from_column_slice(x);
                y.copy_from_slice(r.as_slice());
            },
            &v,
            tau,
            n,
        );
        let eig = SymmetricEigen::new(h.clone());
        let vv = DVector::from_column_slice(&v);
        let coeffs = eig.eigenvectors.adjoint() * vv;
        let phased = DVector::from_iterator(
            n,
            coeffs
                .iter()
                .zip(eig.eigenvalues.iter())
                .map(|(c, e)| c * C64::from_polar(1.0, -e * tau)),
        );
        let exact = &eig.eigenvectors * phased;
        for (a, e) in out.iter().zip(exact.iter()) {
            assert!((a - e).norm() < 1e-10);
        }
    }
}
