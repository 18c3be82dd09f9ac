//! Lanczos iteration with full reorthogonalization for a few extreme
//! eigenpairs of a real symmetric matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ExtremePairs {
    /// Largest eigenvalues, descending.
    pub top: Vec<f64>,
    /// Smallest eigenvalues, ascending.
    pub bottom: Vec<f64>,
    pub top_vectors: Vec<DVector<f64>>,
    pub bottom_vectors: Vec<DVector<f64>>,
    pub iterations: usize,
}

const CHECK_EVERY: usize = 4;

/// `n_top` largest and `n_bottom` smallest eigenpairs of the symmetric `x`,
/// each with residual `‖xv − θv‖ ≤ tol`.
pub fn extreme_eigenpairs(
    x: &DMatrix<f64>,
    n_top: usize,
    n_bottom: usize,
    tol: f64,
    seed: u64,
) -> Result<ExtremePairs> {
    let n = x.nrows();
    let numeric = |msg: String| Error::Numeric { seed, msg };
    if n == 0 || x.ncols() != n {
        return Err(Error::Domain("Lanczos needs a non-empty square matrix".into()));
    }
    if n_top + n_bottom > n {
        return Err(Error::Domain(format!("asked for {} eigenpairs of a {n}x{n} matrix", n_top + n_bottom)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_unit = |basis: &[DVector<f64>]| -> Option<DVector<f64>> {
        for _ in 0..4 {
            let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            orthogonalize(&mut v, basis);
            orthogonalize(&mut v, basis);
            let norm = v.norm();
            if norm > 1e-8 {
                return Some(v / norm);
            }
        }
        None
    };

    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    // beta[j] couples basis[j] and basis[j + 1]; zero marks a restart.
    let mut beta: Vec<f64> = Vec::new();
    let mut q = random_unit(&basis).ok_or_else(|| numeric("could not draw a start vector".into()))?;
    let scale = x.norm().max(f64::MIN_POSITIVE);

    loop {
        let mut w = x * &q;
        let a = q.dot(&w);
        w.axpy(-a, &q, 1.0);
        if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
            w.axpy(-b, prev, 1.0);
        }
        basis.push(q);
        alpha.push(a);
        orthogonalize(&mut w, &basis);
        orthogonalize(&mut w, &basis);
        let b = w.norm();
        let m = basis.len();
        let exhausted = m == n;
        let breakdown = b <= 1e-10 * scale;

        if exhausted || breakdown || m.is_multiple_of(CHECK_EVERY) {
            let t = tridiagonal(&alpha, &beta);
            let eig = SymmetricEigen::new(t);
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
            let enough = m >= n_top + n_bottom;
            // Ritz residual of pair i is |b · s_{m,i}|; every block closed by a
            // breakdown is invariant.
            let residual = |i: usize| if breakdown { 0.0 } else { (b * eig.eigenvectors[(m - 1, i)]).abs() };
            let converged = enough
                && order.iter().take(n_top).chain(order.iter().rev().take(n_bottom)).all(|&i| residual(i) <= tol);
            if converged || exhausted {
                let ritz = |i: usize| -> DVector<f64> {
                    let mut v = DVector::zeros(n);
                    for (j, qj) in basis.iter().enumerate() {
                        v.axpy(eig.eigenvectors[(j, i)], qj, 1.0);
                    }
                    v
                };
                let top_idx: Vec<usize> = order[..n_top].to_vec();
                let bottom_idx: Vec<usize> = order.iter().rev().take(n_bottom).copied().collect();
                let out = ExtremePairs {
                    top: top_idx.iter().map(|&i| eig.eigenvalues[i]).collect(),
                    bottom: bottom_idx.iter().map(|&i| eig.eigenvalues[i]).collect(),
                    top_vectors: top_idx.iter().map(|&i| ritz(i)).collect(),
                    bottom_vectors: bottom_idx.iter().map(|&i| ritz(i)).collect(),
                    iterations: m,
                };
                for (theta, v) in out.top.iter().zip(&out.top_vectors).chain(out.bottom.iter().zip(&out.bottom_vectors)) {
                    let r = (x * v - v * *theta).norm();
                    if !(r <= tol.max(1e-9 * scale)) {
                        return Err(numeric(format!("Lanczos residual {r:e} above tolerance {tol:e}")));
                    }
                }
                return Ok(out);
            }
        }

        if breakdown {
            q = random_unit(&basis).ok_or_else(|| numeric("Krylov restart failed".into()))?;
            beta.push(0.0);
        } else {
            q = w / b;
            beta.push(b);
        }
    }
}

fn orthogonalize(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for b in basis {
        let c = b.dot(v);
        v.axpy(-c, b, 1.0);
    }
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t
}
