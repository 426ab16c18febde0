//! Singular value decomposition via one-sided Jacobi rotations.
//!
//! One-sided Jacobi orthogonalizes the columns of the input in place; it is
//! slower than bidiagonalization-based methods but reaches componentwise
//! relative accuracy, which matters because truncated singular values feed a
//! regularized inversion downstream. Matrices here are at most a few hundred
//! rows, so the O(n m^2) sweeps are cheap.

use super::Matrix;
use crate::error::{Error, Result};

/// Thin SVD `M = U Σ Vᵀ` with `k = min(rows, cols)` columns in U and V.
///
/// Singular values are non-increasing. Column signs are fixed so that the
/// largest-magnitude entry of every U column is non-negative, which makes the
/// factorization bit-reproducible across runs.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    /// Rank-`s` reconstruction `U_s Σ_s V_sᵀ`.
    pub fn truncated_product(&self, s: usize) -> Matrix {
        let s = s.min(self.sigma.len());
        let n = self.u.rows();
        let m = self.v.rows();
        let mut out = Matrix::zeros(n, m);
        for r in 0..s {
            let sv = self.sigma[r];
            for i in 0..n {
                let uis = self.u[(i, r)] * sv;
                for j in 0..m {
                    out[(i, j)] += uis * self.v[(j, r)];
                }
            }
        }
        out
    }
}

const MAX_SWEEPS: usize = 60;

pub fn svd(m: &Matrix) -> Result<SvdFactors> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidInput("svd of empty matrix".into()));
    }
    m.check_finite("svd input")?;

    if m.rows() >= m.cols() {
        jacobi_svd(m)
    } else {
        // Work on the transpose and swap the factors back.
        let f = jacobi_svd(&m.transpose())?;
        let mut out = SvdFactors { u: f.v, sigma: f.sigma, v: f.u };
        fix_signs(&mut out);
        Ok(out)
    }
}

/// One-sided Jacobi for rows >= cols.
fn jacobi_svd(m: &Matrix) -> Result<SvdFactors> {
    let n = m.rows();
    let k = m.cols();

    // Column-major working copy; rotations act on column pairs.
    let mut a: Vec<Vec<f64>> = (0..k).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let tol = 1e-15;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let (alpha, beta, gamma) = col_moments(&a[p], &a[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    // Singular values are the column norms of the rotated matrix.
    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = a.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let tiny = sigma_max * f64::EPSILON * (n.max(k) as f64);

    let mut u = Matrix::zeros(n, k);
    let mut vm = Matrix::zeros(k, k);
    let mut deficient: Vec<usize> = Vec::new();
    for (new_j, &old_j) in order.iter().enumerate() {
        if sigma[new_j] > tiny && sigma[new_j] > 0.0 {
            for i in 0..n {
                u[(i, new_j)] = a[old_j][i] / sigma[new_j];
            }
        } else {
            deficient.push(new_j);
        }
        for i in 0..k {
            vm[(i, new_j)] = v[old_j][i];
        }
    }

    // Numerically zero columns: complete U to an orthonormal set from the
    // standard basis (deterministic: first viable basis vector wins).
    for &j in &deficient {
        let mut filled = false;
        for cand in 0..n {
            let mut w = vec![0.0; n];
            w[cand] = 1.0;
            for c in 0..k {
                if c == j || deficient.contains(&c) && c >= j {
                    continue;
                }
                let proj: f64 = (0..n).map(|i| u[(i, c)] * w[i]).sum();
                for i in 0..n {
                    w[i] -= proj * u[(i, c)];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                for i in 0..n {
                    u[(i, j)] = w[i] / norm;
                }
                filled = true;
                break;
            }
        }
        if !filled {
            return Err(Error::Numerical("svd basis completion failed".into()));
        }
    }

    let mut out = SvdFactors { u, sigma, v: vm };
    fix_signs(&mut out);
    Ok(out)
}

fn col_moments(p: &[f64], q: &[f64]) -> (f64, f64, f64) {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (x, y) in p.iter().zip(q) {
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }
    (alpha, beta, gamma)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        *x = c * xp - s * *y;
        *y = s * xp + c * *y;
    }
}

/// Force the largest-magnitude entry of each U column non-negative,
/// negating the paired V column to keep the product unchanged.
fn fix_signs(f: &mut SvdFactors) {
    let n = f.u.rows();
    let m = f.v.rows();
    for j in 0..f.sigma.len() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..n {
            let a = f.u[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if f.u[(best, j)] < 0.0 {
            for i in 0..n {
                f.u[(i, j)] = -f.u[(i, j)];
            }
            for i in 0..m {
                f.v[(i, j)] = -f.v[(i, j)];
            }
        }
    }
}
