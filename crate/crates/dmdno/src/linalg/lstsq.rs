//! Complex least squares through the real embedding
//! `[[Re A, -Im A], [Im A, Re A]]`, solved with the SVD pseudo-inverse.
//! The embedding is an isometry, so the minimizer (and the minimum-norm
//! property on rank-deficient systems) carries over to the complex problem,
//! and the embedded singular values are the complex ones duplicated.

use super::svd::svd;
use super::{CMatrix, Matrix};
use crate::error::{Error, Result};
use num_complex::Complex64;

/// Relative cutoff below which singular values are treated as zero.
const PINV_CUTOFF: f64 = 1e-12;

/// Minimizer of ‖a·b − y‖₂; minimum-norm when `a` is rank deficient.
pub fn lstsq_complex(a: &CMatrix, y: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = a.rows();
    let r = a.cols();
    if n == 0 || r == 0 {
        return Err(Error::InvalidInput("lstsq on empty system".into()));
    }
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "lstsq dimension mismatch: {n} rows vs {} rhs entries",
            y.len()
        )));
    }

    let mut emb = Matrix::zeros(2 * n, 2 * r);
    for i in 0..n {
        for j in 0..r {
            let z = a[(i, j)];
            emb[(i, j)] = z.re;
            emb[(i, j + r)] = -z.im;
            emb[(i + n, j)] = z.im;
            emb[(i + n, j + r)] = z.re;
        }
    }
    let mut rhs = vec![0.0; 2 * n];
    for i in 0..n {
        rhs[i] = y[i].re;
        rhs[i + n] = y[i].im;
    }

    let f = svd(&emb)?;
    let sigma_max = f.sigma.first().copied().unwrap_or(0.0);
    let cutoff = PINV_CUTOFF * sigma_max;

    // b = V Σ⁺ Uᵀ rhs
    let k = f.sigma.len();
    let mut coeffs = vec![0.0; k];
    for (c, sv) in coeffs.iter_mut().zip(&f.sigma) {
        if *sv > cutoff && *sv > 0.0 {
            *c = 1.0 / sv;
        }
    }
    let mut b = vec![0.0; 2 * r];
    for t in 0..k {
        if coeffs[t] == 0.0 {
            continue;
        }
        let mut ut_rhs = 0.0;
        for i in 0..2 * n {
            ut_rhs += f.u[(i, t)] * rhs[i];
        }
        let scaled = coeffs[t] * ut_rhs;
        for j in 0..2 * r {
            b[j] += f.v[(j, t)] * scaled;
        }
    }

    Ok((0..r).map(|j| Complex64::new(b[j], b[j + r])).collect())
}
