//! Eigendecomposition of small dense real matrices with possibly complex
//! spectra: Householder reduction to Hessenberg form followed by the
//! Francis double-shift QR iteration with eigenvector back-substitution.
//! Derived from the classic Algol/EISPACK procedures via JAMA (public
//! domain). Only the projected operators of the decomposition pipeline pass
//! through here, so the size is capped.

use super::CMatrix;
use super::Matrix;
use crate::error::{Error, Result};
use num_complex::Complex64;

/// Largest matrix side accepted; the projected operator is at most the
/// truncation rank, which stays far below this.
pub const MAX_EIG_DIM: usize = 64;

/// Eigenvalues and unit-norm eigenvectors (one per column). Conjugate pairs
/// occupy adjacent slots, the `+i` member first.
#[derive(Clone, Debug)]
pub struct ComplexEigenpairs {
    pub values: Vec<Complex64>,
    pub vectors: CMatrix,
}

pub fn eig(a: &Matrix) -> Result<ComplexEigenpairs> {
    if a.rows() != a.cols() {
        return Err(Error::InvalidInput(format!(
            "eig requires a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::InvalidInput("eig of empty matrix".into()));
    }
    if a.rows() > MAX_EIG_DIM {
        return Err(Error::InvalidInput(format!(
            "eig limited to side <= {MAX_EIG_DIM}, got {}",
            a.rows()
        )));
    }
    a.check_finite("eig input")?;

    let n = a.rows();
    let mut h = a.clone();
    let mut v = Matrix::identity(n);
    orthes(&mut h, &mut v);
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    hqr2(&mut h, &mut v, &mut d, &mut e)?;

    // Assemble complex eigenvectors from the packed real storage: a real
    // eigenvalue owns its column; a conjugate pair (e[i] > 0 then e[i+1] < 0)
    // packs Re in column i and Im in column i+1.
    let mut vectors = CMatrix::zeros(n, n);
    let mut values = vec![Complex64::new(0.0, 0.0); n];
    let mut i = 0;
    while i < n {
        values[i] = Complex64::new(d[i], e[i]);
        if e[i] > 0.0 {
            values[i + 1] = Complex64::new(d[i + 1], e[i + 1]);
            for r in 0..n {
                let re = v[(r, i)];
                let im = v[(r, i + 1)];
                vectors[(r, i)] = Complex64::new(re, im);
                vectors[(r, i + 1)] = Complex64::new(re, -im);
            }
            i += 2;
        } else {
            for r in 0..n {
                vectors[(r, i)] = Complex64::new(v[(r, i)], 0.0);
            }
            i += 1;
        }
    }

    // Normalize each eigenvector to unit 2-norm.
    for j in 0..n {
        let norm: f64 = (0..n).map(|r| vectors[(r, j)].norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            for r in 0..n {
                vectors[(r, j)] /= norm;
            }
        }
    }

    Ok(ComplexEigenpairs { values, vectors })
}

/// Householder reduction to upper Hessenberg form, accumulating the
/// orthogonal transform in `v`.
fn orthes(h: &mut Matrix, v: &mut Matrix) {
    let n = h.rows();
    if n < 3 {
        return;
    }
    let low = 0usize;
    let high = n - 1;
    let mut ort = vec![0.0; n];

    for m in (low + 1)..high {
        let mut scale = 0.0;
        for i in m..=high {
            scale += h[(i, m - 1)].abs();
        }
        if scale == 0.0 {
            continue;
        }

        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[(i, m - 1)] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        // Similarity transform H <- (I - uuᵀ/h) H (I - uuᵀ/h)
        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[(i, j)];
            }
            f /= hh;
            for i in m..=high {
                h[(i, j)] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * h[(i, j)];
            }
            f /= hh;
            for j in m..=high {
                h[(i, j)] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[(m, m - 1)] = scale * g;
    }

    // Accumulate transformations.
    for m in ((low + 1)..high).rev() {
        if h[(m, m - 1)] != 0.0 {
            for i in (m + 1)..=high {
                ort[i] = h[(i, m - 1)];
            }
            for j in m..=high {
                let mut g = 0.0;
                for i in m..=high {
                    g += ort[i] * v[(i, j)];
                }
                // Double division avoids possible underflow.
                g = (g / ort[m]) / h[(m, m - 1)];
                for i in m..=high {
                    v[(i, j)] += g * ort[i];
                }
            }
        }
    }
}

fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}

/// Hessenberg to real Schur form with eigenvector back-substitution.
/// Signed indices follow the original Algol control flow.
#[allow(clippy::needless_range_loop)]
fn hqr2(hm: &mut Matrix, vm: &mut Matrix, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let nn = hm.rows() as isize;
    let mut n = nn - 1;
    let low: isize = 0;
    let high: isize = nn - 1;
    let eps = 2.0f64.powi(-52);
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut t, mut w, mut x, mut y): (f64, f64, f64, f64);

    macro_rules! h {
        ($i:expr, $j:expr) => {
            hm[($i as usize, $j as usize)]
        };
    }
    macro_rules! v {
        ($i:expr, $j:expr) => {
            vm[($i as usize, $j as usize)]
        };
    }

    let mut norm = 0.0;
    for i in 0..nn {
        for j in (i - 1).max(0)..nn {
            norm += h![i, j].abs();
        }
    }

    let mut iter = 0usize;
    let mut total_iter = 0usize;
    while n >= low {
        // Look for a single small sub-diagonal element.
        let mut l = n;
        while l > low {
            s = h![l - 1, l - 1].abs() + h![l, l].abs();
            if s == 0.0 {
                s = norm;
            }
            if h![l, l - 1].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == n {
            // One root found.
            h![n, n] += exshift;
            d[n as usize] = h![n, n];
            e[n as usize] = 0.0;
            n -= 1;
            iter = 0;
        } else if l == n - 1 {
            // Two roots found.
            w = h![n, n - 1] * h![n - 1, n];
            p = (h![n - 1, n - 1] - h![n, n]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h![n, n] += exshift;
            h![n - 1, n - 1] += exshift;
            x = h![n, n];

            if q >= 0.0 {
                // Real pair.
                z = if p >= 0.0 { p + z } else { p - z };
                d[(n - 1) as usize] = x + z;
                d[n as usize] = d[(n - 1) as usize];
                if z != 0.0 {
                    d[n as usize] = x - w / z;
                }
                e[(n - 1) as usize] = 0.0;
                e[n as usize] = 0.0;
                x = h![n, n - 1];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;

                for j in (n - 1)..nn {
                    z = h![n - 1, j];
                    h![n - 1, j] = q * z + p * h![n, j];
                    h![n, j] = q * h![n, j] - p * z;
                }
                for i in 0..=n {
                    z = h![i, n - 1];
                    h![i, n - 1] = q * z + p * h![i, n];
                    h![i, n] = q * h![i, n] - p * z;
                }
                for i in low..=high {
                    z = v![i, n - 1];
                    v![i, n - 1] = q * z + p * v![i, n];
                    v![i, n] = q * v![i, n] - p * z;
                }
            } else {
                // Complex pair.
                d[(n - 1) as usize] = x + p;
                d[n as usize] = x + p;
                e[(n - 1) as usize] = z;
                e[n as usize] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            // Form shift.
            x = h![n, n];
            y = 0.0;
            w = 0.0;
            if l < n {
                y = h![n - 1, n - 1];
                w = h![n, n - 1] * h![n - 1, n];
            }

            if iter == 10 {
                // Wilkinson's original ad hoc shift.
                exshift += x;
                for i in low..=n {
                    h![i, i] -= x;
                }
                s = h![n, n - 1].abs() + h![n - 1, n - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                // MATLAB's ad hoc shift.
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in low..=n {
                        h![i, i] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }

            iter += 1;
            total_iter += 1;
            if total_iter > 60 * nn as usize {
                return Err(Error::Numerical(format!(
                    "QR eigendecomposition failed to converge after {total_iter} iterations"
                )));
            }

            // Two consecutive small sub-diagonal elements.
            let mut m = n - 2;
            while m >= l {
                z = h![m, m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h![m + 1, m] + h![m, m + 1];
                q = h![m + 1, m + 1] - z - r - s;
                r = h![m + 2, m + 1];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h![m, m - 1].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h![m - 1, m - 1].abs() + z.abs() + h![m + 1, m + 1].abs()))
                {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=n {
                h![i, i - 2] = 0.0;
                if i > m + 2 {
                    h![i, i - 3] = 0.0;
                }
            }

            // Double QR step on rows l..=n, columns m..=n.
            for k in m..=(n - 1) {
                let notlast = k != n - 1;
                if k != m {
                    p = h![k, k - 1];
                    q = h![k + 1, k - 1];
                    r = if notlast { h![k + 2, k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h![k, k - 1] = -s * x;
                    } else if l != m {
                        h![k, k - 1] = -h![k, k - 1];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = h![k, j] + q * h![k + 1, j];
                        if notlast {
                            p += r * h![k + 2, j];
                            h![k + 2, j] -= p * z;
                        }
                        h![k, j] -= p * x;
                        h![k + 1, j] -= p * y;
                    }
                    for i in 0..=n.min(k + 3) {
                        p = x * h![i, k] + y * h![i, k + 1];
                        if notlast {
                            p += z * h![i, k + 2];
                            h![i, k + 2] -= p * r;
                        }
                        h![i, k] -= p;
                        h![i, k + 1] -= p * q;
                    }
                    for i in low..=high {
                        p = x * v![i, k] + y * v![i, k + 1];
                        if notlast {
                            p += z * v![i, k + 2];
                            v![i, k + 2] -= p * r;
                        }
                        v![i, k] -= p;
                        v![i, k + 1] -= p * q;
                    }
                }
            }
        }
    }

    // Backsubstitute to find vectors of the upper triangular form.
    if norm == 0.0 {
        return Ok(());
    }
    for n in (0..nn).rev() {
        p = d[n as usize];
        q = e[n as usize];

        if q == 0.0 {
            // Real vector.
            let mut l = n;
            h![n, n] = 1.0;
            for i in (0..n).rev() {
                w = h![i, i] - p;
                r = 0.0;
                for j in l..=n {
                    r += h![i, j] * h![j, n];
                }
                if e[i as usize] < 0.0 {
                    z = w;
                    s = r;
                } else {
                    l = i;
                    if e[i as usize] == 0.0 {
                        h![i, n] = if w != 0.0 { -r / w } else { -r / (eps * norm) };
                    } else {
                        // Solve a 2x2 real block.
                        x = h![i, i + 1];
                        y = h![i + 1, i];
                        q = (d[i as usize] - p) * (d[i as usize] - p) + e[i as usize] * e[i as usize];
                        t = (x * s - z * r) / q;
                        h![i, n] = t;
                        h![i + 1, n] = if x.abs() > z.abs() { (-r - w * t) / x } else { (-s - y * t) / z };
                    }

                    // Overflow control.
                    t = h![i, n].abs();
                    if (eps * t) * t > 1.0 {
                        for j in i..=n {
                            h![j, n] /= t;
                        }
                    }
                }
            }
        } else if q < 0.0 {
            // Complex vector; the pair is stored in columns n-1 (Re) and n (Im).
            let mut l = n - 1;

            if h![n, n - 1].abs() > h![n - 1, n].abs() {
                h![n - 1, n - 1] = q / h![n, n - 1];
                h![n - 1, n] = -(h![n, n] - p) / h![n, n - 1];
            } else {
                let (cr, ci) = cdiv(0.0, -h![n - 1, n], h![n - 1, n - 1] - p, q);
                h![n - 1, n - 1] = cr;
                h![n - 1, n] = ci;
            }
            h![n, n - 1] = 0.0;
            h![n, n] = 1.0;
            for i in (0..(n - 1)).rev() {
                let mut ra = 0.0;
                let mut sa = 0.0;
                for j in l..=n {
                    ra += h![i, j] * h![j, n - 1];
                    sa += h![i, j] * h![j, n];
                }
                w = h![i, i] - p;

                if e[i as usize] < 0.0 {
                    z = w;
                    r = ra;
                    s = sa;
                } else {
                    l = i;
                    if e[i as usize] == 0.0 {
                        let (cr, ci) = cdiv(-ra, -sa, w, q);
                        h![i, n - 1] = cr;
                        h![i, n] = ci;
                    } else {
                        x = h![i, i + 1];
                        y = h![i + 1, i];
                        let mut vr =
                            (d[i as usize] - p) * (d[i as usize] - p) + e[i as usize] * e[i as usize] - q * q;
                        let vi = (d[i as usize] - p) * 2.0 * q;
                        if vr == 0.0 && vi == 0.0 {
                            vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                        }
                        let (cr, ci) = cdiv(x * r - z * ra + q * sa, x * s - z * sa - q * ra, vr, vi);
                        h![i, n - 1] = cr;
                        h![i, n] = ci;
                        if x.abs() > z.abs() + q.abs() {
                            h![i + 1, n - 1] = (-ra - w * h![i, n - 1] + q * h![i, n]) / x;
                            h![i + 1, n] = (-sa - w * h![i, n] - q * h![i, n - 1]) / x;
                        } else {
                            let (cr, ci) = cdiv(-r - y * h![i, n - 1], -s - y * h![i, n], z, q);
                            h![i + 1, n - 1] = cr;
                            h![i + 1, n] = ci;
                        }
                    }

                    t = h![i, n - 1].abs().max(h![i, n].abs());
                    if (eps * t) * t > 1.0 {
                        for j in i..=n {
                            h![j, n - 1] /= t;
                            h![j, n] /= t;
                        }
                    }
                }
            }
        }
    }

    // Back-transform to eigenvectors of the original matrix.
    for j in (low..nn).rev() {
        for i in low..=high {
            z = 0.0;
            for k in low..=j.min(high) {
                z += v![i, k] * h![k, j];
            }
            v![i, j] = z;
        }
    }

    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn residual(a: &Matrix, pairs: &ComplexEigenpairs) -> f64 {
        let n = a.rows();
        let ac = CMatrix::from_real(a);
        let mut worst = 0.0f64;
        for j in 0..n {
            let wv = pairs.vectors.col(j);
            let lam = pairs.values[j];
            let mut res = 0.0;
            for i in 0..n {
                let mut aw = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    aw += ac[(i, k)] * wv[k];
                }
                res += (aw - lam * wv[i]).norm_sqr();
            }
            worst = worst.max(res.sqrt());
        }
        worst
    }

    #[test]
    fn rotation_matrix_pure_imaginary() {
        let a = Matrix::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let p = eig(&a).unwrap();
        let mut lams: Vec<(f64, f64)> = p.values.iter().map(|l| (l.re, l.im)).collect();
        lams.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
        assert!(lams[0].0.abs() < 1e-12 && (lams[0].1 - 1.0).abs() < 1e-12);
        assert!(lams[1].0.abs() < 1e-12 && (lams[1].1 + 1.0).abs() < 1e-12);
        assert!(residual(&a, &p) <= 1e-8 * a.frobenius_norm());
    }

    #[test]
    fn diagonal_matrix() {
        let a = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 3.0]]);
        let p = eig(&a).unwrap();
        let mut vals: Vec<f64> = p.values.iter().map(|l| l.re).collect();
        vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((vals[0] - 2.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
        // Eigenvectors are the standard basis, up to phase.
        for j in 0..2 {
            let col = p.vectors.col(j);
            let nonzero: usize = col.iter().filter(|c| c.norm() > 1e-10).count();
            assert_eq!(nonzero, 1);
        }
    }

    #[test]
    fn upper_triangular() {
        // Characteristic polynomial (2 - λ)(2.5 - λ).
        let a = Matrix::from_rows(&[&[2.0, 1.0], &[0.0, 2.5]]);
        let p = eig(&a).unwrap();
        let mut vals: Vec<f64> = p.values.iter().map(|l| l.re).collect();
        vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((vals[0] - 2.0).abs() < 1e-12 && (vals[1] - 2.5).abs() < 1e-12);
        assert!(residual(&a, &p) <= 1e-8 * a.frobenius_norm());
    }

    #[test]
    fn rejects_non_square() {
        assert!(eig(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn conjugate_pairs_adjacent() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..20 {
            let n = 2 + rng.next_below(7);
            let a = Matrix::from_fn(n, n, |_, _| rng.uniform(-1.0, 1.0));
            let p = eig(&a).unwrap();
            let mut j = 0;
            while j < n {
                if p.values[j].im != 0.0 {
                    assert!(j + 1 < n);
                    let conj = p.values[j].conj();
                    assert!((p.values[j + 1] - conj).norm() <= 1e-9 * (1.0 + conj.norm()));
                    j += 2;
                } else {
                    j += 1;
                }
            }
            assert!(residual(&a, &p) <= 1e-8 * a.frobenius_norm());
        }
    }

    #[test]
    fn random_residuals() {
        let mut rng = SplitMix64::new(0xE16);
        for _ in 0..50 {
            let n = 1 + rng.next_below(10);
            let a = Matrix::from_fn(n, n, |_, _| rng.uniform(-3.0, 3.0));
            let p = eig(&a).unwrap();
            assert!(residual(&a, &p) <= 1e-8 * a.frobenius_norm());
            for j in 0..n {
                let norm: f64 = p.vectors.col(j).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eigenvalue_roundtrip_from_known_spectrum() {
        // Build A = M D M⁻¹ with a known real block spectrum and a
        // well-conditioned M, then check the recovered multiset.
        let mut rng = SplitMix64::new(777);
        for _ in 0..20 {
            let n = 6;
            // Block diagonal D: two real eigenvalues and two rotation blocks.
            let reals = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
            let rots = [(rng.uniform(-1.5, 1.5), rng.uniform(0.1, 1.5)), (rng.uniform(-1.5, 1.5), rng.uniform(0.1, 1.5))];
            let mut d = Matrix::zeros(n, n);
            d[(0, 0)] = reals[0];
            d[(1, 1)] = reals[1];
            for (b, &(re, im)) in rots.iter().enumerate() {
                let o = 2 + 2 * b;
                d[(o, o)] = re;
                d[(o, o + 1)] = im;
                d[(o + 1, o)] = -im;
                d[(o + 1, o + 1)] = re;
            }
            // M = I + 0.1 R stays well conditioned.
            let m = Matrix::from_fn(n, n, |i, j| {
                let base = if i == j { 1.0 } else { 0.0 };
                base + 0.1 * rng.uniform(-1.0, 1.0)
            });
            let m_inv = invert(&m);
            let a = m.matmul(&d).matmul(&m_inv);

            let mut expected: Vec<Complex64> = vec![
                Complex64::new(reals[0], 0.0),
                Complex64::new(reals[1], 0.0),
            ];
            for &(re, im) in &rots {
                expected.push(Complex64::new(re, im));
                expected.push(Complex64::new(re, -im));
            }
            let mut got = eig(&a).unwrap().values;
            let key = |c: &Complex64| (c.re, c.im);
            expected.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            got.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            for (g, ex) in got.iter().zip(&expected) {
                assert!((g - ex).norm() < 1e-7, "got {g}, expected {ex}");
            }
        }
    }

    // Test-only Gauss-Jordan inverse, independent of the decomposition path.
    fn invert(m: &Matrix) -> Matrix {
        let n = m.rows();
        let mut a = m.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let mut piv = col;
            for r in (col + 1)..n {
                if a[(r, col)].abs() > a[(piv, col)].abs() {
                    piv = r;
                }
            }
            for j in 0..n {
                let tmp = a[(col, j)];
                a[(col, j)] = a[(piv, j)];
                a[(piv, j)] = tmp;
                let tmp = inv[(col, j)];
                inv[(col, j)] = inv[(piv, j)];
                inv[(piv, j)] = tmp;
            }
            let scale = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= scale;
                inv[(col, j)] /= scale;
            }
            for r in 0..n {
                if r != col {
                    let f = a[(r, col)];
                    for j in 0..n {
                        a[(r, j)] -= f * a[(col, j)];
                        inv[(r, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
        inv
    }
}
