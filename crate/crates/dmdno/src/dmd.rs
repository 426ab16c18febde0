//! Dynamic mode decomposition: fit the best linear one-step operator to a
//! snapshot sequence through a truncated SVD, extract its eigenvalues and
//! modes, and encode them as fixed-size real vectors for the network
//! branches.

use crate::error::{Error, Result};
use crate::linalg::{eig, lstsq_complex, svd, CMatrix, Matrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Truncation policy. A preset rank wins when set; otherwise the smallest
/// rank capturing `energy_threshold` of the squared singular spectrum.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmdConfig {
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default = "default_energy_threshold")]
    pub energy_threshold: f64,
    /// Relative cutoff for inverting Σ_r; singular values below
    /// `sigma_floor · σ₁` are excluded from the inversion.
    #[serde(default = "default_sigma_floor")]
    pub sigma_floor: f64,
}

fn default_energy_threshold() -> f64 {
    0.95
}

fn default_sigma_floor() -> f64 {
    1e-12
}

impl Default for DmdConfig {
    fn default() -> Self {
        Self { rank: None, energy_threshold: default_energy_threshold(), sigma_floor: default_sigma_floor() }
    }
}

impl DmdConfig {
    pub fn with_rank(rank: usize) -> Self {
        Self { rank: Some(rank), ..Self::default() }
    }
}

/// Compressed dynamics of one trajectory: modes Φ (n×r), eigenvalues λ,
/// amplitudes b, and the full singular spectrum of the first data matrix.
/// Modes are ordered by descending |λ|, ties by descending |b|.
#[derive(Clone, Debug)]
pub struct DmdDecomposition {
    pub modes: CMatrix,
    pub eigenvalues: Vec<Complex64>,
    pub amplitudes: Vec<Complex64>,
    pub sigmas: Vec<f64>,
    pub rank: usize,
}

/// Real-vector layout of a decomposition for the network branches.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchEncoding {
    /// Length `2·n·r`: per mode, all Re entries then all Im entries.
    pub mode_vec: Vec<f64>,
    /// Length `4·r`: Re λ, Im λ, Re b, Im b.
    pub dyn_vec: Vec<f64>,
}

pub fn select_rank(sigmas: &[f64], cfg: &DmdConfig) -> Result<usize> {
    if sigmas.is_empty() {
        return Err(Error::InvalidInput("empty singular spectrum".into()));
    }
    let total: f64 = sigmas.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::DegenerateInput("all singular values are zero".into()));
    }
    if let Some(r) = cfg.rank {
        if r == 0 {
            return Err(Error::InvalidInput("preset rank must be >= 1".into()));
        }
        return Ok(r.min(sigmas.len()));
    }
    let mut acc = 0.0;
    for (i, s) in sigmas.iter().enumerate() {
        acc += s * s;
        if acc / total >= cfg.energy_threshold {
            return Ok(i + 1);
        }
    }
    Ok(sigmas.len())
}

pub fn dmd_decompose(snapshots: &Matrix, cfg: &DmdConfig) -> Result<DmdDecomposition> {
    let n = snapshots.rows();
    let cols = snapshots.cols();
    if n == 0 || cols < 2 {
        return Err(Error::InvalidInput(format!(
            "dmd needs at least 2 snapshot columns, got {n}x{cols}"
        )));
    }
    snapshots.check_finite("snapshot matrix")?;

    let m = cols - 1;
    let x = snapshots.col_range(0, m);
    let x_next = snapshots.col_range(1, cols);

    let f = svd(&x)?;
    let r = select_rank(&f.sigma, cfg)?;

    let sigma1 = f.sigma[0];
    // X' V_r Σ_r⁺ shows up in both the projected operator and the modes.
    let mut xv_sinv = Matrix::zeros(n, r);
    for j in 0..r {
        let inv = if f.sigma[j] >= cfg.sigma_floor * sigma1 && f.sigma[j] > 0.0 {
            1.0 / f.sigma[j]
        } else {
            0.0
        };
        if inv == 0.0 {
            continue;
        }
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..m {
                acc += x_next[(i, k)] * f.v[(k, j)];
            }
            xv_sinv[(i, j)] = acc * inv;
        }
    }

    // Projected operator Ã = U_rᵀ (X' V_r Σ_r⁺).
    let a_tilde = Matrix::from_fn(r, r, |i, j| {
        let mut acc = 0.0;
        for k in 0..n {
            acc += f.u[(k, i)] * xv_sinv[(k, j)];
        }
        acc
    });

    let pairs = eig(&a_tilde)?;

    // Modes Φ = (X' V_r Σ_r⁺) W.
    let xvs_c = CMatrix::from_real(&xv_sinv);
    let modes = xvs_c.matmul(&pairs.vectors);

    // Amplitudes from the initial snapshot: b = Φ† x₀.
    let x0: Vec<Complex64> = (0..n).map(|i| Complex64::new(snapshots[(i, 0)], 0.0)).collect();
    let amplitudes = lstsq_complex(&modes, &x0)?;

    let mut dec = DmdDecomposition {
        modes,
        eigenvalues: pairs.values,
        amplitudes,
        sigmas: f.sigma,
        rank: r,
    };
    sort_modes(&mut dec);
    Ok(dec)
}

/// Canonical mode order: descending |λ|, ties by descending |b|; stable, so
/// conjugate pairs stay adjacent.
fn sort_modes(dec: &mut DmdDecomposition) {
    let r = dec.rank;
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| {
        let ki = (dec.eigenvalues[i].norm(), dec.amplitudes[i].norm());
        let kj = (dec.eigenvalues[j].norm(), dec.amplitudes[j].norm());
        kj.partial_cmp(&ki).unwrap()
    });
    dec.eigenvalues = order.iter().map(|&i| dec.eigenvalues[i]).collect();
    dec.amplitudes = order.iter().map(|&i| dec.amplitudes[i]).collect();
    let n = dec.modes.rows();
    let old = dec.modes.clone();
    dec.modes = CMatrix::from_fn(n, r, |i, j| old[(i, order[j])]);
}

/// Spectral state estimate at (possibly fractional or extrapolated) time t.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub values: Vec<f64>,
    /// ‖Im‖ / ‖Re‖ of the complex sum; a real-data decomposition should keep
    /// this near zero.
    pub imag_ratio: f64,
}

impl Reconstruction {
    pub fn imag_residue_reportable(&self) -> bool {
        self.imag_ratio > 1e-6
    }
}

pub fn dmd_reconstruct(dec: &DmdDecomposition, t: f64) -> Result<Reconstruction> {
    if !t.is_finite() {
        return Err(Error::InvalidInput("reconstruction time must be finite".into()));
    }
    let n = dec.modes.rows();
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..dec.rank {
        let lam = dec.eigenvalues[k];
        // Principal-branch power; 0^0 = 1 by convention, 0^t = 0 otherwise.
        let lam_t = if lam == Complex64::new(0.0, 0.0) {
            if t == 0.0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }
        } else {
            lam.powf(t)
        };
        let w = lam_t * dec.amplitudes[k];
        for i in 0..n {
            acc[i] += dec.modes[(i, k)] * w;
        }
    }
    let re_norm: f64 = acc.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
    let im_norm: f64 = acc.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
    let imag_ratio = if re_norm > 0.0 { im_norm / re_norm } else { im_norm };
    Ok(Reconstruction { values: acc.iter().map(|z| z.re).collect(), imag_ratio })
}

pub fn encode_branch_inputs(dec: &DmdDecomposition) -> BranchEncoding {
    let n = dec.modes.rows();
    let r = dec.rank;
    let mut mode_vec = Vec::with_capacity(2 * n * r);
    for k in 0..r {
        for i in 0..n {
            mode_vec.push(dec.modes[(i, k)].re);
        }
        for i in 0..n {
            mode_vec.push(dec.modes[(i, k)].im);
        }
    }
    let mut dyn_vec = Vec::with_capacity(4 * r);
    dyn_vec.extend(dec.eigenvalues.iter().map(|l| l.re));
    dyn_vec.extend(dec.eigenvalues.iter().map(|l| l.im));
    dyn_vec.extend(dec.amplitudes.iter().map(|b| b.re));
    dyn_vec.extend(dec.amplitudes.iter().map(|b| b.im));
    BranchEncoding { mode_vec, dyn_vec }
}
