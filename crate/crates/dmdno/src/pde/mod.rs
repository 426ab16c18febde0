//! Finite-difference dataset generators for the three benchmark problems
//! (Laplace, heat, Burgers) on small rectangular grids, plus the binary
//! container the datasets are persisted in.
//!
//! Every generator is a pure function of its arguments: sample `k` draws all
//! of its randomness from a stream seeded `seed + k`, so the dataset is
//! independent of generation order.

pub mod container;

pub use container::{load_dataset, save_dataset};

use crate::dmd::{dmd_decompose, DmdConfig, DmdDecomposition};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Laplace,
    Heat,
    Burgers,
}

impl Equation {
    pub fn tag(self) -> u8 {
        match self {
            Equation::Laplace => 0,
            Equation::Heat => 1,
            Equation::Burgers => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Equation::Laplace),
            1 => Ok(Equation::Heat),
            2 => Ok(Equation::Burgers),
            other => Err(Error::Format(format!("unknown equation tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Equation::Laplace => "laplace",
            Equation::Heat => "heat",
            Equation::Burgers => "burgers",
        }
    }

    /// Field channels per grid node (Burgers carries a velocity pair).
    pub fn channels(self) -> usize {
        match self {
            Equation::Burgers => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        let g = Self { nx, ny, dx, dy };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::InvalidInput(format!(
                "grid must be at least 3x3, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0) || !(self.dy > 0.0) {
            return Err(Error::InvalidInput(format!(
                "grid spacing must be positive, got dx={} dy={}",
                self.dx, self.dy
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.nx * self.ny
    }
}

/// Snapshot sequence of one simulation; `steps[t]` is the flattened state at
/// step t (length channels·nx·ny, channel-major, row-major within a channel).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Stack the snapshots as columns of a state_len × (T+1) matrix.
    pub fn snapshot_matrix(&self) -> Matrix {
        let n = self.steps[0].len();
        Matrix::from_fn(n, self.steps.len(), |i, t| self.steps[t][i])
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub condition: Vec<f64>,
    pub trajectory: Trajectory,
    /// Final field(s); equals the last trajectory step.
    pub target: Vec<f64>,
    pub dmd: DmdDecomposition,
}

/// Generator parameters persisted alongside the arrays so a loaded dataset
/// is self-describing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsRecord {
    pub n_samples: usize,
    pub steps: usize,
    pub dmd_rank: usize,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub equation: Equation,
    pub grid: GridSpec,
    pub samples: Vec<Sample>,
    pub seed: u64,
    pub params: ParamsRecord,
}

impl Dataset {
    pub fn state_len(&self) -> usize {
        self.equation.channels() * self.grid.nodes()
    }
}

pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_DMD_RANK: usize = 10;
pub const HEAT_ALPHA: f64 = 0.5;
pub const HEAT_DT: f64 = 0.001;
pub const HEAT_SPACING: f64 = 1.0 / 19.0;
pub const BURGERS_DT: f64 = 1e-4;
pub const BURGERS_SPACING: f64 = 1.0;

/// Non-corner boundary nodes in clockwise order starting at (0,1): top row
/// left→right, right column top→bottom, bottom row right→left, left column
/// bottom→top. This fixes the condition-vector layout.
pub fn boundary_clockwise_noncorner(nx: usize, ny: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(2 * (nx + ny) - 8);
    for j in 1..ny - 1 {
        out.push((0, j));
    }
    for i in 1..nx - 1 {
        out.push((i, ny - 1));
    }
    for j in (1..ny - 1).rev() {
        out.push((nx - 1, j));
    }
    for i in (1..nx - 1).rev() {
        out.push((i, 0));
    }
    out
}

/// Corner nodes in the fixed order (0,0), (0,ny−1), (nx−1,ny−1), (nx−1,0).
pub fn corners(nx: usize, ny: usize) -> [(usize, usize); 4] {
    [(0, 0), (0, ny - 1), (nx - 1, ny - 1), (nx - 1, 0)]
}

/// One Jacobi sweep of the five-point stencil; border nodes are frozen.
pub fn laplace_step(field: &Matrix) -> Result<Matrix> {
    let (nx, ny) = (field.rows(), field.cols());
    if nx < 3 || ny < 3 {
        return Err(Error::InvalidInput(format!(
            "laplace_step needs at least a 3x3 grid, got {nx}x{ny}"
        )));
    }
    field.check_finite("laplace field")?;
    let mut next = field.clone();
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            next[(i, j)] = 0.25
                * (field[(i - 1, j)] + field[(i + 1, j)] + field[(i, j - 1)] + field[(i, j + 1)]);
        }
    }
    Ok(next)
}

/// True iff the explicit heat scheme is stable: α·Δt·(1/Δx² + 1/Δy²) ≤ 1/2.
pub fn cfl_check(alpha: f64, dt: f64, dx: f64, dy: f64) -> Result<bool> {
    for (name, v) in [("alpha", alpha), ("dt", dt), ("dx", dx), ("dy", dy)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "cfl_check requires positive finite {name}, got {v}"
            )));
        }
    }
    Ok(cfl_number(alpha, dt, dx, dy) <= 0.5)
}

pub fn cfl_number(alpha: f64, dt: f64, dx: f64, dy: f64) -> f64 {
    alpha * dt * (1.0 / (dx * dx) + 1.0 / (dy * dy))
}

/// One explicit finite-difference step of the heat equation; border frozen.
pub fn heat_step(field: &Matrix, alpha: f64, dt: f64, dx: f64, dy: f64) -> Result<Matrix> {
    let (nx, ny) = (field.rows(), field.cols());
    if nx < 3 || ny < 3 {
        return Err(Error::InvalidInput(format!(
            "heat_step needs at least a 3x3 grid, got {nx}x{ny}"
        )));
    }
    let mut next = field.clone();
    let cx = alpha * dt / (dx * dx);
    let cy = alpha * dt / (dy * dy);
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let u = field[(i, j)];
            next[(i, j)] = u
                + cx * (field[(i + 1, j)] - 2.0 * u + field[(i - 1, j)])
                + cy * (field[(i, j + 1)] - 2.0 * u + field[(i, j - 1)]);
        }
    }
    Ok(next)
}

/// One explicit Burgers step with upwind convection, central diffusion and
/// periodic boundaries. The convective terms follow the generation algorithm
/// verbatim: u_conv = u·(u_{i−1,j}−u_{i,j})/Δx + v·(u_{i,j−1}−u_{i,j})/Δy
/// (and analogously for v); the update is uᵗ⁺¹ = uᵗ − Δt·u_conv + Δt·u_diff.
pub fn burgers_step(
    u: &Matrix,
    v: &Matrix,
    nu: f64,
    dt: f64,
    dx: f64,
    dy: f64,
) -> Result<(Matrix, Matrix)> {
    let (nx, ny) = (u.rows(), u.cols());
    if v.rows() != nx || v.cols() != ny {
        return Err(Error::InvalidInput(format!(
            "burgers_step channel shapes differ: {nx}x{ny} vs {}x{}",
            v.rows(),
            v.cols()
        )));
    }
    let mut u_new = Matrix::zeros(nx, ny);
    let mut v_new = Matrix::zeros(nx, ny);
    let wrap = |idx: usize, delta: isize, n: usize| -> usize {
        (idx as isize + delta).rem_euclid(n as isize) as usize
    };
    for i in 0..nx {
        let im = wrap(i, -1, nx);
        let ip = wrap(i, 1, nx);
        for j in 0..ny {
            let jm = wrap(j, -1, ny);
            let jp = wrap(j, 1, ny);
            let uc = u[(i, j)];
            let vc = v[(i, j)];

            let u_conv = uc * (u[(im, j)] - uc) / dx + vc * (u[(i, jm)] - uc) / dy;
            let v_conv = uc * (v[(im, j)] - vc) / dx + vc * (v[(i, jm)] - vc) / dy;

            let u_diff = nu
                * ((u[(ip, j)] - 2.0 * uc + u[(im, j)]) / (dx * dx)
                    + (u[(i, jp)] - 2.0 * uc + u[(i, jm)]) / (dy * dy));
            let v_diff = nu
                * ((v[(ip, j)] - 2.0 * vc + v[(im, j)]) / (dx * dx)
                    + (v[(i, jp)] - 2.0 * vc + v[(i, jm)]) / (dy * dy));

            u_new[(i, j)] = uc - dt * u_conv + dt * u_diff;
            v_new[(i, j)] = vc - dt * v_conv + dt * v_diff;
        }
    }
    Ok((u_new, v_new))
}

fn flatten(fields: &[&Matrix]) -> Vec<f64> {
    let mut out = Vec::with_capacity(fields.iter().map(|f| f.rows() * f.cols()).sum());
    for f in fields {
        out.extend_from_slice(f.data());
    }
    out
}

fn finish_sample(
    condition: Vec<f64>,
    steps: Vec<Vec<f64>>,
    rank: usize,
) -> Result<Sample> {
    let trajectory = Trajectory { steps };
    let target = trajectory.steps.last().unwrap().clone();
    let dmd = dmd_decompose(&trajectory.snapshot_matrix(), &DmdConfig::with_rank(rank))?;
    Ok(Sample { condition, trajectory, target, dmd })
}

pub fn generate_laplace(
    n_samples: usize,
    grid: GridSpec,
    iters: usize,
    seed: u64,
) -> Result<Dataset> {
    grid.validate()?;
    if n_samples == 0 || iters == 0 {
        return Err(Error::InvalidInput("n_samples and iters must be >= 1".into()));
    }
    let boundary = boundary_clockwise_noncorner(grid.nx, grid.ny);
    let mut samples = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let mut rng = SplitMix64::new(seed.wrapping_add(k as u64));
        // Non-corner boundary values drawn in clockwise layout order;
        // corners pinned to 0; interior starts at 0.
        let mut field = Matrix::zeros(grid.nx, grid.ny);
        let mut condition = Vec::with_capacity(boundary.len());
        for &(i, j) in &boundary {
            let v = rng.uniform(-10.0, 10.0);
            field[(i, j)] = v;
            condition.push(v);
        }
        let mut steps = Vec::with_capacity(iters + 1);
        steps.push(flatten(&[&field]));
        for _ in 0..iters {
            field = laplace_step(&field)?;
            steps.push(flatten(&[&field]));
        }
        samples.push(finish_sample(condition, steps, DEFAULT_DMD_RANK)?);
    }
    let params = ParamsRecord {
        n_samples,
        steps: iters,
        dmd_rank: DEFAULT_DMD_RANK,
        nx: grid.nx,
        ny: grid.ny,
        dx: grid.dx,
        dy: grid.dy,
        alpha: None,
        dt: None,
    };
    Ok(Dataset { equation: Equation::Laplace, grid, samples, seed, params })
}

pub fn generate_heat(
    n_samples: usize,
    grid: GridSpec,
    steps: usize,
    alpha: f64,
    dt: f64,
    seed: u64,
) -> Result<Dataset> {
    grid.validate()?;
    if n_samples == 0 || steps == 0 {
        return Err(Error::InvalidInput("n_samples and steps must be >= 1".into()));
    }
    if !(alpha > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha and dt must be positive, got alpha={alpha} dt={dt}"
        )));
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let corner_nodes = corners(nx, ny);
    let boundary = boundary_clockwise_noncorner(nx, ny);
    let mut samples = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let mut rng = SplitMix64::new(seed.wrapping_add(k as u64));
        // Corners drawn in the fixed order; edges linearly interpolated
        // between adjacent corners; interior set to 10.
        let c: Vec<f64> = (0..4).map(|_| rng.uniform(-25.0, 25.0)).collect();
        let mut field = Matrix::from_fn(nx, ny, |_, _| 10.0);
        for (idx, &(i, j)) in corner_nodes.iter().enumerate() {
            field[(i, j)] = c[idx];
        }
        for j in 1..ny - 1 {
            let t = j as f64 / (ny - 1) as f64;
            field[(0, j)] = c[0] + (c[1] - c[0]) * t;
            field[(nx - 1, j)] = c[3] + (c[2] - c[3]) * t;
        }
        for i in 1..nx - 1 {
            let t = i as f64 / (nx - 1) as f64;
            field[(i, 0)] = c[0] + (c[3] - c[0]) * t;
            field[(i, ny - 1)] = c[1] + (c[2] - c[1]) * t;
        }
        let mut condition = c.clone();
        condition.extend(boundary.iter().map(|&(i, j)| field[(i, j)]));

        let mut traj = Vec::with_capacity(steps + 1);
        traj.push(flatten(&[&field]));
        for _ in 0..steps {
            field = heat_step(&field, alpha, dt, grid.dx, grid.dy)?;
            traj.push(flatten(&[&field]));
        }
        samples.push(finish_sample(condition, traj, DEFAULT_DMD_RANK)?);
    }
    let params = ParamsRecord {
        n_samples,
        steps,
        dmd_rank: DEFAULT_DMD_RANK,
        nx,
        ny,
        dx: grid.dx,
        dy: grid.dy,
        alpha: Some(alpha),
        dt: Some(dt),
    };
    Ok(Dataset { equation: Equation::Heat, grid, samples, seed, params })
}

pub fn generate_burgers(
    n_samples: usize,
    grid: GridSpec,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<Dataset> {
    grid.validate()?;
    if n_samples == 0 || steps == 0 {
        return Err(Error::InvalidInput("n_samples and steps must be >= 1".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let mut samples = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let mut rng = SplitMix64::new(seed.wrapping_add(k as u64));
        // Initial u drawn node by node row-major, then v, then ν.
        let mut u = Matrix::zeros(nx, ny);
        let mut v = Matrix::zeros(nx, ny);
        for i in 0..nx {
            for j in 0..ny {
                u[(i, j)] = rng.uniform(-25.0, 25.0);
            }
        }
        for i in 0..nx {
            for j in 0..ny {
                v[(i, j)] = rng.uniform(-25.0, 25.0);
            }
        }
        let nu = rng.uniform(0.01, 0.1);
        let mut condition = flatten(&[&u, &v]);
        condition.push(nu);

        let mut traj = Vec::with_capacity(steps + 1);
        traj.push(flatten(&[&u, &v]));
        for _ in 0..steps {
            let (nu_field, nv_field) = burgers_step(&u, &v, nu, dt, grid.dx, grid.dy)?;
            u = nu_field;
            v = nv_field;
            traj.push(flatten(&[&u, &v]));
        }
        samples.push(finish_sample(condition, traj, DEFAULT_DMD_RANK)?);
    }
    let params = ParamsRecord {
        n_samples,
        steps,
        dmd_rank: DEFAULT_DMD_RANK,
        nx,
        ny,
        dx: grid.dx,
        dy: grid.dy,
        alpha: None,
        dt: Some(dt),
    };
    Ok(Dataset { equation: Equation::Burgers, grid, samples, seed, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid10() -> GridSpec {
        GridSpec::new(10, 10, 1.0, 1.0).unwrap()
    }

    #[test]
    fn boundary_order_10x10() {
        let b = boundary_clockwise_noncorner(10, 10);
        assert_eq!(b.len(), 32);
        assert_eq!(b[0], (0, 1));
        assert_eq!(b[7], (0, 8));
        assert_eq!(b[8], (1, 9));
        assert_eq!(b[15], (8, 9));
        assert_eq!(b[16], (9, 8));
        assert_eq!(b[23], (9, 1));
        assert_eq!(b[24], (8, 0));
        assert_eq!(b[31], (1, 0));
    }

    #[test]
    fn laplace_stencil_center() {
        let mut f = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                if i == 0 || i == 2 || j == 0 || j == 2 {
                    f[(i, j)] = 4.0;
                }
            }
        }
        let next = laplace_step(&f).unwrap();
        assert_eq!(next[(1, 1)], 4.0);
    }

    #[test]
    fn laplace_constant_boundary_converges_to_constant() {
        let c = 7.5;
        let mut f = Matrix::from_fn(6, 6, |i, j| {
            if i == 0 || i == 5 || j == 0 || j == 5 { c } else { -3.0 }
        });
        for _ in 0..200 {
            f = laplace_step(&f).unwrap();
        }
        for i in 1..5 {
            for j in 1..5 {
                assert!((f[(i, j)] - c).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn laplace_linear_field_is_fixed_point() {
        let f = Matrix::from_fn(7, 7, |i, j| 2.0 * i as f64 + 3.0 * j as f64);
        let next = laplace_step(&f).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert!((next[(i, j)] - f[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn laplace_rejects_small_grid() {
        assert!(laplace_step(&Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn cfl_reference_parameters() {
        let val = cfl_number(0.5, 0.001, 1.0 / 19.0, 1.0 / 19.0);
        assert!((val - 0.361).abs() < 1e-12);
        assert!(cfl_check(0.5, 0.001, 1.0 / 19.0, 1.0 / 19.0).unwrap());
    }

    #[test]
    fn cfl_gross_violation_and_boundary() {
        assert!(!cfl_check(1.0, 1.0, 1.0, 1.0).unwrap());
        // exactly 0.5 is allowed (non-strict)
        assert!(cfl_check(0.25, 1.0, 1.0, 1.0).unwrap());
        assert!(cfl_check(-1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn heat_step_hand_example() {
        let mut f = Matrix::zeros(3, 3);
        f[(1, 1)] = 10.0;
        let next = heat_step(&f, 0.5, 0.1, 1.0, 1.0).unwrap();
        assert!((next[(1, 1)] - 8.0).abs() < 1e-12);
        assert_eq!(next[(0, 0)], 0.0);
    }

    #[test]
    fn heat_constant_field_unchanged() {
        let f = Matrix::from_fn(5, 5, |_, _| 3.25);
        let next = heat_step(&f, 0.5, 0.001, 0.1, 0.1).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(next[(i, j)], 3.25);
            }
        }
    }

    #[test]
    fn burgers_zero_and_constant_fixed_points() {
        let z = Matrix::zeros(4, 4);
        let (u1, v1) = burgers_step(&z, &z, 0.05, 1e-4, 0.1, 0.1).unwrap();
        assert_eq!(u1.data(), z.data());
        assert_eq!(v1.data(), z.data());

        let cu = Matrix::from_fn(4, 4, |_, _| 2.0);
        let cv = Matrix::from_fn(4, 4, |_, _| -1.5);
        let (u2, v2) = burgers_step(&cu, &cv, 0.05, 1e-4, 0.1, 0.1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((u2[(i, j)] - 2.0).abs() < 1e-15);
                assert!((v2[(i, j)] + 1.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn burgers_single_node_hand_check() {
        // 3x3, u has one nonzero node at (1,1); v zero. Independent
        // evaluation of the upwind + diffusion formulas at each node.
        let (nu, dt, dx, dy) = (0.05, 1e-4, 0.1, 0.1);
        let mut u = Matrix::zeros(3, 3);
        u[(1, 1)] = 2.0;
        let v = Matrix::zeros(3, 3);
        let (un, vn) = burgers_step(&u, &v, nu, dt, dx, dy).unwrap();

        let wrap = |x: isize, n: isize| ((x % n) + n) % n;
        for i in 0..3i64 {
            for j in 0..3i64 {
                let at = |a: &Matrix, ii: isize, jj: isize| {
                    a[(wrap(ii, 3) as usize, wrap(jj, 3) as usize)]
                };
                let (i, j) = (i as isize, j as isize);
                let uc = at(&u, i, j);
                let vc = at(&v, i, j);
                let u_conv = uc * (at(&u, i - 1, j) - uc) / dx + vc * (at(&u, i, j - 1) - uc) / dy;
                let u_diff = nu
                    * ((at(&u, i + 1, j) - 2.0 * uc + at(&u, i - 1, j)) / (dx * dx)
                        + (at(&u, i, j + 1) - 2.0 * uc + at(&u, i, j - 1)) / (dy * dy));
                let expect = uc - dt * u_conv + dt * u_diff;
                assert!(
                    (un[(i as usize, j as usize)] - expect).abs() < 1e-15,
                    "u mismatch at ({i},{j})"
                );
                let v_conv = uc * (at(&v, i - 1, j) - vc) / dx + vc * (at(&v, i, j - 1) - vc) / dy;
                let v_diff = nu
                    * ((at(&v, i + 1, j) - 2.0 * vc + at(&v, i - 1, j)) / (dx * dx)
                        + (at(&v, i, j + 1) - 2.0 * vc + at(&v, i, j - 1)) / (dy * dy));
                let expect_v = vc - dt * v_conv + dt * v_diff;
                assert!((vn[(i as usize, j as usize)] - expect_v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn laplace_dataset_shape_and_corners() {
        let ds = generate_laplace(5, grid10(), 50, 7).unwrap();
        assert_eq!(ds.samples.len(), 5);
        for s in &ds.samples {
            assert_eq!(s.condition.len(), 32);
            assert_eq!(s.trajectory.steps.len(), 51);
            assert_eq!(s.target.len(), 100);
            assert_eq!(s.dmd.rank, 10);
            assert_eq!(&s.target, s.trajectory.steps.last().unwrap());
            for step in &s.trajectory.steps {
                for &(i, j) in corners(10, 10).iter() {
                    assert_eq!(step[i * 10 + j], 0.0, "corner not pinned");
                }
            }
            // boundary frozen: step 0 equals step 50 on the boundary
            let first = &s.trajectory.steps[0];
            let last = &s.trajectory.steps[50];
            for &(i, j) in &boundary_clockwise_noncorner(10, 10) {
                assert_eq!(first[i * 10 + j], last[i * 10 + j]);
            }
            for v in &s.condition {
                assert!(*v > -10.0 && *v < 10.0);
            }
        }
    }

    #[test]
    fn laplace_residual_non_increasing() {
        let ds = generate_laplace(3, grid10(), 50, 99).unwrap();
        for s in &ds.samples {
            let mut prev = f64::INFINITY;
            for w in s.trajectory.steps.windows(2) {
                let resid = w[0]
                    .iter()
                    .zip(&w[1])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(resid <= prev + 1e-12);
                prev = resid;
            }
        }
    }

    #[test]
    fn heat_dataset_layout_and_maximum_principle() {
        let grid = GridSpec::new(10, 10, HEAT_SPACING, HEAT_SPACING).unwrap();
        let ds = generate_heat(5, grid, 50, HEAT_ALPHA, HEAT_DT, 3).unwrap();
        for s in &ds.samples {
            assert_eq!(s.condition.len(), 36);
            for c in &s.condition[..4] {
                assert!(*c > -25.0 && *c < 25.0);
            }
            // interior initialized to 10 exactly
            let init = &s.trajectory.steps[0];
            for i in 1..9 {
                for j in 1..9 {
                    assert_eq!(init[i * 10 + j], 10.0);
                }
            }
            // condition corners match field corners
            assert_eq!(s.condition[0], init[0]);
            assert_eq!(s.condition[1], init[9]);
            assert_eq!(s.condition[2], init[99]);
            assert_eq!(s.condition[3], init[90]);
            // interpolated edge midpoint-ish check: (0,5) between c0 and c1
            let t = 5.0 / 9.0;
            let expect = s.condition[0] + (s.condition[1] - s.condition[0]) * t;
            assert!((init[5] - expect).abs() < 1e-12);
            // maximum principle at every step
            for w in s.trajectory.steps.windows(2) {
                let lo = w[0].iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = w[0].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for &x in &w[1] {
                    assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn burgers_dataset_layout() {
        let grid = GridSpec::new(10, 10, BURGERS_SPACING, BURGERS_SPACING).unwrap();
        let ds = generate_burgers(4, grid, 50, BURGERS_DT, 11).unwrap();
        for s in &ds.samples {
            assert_eq!(s.condition.len(), 201);
            let nu = s.condition[200];
            assert!((0.01..=0.1).contains(&nu));
            assert_eq!(s.target.len(), 200);
            assert_eq!(s.trajectory.steps.len(), 51);
            // condition prefix equals the initial snapshot
            assert_eq!(&s.condition[..200], &s.trajectory.steps[0][..]);
        }
    }

    #[test]
    fn generation_is_deterministic_and_order_independent() {
        let ds1 = generate_laplace(4, grid10(), 20, 42).unwrap();
        let ds2 = generate_laplace(4, grid10(), 20, 42).unwrap();
        for (a, b) in ds1.samples.iter().zip(&ds2.samples) {
            assert_eq!(a.condition, b.condition);
            assert_eq!(a.trajectory, b.trajectory);
        }
        // sample k of a longer run equals sample k of a shorter run
        let ds3 = generate_laplace(2, grid10(), 20, 42).unwrap();
        assert_eq!(ds1.samples[1].condition, ds3.samples[1].condition);
    }
}
