//! Binary dataset container. Little-endian throughout:
//!
//! ```text
//! magic "DMDNODS1" (8 bytes)
//! format version  u32
//! equation tag    u8            0 = laplace, 1 = heat, 2 = burgers
//! params JSON     u32 length + UTF-8 bytes
//! array count     u32
//! per array:      u16 name length, name UTF-8, u8 dtype (0 = float64),
//!                 u8 ndim, ndim × u64 dims, row-major float64 payload
//! ```
//!
//! Named arrays: conditions, trajectories, targets, dmd_modes_re,
//! dmd_modes_im, dmd_eigs_re, dmd_eigs_im, dmd_amps_re, dmd_amps_im,
//! dmd_sigmas. The base seed rides in the params record.

use super::{Dataset, Equation, GridSpec, ParamsRecord, Sample, Trajectory};
use crate::dmd::DmdDecomposition;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"DMDNODS1";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;

/// What actually gets serialized as the params JSON: the generator record
/// plus the base seed.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsEnvelope {
    seed: u64,
    #[serde(flatten)]
    record: ParamsRecord,
}

struct Array {
    name: &'static str,
    dims: Vec<u64>,
    data: Vec<f64>,
}

impl Array {
    fn new(name: &'static str, dims: Vec<u64>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<u64>() as usize, data.len());
        Self { name, dims, data }
    }
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let n = d.samples.len();
    if n == 0 {
        return Err(Error::InvalidInput("refusing to save empty dataset".into()));
    }
    let state_len = d.state_len();
    let cond_len = d.samples[0].condition.len();
    let traj_len = d.samples[0].trajectory.steps.len();
    let rank = d.samples[0].dmd.rank;
    let n_sig = d.samples[0].dmd.sigmas.len();

    let mut conditions = Vec::with_capacity(n * cond_len);
    let mut trajectories = Vec::with_capacity(n * traj_len * state_len);
    let mut targets = Vec::with_capacity(n * state_len);
    let mut modes_re = Vec::with_capacity(n * state_len * rank);
    let mut modes_im = Vec::with_capacity(n * state_len * rank);
    let mut eigs_re = Vec::with_capacity(n * rank);
    let mut eigs_im = Vec::with_capacity(n * rank);
    let mut amps_re = Vec::with_capacity(n * rank);
    let mut amps_im = Vec::with_capacity(n * rank);
    let mut sigmas = Vec::with_capacity(n * n_sig);

    for s in &d.samples {
        if s.condition.len() != cond_len
            || s.trajectory.steps.len() != traj_len
            || s.dmd.rank != rank
            || s.dmd.sigmas.len() != n_sig
        {
            return Err(Error::InvalidInput("ragged dataset: samples disagree on shapes".into()));
        }
        conditions.extend_from_slice(&s.condition);
        for step in &s.trajectory.steps {
            trajectories.extend_from_slice(step);
        }
        targets.extend_from_slice(&s.target);
        for i in 0..state_len {
            for j in 0..rank {
                let z = s.dmd.modes[(i, j)];
                modes_re.push(z.re);
                modes_im.push(z.im);
            }
        }
        eigs_re.extend(s.dmd.eigenvalues.iter().map(|z| z.re));
        eigs_im.extend(s.dmd.eigenvalues.iter().map(|z| z.im));
        amps_re.extend(s.dmd.amplitudes.iter().map(|z| z.re));
        amps_im.extend(s.dmd.amplitudes.iter().map(|z| z.im));
        sigmas.extend_from_slice(&s.dmd.sigmas);
    }

    let (n64, sl, r64) = (n as u64, state_len as u64, rank as u64);
    let arrays = [
        Array::new("conditions", vec![n64, cond_len as u64], conditions),
        Array::new("trajectories", vec![n64, traj_len as u64, sl], trajectories),
        Array::new("targets", vec![n64, sl], targets),
        Array::new("dmd_modes_re", vec![n64, sl, r64], modes_re),
        Array::new("dmd_modes_im", vec![n64, sl, r64], modes_im),
        Array::new("dmd_eigs_re", vec![n64, r64], eigs_re),
        Array::new("dmd_eigs_im", vec![n64, r64], eigs_im),
        Array::new("dmd_amps_re", vec![n64, r64], amps_re),
        Array::new("dmd_amps_im", vec![n64, r64], amps_im),
        Array::new("dmd_sigmas", vec![n64, n_sig as u64], sigmas),
    ];

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[d.equation.tag()])?;
    let params = serde_json::to_vec(&ParamsEnvelope { seed: d.seed, record: d.params.clone() })?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    w.write_all(&params)?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for a in &arrays {
        w.write_all(&(a.name.len() as u16).to_le_bytes())?;
        w.write_all(a.name.as_bytes())?;
        w.write_all(&[DTYPE_F64, a.dims.len() as u8])?;
        for &dim in &a.dims {
            w.write_all(&dim.to_le_bytes())?;
        }
        for &x in &a.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, field: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated file while reading {field}")))?;
        Ok(buf)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.bytes(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        let b = self.bytes(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.bytes(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.bytes(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64_vec(&mut self, count: usize, field: &str) -> Result<Vec<f64>> {
        let b = self.bytes(count * 8, field)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

struct LoadedArray {
    dims: Vec<usize>,
    data: Vec<f64>,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = Reader { inner: BufReader::new(File::open(path)?) };

    let magic = r.bytes(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format("bad magic: not a DMDNODS1 file".into()));
    }
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let equation = Equation::from_tag(r.u8("equation tag")?)?;
    let params_len = r.u32("params length")? as usize;
    let params_bytes = r.bytes(params_len, "params record")?;
    let envelope: ParamsEnvelope = serde_json::from_slice(&params_bytes)
        .map_err(|e| Error::Format(format!("invalid params record: {e}")))?;
    let params = envelope.record;
    let seed = envelope.seed;

    let array_count = r.u32("array count")? as usize;
    let mut arrays: Vec<(String, LoadedArray)> = Vec::with_capacity(array_count);
    for idx in 0..array_count {
        let name_len = r.u16(&format!("array {idx} name length"))? as usize;
        let name = String::from_utf8(r.bytes(name_len, "array name")?)
            .map_err(|_| Error::Format(format!("array {idx} name is not UTF-8")))?;
        let dtype = r.u8(&format!("array {name} dtype"))?;
        if dtype != DTYPE_F64 {
            return Err(Error::Format(format!("array {name}: unsupported dtype {dtype}")));
        }
        let ndim = r.u8(&format!("array {name} ndim"))? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for d in 0..ndim {
            let dim = r.u64(&format!("array {name} dim {d}"))?;
            if dim == 0 || dim > (1 << 40) {
                return Err(Error::Format(format!("array {name}: implausible dim {d} = {dim}")));
            }
            dims.push(dim as usize);
        }
        let count: usize = dims.iter().product();
        let data = r.f64_vec(count, &format!("array {name} payload"))?;
        arrays.push((name, LoadedArray { dims, data }));
    }

    let get = |name: &str| -> Result<&LoadedArray> {
        arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Format(format!("missing array {name}")))
    };

    let conditions = get("conditions")?;
    let trajectories = get("trajectories")?;
    let targets = get("targets")?;
    let modes_re = get("dmd_modes_re")?;
    let modes_im = get("dmd_modes_im")?;
    let eigs_re = get("dmd_eigs_re")?;
    let eigs_im = get("dmd_eigs_im")?;
    let amps_re = get("dmd_amps_re")?;
    let amps_im = get("dmd_amps_im")?;
    let sigmas = get("dmd_sigmas")?;

    let expect_dims = |name: &str, a: &LoadedArray, want: usize| -> Result<()> {
        if a.dims.len() != want {
            return Err(Error::Format(format!(
                "array {name}: expected {want} dims, got {}",
                a.dims.len()
            )));
        }
        Ok(())
    };
    expect_dims("conditions", conditions, 2)?;
    expect_dims("trajectories", trajectories, 3)?;
    expect_dims("targets", targets, 2)?;
    expect_dims("dmd_modes_re", modes_re, 3)?;
    expect_dims("dmd_eigs_re", eigs_re, 2)?;
    expect_dims("dmd_sigmas", sigmas, 2)?;

    let n = conditions.dims[0];
    let cond_len = conditions.dims[1];
    let traj_len = trajectories.dims[1];
    let state_len = trajectories.dims[2];
    let rank = eigs_re.dims[1];
    let n_sig = sigmas.dims[1];

    for (name, a, dims) in [
        ("trajectories", trajectories, vec![n, traj_len, state_len]),
        ("targets", targets, vec![n, state_len]),
        ("dmd_modes_re", modes_re, vec![n, state_len, rank]),
        ("dmd_modes_im", modes_im, vec![n, state_len, rank]),
        ("dmd_eigs_re", eigs_re, vec![n, rank]),
        ("dmd_eigs_im", eigs_im, vec![n, rank]),
        ("dmd_amps_re", amps_re, vec![n, rank]),
        ("dmd_amps_im", amps_im, vec![n, rank]),
        ("dmd_sigmas", sigmas, vec![n, n_sig]),
    ] {
        if a.dims != dims {
            return Err(Error::Format(format!(
                "array {name}: dims {:?} inconsistent with expected {:?}",
                a.dims, dims
            )));
        }
    }

    let grid = GridSpec::new(params.nx, params.ny, params.dx, params.dy)?;
    if state_len != equation.channels() * grid.nodes() {
        return Err(Error::Format(format!(
            "array trajectories: state length {state_len} does not match grid {}x{}",
            grid.nx, grid.ny
        )));
    }

    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let condition = conditions.data[k * cond_len..(k + 1) * cond_len].to_vec();
        let steps: Vec<Vec<f64>> = (0..traj_len)
            .map(|t| {
                let off = (k * traj_len + t) * state_len;
                trajectories.data[off..off + state_len].to_vec()
            })
            .collect();
        let target = targets.data[k * state_len..(k + 1) * state_len].to_vec();
        let mode_off = k * state_len * rank;
        let modes = CMatrix::from_fn(state_len, rank, |i, j| {
            let idx = mode_off + i * rank + j;
            Complex64::new(modes_re.data[idx], modes_im.data[idx])
        });
        let per_r = |a: &LoadedArray, b: &LoadedArray| -> Vec<Complex64> {
            (0..rank)
                .map(|j| Complex64::new(a.data[k * rank + j], b.data[k * rank + j]))
                .collect()
        };
        let dmd = DmdDecomposition {
            modes,
            eigenvalues: per_r(eigs_re, eigs_im),
            amplitudes: per_r(amps_re, amps_im),
            sigmas: sigmas.data[k * n_sig..(k + 1) * n_sig].to_vec(),
            rank,
        };
        samples.push(Sample { condition, trajectory: Trajectory { steps }, target, dmd });
    }

    Ok(Dataset { equation, grid, samples, seed, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{generate_heat, generate_laplace, GridSpec, HEAT_ALPHA, HEAT_DT, HEAT_SPACING};

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("dmdno-container-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let grid = GridSpec::new(10, 10, HEAT_SPACING, HEAT_SPACING).unwrap();
        let ds = generate_heat(3, grid, 10, HEAT_ALPHA, HEAT_DT, 5).unwrap();
        let path = tmpfile("roundtrip.dmdnods");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.equation, ds.equation);
        assert_eq!(back.seed, ds.seed);
        assert_eq!(back.params, ds.params);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.condition, b.condition);
            assert_eq!(a.trajectory, b.trajectory);
            assert_eq!(a.target, b.target);
            assert_eq!(a.dmd.rank, b.dmd.rank);
            assert_eq!(a.dmd.sigmas, b.dmd.sigmas);
            assert_eq!(a.dmd.eigenvalues, b.dmd.eigenvalues);
            assert_eq!(a.dmd.amplitudes, b.dmd.amplitudes);
            for i in 0..a.dmd.modes.rows() {
                for j in 0..a.dmd.rank {
                    assert_eq!(a.dmd.modes[(i, j)], b.dmd.modes[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn file_starts_with_magic() {
        let ds = generate_laplace(2, GridSpec::new(10, 10, 1.0, 1.0).unwrap(), 5, 1).unwrap();
        let path = tmpfile("magic.dmdnods");
        save_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"DMDNODS1");
    }

    #[test]
    fn bad_magic_rejected() {
        let path = tmpfile("badmagic.dmdnods");
        std::fs::write(&path, b"NOTADSETxxxxxxxxxxxx").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn corrupted_dim_header_rejected() {
        let ds = generate_laplace(2, GridSpec::new(10, 10, 1.0, 1.0).unwrap(), 5, 1).unwrap();
        let path = tmpfile("corrupt.dmdnods");
        save_dataset(&ds, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // First array header: magic(8) + version(4) + tag(1) + params(4+len)
        // + count(4) + name_len(2) + "conditions"(10) + dtype(1) + ndim(1),
        // then the first u64 dim — overwrite it with nonsense.
        let params_len =
            u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
        let dim_off = 17 + params_len + 4 + 2 + 10 + 2;
        bytes[dim_off..dim_off + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "got {err}");
        assert!(err.to_string().contains("conditions"));
    }

    #[test]
    fn truncated_payload_rejected() {
        let ds = generate_laplace(2, GridSpec::new(10, 10, 1.0, 1.0).unwrap(), 5, 1).unwrap();
        let path = tmpfile("trunc.dmdnods");
        save_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("truncated"));
    }
}
