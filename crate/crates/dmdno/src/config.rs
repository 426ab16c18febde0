//! Experiment configuration (strict JSON) and the per-run manifest.
//!
//! A config names the equation and overrides defaults for generation, DMD,
//! model architecture and training. Network input widths depend on the
//! dataset, so the config stores an architecture sketch (hidden widths and
//! latent dimension) and the full `OperatorSpec` is derived once the dataset
//! dimensions are known.

use crate::dmd::DmdConfig;
use crate::error::{Error, Result};
use crate::model::{MlpSpec, OperatorSpec};
use crate::pde::{
    Dataset, Equation, GridSpec, BURGERS_DT, BURGERS_SPACING, DEFAULT_SAMPLES, DEFAULT_STEPS,
    HEAT_ALPHA, HEAT_DT, HEAT_SPACING,
};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_grid_dim")]
    pub nx: usize,
    #[serde(default = "default_grid_dim")]
    pub ny: usize,
    /// Time steps (or smoothing iterations for Laplace).
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Grid spacing; per-equation default when unset.
    #[serde(default)]
    pub spacing: Option<f64>,
    /// Diffusivity; heat only.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Time step size; heat and Burgers only.
    #[serde(default)]
    pub dt: Option<f64>,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}
fn default_grid_dim() -> usize {
    10
}
fn default_steps() -> usize {
    DEFAULT_STEPS
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// Architecture sketch expanded into an [`OperatorSpec`] against a dataset.
///
/// Unset fields fall back to per-equation defaults chosen so the default
/// config trains well on each equation (see [`ModelConfig::resolve`]).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths of the function branch ([] = linear).
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    /// Hidden layer widths of the trunk; `hidden` when unset.
    #[serde(default)]
    pub trunk_hidden: Option<Vec<usize>>,
    /// Hidden layer widths of the modes/dynamics branches; `hidden` when unset.
    #[serde(default)]
    pub dmd_hidden: Option<Vec<usize>>,
    /// Latent dimension p (every net's output width).
    #[serde(default)]
    pub latent_p: Option<usize>,
    /// Fourier feature order K of the trunk input encoding (0 = raw coords).
    #[serde(default)]
    pub trunk_fourier: Option<usize>,
    /// Scale DMD branch inputs by per-mode relative amplitude.
    #[serde(default = "default_true")]
    pub amplitude_weighting: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// Fully determined architecture knobs after per-equation defaulting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedModel {
    pub hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub dmd_hidden: Vec<usize>,
    pub latent_p: usize,
    pub trunk_fourier: usize,
}

impl ModelConfig {
    /// Apply per-equation defaults.
    ///
    /// Laplace and heat use tanh nets of width 64 throughout; Laplace adds
    /// order-5 Fourier trunk features, which the smooth harmonic targets need
    /// (raw-coordinate tanh trunks resolve them too slowly). Burgers maps a
    /// rough near-identity operator: a linear function branch and a linear
    /// trunk over the complete order-5 Fourier basis (121 features on a
    /// 10×10 grid, hence p = 121) represent it directly, with slim gating
    /// branches on top.
    pub fn resolve(&self, eq: Equation) -> ResolvedModel {
        let (hidden, trunk_hidden, dmd_hidden, latent_p, fourier): (
            Vec<usize>,
            Vec<usize>,
            Vec<usize>,
            usize,
            usize,
        ) = match eq {
            Equation::Laplace => (vec![64, 64], vec![64, 64], vec![64, 64], 64, 5),
            Equation::Heat => (vec![64, 64], vec![64, 64], vec![64, 64], 64, 0),
            Equation::Burgers => (vec![], vec![], vec![16, 16], 121, 5),
        };
        let hidden = self.hidden.clone().unwrap_or(hidden);
        ResolvedModel {
            trunk_hidden: self.trunk_hidden.clone().unwrap_or_else(|| {
                if self.hidden.is_some() { hidden.clone() } else { trunk_hidden }
            }),
            dmd_hidden: self.dmd_hidden.clone().unwrap_or_else(|| {
                if self.hidden.is_some() { hidden.clone() } else { dmd_hidden }
            }),
            latent_p: self.latent_p.unwrap_or(latent_p),
            trunk_fourier: self.trunk_fourier.unwrap_or(fourier),
            hidden,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// "laplace", "heat" or "burgers".
    pub equation: String,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub dmd: DmdConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Output directory; overridable with --out.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Disable the DMD branches (plain DeepONet reduction).
    #[serde(default)]
    pub baseline: bool,
    /// Dataset generation seed; --seed overrides this and the train seed.
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.equation()?;
        let g = &self.generator;
        if g.n_samples == 0 {
            return Err(Error::InvalidInput("generator.n_samples must be >= 1".into()));
        }
        if g.steps == 0 {
            return Err(Error::InvalidInput("generator.steps must be >= 1".into()));
        }
        let eq = self.equation()?;
        if g.alpha.is_some() && eq != Equation::Heat {
            return Err(Error::InvalidInput(format!(
                "generator.alpha only applies to the heat equation, not {}",
                eq.name()
            )));
        }
        if g.dt.is_some() && eq == Equation::Laplace {
            return Err(Error::InvalidInput(
                "generator.dt does not apply to the Laplace equation".into(),
            ));
        }
        if let Some(s) = g.spacing {
            if !(s > 0.0) {
                return Err(Error::InvalidInput(format!("generator.spacing must be > 0, got {s}")));
            }
        }
        let rm = self.model.resolve(eq);
        if rm.latent_p == 0 {
            return Err(Error::InvalidInput("model.latent_p must be >= 1".into()));
        }
        for (name, widths) in [
            ("hidden", &rm.hidden),
            ("trunk_hidden", &rm.trunk_hidden),
            ("dmd_hidden", &rm.dmd_hidden),
        ] {
            if widths.iter().any(|&w| w == 0) {
                return Err(Error::InvalidInput(format!("model.{name} widths must be >= 1")));
            }
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn equation(&self) -> Result<Equation> {
        match self.equation.as_str() {
            "laplace" => Ok(Equation::Laplace),
            "heat" => Ok(Equation::Heat),
            "burgers" => Ok(Equation::Burgers),
            other => Err(Error::InvalidInput(format!(
                "unknown equation {other:?}; expected laplace, heat or burgers"
            ))),
        }
    }

    pub fn spacing(&self) -> Result<f64> {
        Ok(self.generator.spacing.unwrap_or(match self.equation()? {
            Equation::Laplace => 1.0,
            Equation::Heat => HEAT_SPACING,
            Equation::Burgers => BURGERS_SPACING,
        }))
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let s = self.spacing()?;
        GridSpec::new(self.generator.nx, self.generator.ny, s, s)
    }

    pub fn alpha(&self) -> f64 {
        self.generator.alpha.unwrap_or(HEAT_ALPHA)
    }

    pub fn dt(&self) -> Result<f64> {
        Ok(self.generator.dt.unwrap_or(match self.equation()? {
            Equation::Laplace => 0.0,
            Equation::Heat => HEAT_DT,
            Equation::Burgers => BURGERS_DT,
        }))
    }

    /// Expand the architecture sketch against a dataset's dimensions.
    pub fn build_spec(&self, dataset: &Dataset) -> Result<OperatorSpec> {
        let rm = self.model.resolve(dataset.equation);
        let widths = |input: usize, hidden: &[usize]| -> MlpSpec {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(rm.latent_p);
            MlpSpec::new(w)
        };
        let state = dataset.state_len();
        let rank = dataset.params.dmd_rank;
        let cond = dataset
            .samples
            .first()
            .map(|s| s.condition.len())
            .ok_or_else(|| Error::InvalidInput("empty dataset".into()))?;
        let enabled = !self.baseline;
        let trunk_in =
            if rm.trunk_fourier == 0 { 2 } else { (1 + 2 * rm.trunk_fourier).pow(2) };
        let spec = OperatorSpec {
            coord_dim: 2,
            trunk: widths(trunk_in, &rm.trunk_hidden),
            function_branches: vec![widths(cond, &rm.hidden)],
            modes_branch: widths(2 * state * rank, &rm.dmd_hidden),
            dynamics_branch: widths(4 * rank, &rm.dmd_hidden),
            latent_p: rm.latent_p,
            out_channels: dataset.equation.channels(),
            dmd_branches_enabled: enabled,
            amplitude_weighting: enabled && self.model.amplitude_weighting,
            trunk_fourier: rm.trunk_fourier,
            norms: None,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Written at the end of every command: the effective config, input/output
/// checksums and coarse timings, enough to rerun the command bit-for-bit.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config: serde_json::Value,
    /// path → sha256 of files read.
    pub inputs: BTreeMap<String, String>,
    /// path → sha256 of files written.
    pub outputs: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
            metrics: None,
        })
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Atomic write: serialize to a sibling temp file, then rename.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}-manifest.json", self.command));
        let tmp = dir.join(format!(".{}-manifest.json.tmp", self.command));
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        fs::write(&tmp, &json)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(eq: &str) -> ExperimentConfig {
        serde_json::from_str(&format!(r#"{{"equation": "{eq}"}}"#)).unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = minimal("heat");
        cfg.validate().unwrap();
        assert_eq!(cfg.generator.n_samples, DEFAULT_SAMPLES);
        assert_eq!(cfg.generator.steps, DEFAULT_STEPS);
        assert_eq!(cfg.train.epochs, 100);
        assert!(cfg.model.amplitude_weighting);
        let rm = cfg.model.resolve(Equation::Heat);
        assert_eq!(rm.latent_p, 64);
        assert_eq!(rm.hidden, vec![64, 64]);
        assert_eq!(rm.trunk_fourier, 0);
        let rb = cfg.model.resolve(Equation::Burgers);
        assert_eq!(rb.latent_p, 121);
        assert!(rb.hidden.is_empty());
        assert_eq!(rb.dmd_hidden, vec![16, 16]);
        assert_eq!(rb.trunk_fourier, 5);
        let rl = cfg.model.resolve(Equation::Laplace);
        assert_eq!(rl.trunk_fourier, 5);
        assert!(!cfg.baseline);
        assert_eq!(cfg.spacing().unwrap(), HEAT_SPACING);
        assert_eq!(cfg.alpha(), HEAT_ALPHA);
        assert_eq!(cfg.dt().unwrap(), HEAT_DT);
    }

    #[test]
    fn unknown_fields_rejected() {
        let r: std::result::Result<ExperimentConfig, _> =
            serde_json::from_str(r#"{"equation": "heat", "typo_field": 1}"#);
        assert!(r.is_err());
        let r: std::result::Result<ExperimentConfig, _> =
            serde_json::from_str(r#"{"equation": "heat", "train": {"lr": 0.1}}"#);
        assert!(r.is_err(), "unknown nested field must be rejected");
    }

    #[test]
    fn bad_equation_rejected() {
        assert!(minimal("poisson").validate().is_err());
    }

    #[test]
    fn misplaced_physics_params_rejected() {
        let mut cfg = minimal("laplace");
        cfg.generator.alpha = Some(0.5);
        assert!(cfg.validate().is_err());
        let mut cfg = minimal("laplace");
        cfg.generator.dt = Some(0.1);
        assert!(cfg.validate().is_err());
        let mut cfg = minimal("burgers");
        cfg.generator.alpha = Some(0.5);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_samples_rejected() {
        let mut cfg = minimal("heat");
        cfg.generator.n_samples = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn build_spec_matches_dataset_dims() {
        use crate::pde::{generate_heat, GridSpec};
        let ds = generate_heat(
            2,
            GridSpec::new(10, 10, HEAT_SPACING, HEAT_SPACING).unwrap(),
            12,
            HEAT_ALPHA,
            HEAT_DT,
            3,
        )
        .unwrap();
        let cfg = minimal("heat");
        let spec = cfg.build_spec(&ds).unwrap();
        assert_eq!(spec.trunk.layer_widths, vec![2, 64, 64, 64]);
        assert_eq!(spec.function_branches[0].layer_widths[0], 36);
        assert_eq!(spec.modes_branch.layer_widths[0], 2 * 100 * 10);
        assert_eq!(spec.dynamics_branch.layer_widths[0], 40);
        assert!(spec.dmd_branches_enabled);
        assert!(spec.amplitude_weighting);

        let mut cfg = cfg;
        cfg.baseline = true;
        let spec = cfg.build_spec(&ds).unwrap();
        assert!(!spec.dmd_branches_enabled);
        assert!(!spec.amplitude_weighting);
    }

    #[test]
    fn manifest_round_trips_and_is_atomic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = minimal("laplace");
        let mut m = RunManifest::new("generate", &cfg).unwrap();
        let data_path = dir.path().join("blob.bin");
        fs::write(&data_path, b"abc").unwrap();
        m.record_output(&data_path).unwrap();
        m.timings_ms.insert("total".into(), 12);
        let path = m.write(dir.path()).unwrap();
        assert_eq!(path.file_name().unwrap(), "generate-manifest.json");
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["command"], "generate");
        assert_eq!(
            v["outputs"][data_path.display().to_string()],
            // sha256 of "abc"
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        // no temp file left behind
        assert!(fs::read_dir(dir.path()).unwrap().all(|e| {
            !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")
        }));
    }
}
