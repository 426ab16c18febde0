//! Training: hand-written reverse-mode differentiation of the operator
//! network, mini-batch MSE + L2 loss, SGD/Adam updates, evaluation metrics,
//! and the empirical truncation-error bound checker.
//!
//! A training row is one (sample, grid point) pair: the trunk consumes the
//! point's normalized coordinates, the branches consume per-sample vectors.
//! Batches are processed grouped by sample so branch nets run forward and
//! backward once per sample per batch rather than once per row.

use crate::dmd::{dmd_decompose, encode_branch_inputs, BranchEncoding, DmdConfig};
use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};
use crate::model::{
    branch_forward, fuse, init_params, net_backward, net_forward, InputNorm, MlpCache,
    ModelParams, NetLayout, OperatorNorms, OperatorSpec, SampleInputs,
};
use crate::pde::Dataset;
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay; 1.0 disables. The
    /// default tapers the step size so late epochs settle instead of
    /// bouncing around the minimum at full step length.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Fit per-branch input standardization from the training split.
    #[serde(default = "default_true")]
    pub normalize_inputs: bool,
    /// Fit per-channel output standardization from the training split.
    /// The head is trained in standardized units (losses are still reported
    /// in target units), which makes the optimizer's step size independent
    /// of the target scale.
    #[serde(default = "default_true")]
    pub normalize_outputs: bool,
}

fn default_epochs() -> usize {
    100
}
fn default_lr() -> f64 {
    1e-3
}
fn default_lr_decay() -> f64 {
    0.98
}
fn default_lambda() -> f64 {
    1e-5
}
fn default_batch_size() -> usize {
    32
}
fn default_optimizer() -> Optimizer {
    Optimizer::Adam
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_eval_every() -> usize {
    10
}
fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning rate must be > 0".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidInput("lr_decay must lie in (0, 1]".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidInput("lambda must be >= 0".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidInput("train_fraction must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidInput("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct LossHistory {
    /// (epoch, train loss, test loss)
    pub rows: Vec<(usize, f64, f64)>,
}

/// Per-sample branch inputs plus per-point coordinates and targets, ready
/// for row-level batching.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub conditions: Vec<Vec<f64>>,
    pub encodings: Vec<Option<BranchEncoding>>,
    /// Trunk coordinates per grid point, the unit square affinely mapped to
    /// [−COORD_SPAN/2, COORD_SPAN/2)².
    pub coords: Vec<Vec<f64>>,
    /// targets[sample][channel * n_points + point]
    pub targets: Vec<Vec<f64>>,
    pub n_points: usize,
    pub out_channels: usize,
    pub train_samples: Vec<usize>,
    pub test_samples: Vec<usize>,
}

impl TrainData {
    pub fn sample_inputs(&self, s: usize) -> SampleInputs<'_> {
        SampleInputs {
            condition: &self.conditions[s],
            encoding: self.encodings[s].as_ref(),
        }
    }

    pub fn target(&self, s: usize, point: usize, channel: usize) -> f64 {
        self.targets[s][channel * self.n_points + point]
    }

    pub fn rows_for(&self, samples: &[usize]) -> Vec<(usize, usize)> {
        let mut rows = Vec::with_capacity(samples.len() * self.n_points);
        for &s in samples {
            for p in 0..self.n_points {
                rows.push((s, p));
            }
        }
        rows
    }
}

pub use crate::model::COORD_SPAN;

/// Expand a dataset into training rows and split its samples. The split is
/// a seeded shuffle at the sample level so a sample's grid points never
/// straddle the train/test boundary.
pub fn build_train_data(
    dataset: &Dataset,
    use_encodings: bool,
    train_fraction: f64,
    seed: u64,
) -> Result<TrainData> {
    if dataset.samples.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let (nx, ny) = (dataset.grid.nx, dataset.grid.ny);
    let n_points = nx * ny;
    let out_channels = dataset.equation.channels();

    // Periodic convention (i/n, not i/(n-1)): node coordinates tile
    // [-COORD_SPAN/2, COORD_SPAN/2) without including the right endpoint.
    // With this spacing the period-COORD_SPAN Fourier trunk features form a
    // full-rank, well-conditioned (DFT-matched) basis on the grid for any
    // grid size; the endpoint-inclusive convention makes the first and last
    // node per axis alias to identical features and caps the feature rank.
    let mut coords = Vec::with_capacity(n_points);
    for i in 0..nx {
        for j in 0..ny {
            coords.push(vec![
                (i as f64 / nx as f64 - 0.5) * COORD_SPAN,
                (j as f64 / ny as f64 - 0.5) * COORD_SPAN,
            ]);
        }
    }

    let mut conditions = Vec::with_capacity(dataset.samples.len());
    let mut encodings = Vec::with_capacity(dataset.samples.len());
    let mut targets = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        conditions.push(s.condition.clone());
        encodings.push(if use_encodings {
            Some(encode_branch_inputs(&s.dmd))
        } else {
            None
        });
        targets.push(s.target.clone());
    }

    let n = dataset.samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed ^ 0x5EED_5EED_5EED_5EED);
    rng.shuffle(&mut order);
    let n_train = ((n as f64) * train_fraction).round().max(1.0) as usize;
    let n_train = n_train.min(n - 1).max(1);
    let train_samples = order[..n_train].to_vec();
    let test_samples = order[n_train..].to_vec();

    Ok(TrainData {
        conditions,
        encodings,
        coords,
        targets,
        n_points,
        out_channels,
        train_samples,
        test_samples,
    })
}

/// Fit per-branch input standardization from the training split.
pub fn fit_norms(spec: &OperatorSpec, data: &TrainData) -> Result<OperatorNorms> {
    let mut function = Vec::with_capacity(spec.function_branches.len());
    let mut off = 0;
    for b in &spec.function_branches {
        let w = b.input_width();
        let rows: Vec<&[f64]> = data
            .train_samples
            .iter()
            .map(|&s| &data.conditions[s][off..off + w])
            .collect();
        function.push(InputNorm::fit(&rows));
        off += w;
    }
    // Amplitude-weighted encodings are already on a common O(1) scale per
    // mode; a per-component z-score would undo the weighting by re-inflating
    // exactly the components it suppressed.
    let (modes, dynamics) = if spec.dmd_branches_enabled && !spec.amplitude_weighting {
        let mode_rows: Vec<&[f64]> = data
            .train_samples
            .iter()
            .map(|&s| {
                data.encodings[s]
                    .as_ref()
                    .map(|e| e.mode_vec.as_slice())
                    .ok_or_else(|| Error::InvalidInput("missing encoding for norm fit".into()))
            })
            .collect::<Result<_>>()?;
        let dyn_rows: Vec<&[f64]> = data
            .train_samples
            .iter()
            .map(|&s| data.encodings[s].as_ref().unwrap().dyn_vec.as_slice())
            .collect();
        (Some(InputNorm::fit(&mode_rows)), Some(InputNorm::fit(&dyn_rows)))
    } else {
        (None, None)
    };
    // Per-channel output standardization over every training-row target.
    let c = data.out_channels;
    let rows = (data.train_samples.len() * data.n_points) as f64;
    let mut shift = vec![0.0; c];
    let mut scale = vec![0.0; c];
    for &s in &data.train_samples {
        for ch in 0..c {
            for p in 0..data.n_points {
                shift[ch] += data.target(s, p, ch);
            }
        }
    }
    for m in shift.iter_mut() {
        *m /= rows;
    }
    for &s in &data.train_samples {
        for ch in 0..c {
            for p in 0..data.n_points {
                let d = data.target(s, p, ch) - shift[ch];
                scale[ch] += d * d;
            }
        }
    }
    for v in scale.iter_mut() {
        let sd = (*v / rows).sqrt();
        *v = if sd > 1e-10 { 1.0 / sd } else { 1.0 };
    }
    let output = Some(InputNorm { shift, scale });

    Ok(OperatorNorms { function, modes, dynamics, output })
}

/// Forward (and optionally backward) pass over one batch of rows.
/// Returns the loss ℒ = (1/|B|)·Σ‖u − û‖₂² + λ‖θ‖₂² and, when requested,
/// its exact gradient.
fn batch_pass(
    spec: &OperatorSpec,
    params: &ModelParams,
    data: &TrainData,
    batch: &[(usize, usize)],
    lambda: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = if want_grad { Some(vec![0.0; params.theta.len()]) } else { None };

    // Distinct samples of the batch, in first-appearance order.
    let mut sample_rows: Vec<(usize, Vec<usize>)> = Vec::new();
    for (ri, (s, _)) in batch.iter().enumerate() {
        match sample_rows.iter_mut().find(|(ss, _)| ss == s) {
            Some((_, rows)) => rows.push(ri),
            None => sample_rows.push((*s, vec![ri])),
        }
    }

    let enc_coords: Vec<Vec<f64>> =
        data.coords.iter().map(|c| spec.encode_coord(c)).collect();
    for channel in 0..spec.out_channels {
        let trunk_layout = &params.layout.channels[channel].trunk;
        let gain = spec.output_gain(channel);
        // The trunk depends only on the grid point, so its forward pass is
        // shared across every row of the batch that hits the same point.
        let mut trunk_memo: Vec<Option<MlpCache>> = vec![None; data.n_points];
        for (s, row_ids) in &sample_rows {
            let bp = branch_forward(spec, params, channel, &data.sample_inputs(*s))?;
            let p = spec.latent_p;
            // ∂L/∂(fused product)_i accumulated over this sample's rows.
            let mut dprod = vec![0.0; p];
            let mut trunk_rows = Vec::new();
            for &ri in row_ids {
                let (_, point) = batch[ri];
                if trunk_memo[point].is_none() {
                    trunk_memo[point] =
                        Some(net_forward(&params.theta, trunk_layout, &enc_coords[point])?);
                }
                let trunk = trunk_memo[point].as_ref().unwrap();
                let pred = spec.denorm_output(channel, fuse(trunk.output(), &bp.product));
                let resid = pred - data.target(*s, point, channel);
                loss += inv_b * resid * resid;
                if want_grad {
                    // Gradient with respect to the raw fused head output;
                    // `gain` chains through the output destandardization.
                    let dpred = 2.0 * inv_b * resid * gain;
                    for i in 0..p {
                        dprod[i] += dpred * trunk.output()[i];
                    }
                    trunk_rows.push((point, dpred));
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                // Trunk: one backward per row.
                for (point, dpred) in &trunk_rows {
                    let cache = trunk_memo[*point].as_ref().unwrap();
                    let out_grad: Vec<f64> =
                        bp.product.iter().map(|&pi| dpred * pi).collect();
                    net_backward(&params.theta, trunk_layout, cache, &out_grad, g);
                }
                // Branches: one backward per branch, with the product of
                // the other branches formed by prefix/suffix products (no
                // division, so zero outputs are handled exactly).
                let nb = bp.caches.len();
                let mut prefix = vec![vec![1.0; p]; nb + 1];
                for b in 0..nb {
                    let out = bp.caches[b].output();
                    for i in 0..p {
                        prefix[b + 1][i] = prefix[b][i] * out[i];
                    }
                }
                let mut suffix = vec![vec![1.0; p]; nb + 1];
                for b in (0..nb).rev() {
                    let out = bp.caches[b].output();
                    for i in 0..p {
                        suffix[b][i] = suffix[b + 1][i] * out[i];
                    }
                }
                let ch = &params.layout.channels[channel];
                let mut branch_layouts: Vec<&NetLayout> = ch.function.iter().collect();
                branch_layouts.extend(ch.modes.iter());
                branch_layouts.extend(ch.dynamics.iter());
                for (b, layout) in branch_layouts.iter().enumerate() {
                    let out_grad: Vec<f64> = (0..p)
                        .map(|i| dprod[i] * prefix[b][i] * suffix[b + 1][i])
                        .collect();
                    net_backward(&params.theta, layout, &bp.caches[b], &out_grad, g);
                }
            }
        }
    }

    // λ‖θ‖₂² over the full flat parameter vector.
    if lambda != 0.0 {
        let sq: f64 = params.theta.iter().map(|t| t * t).sum();
        loss += lambda * sq;
        if let Some(g) = grad.as_deref_mut() {
            for (gi, ti) in g.iter_mut().zip(&params.theta) {
                *gi += 2.0 * lambda * ti;
            }
        }
    }
    Ok((loss, grad))
}

pub fn loss(
    spec: &OperatorSpec,
    params: &ModelParams,
    data: &TrainData,
    batch: &[(usize, usize)],
    lambda: f64,
) -> Result<f64> {
    Ok(batch_pass(spec, params, data, batch, lambda, false)?.0)
}

pub fn grad(
    spec: &OperatorSpec,
    params: &ModelParams,
    data: &TrainData,
    batch: &[(usize, usize)],
    lambda: f64,
) -> Result<(Vec<f64>, f64)> {
    let (l, g) = batch_pass(spec, params, data, batch, lambda, true)?;
    Ok((g.unwrap(), l))
}

pub fn sgd_step(theta: &mut [f64], grads: &[f64], eta: f64) {
    for (t, g) in theta.iter_mut().zip(grads) {
        *t -= eta * g;
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }
}

pub fn adam_step(
    state: &mut AdamState,
    theta: &mut [f64],
    grads: &[f64],
    eta: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    // Parameters with exactly-zero gradients (dead inputs) have moments
    // that decay geometrically toward the subnormal range, where x86 float
    // ops run orders of magnitude slower; flush them to zero.
    const MOMENT_FLOOR: f64 = 1e-300;
    for i in 0..theta.len() {
        let g = grads[i];
        // Dead parameter (weights on identically-zero inputs): no moment,
        // no update; skip the sqrt.
        if g == 0.0 && state.m[i] == 0.0 && state.v[i] == 0.0 {
            continue;
        }
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        if state.m[i].abs() < MOMENT_FLOOR {
            state.m[i] = 0.0;
        }
        if state.v[i] < MOMENT_FLOOR {
            state.v[i] = 0.0;
        }
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= eta * m_hat / (v_hat.sqrt() + eps);
    }
}

pub struct TrainOutcome {
    /// Spec with any fitted input norms baked in.
    pub spec: OperatorSpec,
    pub params: ModelParams,
    pub history: LossHistory,
    pub data: TrainData,
}

/// The full training loop: sample-level split, shuffled sample-grouped
/// mini-batches, optimizer updates, and loss logging every `eval_every`
/// epochs (before that epoch's updates, so epoch 0 is the initial loss).
pub fn train(dataset: &Dataset, spec: &OperatorSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    let data = build_train_data(
        dataset,
        spec.dmd_branches_enabled,
        cfg.train_fraction,
        cfg.seed,
    )?;
    let mut spec = spec.clone();
    if spec.norms.is_none() && (cfg.normalize_inputs || cfg.normalize_outputs) {
        let mut norms = fit_norms(&spec, &data)?;
        if !cfg.normalize_inputs {
            for f in norms.function.iter_mut() {
                *f = InputNorm::identity(f.shift.len());
            }
            norms.modes = None;
            norms.dynamics = None;
        }
        if !cfg.normalize_outputs {
            norms.output = None;
        }
        spec.norms = Some(norms);
    }

    let mut params = init_params(&spec, cfg.seed)?;
    let mut adam = AdamState::new(params.theta.len());
    let mut history = LossHistory::default();
    let mut rng = SplitMix64::new(cfg.seed ^ 0x0BAD_CAFE_F00D_D00D);

    let train_rows_all = data.rows_for(&data.train_samples);
    let test_rows_all = data.rows_for(&data.test_samples);

    for epoch in 0..cfg.epochs {
        if epoch % cfg.eval_every == 0 {
            let tr = loss(&spec, &params, &data, &train_rows_all, cfg.lambda)?;
            let te = loss(&spec, &params, &data, &test_rows_all, cfg.lambda)?;
            if !tr.is_finite() || !te.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch} (train={tr}, test={te})"
                )));
            }
            history.rows.push((epoch, tr, te));
        }

        // Shuffle sample order and each sample's point order, then chunk:
        // batches stay stochastic but mostly hit one or two samples, so the
        // per-sample branch passes amortize. (A fully global row shuffle
        // converges indistinguishably but roughly doubles the epoch time.)
        let mut sample_order = data.train_samples.clone();
        rng.shuffle(&mut sample_order);
        let mut rows = Vec::with_capacity(sample_order.len() * data.n_points);
        for &s in &sample_order {
            let mut pts: Vec<usize> = (0..data.n_points).collect();
            rng.shuffle(&mut pts);
            rows.extend(pts.into_iter().map(|p| (s, p)));
        }

        let eta = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        for (bi, batch) in rows.chunks(cfg.batch_size).enumerate() {
            let (g, l) = grad(&spec, &params, &data, batch, cfg.lambda)?;
            if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at epoch {epoch}, batch {bi}"
                )));
            }
            match cfg.optimizer {
                Optimizer::Sgd => sgd_step(&mut params.theta, &g, eta),
                Optimizer::Adam => adam_step(
                    &mut adam,
                    &mut params.theta,
                    &g,
                    eta,
                    cfg.beta1,
                    cfg.beta2,
                    cfg.adam_eps,
                ),
            }
        }
    }

    Ok(TrainOutcome { spec, params, history, data })
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct ChannelMetrics {
    pub mse: f64,
    pub rel_l2: f64,
    pub max_abs: f64,
    /// Set when the target norm is zero; rel_l2 then holds the absolute
    /// residual norm instead of a ratio.
    pub zero_norm: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub per_channel: Vec<ChannelMetrics>,
    pub aggregate: ChannelMetrics,
}

/// MSE, relative L2 and max-abs error over the concatenated predictions of
/// a sample split, per channel and aggregated.
pub fn evaluate(
    spec: &OperatorSpec,
    params: &ModelParams,
    data: &TrainData,
    samples: &[usize],
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty evaluation split".into()));
    }
    // Fixed accumulation order so the metrics are independent of how the
    // caller happens to order the split.
    let mut samples = samples.to_vec();
    samples.sort_unstable();
    let c = spec.out_channels;
    let mut sq_err = vec![0.0; c + 1];
    let mut sq_tgt = vec![0.0; c + 1];
    let mut max_abs = vec![0.0f64; c + 1];
    let mut count = vec![0usize; c + 1];

    for channel in 0..c {
        let trunk_layout = &params.layout.channels[channel].trunk;
        // Trunk outputs are sample-independent; evaluate each grid point once.
        let trunk: Vec<MlpCache> = (0..data.n_points)
            .map(|p| net_forward(&params.theta, trunk_layout, &spec.encode_coord(&data.coords[p])))
            .collect::<Result<_>>()?;
        for &s in &samples {
            let bp = branch_forward(spec, params, channel, &data.sample_inputs(s))?;
            for point in 0..data.n_points {
                let pred =
                    spec.denorm_output(channel, fuse(trunk[point].output(), &bp.product));
                let tgt = data.target(s, point, channel);
                let d = pred - tgt;
                for k in [channel, c] {
                    sq_err[k] += d * d;
                    sq_tgt[k] += tgt * tgt;
                    max_abs[k] = max_abs[k].max(d.abs());
                    count[k] += 1;
                }
            }
        }
    }

    let make = |k: usize| -> ChannelMetrics {
        let norm = sq_tgt[k].sqrt();
        let resid = sq_err[k].sqrt();
        let zero_norm = norm == 0.0;
        ChannelMetrics {
            mse: sq_err[k] / count[k] as f64,
            rel_l2: if zero_norm { resid } else { resid / norm },
            max_abs: max_abs[k],
            zero_norm,
        }
    };
    Ok(MetricsReport {
        per_channel: (0..c).map(make).collect(),
        aggregate: make(c),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundTrial {
    pub sample: usize,
    pub epsilon: f64,
    pub lhs: f64,
    pub l_hat: f64,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub trials: Vec<BoundTrial>,
    pub violations: usize,
}

/// Pairs sampled per trial when estimating the Lipschitz quotient.
pub const LIPSCHITZ_PAIRS: usize = 200;

/// Empirical check of the truncation term of the error bound: for a
/// trajectory matrix u and its best rank-r approximation u_r,
/// ‖H(u) − H(u_r)‖₂ ≤ 2·L̂_H·‖u − u_r‖_F must hold, where H maps a snapshot
/// matrix through DMD + encoding + the network over all grid points, and
/// L̂_H is the largest difference quotient over `LIPSCHITZ_PAIRS` random
/// perturbation pairs plus the audited pair itself.
pub fn check_bound(
    spec: &OperatorSpec,
    params: &ModelParams,
    dataset: &Dataset,
    data: &TrainData,
    rank: usize,
    trials: usize,
    seed: u64,
) -> Result<BoundReport> {
    if !spec.dmd_branches_enabled {
        return Err(Error::InvalidInput(
            "bound check requires a model with DMD branches enabled".into(),
        ));
    }
    let dmd_cfg = DmdConfig::with_rank(rank);
    let mut rng = SplitMix64::new(seed ^ 0xB0B0_B0B0_B0B0_B0B0);

    // Trunk outputs are independent of the perturbed snapshots; compute the
    // per-channel, per-point table once for the whole check.
    let mut trunk_tables: Vec<Vec<MlpCache>> = Vec::with_capacity(spec.out_channels);
    for channel in 0..spec.out_channels {
        let trunk_layout = &params.layout.channels[channel].trunk;
        trunk_tables.push(
            (0..data.n_points)
                .map(|p| net_forward(&params.theta, trunk_layout, &spec.encode_coord(&data.coords[p])))
                .collect::<Result<_>>()?,
        );
    }
    // H(a) for a fixed sample s: decompose a, encode, run the network over
    // every grid point (all channels concatenated).
    let h_eval = |s: usize, a: &Matrix| -> Result<Vec<f64>> {
        let dec = dmd_decompose(a, &dmd_cfg)?;
        let enc = encode_branch_inputs(&dec);
        let inputs = SampleInputs { condition: &data.conditions[s], encoding: Some(&enc) };
        let mut out = Vec::with_capacity(spec.out_channels * data.n_points);
        for channel in 0..spec.out_channels {
            let bp = branch_forward(spec, params, channel, &inputs)?;
            let trunk = &trunk_tables[channel];
            for point in 0..data.n_points {
                out.push(spec.denorm_output(channel, fuse(trunk[point].output(), &bp.product)));
            }
        }
        Ok(out)
    };
    let l2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };

    let mut report = BoundReport { trials: Vec::with_capacity(trials), violations: 0 };
    for _ in 0..trials {
        let s = rng.next_below(dataset.samples.len());
        let u = dataset.samples[s].trajectory.snapshot_matrix();
        let f = svd(&u)?;
        let r_eff = rank.min(f.sigma.len());
        let u_r = f.truncated_product(r_eff);
        let mut eps_sq = 0.0;
        for i in 0..u.rows() {
            for j in 0..u.cols() {
                let d = u[(i, j)] - u_r[(i, j)];
                eps_sq += d * d;
            }
        }
        let epsilon = eps_sq.sqrt();

        let h_u = h_eval(s, &u)?;
        let h_ur = h_eval(s, &u_r)?;
        let lhs = l2(&h_u, &h_ur);

        // Audited pair first, so the estimate covers it by construction.
        let mut l_hat = if epsilon > 0.0 { lhs / epsilon } else { 0.0 };
        let amp = 1e-3 * u.max_abs().max(1e-12);
        for _ in 0..LIPSCHITZ_PAIRS {
            let a = Matrix::from_fn(u.rows(), u.cols(), |i, j| {
                u[(i, j)] + rng.uniform(-amp, amp)
            });
            let b = Matrix::from_fn(u.rows(), u.cols(), |i, j| {
                u[(i, j)] + rng.uniform(-amp, amp)
            });
            let mut dist_sq = 0.0;
            for i in 0..u.rows() {
                for j in 0..u.cols() {
                    let d = a[(i, j)] - b[(i, j)];
                    dist_sq += d * d;
                }
            }
            let dist = dist_sq.sqrt();
            if dist == 0.0 {
                continue;
            }
            let q = l2(&h_eval(s, &a)?, &h_eval(s, &b)?) / dist;
            l_hat = l_hat.max(q);
        }

        let bound = 2.0 * l_hat * epsilon;
        // ε = 0 with lhs > 0 would signal a determinism bug and counts as a
        // violation.
        let satisfied = if epsilon == 0.0 { lhs == 0.0 } else { lhs <= bound * (1.0 + 1e-6) };
        if !satisfied {
            report.violations += 1;
        }
        report.trials.push(BoundTrial { sample: s, epsilon, lhs, l_hat, bound, satisfied });
    }
    Ok(report)
}
