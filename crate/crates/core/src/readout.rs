//! Readouts from reservoir states to scalar targets.
//!
//! Polynomial ridge regression is the closed-form baseline. The MLP uses a
//! scaled logistic activation on hidden layers and is trained with staged
//! Adam and best-checkpoint early stopping.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, DenseMatrix, DenseVector, LinalgError};

#[derive(Debug, Error)]
pub enum ReadoutError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("normal equations are singular at lambda = 0; use a positive lambda")]
    SingularSystem,
    #[error("normal equations are not numerically positive definite at lambda = {lambda}")]
    IllConditioned { lambda: f64 },
    #[error("training diverged (non-finite loss) in stage {stage}, epoch {epoch}")]
    Diverged { stage: usize, epoch: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ReadoutError>;

/// Anything that maps a reservoir state to a scalar.
pub trait Readout {
    fn input_dim(&self) -> usize;

    fn predict(&self, state: &[f64]) -> Result<f64>;

    fn predict_many(&self, states: &[DenseVector]) -> Result<Vec<f64>> {
        states.iter().map(|s| self.predict(s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Linear,
    Polynomial { degree: usize },
}

/// Monomial features up to a total degree, bias included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapSpec", into = "FeatureMapSpec")]
pub struct FeatureMap {
    kind: FeatureKind,
    input_dim: usize,
    // each monomial as a non-decreasing list of variable indices
    monomials: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct FeatureMapSpec {
    kind: FeatureKind,
    input_dim: usize,
}

impl TryFrom<FeatureMapSpec> for FeatureMap {
    type Error = ReadoutError;

    fn try_from(spec: FeatureMapSpec) -> Result<Self> {
        FeatureMap::new(spec.kind, spec.input_dim)
    }
}

impl From<FeatureMap> for FeatureMapSpec {
    fn from(fm: FeatureMap) -> Self {
        FeatureMapSpec {
            kind: fm.kind,
            input_dim: fm.input_dim,
        }
    }
}

impl FeatureMap {
    pub fn new(kind: FeatureKind, input_dim: usize) -> Result<Self> {
        let degree = match kind {
            FeatureKind::Linear => 1,
            FeatureKind::Polynomial { degree } => degree,
        };
        if degree == 0 {
            return Err(ReadoutError::InvalidArgument("polynomial degree must be at least 1".into()));
        }
        if input_dim == 0 {
            return Err(ReadoutError::InvalidArgument("input dimension must be positive".into()));
        }
        let mut monomials = vec![Vec::new()];
        let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..degree {
            let mut next = Vec::new();
            for m in &frontier {
                let start = m.last().copied().unwrap_or(0);
                for v in start..input_dim {
                    let mut grown = m.clone();
                    grown.push(v);
                    next.push(grown);
                }
            }
            monomials.extend(next.iter().cloned());
            frontier = next;
        }
        Ok(FeatureMap {
            kind,
            input_dim,
            monomials,
        })
    }

    pub fn linear(input_dim: usize) -> Result<Self> {
        Self::new(FeatureKind::Linear, input_dim)
    }

    pub fn polynomial(input_dim: usize, degree: usize) -> Result<Self> {
        Self::new(FeatureKind::Polynomial { degree }, input_dim)
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.monomials.len()
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(ReadoutError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(self
            .monomials
            .iter()
            .map(|m| m.iter().map(|&i| x[i]).product())
            .collect())
    }
}

/// Linear model on top of a feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub feature_map: FeatureMap,
    pub weights: DenseVector,
    pub lambda: f64,
}

impl RidgeModel {
    pub fn validate(&self) -> Result<()> {
        if self.weights.dim() != self.feature_map.output_dim() {
            return Err(ReadoutError::DimensionMismatch {
                expected: self.feature_map.output_dim(),
                got: self.weights.dim(),
            });
        }
        if !self.weights.is_finite() {
            return Err(ReadoutError::InvalidArgument("non-finite ridge weights".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(ReadoutError::InvalidArgument("lambda must be non-negative".into()));
        }
        Ok(())
    }
}

impl Readout for RidgeModel {
    fn input_dim(&self) -> usize {
        self.feature_map.input_dim()
    }

    fn predict(&self, state: &[f64]) -> Result<f64> {
        let phi = self.feature_map.features(state)?;
        Ok(self.weights.dot(&phi))
    }
}

fn design_matrix(states: &[DenseVector], fm: &FeatureMap) -> Result<DenseMatrix> {
    let d = fm.output_dim();
    let mut data = Vec::with_capacity(states.len() * d);
    for s in states {
        data.extend(fm.features(s)?);
    }
    Ok(DenseMatrix::from_row_major(states.len(), d, data)?)
}

/// `(ΦᵀΦ + λI) w = Φᵀy` with diagonal equilibration, Cholesky and one step
/// of iterative refinement. Returns the model and its training MSE.
pub fn fit_ridge(
    states: &[DenseVector],
    targets: &[f64],
    fm: &FeatureMap,
    lambda: f64,
) -> Result<(RidgeModel, f64)> {
    if states.len() != targets.len() {
        return Err(ReadoutError::DimensionMismatch {
            expected: states.len(),
            got: targets.len(),
        });
    }
    let d = fm.output_dim();
    if states.len() < d {
        return Err(ReadoutError::InvalidArgument(format!(
            "{} samples for {d} features",
            states.len()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(ReadoutError::InvalidArgument("lambda must be finite and non-negative".into()));
    }
    let phi = design_matrix(states, fm)?;
    let n = states.len();
    let mut gram = DenseMatrix::zeros(d, d);
    let mut rhs = vec![0.0; d];
    {
        let g = gram.as_mut_slice();
        for (r, &target) in targets.iter().enumerate().take(n) {
            let row = phi.row(r);
            for i in 0..d {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                rhs[i] += ri * target;
                let gi = &mut g[i * d..i * d + d];
                for j in i..d {
                    gi[j] += ri * row[j];
                }
            }
        }
        for i in 0..d {
            g[i * d + i] += lambda;
            for j in 0..i {
                g[i * d + j] = g[j * d + i];
            }
        }
    }
    let scale: Vec<f64> = (0..d)
        .map(|i| {
            let g = gram[(i, i)];
            if g > 0.0 {
                1.0 / g.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DenseMatrix::from_fn(d, d, |i, j| scale[i] * gram[(i, j)] * scale[j]);
    let solve_scaled = |b: &[f64]| -> Result<Vec<f64>> {
        let sb: Vec<f64> = b.iter().zip(&scale).map(|(v, s)| v * s).collect();
        match linalg::cholesky_solve(&scaled, &sb) {
            Ok(u) => Ok(u.iter().zip(&scale).map(|(v, s)| v * s).collect()),
            Err(LinalgError::NotPositiveDefinite) if lambda == 0.0 => Err(ReadoutError::SingularSystem),
            Err(LinalgError::NotPositiveDefinite) => Err(ReadoutError::IllConditioned { lambda }),
            Err(e) => Err(e.into()),
        }
    };
    let mut w = solve_scaled(&rhs)?;
    let gw = gram.matvec(&w)?;
    let resid: Vec<f64> = rhs.iter().zip(gw.iter()).map(|(b, g)| b - g).collect();
    let correction = solve_scaled(&resid)?;
    for (wi, ci) in w.iter_mut().zip(&correction) {
        *wi += ci;
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(if lambda == 0.0 {
            ReadoutError::SingularSystem
        } else {
            ReadoutError::IllConditioned { lambda }
        });
    }
    let fitted = phi.matvec(&w)?;
    let mse = fitted.iter().zip(targets).map(|(f, y)| (f - y) * (f - y)).sum::<f64>() / n as f64;
    Ok((
        RidgeModel {
            feature_map: fm.clone(),
            weights: DenseVector::new(w),
            lambda,
        },
        mse,
    ))
}

/// Gradient of `‖Φw − y‖² + λ‖w‖²` at `w`; used to certify optimality.
pub fn ridge_gradient(model: &RidgeModel, states: &[DenseVector], targets: &[f64]) -> Result<DenseVector> {
    let phi = design_matrix(states, &model.feature_map)?;
    let fitted = phi.matvec(&model.weights)?;
    let resid: Vec<f64> = fitted.iter().zip(targets).map(|(f, y)| f - y).collect();
    let mut g = vec![0.0; phi.cols()];
    phi.tmatvec_into(&resid, &mut g);
    Ok(DenseVector::new(
        g.iter()
            .zip(model.weights.iter())
            .map(|(gi, wi)| 2.0 * (gi + model.lambda * wi))
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: DenseVector,
}

/// Fully connected network with scaled-logistic hidden layers and an affine
/// scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub z_min: f64,
    pub z_max: f64,
}

fn logistic(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases. `sizes` runs from the input
    /// dimension through the hidden widths to the output, which must be 1.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], z_min: f64, z_max: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(ReadoutError::InvalidArgument("need at least input and output sizes, all positive".into()));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(ReadoutError::InvalidArgument("output layer must have one unit".into()));
        }
        if !(z_max > z_min) || !z_min.is_finite() || !z_max.is_finite() {
            return Err(ReadoutError::InvalidArgument("activation bounds need z_min < z_max".into()));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: DenseMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit)),
                    bias: DenseVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(MlpModel { layers, z_min, z_max })
    }

    /// Activation bounds from the target range padded by 10% on each side
    /// (10% of the magnitude when the range is zero). The output layer starts
    /// at the constant predictor: zero weights, bias at the target mean.
    pub fn with_target_bounds<R: Rng + ?Sized>(sizes: &[usize], targets: &[f64], rng: &mut R) -> Result<Self> {
        let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(ReadoutError::InvalidArgument("targets must be finite and non-empty".into()));
        }
        // a flat target still needs a non-degenerate activation range
        let margin = 0.1 * (hi - lo).max(lo.abs().max(hi.abs())).max(1e-12);
        let mut model = Self::new(sizes, lo - margin, hi + margin, rng)?;
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let out = model.layers.last_mut().expect("at least one layer");
        out.weights = DenseMatrix::zeros(1, out.weights.cols());
        out.bias = DenseVector::new(vec![mean]);
        Ok(model)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.cols()];
        s.extend(self.layers.iter().map(|l| l.weights.rows()));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.dim()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(ReadoutError::InvalidArgument("network has no layers".into()));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weights.rows() != pair[1].weights.cols() {
                return Err(ReadoutError::InvalidArgument(format!("layer {k} output does not feed layer {}", k + 1)));
            }
        }
        for l in &self.layers {
            if l.bias.dim() != l.weights.rows() {
                return Err(ReadoutError::InvalidArgument("bias length differs from layer width".into()));
            }
            if !l.weights.is_finite() || !l.bias.is_finite() {
                return Err(ReadoutError::InvalidArgument("non-finite network parameters".into()));
            }
        }
        if self.layers.last().unwrap().weights.rows() != 1 {
            return Err(ReadoutError::InvalidArgument("output layer must have one unit".into()));
        }
        if !(self.z_max > self.z_min) {
            return Err(ReadoutError::InvalidArgument("activation bounds need z_min < z_max".into()));
        }
        Ok(())
    }

    fn activate(&self, s: f64) -> f64 {
        (self.z_max - self.z_min) * logistic(s) + self.z_min
    }

    fn activate_prime(&self, s: f64) -> f64 {
        let e = logistic(s);
        (self.z_max - self.z_min) * e * (1.0 - e)
    }

    /// Pre-activations per layer for one input.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut s = vec![0.0; layer.weights.rows()];
            layer.weights.matvec_into(&h, &mut s);
            for (si, bi) in s.iter_mut().zip(layer.bias.iter()) {
                *si += bi;
            }
            h = if k == last { s.clone() } else { s.iter().map(|&v| self.activate(v)).collect() };
            pre.push(s);
        }
        pre
    }

    /// Mean squared error over a batch and its gradient, laid out like
    /// [`MlpModel::params`].
    pub fn loss_and_gradient(&self, inputs: &[&[f64]], targets: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        let n = inputs.len() as f64;
        let last = self.layers.len() - 1;
        for (x, &y) in inputs.iter().zip(targets) {
            let pre = self.forward_trace(x);
            let out = pre[last][0];
            let err = out - y;
            loss += err * err;
            // delta holds dL/d(pre-activation) of the current layer
            let mut delta = vec![2.0 * err / n];
            let mut offset = grad.len();
            for k in (0..=last).rev() {
                let layer = &self.layers[k];
                let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
                offset -= rows * cols + rows;
                let input: Vec<f64> = if k == 0 {
                    x.to_vec()
                } else {
                    pre[k - 1].iter().map(|&v| self.activate(v)).collect()
                };
                let g = &mut grad[offset..offset + rows * cols + rows];
                for i in 0..rows {
                    for j in 0..cols {
                        g[i * cols + j] += delta[i] * input[j];
                    }
                    g[rows * cols + i] += delta[i];
                }
                if k > 0 {
                    let mut back = vec![0.0; cols];
                    layer.weights.tmatvec_into(&delta, &mut back);
                    delta = back
                        .iter()
                        .zip(&pre[k - 1])
                        .map(|(b, &s)| b * self.activate_prime(s))
                        .collect();
                }
            }
        }
        (loss / n, grad)
    }

    /// All parameters, layer by layer: weights row-major then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(l.weights.as_slice());
            p.extend_from_slice(l.bias.as_slice());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&p[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.dim();
            l.bias.copy_from_slice(&p[offset..offset + nb]);
            offset += nb;
        }
    }

    /// Parameter index range of each layer within [`MlpModel::params`].
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.layers
            .iter()
            .map(|l| {
                let len = l.weights.as_slice().len() + l.bias.dim();
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }

    pub fn mse(&self, inputs: &[DenseVector], targets: &[f64]) -> f64 {
        let last = self.layers.len() - 1;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, y)| {
                let out = self.forward_trace(x)[last][0];
                (out - y) * (out - y)
            })
            .sum::<f64>()
            / inputs.len().max(1) as f64
    }
}

impl Readout for MlpModel {
    fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    fn predict(&self, state: &[f64]) -> Result<f64> {
        if state.len() != self.input_dim() {
            return Err(ReadoutError::DimensionMismatch {
                expected: self.input_dim(),
                got: state.len(),
            });
        }
        Ok(self.forward_trace(state)[self.layers.len() - 1][0])
    }
}

/// Largest relative discrepancy per layer between backprop and central
/// differences of step `eps`. Entries where both gradients are below `floor`
/// in magnitude are compared absolutely against `floor`.
pub fn gradient_check(model: &MlpModel, inputs: &[DenseVector], targets: &[f64], eps: f64, floor: f64) -> Vec<f64> {
    let refs: Vec<&[f64]> = inputs.iter().map(|x| x.as_slice()).collect();
    let (_, analytic) = model.loss_and_gradient(&refs, targets);
    let base = model.params();
    let mut probe = model.clone();
    let mut worst = Vec::new();
    for range in model.layer_ranges() {
        let mut layer_worst = 0.0f64;
        for i in range {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            probe.set_params(&p);
            let up = probe.mse(inputs, targets);
            p[i] = base[i] - eps;
            probe.set_params(&p);
            let down = probe.mse(inputs, targets);
            let fd = (up - down) / (2.0 * eps);
            let denom = analytic[i].abs().max(fd.abs()).max(floor);
            layer_worst = layer_worst.max((analytic[i] - fd).abs() / denom);
        }
        worst.push(layer_worst);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam {
        learning_rates: Vec<f64>,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    ClosedForm,
}

impl Optimizer {
    pub fn adam(learning_rates: Vec<f64>) -> Self {
        Optimizer::Adam {
            learning_rates,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs_per_stage: usize,
    /// `None` means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Eight stages from 5e-3 down to 3e-5, 7000 epochs each, patience 500.
    pub fn paper() -> Self {
        TrainConfig {
            optimizer: Optimizer::adam(vec![5e-3, 3e-3, 1e-3, 9e-4, 7e-4, 5e-4, 5e-5, 3e-5]),
            epochs_per_stage: 7000,
            batch_size: None,
            patience: 500,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.optimizer {
            Optimizer::ClosedForm => Ok(()),
            Optimizer::Adam {
                learning_rates,
                beta1,
                beta2,
                eps,
            } => {
                if learning_rates.is_empty() {
                    return Err(ReadoutError::InvalidArgument("no learning rates".into()));
                }
                if learning_rates.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
                    return Err(ReadoutError::InvalidArgument("learning rates must be positive".into()));
                }
                if learning_rates.windows(2).any(|w| w[1] > w[0]) {
                    return Err(ReadoutError::InvalidArgument("learning rates must be non-increasing".into()));
                }
                if !(0.0..1.0).contains(beta1) || !(0.0..1.0).contains(beta2) || !(*eps > 0.0) {
                    return Err(ReadoutError::InvalidArgument("Adam constants out of range".into()));
                }
                if self.epochs_per_stage == 0 {
                    return Err(ReadoutError::InvalidArgument("epochs per stage must be positive".into()));
                }
                if self.batch_size == Some(0) {
                    return Err(ReadoutError::InvalidArgument("batch size must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedMlp {
    pub model: MlpModel,
    pub history: Vec<EpochRecord>,
    pub best_val_mse: f64,
}

/// Staged Adam on the leading 90% of the series with early stopping on the
/// trailing 10%. Each stage resumes from the best weights so far and ends
/// after `patience` epochs without validation improvement.
pub fn fit_mlp(states: &[DenseVector], targets: &[f64], template: &MlpModel, cfg: &TrainConfig) -> Result<TrainedMlp> {
    cfg.validate()?;
    template.validate()?;
    let (rates, beta1, beta2, eps) = match &cfg.optimizer {
        Optimizer::Adam {
            learning_rates,
            beta1,
            beta2,
            eps,
        } => (learning_rates.clone(), *beta1, *beta2, *eps),
        Optimizer::ClosedForm => {
            return Err(ReadoutError::InvalidArgument("closed form training applies to ridge models only".into()))
        }
    };
    if states.len() != targets.len() {
        return Err(ReadoutError::DimensionMismatch {
            expected: states.len(),
            got: targets.len(),
        });
    }
    if states.len() < 2 {
        return Err(ReadoutError::InvalidArgument("need at least two samples".into()));
    }
    if let Some(s) = states.iter().find(|s| s.dim() != template.input_dim()) {
        return Err(ReadoutError::DimensionMismatch {
            expected: template.input_dim(),
            got: s.dim(),
        });
    }
    let n_val = (states.len() / 10).max(1);
    let n_train = states.len() - n_val;
    let (train_x, val_x) = states.split_at(n_train);
    let (train_y, val_y) = targets.split_at(n_train);
    let batch = cfg.batch_size.unwrap_or(n_train);
    if batch > n_train {
        return Err(ReadoutError::InvalidArgument(format!(
            "batch size {batch} exceeds {n_train} training samples"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = template.clone();
    let mut best_params = model.params();
    let mut best_val = model.mse(val_x, val_y);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut global_epoch = 0usize;

    // moments persist across stages; only the rate changes
    let mut m = vec![0.0; best_params.len()];
    let mut v = vec![0.0; best_params.len()];
    let mut t = 0i32;
    for (stage, &lr) in rates.iter().enumerate() {
        model.set_params(&best_params);
        let mut params = best_params.clone();
        let mut since_best = 0usize;
        for epoch in 0..cfg.epochs_per_stage {
            if batch < n_train {
                order.shuffle(&mut rng);
            }
            for chunk in order.chunks(batch) {
                let xs: Vec<&[f64]> = chunk.iter().map(|&i| train_x[i].as_slice()).collect();
                let ys: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
                let (loss, grad) = model.loss_and_gradient(&xs, &ys);
                if !loss.is_finite() {
                    return Err(ReadoutError::Diverged { stage, epoch });
                }
                t += 1;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
                model.set_params(&params);
            }
            let train_mse = model.mse(train_x, train_y);
            let val_mse = model.mse(val_x, val_y);
            if !train_mse.is_finite() || !val_mse.is_finite() {
                return Err(ReadoutError::Diverged { stage, epoch });
            }
            history.push(EpochRecord {
                epoch: global_epoch,
                stage,
                train_mse,
                val_mse,
            });
            global_epoch += 1;
            if val_mse < best_val {
                best_val = val_mse;
                best_params.clone_from(&params);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    model.set_params(&best_params);
    Ok(TrainedMlp {
        model,
        history,
        best_val_mse: best_val,
    })
}

/// Adds IID `N(0, variance)` noise.
pub fn add_noise<R: Rng + ?Sized>(series: &[f64], variance: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(ReadoutError::InvalidArgument("variance must be finite and non-negative".into()));
    }
    if variance == 0.0 {
        return Ok(series.to_vec());
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("positive finite std");
    Ok(series.iter().map(|x| x + normal.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, k: usize) -> usize {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    fn random_states(count: usize, dim: usize, seed: u64) -> Vec<DenseVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| DenseVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect()
    }

    #[test]
    fn feature_counts_match_binomial() {
        for n in 1..6 {
            for d in 1..4 {
                let fm = FeatureMap::polynomial(n, d).unwrap();
                assert_eq!(fm.output_dim(), binom(n + d, d), "n={n} d={d}");
            }
            assert_eq!(FeatureMap::linear(n).unwrap().output_dim(), n + 1);
        }
        assert_eq!(FeatureMap::polynomial(20, 2).unwrap().output_dim(), 231);
        assert!(FeatureMap::polynomial(3, 0).is_err());
        let f = FeatureMap::polynomial(2, 2).unwrap().features(&[2.0, 3.0]).unwrap();
        assert_eq!(f, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn ridge_recovers_exact_linear_weights() {
        let states = random_states(50, 4, 1);
        let truth = [0.7, -1.0, 2.0, 0.5, -0.25];
        let fm = FeatureMap::linear(4).unwrap();
        let targets: Vec<f64> = states
            .iter()
            .map(|s| truth[0] + s.iter().zip(&truth[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let (model, mse) = fit_ridge(&states, &targets, &fm, 0.0).unwrap();
        let var = targets.iter().map(|t| t * t).sum::<f64>() / targets.len() as f64;
        assert!(mse < 1e-18 * var, "mse {mse}");
        for (w, t) in model.weights.iter().zip(&truth) {
            assert!((w - t).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_constant_target() {
        let states = random_states(40, 3, 2);
        let targets = vec![3.5; 40];
        let (model, mse) = fit_ridge(&states, &targets, &FeatureMap::polynomial(3, 2).unwrap(), 1e-12).unwrap();
        assert!((model.weights[0] - 3.5).abs() < 1e-9);
        assert!(model.weights.iter().skip(1).all(|w| w.abs() < 1e-9));
        assert!(mse < 1e-18);
    }

    #[test]
    fn ridge_singular_at_zero_lambda() {
        let states: Vec<DenseVector> = (0..10).map(|i| DenseVector::new(vec![i as f64, 2.0 * i as f64])).collect();
        let targets: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let fm = FeatureMap::linear(2).unwrap();
        assert!(matches!(fit_ridge(&states, &targets, &fm, 0.0), Err(ReadoutError::SingularSystem)));
        assert!(fit_ridge(&states, &targets, &fm, 1e-6).is_ok());
        assert!(fit_ridge(&states[..2], &targets[..2], &fm, 1.0).is_err());
        assert!(fit_ridge(&states, &targets, &fm, -1.0).is_err());
    }

    #[test]
    fn ridge_gradient_vanishes_at_optimum() {
        let states = random_states(200, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let targets: Vec<f64> = states.iter().map(|s| (s[0] * 3.0).sin() + s[1] * s[2] + rng.random_range(-0.1..0.1)).collect();
        let fm = FeatureMap::polynomial(5, 2).unwrap();
        for lambda in [0.0, 1e-8, 1e-3, 1.0] {
            let (model, _) = fit_ridge(&states, &targets, &fm, lambda).unwrap();
            let g = ridge_gradient(&model, &states, &targets).unwrap();
            assert!(g.norm() < 1e-8 * (1.0 + model.weights.norm()), "lambda {lambda}: {}", g.norm());
        }
    }

    #[test]
    fn ridge_train_mse_monotone_in_lambda() {
        let states = random_states(100, 4, 5);
        let targets: Vec<f64> = states.iter().map(|s| s[0].exp() - s[3] * s[1]).collect();
        let fm = FeatureMap::polynomial(4, 2).unwrap();
        let mses: Vec<f64> = [0.0, 1e-4, 1e-2, 1.0, 100.0]
            .iter()
            .map(|&l| fit_ridge(&states, &targets, &fm, l).unwrap().1)
            .collect();
        assert!(mses.windows(2).all(|w| w[1] >= w[0]), "{mses:?}");
    }

    #[test]
    fn predict_edge_cases() {
        let fm = FeatureMap::polynomial(3, 2).unwrap();
        let zero = RidgeModel {
            weights: DenseVector::zeros(fm.output_dim()),
            feature_map: fm,
            lambda: 0.0,
        };
        assert_eq!(zero.predict(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(zero.predict(&[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mlp = MlpModel::new(&[3, 4, 1], -1.0, 1.0, &mut rng).unwrap();
        let last = mlp.layers.last_mut().unwrap();
        last.weights = DenseMatrix::zeros(1, 4);
        last.bias = DenseVector::new(vec![0.75]);
        assert_eq!(mlp.predict(&[5.0, -2.0, 1.0]).unwrap(), 0.75);
        assert!(mlp.predict(&[1.0]).is_err());
        let a = mlp.predict(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a.to_bits(), mlp.predict(&[0.1, 0.2, 0.3]).unwrap().to_bits());
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let states = random_states(5, 20, 12);
        let targets: Vec<f64> = (0..5).map(|i| i as f64 - 2.0).collect();
        let model = MlpModel::new(&[20, 20, 20, 20, 1], -2.5, 2.5, &mut rng).unwrap();
        let errs = gradient_check(&model, &states, &targets, 1e-5, 1e-7);
        assert_eq!(errs.len(), 4);
        assert!(errs.iter().all(|&e| e < 1e-5), "{errs:?}");
    }

    #[test]
    fn mlp_gradient_check_after_training() {
        let states = random_states(60, 3, 13);
        let targets: Vec<f64> = states.iter().map(|s| s[0] * s[1] + s[2]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let template = MlpModel::with_target_bounds(&[3, 8, 8, 1], &targets, &mut rng).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::adam(vec![1e-2, 3e-3]),
            epochs_per_stage: 200,
            batch_size: None,
            patience: 50,
            seed: 1,
        };
        let trained = fit_mlp(&states, &targets, &template, &cfg).unwrap();
        let errs = gradient_check(&trained.model, &states[..5], &targets[..5], 1e-5, 1e-7);
        assert!(errs.iter().all(|&e| e < 1e-5), "{errs:?}");
    }

    #[test]
    fn mlp_matches_linear_ridge_on_linear_target() {
        let states = random_states(400, 2, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let clean: Vec<f64> = states.iter().map(|s| 0.5 * s[0] - 0.3 * s[1]).collect();
        let targets = add_noise(&clean, 0.01, &mut rng).unwrap();
        let n_train = 360;
        let (ridge, _) = fit_ridge(&states[..n_train], &targets[..n_train], &FeatureMap::linear(2).unwrap(), 0.0).unwrap();
        let ridge_val: f64 = states[n_train..]
            .iter()
            .zip(&targets[n_train..])
            .map(|(s, y)| (ridge.predict(s).unwrap() - y).powi(2))
            .sum::<f64>()
            / 40.0;
        let template = MlpModel::with_target_bounds(&[2, 2, 1], &targets, &mut rng).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::adam(vec![1e-2, 3e-3, 1e-3]),
            epochs_per_stage: 1500,
            batch_size: None,
            patience: 200,
            seed: 2,
        };
        let trained = fit_mlp(&states, &targets, &template, &cfg).unwrap();
        assert!(trained.best_val_mse < 1.5 * ridge_val, "{} vs {}", trained.best_val_mse, ridge_val);
    }

    #[test]
    fn mlp_constant_target() {
        let states = random_states(50, 3, 30);
        let targets = vec![1.25; 50];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cfg = TrainConfig {
            optimizer: Optimizer::adam(vec![1e-2, 1e-3]),
            epochs_per_stage: 500,
            batch_size: None,
            patience: 100,
            seed: 3,
        };
        let template = MlpModel::with_target_bounds(&[3, 4, 1], &targets, &mut rng).unwrap();
        let trained = fit_mlp(&states, &targets, &template, &cfg).unwrap();
        assert!(trained.model.mse(&states, &targets) < 1e-10);

        // from a fully random start Adam still removes almost all variation
        let random = MlpModel::new(&[3, 4, 1], 0.0, 2.0, &mut rng).unwrap();
        let before = random.mse(&states, &targets);
        let trained = fit_mlp(&states, &targets, &random, &cfg).unwrap();
        assert!(trained.model.mse(&states, &targets) < 1e-3 * before);
    }

    #[test]
    fn early_stopping_returns_best_checkpoint() {
        let states = random_states(80, 3, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let targets: Vec<f64> = states.iter().map(|s| s[0] + rng.random_range(-0.5..0.5)).collect();
        let template = MlpModel::with_target_bounds(&[3, 20, 20, 1], &targets, &mut rng).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::adam(vec![1e-2, 5e-3]),
            epochs_per_stage: 400,
            batch_size: Some(16),
            patience: 30,
            seed: 4,
        };
        let trained = fit_mlp(&states, &targets, &template, &cfg).unwrap();
        let n_val = 8;
        let val = trained.model.mse(&states[80 - n_val..], &targets[80 - n_val..]);
        assert_eq!(val, trained.best_val_mse);
        let last_stage = trained.history.last().unwrap().stage;
        for rec in trained.history.iter().filter(|r| r.stage == last_stage) {
            assert!(val <= rec.val_mse);
        }
        // patience must have cut at least one stage short
        assert!(trained.history.len() < 800);
    }

    #[test]
    fn training_is_deterministic() {
        let states = random_states(30, 2, 50);
        let targets: Vec<f64> = states.iter().map(|s| s[0] - s[1]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let template = MlpModel::with_target_bounds(&[2, 5, 1], &targets, &mut rng).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::adam(vec![1e-2]),
            epochs_per_stage: 50,
            batch_size: Some(9),
            patience: 50,
            seed: 5,
        };
        let a = fit_mlp(&states, &targets, &template, &cfg).unwrap();
        let b = fit_mlp(&states, &targets, &template, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn train_config_validation() {
        let mut cfg = TrainConfig::paper();
        assert!(cfg.validate().is_ok());
        cfg.optimizer = Optimizer::adam(vec![1e-3, 5e-3]);
        assert!(cfg.validate().is_err());
        cfg.optimizer = Optimizer::adam(vec![1e-3, -1.0]);
        assert!(cfg.validate().is_err());
        let states = random_states(10, 2, 0);
        let targets = vec![0.0; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let template = MlpModel::new(&[2, 3, 1], -1.0, 1.0, &mut rng).unwrap();
        let big = TrainConfig {
            batch_size: Some(100),
            ..TrainConfig::paper()
        };
        assert!(fit_mlp(&states, &targets, &template, &big).is_err());
        let closed = TrainConfig {
            optimizer: Optimizer::ClosedForm,
            ..TrainConfig::paper()
        };
        assert!(fit_mlp(&states, &targets, &template, &closed).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let states = random_states(20, 2, 60);
        let targets: Vec<f64> = states.iter().map(|s| s[0] * 1e300).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let template = MlpModel::new(&[2, 3, 1], -1.0, 1.0, &mut rng).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::adam(vec![1.0]),
            epochs_per_stage: 10,
            batch_size: None,
            patience: 10,
            seed: 0,
        };
        assert!(matches!(
            fit_mlp(&states, &targets, &template, &cfg),
            Err(ReadoutError::Diverged { stage: 0, .. })
        ));
    }

    #[test]
    fn noise_statistics() {
        let zeros = vec![0.0; 1_000_000];
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let noisy = add_noise(&zeros, 0.25, &mut rng).unwrap();
        let n = noisy.len() as f64;
        let mean = noisy.iter().sum::<f64>() / n;
        let var = noisy.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.25).abs() < 0.0025, "var {var}");
        assert!(mean.abs() < 3.0 * (0.25f64 / n).sqrt(), "mean {mean}");
        let series = vec![1.0, 2.0, 3.0];
        assert_eq!(add_noise(&series, 0.0, &mut rng).unwrap(), series);
        assert!(add_noise(&series, -1.0, &mut rng).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let mlp = MlpModel::new(&[4, 6, 1], -3.0, 3.0, &mut rng).unwrap();
        let back: MlpModel = serde_json::from_str(&serde_json::to_string(&mlp).unwrap()).unwrap();
        assert_eq!(mlp, back);
        let states = random_states(30, 2, 81);
        let targets: Vec<f64> = states.iter().map(|s| s[0] * s[1]).collect();
        let (ridge, _) = fit_ridge(&states, &targets, &FeatureMap::polynomial(2, 2).unwrap(), 1e-6).unwrap();
        let back: RidgeModel = serde_json::from_str(&serde_json::to_string(&ridge).unwrap()).unwrap();
        assert_eq!(ridge, back);
    }
}
