//! Downstream probes: the exhaustive MLP hyperparameter grid and the linear
//! regressor, both trained on frozen embeddings.
//!
//! The grid covers 1 or 2 hidden layers with 32, 64, or 128 units (second
//! layer never larger than the first), rectifier or sigmoid hidden
//! activation, and an optional softmax output: (3 + 6) * 2 * 2 = 36
//! configurations in a fixed order. Ties in validation loss resolve to the
//! earlier grid index.
//!
//! Training minimizes squared error on coordinates for positioning and
//! softmax cross-entropy on the final network output for classification.
//! The linear probe is closed-form ridge least squares (a vanishing ridge
//! keeps the normal equations well-posed) on coordinates or one-hot
//! targets, with argmax decoding for classes.

use crate::errors::{Error, Result};
use crate::nn::{he_uniform, relu, relu_backward, sigmoid, sigmoid_backward, Adam, AdamParams, Linear, Scalar};
use crate::datasets::TrainValSplit;
use crate::seed::rng_for;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub const HIDDEN_SIZES: [usize; 3] = [32, 64, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Rectify,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    None,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Mlp,
    Linear,
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredictorKind::Mlp => write!(f, "mlp"),
            PredictorKind::Linear => write!(f, "linear"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_activation: OutputActivation,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl PredictorConfig {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        PredictorConfig {
            kind: PredictorKind::Linear,
            hidden: vec![],
            activation: Activation::Rectify, // unused without hidden layers
            output_activation: OutputActivation::None,
            input_dim,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PredictorKind::Linear => {
                if !self.hidden.is_empty() {
                    return Err(Error::InvalidConfig("linear probe has no hidden layers".into()));
                }
            }
            PredictorKind::Mlp => {
                if self.hidden.is_empty() || self.hidden.len() > 2 {
                    return Err(Error::InvalidConfig("mlp has 1 or 2 hidden layers".into()));
                }
                for &h in &self.hidden {
                    if !HIDDEN_SIZES.contains(&h) {
                        return Err(Error::InvalidConfig(format!(
                            "hidden size {h} not in {HIDDEN_SIZES:?}"
                        )));
                    }
                }
                if self.hidden.len() == 2 && self.hidden[1] > self.hidden[0] {
                    return Err(Error::InvalidConfig(
                        "second hidden layer cannot be larger than the first".into(),
                    ));
                }
            }
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig("zero predictor dimensions".into()));
        }
        Ok(())
    }

    /// Short stable description, used in records and tables.
    pub fn describe(&self) -> String {
        match self.kind {
            PredictorKind::Linear => "linear".to_string(),
            PredictorKind::Mlp => format!(
                "mlp{:?}-{}-{}",
                self.hidden,
                match self.activation {
                    Activation::Rectify => "relu",
                    Activation::Sigmoid => "sigmoid",
                },
                match self.output_activation {
                    OutputActivation::None => "none",
                    OutputActivation::Softmax => "softmax",
                }
            ),
        }
    }
}

/// The full MLP search space in its fixed enumeration order.
pub fn enumerate_mlp_grid(input_dim: usize, output_dim: usize) -> Vec<PredictorConfig> {
    let mut hidden_sets: Vec<Vec<usize>> = HIDDEN_SIZES.iter().map(|&h| vec![h]).collect();
    for &h1 in &HIDDEN_SIZES {
        for &h2 in &HIDDEN_SIZES {
            if h2 <= h1 {
                hidden_sets.push(vec![h1, h2]);
            }
        }
    }
    let mut grid = Vec::new();
    for hidden in &hidden_sets {
        for activation in [Activation::Rectify, Activation::Sigmoid] {
            for output_activation in [OutputActivation::None, OutputActivation::Softmax] {
                grid.push(PredictorConfig {
                    kind: PredictorKind::Mlp,
                    hidden: hidden.clone(),
                    activation,
                    output_activation,
                    input_dim,
                    output_dim,
                });
            }
        }
    }
    grid
}

/// Probe targets: coordinates or class ids.
#[derive(Debug, Clone)]
pub enum ProbeTargets<F: Scalar> {
    Positions(Array2<F>),
    Classes { ids: Vec<u32>, num_classes: u32 },
}

impl<F: Scalar> ProbeTargets<F> {
    fn len(&self) -> usize {
        match self {
            ProbeTargets::Positions(p) => p.dim().0,
            ProbeTargets::Classes { ids, .. } => ids.len(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ProbeTargets::Positions(p) => p.dim().1,
            ProbeTargets::Classes { num_classes, .. } => *num_classes as usize,
        }
    }

    fn rows(&self, idxs: &[usize]) -> Array2<F> {
        let d = self.output_dim();
        let mut out = Array2::<F>::zeros((idxs.len(), d));
        match self {
            ProbeTargets::Positions(p) => {
                for (row, &i) in idxs.iter().enumerate() {
                    out.row_mut(row).assign(&p.row(i));
                }
            }
            ProbeTargets::Classes { ids, .. } => {
                for (row, &i) in idxs.iter().enumerate() {
                    out[[row, ids[i] as usize]] = F::one();
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        PredictorTrainConfig {
            lr: 1e-3,
            batch_size: 128,
            max_epochs: 60,
            patience: 8,
        }
    }
}

/// A trained probe: affine layers plus the config that shapes activations.
#[derive(Debug, Clone)]
pub struct TrainedPredictor<F: Scalar> {
    pub config: PredictorConfig,
    pub layers: Vec<Linear<F>>,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

/// Predictions: coordinates per row, or argmax class ids.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions<F: Scalar> {
    Coords(Array2<F>),
    Classes(Vec<u32>),
}

fn softmax_rows<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn softmax_backward_rows<F: Scalar>(p: &Array2<F>, gy: &Array2<F>) -> Array2<F> {
    let mut gx = Array2::<F>::zeros(p.raw_dim());
    for ((mut gx_row, p_row), gy_row) in gx.rows_mut().into_iter().zip(p.rows()).zip(gy.rows()) {
        let dot: F = p_row.iter().zip(gy_row.iter()).map(|(&pv, &gv)| pv * gv).sum();
        for ((g, &pv), &gv) in gx_row.iter_mut().zip(p_row.iter()).zip(gy_row.iter()) {
            *g = pv * (gv - dot);
        }
    }
    gx
}

struct MlpNet<F: Scalar> {
    layers: Vec<Linear<F>>,
}

struct MlpCache<F: Scalar> {
    /// Input to each layer (index 0 = embeddings), then the final output.
    inputs: Vec<Array2<F>>,
    output: Array2<F>,
    /// Softmax output if the config applies one.
    softmaxed: Option<Array2<F>>,
}

impl<F: Scalar> MlpNet<F> {
    fn init(config: &PredictorConfig, seed: u64) -> Self {
        let mut rng = rng_for(seed, "predictor-init", 0);
        let mut dims = vec![config.input_dim];
        dims.extend(&config.hidden);
        dims.push(config.output_dim);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (din, dout) = (w[0], w[1]);
                Linear::new(he_uniform(&mut rng, din, (dout, din)), Array1::zeros(dout))
            })
            .collect();
        MlpNet { layers }
    }

    fn forward(&self, config: &PredictorConfig, x: &Array2<F>) -> MlpCache<F> {
        let mut inputs = vec![x.clone()];
        let n_layers = self.layers.len();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&cur);
            cur = if i + 1 < n_layers {
                match config.activation {
                    Activation::Rectify => relu(&pre),
                    Activation::Sigmoid => sigmoid(&pre),
                }
            } else {
                pre
            };
            if i + 1 < n_layers {
                inputs.push(cur.clone());
            }
        }
        let softmaxed = match config.output_activation {
            OutputActivation::Softmax => Some(softmax_rows(&cur)),
            OutputActivation::None => None,
        };
        MlpCache {
            inputs,
            output: cur,
            softmaxed,
        }
    }

    /// Final network output (after the configured output activation).
    fn output<'a>(cache: &'a MlpCache<F>) -> &'a Array2<F> {
        cache.softmaxed.as_ref().unwrap_or(&cache.output)
    }

    fn backward_and_step(
        &mut self,
        config: &PredictorConfig,
        cache: &MlpCache<F>,
        gout_final: Array2<F>,
        adam: &mut Adam<F>,
    ) {
        let mut g = match &cache.softmaxed {
            Some(p) => softmax_backward_rows(p, &gout_final),
            None => gout_final,
        };
        adam.begin_step();
        let n_layers = self.layers.len();
        let mut grads = Vec::with_capacity(n_layers);
        for i in (0..n_layers).rev() {
            if i + 1 < n_layers {
                // gradient through the hidden activation of layer i's output
                let act_out = &cache.inputs[i + 1];
                g = match config.activation {
                    Activation::Rectify => relu_backward(act_out, &g),
                    Activation::Sigmoid => sigmoid_backward(act_out, &g),
                };
            }
            let (gx, lg) = self.layers[i].backward(&cache.inputs[i], &g);
            grads.push(lg);
            g = gx;
        }
        grads.reverse();
        for (i, (layer, lg)) in self.layers.iter_mut().zip(&grads).enumerate() {
            adam.update(
                &format!("probe.l{i}.weight"),
                layer.weight.view_mut().into_dyn(),
                lg.weight.view().into_dyn(),
            );
            adam.update(
                &format!("probe.l{i}.bias"),
                layer.bias.view_mut().into_dyn(),
                lg.bias.view().into_dyn(),
            );
        }
    }
}

/// Task loss on a batch (mean over samples) and its gradient with respect
/// to the final network output.
fn task_loss_and_grad<F: Scalar>(
    out: &Array2<F>,
    targets: &Array2<F>,
    classification: bool,
) -> (f64, Array2<F>) {
    let n = out.dim().0;
    if classification {
        // softmax cross-entropy on the final output
        let p = softmax_rows(out);
        let mut loss = 0.0f64;
        for (p_row, t_row) in p.rows().into_iter().zip(targets.rows()) {
            for (&pv, &tv) in p_row.iter().zip(t_row.iter()) {
                if tv > F::zero() {
                    loss -= pv.max(F::fromf64(1e-30)).ln().tof64() * tv.tof64();
                }
            }
        }
        let scale = F::fromf64(1.0 / n as f64);
        let mut g = p;
        ndarray::Zip::from(&mut g).and(targets).for_each(|g, &t| *g = (*g - t) * scale);
        (loss / n as f64, g)
    } else {
        let per = out.dim().1;
        let mut loss = 0.0f64;
        let scale = F::fromf64(2.0 / (n * per) as f64);
        let mut g = out.clone();
        ndarray::Zip::from(&mut g).and(targets).for_each(|g, &t| {
            let d = *g - t;
            loss += (d * d).tof64();
            *g = d * scale;
        });
        (loss / (n * per) as f64, g)
    }
}

fn embedding_rows<F: Scalar>(embeddings: &Array2<F>, idxs: &[usize]) -> Array2<F> {
    let d = embeddings.dim().1;
    let mut out = Array2::<F>::zeros((idxs.len(), d));
    for (row, &i) in idxs.iter().enumerate() {
        out.row_mut(row).assign(&embeddings.row(i));
    }
    out
}

/// Trains one probe on frozen embeddings, returning the parameter snapshot
/// at the best validation loss. Fails (rather than silently dropping) on
/// degenerate labels or a non-finite loss.
pub fn train_predictor<F: Scalar>(
    config: &PredictorConfig,
    embeddings: &Array2<F>,
    targets: &ProbeTargets<F>,
    split: &TrainValSplit,
    seed: u64,
    train_cfg: &PredictorTrainConfig,
) -> Result<TrainedPredictor<F>> {
    config.validate()?;
    if embeddings.dim().0 != targets.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} target rows", embeddings.dim().0),
            found: format!("{}", targets.len()),
        });
    }
    if embeddings.dim().1 != config.input_dim {
        return Err(Error::ShapeMismatch {
            expected: format!("input_dim {}", config.input_dim),
            found: format!("{}", embeddings.dim().1),
        });
    }
    let classification = matches!(targets, ProbeTargets::Classes { .. });
    if let ProbeTargets::Classes { ids, .. } = targets {
        let mut seen = std::collections::BTreeSet::new();
        for &i in &split.train {
            seen.insert(ids[i]);
        }
        if seen.len() < 2 {
            return Err(Error::DegenerateLabels(format!(
                "training split carries {} distinct class(es)",
                seen.len()
            )));
        }
    }

    match config.kind {
        PredictorKind::Linear => train_linear(config, embeddings, targets, split, classification),
        PredictorKind::Mlp => train_mlp(
            config,
            embeddings,
            targets,
            split,
            seed,
            train_cfg,
            classification,
        ),
    }
}

fn train_mlp<F: Scalar>(
    config: &PredictorConfig,
    embeddings: &Array2<F>,
    targets: &ProbeTargets<F>,
    split: &TrainValSplit,
    seed: u64,
    train_cfg: &PredictorTrainConfig,
    classification: bool,
) -> Result<TrainedPredictor<F>> {
    let mut net = MlpNet::init(config, seed);
    let mut adam = Adam::new(AdamParams {
        lr: train_cfg.lr,
        ..Default::default()
    });
    let val_x = embedding_rows(embeddings, &split.val);
    let val_t = targets.rows(&split.val);

    let mut order = split.train.to_vec();
    let mut shuffle_rng = rng_for(seed, "predictor-shuffle", 0);
    let mut best: Option<(f64, Vec<Linear<F>>, usize)> = None;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch_no, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let x = embedding_rows(embeddings, chunk);
            let t = targets.rows(chunk);
            let cache = net.forward(config, &x);
            let (loss, gout) = task_loss_and_grad(MlpNet::output(&cache), &t, classification);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            net.backward_and_step(config, &cache, gout, &mut adam);
        }
        epochs_run = epoch + 1;
        let cache = net.forward(config, &val_x);
        let (val_loss, _) = task_loss_and_grad(MlpNet::output(&cache), &val_t, classification);
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, net.layers.clone(), epochs_run));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience {
                break;
            }
        }
    }
    let (best_val_loss, layers, _) = best.expect("at least one epoch runs");
    Ok(TrainedPredictor {
        config: config.clone(),
        layers,
        best_val_loss,
        epochs_run,
    })
}

/// Closed-form ridge least squares with a bias column; the ridge is a
/// numerical guard, not a modeling choice.
fn train_linear<F: Scalar>(
    config: &PredictorConfig,
    embeddings: &Array2<F>,
    targets: &ProbeTargets<F>,
    split: &TrainValSplit,
    classification: bool,
) -> Result<TrainedPredictor<F>> {
    let d = config.input_dim;
    let k = config.output_dim;
    let n = split.train.len();
    if n == 0 {
        return Err(Error::EmptyInput("empty training split".into()));
    }
    // Normal equations in f64: G = [X 1]^T [X 1], B = [X 1]^T Y.
    let dim = d + 1;
    let mut g = vec![0.0f64; dim * dim];
    let mut b = vec![0.0f64; dim * k];
    let t_train = targets.rows(&split.train);
    for (row, &i) in split.train.iter().enumerate() {
        let mut xi = Vec::with_capacity(dim);
        for j in 0..d {
            xi.push(embeddings[[i, j]].tof64());
        }
        xi.push(1.0);
        for a in 0..dim {
            for c in a..dim {
                g[a * dim + c] += xi[a] * xi[c];
            }
            for t in 0..k {
                b[a * k + t] += xi[a] * t_train[[row, t]].tof64();
            }
        }
    }
    for a in 0..dim {
        for c in 0..a {
            g[a * dim + c] = g[c * dim + a];
        }
    }
    let trace: f64 = (0..dim).map(|a| g[a * dim + a]).sum();
    let ridge = 1e-10 * (trace / dim as f64).max(1.0);
    for a in 0..dim {
        g[a * dim + a] += ridge;
    }
    let w = cholesky_solve(&mut g, &b, dim, k)
        .ok_or_else(|| Error::PredictorFailed("normal equations not positive definite".into()))?;

    // pack [k, d] weight + bias
    let mut weight = Array2::<F>::zeros((k, d));
    let mut bias = Array1::<F>::zeros(k);
    for t in 0..k {
        for j in 0..d {
            weight[[t, j]] = F::fromf64(w[j * k + t]);
        }
        bias[t] = F::fromf64(w[d * k + t]);
    }
    let layers = vec![Linear::new(weight, bias)];
    let trained = TrainedPredictor {
        config: config.clone(),
        layers,
        best_val_loss: 0.0,
        epochs_run: 0,
    };
    let val_x = embedding_rows(embeddings, &split.val);
    let val_t = targets.rows(&split.val);
    let out = trained.layers[0].forward(&val_x);
    let (val_loss, _) = task_loss_and_grad(&out, &val_t, classification);
    Ok(TrainedPredictor {
        best_val_loss: val_loss,
        ..trained
    })
}

/// Unblocked Cholesky solve of `G W = B` for symmetric positive definite G
/// (row-major, `dim x dim`); B is `dim x k`. Returns W or None if G is not
/// positive definite.
fn cholesky_solve(g: &mut [f64], b: &[f64], dim: usize, k: usize) -> Option<Vec<f64>> {
    // factor G = L L^T in place (lower triangle)
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = g[i * dim + j];
            for p in 0..j {
                sum -= g[i * dim + p] * g[j * dim + p];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                g[i * dim + j] = sum.sqrt();
            } else {
                g[i * dim + j] = sum / g[j * dim + j];
            }
        }
    }
    let mut w = b.to_vec();
    // forward: L Z = B
    for i in 0..dim {
        for t in 0..k {
            let mut sum = w[i * k + t];
            for p in 0..i {
                sum -= g[i * dim + p] * w[p * k + t];
            }
            w[i * k + t] = sum / g[i * dim + i];
        }
    }
    // backward: L^T W = Z
    for i in (0..dim).rev() {
        for t in 0..k {
            let mut sum = w[i * k + t];
            for p in i + 1..dim {
                sum -= g[p * dim + i] * w[p * k + t];
            }
            w[i * k + t] = sum / g[i * dim + i];
        }
    }
    Some(w)
}

impl<F: Scalar> TrainedPredictor<F> {
    /// Raw final network output (post output activation).
    pub fn raw_output(&self, embeddings: &Array2<F>) -> Result<Array2<F>> {
        if embeddings.dim().1 != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("input_dim {}", self.config.input_dim),
                found: format!("{}", embeddings.dim().1),
            });
        }
        let n_layers = self.layers.len();
        let mut cur = embeddings.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&cur);
            cur = if i + 1 < n_layers {
                match self.config.activation {
                    Activation::Rectify => relu(&pre),
                    Activation::Sigmoid => sigmoid(&pre),
                }
            } else {
                pre
            };
        }
        Ok(match self.config.output_activation {
            OutputActivation::Softmax => softmax_rows(&cur),
            OutputActivation::None => cur,
        })
    }

    /// Task-level predictions: coordinates, or argmax class ids.
    pub fn predict(&self, embeddings: &Array2<F>, classification: bool) -> Result<Predictions<F>> {
        let out = self.raw_output(embeddings)?;
        if classification {
            let ids = out
                .rows()
                .into_iter()
                .map(|row| {
                    let mut best = 0usize;
                    let mut best_v = F::neg_infinity();
                    for (i, &v) in row.iter().enumerate() {
                        if v > best_v {
                            best_v = v;
                            best = i;
                        }
                    }
                    best as u32
                })
                .collect();
            Ok(Predictions::Classes(ids))
        } else {
            Ok(Predictions::Coords(out))
        }
    }

    pub fn to_container(&self) -> crate::weights::WeightsContainer {
        let mut c = crate::weights::WeightsContainer::new();
        for (i, layer) in self.layers.iter().enumerate() {
            c.add(&format!("probe.l{i}.weight"), &layer.weight);
            c.add(&format!("probe.l{i}.bias"), &layer.bias);
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;
    use rand::Rng;

    #[test]
    fn grid_has_exactly_36_unique_valid_members_in_stable_order() {
        let grid = enumerate_mlp_grid(32, 2);
        assert_eq!(grid.len(), 36);
        let mut seen = std::collections::BTreeSet::new();
        for cfg in &grid {
            cfg.validate().unwrap();
            assert!(seen.insert(format!("{cfg:?}")), "duplicate {cfg:?}");
            if cfg.hidden.len() == 2 {
                assert!(cfg.hidden[1] <= cfg.hidden[0]);
            }
        }
        // [32, 64] violates the constraint and must be absent
        assert!(!grid.iter().any(|c| c.hidden == vec![32, 64]));
        assert_eq!(grid, enumerate_mlp_grid(32, 2));
    }

    fn synthetic_linear_data(n: usize, d: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = rng_for(seed, "lin-syn", 0);
        let a = Array2::from_shape_fn((2, d), |_| rng.random_range(-1.0..1.0));
        let b = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let mut y = x.dot(&a.t());
        for mut row in y.rows_mut() {
            row[0] += b[0];
            row[1] += b[1];
        }
        (x, y)
    }

    #[test]
    fn linear_probe_recovers_exactly_linear_targets() {
        let (x, y) = synthetic_linear_data(200, 16, 3);
        let split = TrainValSplit::by_sample(200, 0, "t");
        let config = PredictorConfig::linear(16, 2);
        let trained = train_predictor(
            &config,
            &x,
            &ProbeTargets::Positions(y),
            &split,
            0,
            &PredictorTrainConfig::default(),
        )
        .unwrap();
        assert!(trained.best_val_loss < 1e-8, "val mse {}", trained.best_val_loss);
    }

    #[test]
    fn mlp_overfits_random_labels_with_max_capacity() {
        let n = 50;
        let d = 8;
        let mut rng = rng_for(1, "overfit", 0);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let ids: Vec<u32> = (0..n).map(|_| rng.random_range(0..5u32)).collect();
        let split = TrainValSplit {
            train: (0..n).collect(),
            val: (0..n).collect(),
        };
        let config = PredictorConfig {
            kind: PredictorKind::Mlp,
            hidden: vec![128, 128],
            activation: Activation::Rectify,
            output_activation: OutputActivation::None,
            input_dim: d,
            output_dim: 5,
        };
        let cfg = PredictorTrainConfig {
            lr: 5e-3,
            batch_size: 50,
            max_epochs: 500,
            patience: 500,
        };
        let targets = ProbeTargets::Classes {
            ids: ids.clone(),
            num_classes: 5,
        };
        let trained = train_predictor(&config, &x, &targets, &split, 7, &cfg).unwrap();
        match trained.predict(&x, true).unwrap() {
            Predictions::Classes(pred) => {
                let correct = pred.iter().zip(&ids).filter(|(a, b)| a == b).count();
                assert_eq!(correct, n, "training accuracy must reach 100%");
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn determinism_same_seed_same_val_loss() {
        let (x, y) = synthetic_linear_data(120, 8, 9);
        let split = TrainValSplit::by_sample(120, 2, "t");
        let config = &enumerate_mlp_grid(8, 2)[0];
        let cfg = PredictorTrainConfig {
            max_epochs: 10,
            ..Default::default()
        };
        let t1 = train_predictor(config, &x, &ProbeTargets::Positions(y.clone()), &split, 5, &cfg).unwrap();
        let t2 = train_predictor(config, &x, &ProbeTargets::Positions(y), &split, 5, &cfg).unwrap();
        assert_eq!(t1.best_val_loss.to_bits(), t2.best_val_loss.to_bits());
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        let x = Array2::<f64>::zeros((10, 4));
        let targets = ProbeTargets::Classes {
            ids: vec![3; 10],
            num_classes: 5,
        };
        let split = TrainValSplit::by_sample(10, 0, "t");
        let config = PredictorConfig::linear(4, 5);
        let err = train_predictor(&config, &x, &targets, &split, 0, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(_)), "{err}");
    }

    #[test]
    fn softmax_rows_sum_to_one_and_argmax_is_activation_invariant() {
        let mut rng = rng_for(4, "softmax", 0);
        let x = Array2::from_shape_fn((6, 5), |_| rng.random_range(-2.0..2.0));
        let layer = Linear::new(
            Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0)),
            Array1::zeros(3),
        );
        let mk = |out_act| TrainedPredictor::<f64> {
            config: PredictorConfig {
                kind: PredictorKind::Mlp,
                hidden: vec![],
                activation: Activation::Rectify,
                output_activation: out_act,
                input_dim: 5,
                output_dim: 3,
            },
            layers: vec![layer.clone()],
            best_val_loss: 0.0,
            epochs_run: 0,
        };
        let plain = mk(OutputActivation::None);
        let soft = mk(OutputActivation::Softmax);
        let soft_out = soft.raw_output(&x).unwrap();
        for row in soft_out.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        assert_eq!(
            plain.predict(&x, true).unwrap(),
            soft.predict(&x, true).unwrap()
        );
    }

    #[test]
    fn batch_prediction_equals_concatenated_rows() {
        let (x, y) = synthetic_linear_data(40, 6, 13);
        let split = TrainValSplit::by_sample(40, 0, "t");
        let trained = train_predictor(
            &PredictorConfig::linear(6, 2),
            &x,
            &ProbeTargets::Positions(y),
            &split,
            0,
            &Default::default(),
        )
        .unwrap();
        let full = match trained.predict(&x, false).unwrap() {
            Predictions::Coords(c) => c,
            _ => unreachable!(),
        };
        for i in 0..40 {
            let row = x.row(i).to_owned().insert_axis(Axis(0));
            match trained.predict(&row, false).unwrap() {
                Predictions::Coords(c) => {
                    assert_eq!(c.row(0), full.row(i), "row {i}");
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (x, y) = synthetic_linear_data(20, 6, 2);
        let split = TrainValSplit::by_sample(20, 0, "t");
        let trained = train_predictor(
            &PredictorConfig::linear(6, 2),
            &x,
            &ProbeTargets::Positions(y),
            &split,
            0,
            &Default::default(),
        )
        .unwrap();
        let bad = Array2::<f64>::zeros((3, 7));
        assert!(trained.predict(&bad, false).is_err());
    }
}
