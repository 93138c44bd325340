//! Random-feature backbone of the ensemble deep RVFL network.
//!
//! Layer 1 maps the raw input through a fixed random projection; every later
//! layer sees the previous hidden features concatenated with the raw input
//! again. Each layer exposes its design matrix `[H_l | X]` to a closed-form
//! output head, and the heads are fused after a row-wise softmax.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Swish,
}

impl Activation {
    const LEAKY_SLOPE: f64 = 0.01;

    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v >= 0.0 {
                    v
                } else {
                    Self::LEAKY_SLOPE * v
                }
            }
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Swish => v * sigmoid(v),
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Ridge strength: one value shared by all layers, or one per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerLambda {
    Shared(f64),
    PerLayer(Vec<f64>),
}

impl Default for LayerLambda {
    fn default() -> Self {
        LayerLambda::Shared(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub layers: usize,
    pub nodes: usize,
    /// Raw feature dimension `s`. Filled from the dataset when left at 0.
    #[serde(default)]
    pub input_dim: usize,
    /// Class load `m`, fixed for the whole stream. Filled from the dataset when 0.
    #[serde(default)]
    pub classes: usize,
    pub activation: Activation,
    #[serde(default)]
    pub lambda: LayerLambda,
    pub seed: u64,
    /// Z-score inputs with statistics frozen after the first batch.
    #[serde(default)]
    pub standardize: bool,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.nodes == 0 || self.input_dim == 0 || self.classes == 0 {
            return Err(Error::contract(format!(
                "network sizes must be >= 1 (layers={}, nodes={}, input_dim={}, classes={})",
                self.layers, self.nodes, self.input_dim, self.classes
            )));
        }
        match &self.lambda {
            LayerLambda::Shared(l) if !(*l > 0.0 && l.is_finite()) => {
                Err(Error::contract(format!("lambda must be positive, got {l}")))
            }
            LayerLambda::PerLayer(v) if v.len() != self.layers => Err(Error::contract(format!(
                "{} per-layer lambdas given for {} layers",
                v.len(),
                self.layers
            ))),
            LayerLambda::PerLayer(v) if v.iter().any(|l| !(*l > 0.0 && l.is_finite())) => {
                Err(Error::contract("every per-layer lambda must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Width `s + N` of every layer's design matrix.
    pub fn feature_dim(&self) -> usize {
        self.input_dim + self.nodes
    }

    pub fn lambda_for(&self, layer: usize) -> f64 {
        match &self.lambda {
            LayerLambda::Shared(l) => *l,
            LayerLambda::PerLayer(v) => v[layer],
        }
    }
}

/// Frozen hidden-layer projections. `layers[0]` is `s x N`, the rest `(s+N) x N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomWeights {
    layers: Vec<Array2<f64>>,
}

impl RandomWeights {
    pub fn layer(&self, l: usize) -> &Array2<f64> {
        &self.layers[l]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Builds weights from explicit matrices; shapes are checked against `config`.
    pub fn from_matrices(config: &NetworkConfig, layers: Vec<Array2<f64>>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layers {
            return Err(Error::contract(format!(
                "{} weight matrices for {} layers",
                layers.len(),
                config.layers
            )));
        }
        for (l, w) in layers.iter().enumerate() {
            let rows = if l == 0 { config.input_dim } else { config.feature_dim() };
            if w.dim() != (rows, config.nodes) {
                return Err(Error::contract(format!(
                    "layer {l} weights are {:?}, expected ({rows}, {})",
                    w.dim(),
                    config.nodes
                )));
            }
        }
        Ok(RandomWeights { layers })
    }
}

/// Draws every hidden projection from uniform(-1, 1) with a ChaCha8 stream
/// seeded by `config.seed`.
pub fn init_random_weights(config: &NetworkConfig) -> Result<RandomWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layers = (0..config.layers)
        .map(|l| {
            let rows = if l == 0 { config.input_dim } else { config.feature_dim() };
            Array2::from_shape_simple_fn((rows, config.nodes), || rng.random_range(-1.0..1.0))
        })
        .collect();
    Ok(RandomWeights { layers })
}

/// Design matrix `[H_l | X]` of one layer for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub layer: usize,
    pub batch: Option<usize>,
    pub d: Array2<f64>,
}

impl FeatureBatch {
    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.d.view()
    }

    pub fn rows(&self) -> usize {
        self.d.nrows()
    }
}

/// Runs the input through all layers in order and returns one design matrix
/// per layer.
pub fn extract_features(
    x: ArrayView2<f64>,
    weights: &RandomWeights,
    config: &NetworkConfig,
) -> Result<Vec<FeatureBatch>> {
    if x.ncols() != config.input_dim {
        return Err(Error::contract(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            config.input_dim
        )));
    }
    if weights.len() != config.layers {
        return Err(Error::contract("weights do not match the layer count"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("input batch has non-finite entries"));
    }

    let mut out: Vec<FeatureBatch> = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let pre = match out.last() {
            None => x.dot(weights.layer(0)),
            // The previous design matrix is exactly [H_{l-1} | X].
            Some(prev) => prev.d.dot(weights.layer(l)),
        };
        let hidden = pre.mapv(|v| config.activation.apply(v));
        if hidden.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("activation produced non-finite output").at_layer(l));
        }
        let d = concatenate(Axis(1), &[hidden.view(), x])
            .map_err(|e| Error::contract(format!("feature concatenation failed: {e}")))?;
        out.push(FeatureBatch { layer: l, batch: None, d });
    }
    Ok(out)
}

/// Per-feature z-score with statistics captured once and then frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStandardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl InputStandardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::contract("cannot fit a standardizer on an empty batch"));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Ok(InputStandardizer { mean, scale })
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

/// Frozen weights plus optional input scaling; maps raw rows to per-layer
/// design matrices.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: NetworkConfig,
    pub weights: RandomWeights,
    pub standardizer: Option<InputStandardizer>,
}

impl Backbone {
    /// Draws the random weights. When `config.standardize` is set, the
    /// scaling statistics come from `first_batch` and stay fixed.
    pub fn new(config: NetworkConfig, first_batch: ArrayView2<f64>) -> Result<Self> {
        let weights = init_random_weights(&config)?;
        let standardizer = if config.standardize {
            Some(InputStandardizer::fit(first_batch)?)
        } else {
            None
        };
        Ok(Backbone {
            config,
            weights,
            standardizer,
        })
    }

    /// One design matrix per layer.
    pub fn features(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        let scaled;
        let x = match &self.standardizer {
            Some(s) => {
                scaled = s.apply(x);
                scaled.view()
            }
            None => x,
        };
        Ok(extract_features(x, &self.weights, &self.config)?
            .into_iter()
            .map(|f| f.d)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    Mean,
    Median,
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Softmax of every learner's logits, fused element-wise by mean or median.
/// Median outputs are renormalized so rows sum to one.
pub fn ensemble_decision(logits: &[Array2<f64>], mode: EnsembleMode) -> Result<Array2<f64>> {
    let probs: Vec<Array2<f64>> = logits.iter().map(|z| softmax_rows(z.view())).collect();
    fuse_probabilities(&probs, mode)
}

/// Fuses already-softmaxed learner outputs.
pub fn fuse_probabilities(probs: &[Array2<f64>], mode: EnsembleMode) -> Result<Array2<f64>> {
    let first = probs
        .first()
        .ok_or_else(|| Error::contract("ensemble needs at least one learner"))?;
    if probs.iter().any(|p| p.dim() != first.dim()) {
        return Err(Error::contract("ensemble members disagree on output shape"));
    }
    match mode {
        EnsembleMode::Mean => {
            let mut acc = Array2::<f64>::zeros(first.dim());
            for p in probs {
                acc += p;
            }
            Ok(acc / probs.len() as f64)
        }
        EnsembleMode::Median => {
            let (rows, cols) = first.dim();
            let mut out = Array2::<f64>::zeros((rows, cols));
            let mut scratch = Vec::with_capacity(probs.len());
            for i in 0..rows {
                for j in 0..cols {
                    scratch.clear();
                    scratch.extend(probs.iter().map(|p| p[[i, j]]));
                    scratch.sort_by(|a, b| a.total_cmp(b));
                    let n = scratch.len();
                    out[[i, j]] = if n % 2 == 1 {
                        scratch[n / 2]
                    } else {
                        0.5 * (scratch[n / 2 - 1] + scratch[n / 2])
                    };
                }
                let mut row = out.row_mut(i);
                let sum = row.sum();
                row /= sum;
            }
            Ok(out)
        }
    }
}

/// Index of the row maximum; ties go to the lowest index.
pub fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}
