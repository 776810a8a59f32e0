//! Small dense classifiers trained with cross-entropy and SGD with momentum.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_HIDDEN_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Softmax regression, `xW + b`.
    Linear,
    /// One ReLU hidden layer followed by a linear head.
    Mlp { hidden_width: usize },
}

/// Affine layer `y = xW + b` with `W` stored `fan_in x fan_out`.
///
/// Gradient and velocity buffers reuse this type, so they always have the
/// shape of the parameters they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), &mut draw);
        let bias = Array1::from_shape_simple_fn(fan_out, &mut draw);
        Self { weight, bias }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.nrows(), self.weight.ncols())
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.weight.dim() == other.weight.dim() && self.bias.len() == other.bias.len()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    architecture: Architecture,
    input_dim: usize,
    class_count: usize,
    layers: Vec<Dense>,
}

/// Per-layer parameter gradients, aligned with `Classifier::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Classifier {
    /// Uniform `[-sqrt(1/fan_in), sqrt(1/fan_in)]` initialisation.
    pub fn new(architecture: Architecture, input_dim: usize, class_count: usize, seed: u64) -> Result<Self> {
        Self::check_shape(architecture, input_dim, class_count)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = match architecture {
            Architecture::Linear => vec![Dense::uniform(input_dim, class_count, &mut rng)],
            Architecture::Mlp { hidden_width } => vec![
                Dense::uniform(input_dim, hidden_width, &mut rng),
                Dense::uniform(hidden_width, class_count, &mut rng),
            ],
        };
        Ok(Self {
            architecture,
            input_dim,
            class_count,
            layers,
        })
    }

    pub fn zeros(architecture: Architecture, input_dim: usize, class_count: usize) -> Result<Self> {
        let mut model = Self::new(architecture, input_dim, class_count, 0)?;
        for layer in &mut model.layers {
            *layer = layer.zeros_like();
        }
        Ok(model)
    }

    /// Builds a classifier from explicit layers (one for linear, two for MLP).
    pub fn from_layers(architecture: Architecture, layers: Vec<Dense>) -> Result<Self> {
        let expected = match architecture {
            Architecture::Linear => 1,
            Architecture::Mlp { .. } => 2,
        };
        if layers.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{architecture:?} needs {expected} layers, got {}",
                layers.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.ncols() {
                return Err(Error::DimensionMismatch(format!("layer {i} bias does not match weight columns")));
            }
        }
        if let (Architecture::Mlp { hidden_width }, [hidden, head]) = (architecture, layers.as_slice()) {
            if hidden.weight.ncols() != hidden_width || head.weight.nrows() != hidden_width {
                return Err(Error::DimensionMismatch("hidden width does not match layers".into()));
            }
        }
        let input_dim = layers[0].weight.nrows();
        let class_count = layers[layers.len() - 1].weight.ncols();
        Self::check_shape(architecture, input_dim, class_count)?;
        Ok(Self {
            architecture,
            input_dim,
            class_count,
            layers,
        })
    }

    fn check_shape(architecture: Architecture, input_dim: usize, class_count: usize) -> Result<()> {
        if input_dim == 0 || class_count == 0 {
            return Err(Error::InvalidParams("input_dim and class_count must be positive".into()));
        }
        if let Architecture::Mlp { hidden_width: 0 } = architecture {
            return Err(Error::InvalidParams("hidden_width must be positive".into()));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// The output (fully connected) layer.
    pub fn final_layer(&self) -> &Dense {
        &self.layers[self.layers.len() - 1]
    }

    pub fn layer_names(&self) -> &'static [&'static str] {
        match self.architecture {
            Architecture::Linear => &["fc"],
            Architecture::Mlp { .. } => &["hidden", "fc"],
        }
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Logits, one row per input row.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(match self.architecture {
            Architecture::Linear => self.layers[0].apply(x),
            Architecture::Mlp { .. } => {
                let hidden = self.layers[0].apply(x).mapv_into(relu);
                self.layers[1].apply(&hidden)
            }
        })
    }

    /// Gradients of `sum(grad_logits * forward(x))` with respect to every
    /// parameter.
    pub fn backward(&self, x: &Array2<f64>, grad_logits: &Array2<f64>) -> Result<Gradients> {
        self.check_input(x)?;
        if grad_logits.dim() != (x.nrows(), self.class_count) {
            return Err(Error::DimensionMismatch(format!(
                "grad_logits is {:?}, expected ({}, {})",
                grad_logits.dim(),
                x.nrows(),
                self.class_count
            )));
        }
        let layers = match self.architecture {
            Architecture::Linear => vec![affine_grad(x, grad_logits)],
            Architecture::Mlp { .. } => {
                let pre = self.layers[0].apply(x);
                let hidden = pre.mapv(relu);
                let head = affine_grad(&hidden, grad_logits);
                let mut grad_hidden = grad_logits.dot(&self.layers[1].weight.t());
                grad_hidden.zip_mut_with(&pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
                vec![affine_grad(x, &grad_hidden), head]
            }
        };
        Ok(Gradients { layers })
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Every parameter as `{name.weight|name.bias -> {shape, values}}`.
    pub fn export_weights(&self) -> BTreeMap<String, TensorDump> {
        let mut out = BTreeMap::new();
        for (name, layer) in self.layer_names().iter().zip(&self.layers) {
            out.insert(format!("{name}.weight"), TensorDump::from_matrix(&layer.weight));
            out.insert(
                format!("{name}.bias"),
                TensorDump {
                    shape: vec![layer.bias.len()],
                    values: layer.bias.to_vec(),
                },
            );
        }
        out
    }

    pub fn weights_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.export_weights())?)
    }
}

/// Row-major dump of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDump {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorDump {
    pub fn from_matrix(m: &Array2<f64>) -> Self {
        Self {
            shape: vec![m.nrows(), m.ncols()],
            values: m.iter().copied().collect(),
        }
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn affine_grad(input: &Array2<f64>, grad_out: &Array2<f64>) -> Dense {
    Dense {
        weight: input.t().dot(grad_out),
        bias: grad_out.sum_axis(Axis(0)),
    }
}

fn check_labels(logits: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.nrows() {
        return Err(Error::LengthMismatch {
            what: "labels",
            got: labels.len(),
            expected: logits.nrows(),
        });
    }
    let classes = logits.ncols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// `-log softmax(logits)[label]` for every row.
pub fn per_sample_losses(logits: &Array2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    Ok(logits
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &label)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            max + log_sum - row[label]
        })
        .collect())
}

/// Mean cross-entropy and its gradient `(softmax - onehot) / rows`.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let losses = per_sample_losses(logits, labels)?;
    let rows = logits.nrows();
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut grad = softmax(logits);
    for (i, &label) in labels.iter().enumerate() {
        grad[[i, label]] -= 1.0;
    }
    grad.mapv_inplace(|g| g / rows as f64);
    Ok((losses.iter().sum::<f64>() / rows as f64, grad))
}

/// Classical momentum SGD state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Dense>,
}

impl OptimizerState {
    /// Zero velocity matching `model`'s parameter shapes.
    pub fn new(model: &Classifier, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: model.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn velocity(&self) -> &[Dense] {
        &self.velocity
    }
}

/// `v <- momentum * v + g; w <- w - lr * v` for every parameter.
pub fn sgd_momentum_step(model: &mut Classifier, opt: &mut OptimizerState, grads: &Gradients) -> Result<()> {
    let shapes_match = grads.layers.len() == model.layers.len()
        && opt.velocity.len() == model.layers.len()
        && model
            .layers
            .iter()
            .zip(&grads.layers)
            .zip(&opt.velocity)
            .all(|((p, g), v)| p.same_shape(g) && p.same_shape(v));
    if !shapes_match {
        return Err(Error::DimensionMismatch("gradient or velocity shapes do not match parameters".into()));
    }
    let (lr, mu) = (opt.learning_rate, opt.momentum);
    for ((param, grad), vel) in model.layers.iter_mut().zip(&grads.layers).zip(&mut opt.velocity) {
        vel.weight.zip_mut_with(&grad.weight, |v, &g| *v = mu * *v + g);
        vel.bias.zip_mut_with(&grad.bias, |v, &g| *v = mu * *v + g);
        param.weight.zip_mut_with(&vel.weight, |w, &v| *w -= lr * v);
        param.bias.zip_mut_with(&vel.bias, |w, &v| *w -= lr * v);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy (argmax, ties to the lower class) and mean cross-entropy.
pub fn evaluate(model: &Classifier, x: &Array2<f64>, labels: &[usize]) -> Result<Evaluation> {
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let logits = model.forward(x)?;
    let (loss, _) = cross_entropy(&logits, labels)?;
    Ok(Evaluation {
        accuracy: accuracy(&logits, labels),
        loss,
    })
}

pub(crate) fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let correct = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &label)| argmax(row.view()) == label)
        .count();
    correct as f64 / labels.len() as f64
}
