//! Dense feed-forward regression network.
//!
//! Weights for layer `k` are stored as a `dims[k] x dims[k + 1]` matrix so a
//! batch (rows = samples) propagates as `a_{k+1} = act(a_k W_k + b_k)`.
//! Hidden layers use ReLU, the output layer is the identity.
//!
//! ReLU subgradient convention: the derivative at a pre-activation of exactly
//! zero is taken to be 0.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// The surrogate `Y`: a scalar-output multilayer perceptron.
#[derive(Debug, Clone)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    hidden_activation: Activation,
    output_activation: Activation,
    init_seed: u64,
    // Bumped on every parameter mutation; traces remember the value they saw.
    version: u64,
}

impl PartialEq for MlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims
            && self.weights == other.weights
            && self.biases == other.biases
            && self.hidden_activation == other.hidden_activation
            && self.output_activation == other.output_activation
            && self.init_seed == other.init_seed
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidSpec(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if let Some(pos) = layer_dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidSpec(format!(
            "layer dimension {pos} is zero in {layer_dims:?}"
        )));
    }
    if *layer_dims.last().unwrap() != 1 {
        return Err(Error::InvalidSpec(format!(
            "output dimension must be 1, got {layer_dims:?}"
        )));
    }
    Ok(())
}

/// Builds a network with He-style uniform weights: each weight of a layer with
/// fan-in `n` is drawn from `U(-sqrt(6/n), sqrt(6/n))`. Biases start at zero.
pub fn init_mlp(layer_dims: &[usize], seed: u64) -> Result<MlpModel> {
    check_dims(layer_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
            rng.random_range(-limit..limit)
        });
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpModel {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        hidden_activation: Activation::Relu,
        output_activation: Activation::Identity,
        init_seed: seed,
        version: 0,
    })
}

/// Per-layer pre-activations and activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    model_version: u64,
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.pre.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }

    /// Network outputs, one per sample.
    pub fn output(&self) -> Array1<f64> {
        self.post.last().unwrap().column(0).to_owned()
    }
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|&v| v == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|&v| v == 0.0))
    }
}

impl MlpModel {
    /// Assembles a model from explicit parameters, validating every shape.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        init_seed: u64,
    ) -> Result<Self> {
        check_dims(&layer_dims)?;
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::InvalidSpec(format!(
                "expected {layers} layers, got {} weight and {} bias arrays",
                weights.len(),
                biases.len()
            )));
        }
        for (k, pair) in layer_dims.windows(2).enumerate() {
            if weights[k].dim() != (pair[0], pair[1]) || biases[k].len() != pair[1] {
                return Err(Error::InvalidSpec(format!(
                    "layer {k}: weights {:?} / bias {} do not map {} -> {}",
                    weights[k].dim(),
                    biases[k].len(),
                    pair[0],
                    pair[1]
                )));
            }
        }
        let model = MlpModel {
            layer_dims,
            weights,
            biases,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
            init_seed,
            version: 0,
        };
        if !model.parameters_finite() {
            return Err(Error::InvalidSpec("non-finite parameter".into()));
        }
        Ok(model)
    }

    /// All weights zero, output bias `bias`: evaluates to `bias` everywhere.
    pub fn constant(layer_dims: &[usize], bias: f64) -> Result<Self> {
        check_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|p| Array2::zeros((p[0], p[1])))
            .collect();
        let mut biases: Vec<Array1<f64>> =
            layer_dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        biases.last_mut().unwrap()[0] = bias;
        Self::from_parts(layer_dims.to_vec(), weights, biases, 0)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn parameters_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Mutable access to one weight matrix. Invalidates outstanding traces.
    pub fn weights_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        self.version += 1;
        &mut self.weights[layer]
    }

    /// Mutable access to one bias vector. Invalidates outstanding traces.
    pub fn biases_mut(&mut self, layer: usize) -> &mut Array1<f64> {
        self.version += 1;
        &mut self.biases[layer]
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_count() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    /// `Y(x)` for a single input.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x.len())?;
        let mut a = Array1::from(x.to_vec());
        for k in 0..self.layer_count() {
            let act = self.activation(k);
            let mut z = a.dot(&self.weights[k]);
            z += &self.biases[k];
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        Ok(a[0])
    }

    /// Outputs for a batch whose rows are inputs.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for k in 0..self.layer_count() {
            let act = self.activation(k);
            let mut z = a.dot(&self.weights[k]);
            z += &self.biases[k];
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        Ok(a.column(0).to_owned())
    }

    /// Forward pass that keeps everything backpropagation needs.
    pub fn forward_trace(&self, x: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
        self.check_input(x.ncols())?;
        let layers = self.layer_count();
        let mut pre = Vec::with_capacity(layers);
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(layers);
        for k in 0..layers {
            let act = self.activation(k);
            let mut z = match k {
                0 => x.dot(&self.weights[0]),
                _ => post[k - 1].dot(&self.weights[k]),
            };
            z += &self.biases[k];
            let a = z.mapv(|v| act.apply(v));
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardTrace {
            model_version: self.version,
            input: x.to_owned(),
            pre,
            post,
        })
    }

    /// Backpropagates per-sample `dL/dY` through the trace into parameter
    /// gradients of `L`.
    pub fn backward_params(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<Gradients> {
        if trace.model_version != self.version || trace.layer_count() != self.layer_count() {
            return Err(Error::StaleTrace {
                model: self.version,
                trace: trace.model_version,
            });
        }
        if upstream.len() != trace.batch_size() {
            return Err(Error::Shape {
                expected: trace.batch_size(),
                got: upstream.len(),
            });
        }
        let layers = self.layer_count();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];

        let out_act = self.output_activation;
        let mut delta = Array2::from_shape_fn((upstream.len(), 1), |(i, _)| {
            upstream[i] * out_act.derivative(trace.pre[layers - 1][[i, 0]])
        });
        for k in (0..layers).rev() {
            let input = if k == 0 {
                trace.input.view()
            } else {
                trace.post[k - 1].view()
            };
            gw[k] = input.t().dot(&delta);
            gb[k] = delta.sum_axis(Axis(0));
            if k > 0 {
                let act = self.activation(k - 1);
                let mut back = delta.dot(&self.weights[k].t());
                back.zip_mut_with(&trace.pre[k - 1], |d, &z| *d *= act.derivative(z));
                delta = back;
            }
        }
        Ok(Gradients {
            weights: gw,
            biases: gb,
        })
    }

    /// `∇ₓY(x)` by backpropagation to the input.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.value_and_input_gradient(x).map(|(_, g)| g)
    }

    /// `Y(x)` together with `∇ₓY(x)`, sharing one forward pass.
    pub fn value_and_input_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x.len())?;
        let layers = self.layer_count();
        let mut pre: Vec<Array1<f64>> = Vec::with_capacity(layers);
        let mut a = Array1::from(x.to_vec());
        for k in 0..layers {
            let act = self.activation(k);
            let mut z = a.dot(&self.weights[k]);
            z += &self.biases[k];
            a = z.mapv(|v| act.apply(v));
            pre.push(z);
        }
        let value = a[0];
        let mut delta = Array1::from_elem(1, self.output_activation.derivative(pre[layers - 1][0]));
        for k in (0..layers).rev() {
            let mut back = self.weights[k].dot(&delta);
            if k > 0 {
                let act = self.activation(k - 1);
                back.zip_mut_with(&pre[k - 1], |d, &z| *d *= act.derivative(z));
            }
            delta = back;
        }
        Ok((value, delta.to_vec()))
    }

    fn apply_update(&mut self, step: &Gradients) {
        self.version += 1;
        for (w, g) in self.weights.iter_mut().zip(&step.weights) {
            *w -= g;
        }
        for (b, g) in self.biases.iter_mut().zip(&step.biases) {
            *b -= g;
        }
    }
}

/// Hyperparameters of mini-batch SGD with step-decayed learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_period_epochs: usize,
    pub batch_size: usize,
    /// Relative change of the training objective over `stop_window_epochs`
    /// below which training halts.
    pub stop_tol: f64,
    pub stop_window_epochs: usize,
    pub max_epochs: usize,
    /// Classical momentum coefficient; 0 is plain SGD.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.01,
            lr_decay_factor: 10.0,
            lr_decay_period_epochs: 50,
            batch_size: 256,
            stop_tol: 0.001,
            stop_window_epochs: 10,
            max_epochs: 300,
            momentum: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("train: {msg}")));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if !(self.lr_decay_factor > 1.0 && self.lr_decay_factor.is_finite()) {
            return bad("lr_decay_factor must exceed 1");
        }
        if self.lr_decay_period_epochs == 0 {
            return bad("lr_decay_period_epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.stop_tol > 0.0) {
            return bad("stop_tol must be positive");
        }
        if self.stop_window_epochs == 0 {
            return bad("stop_window_epochs must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }

    /// `initial_lr / decay_factor^floor(epoch / period)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let drops = (epoch / self.lr_decay_period_epochs) as i32;
        self.initial_lr / self.lr_decay_factor.powi(drops)
    }
}

/// Samples with per-sample objective weights: the loss is `Σ wᵢ (Y(xᵢ) − zᵢ)²`.
#[derive(Debug, Clone)]
pub struct WeightedSamples {
    pub inputs: Array2<f64>,
    pub targets: Array1<f64>,
    pub weights: Array1<f64>,
}

impl WeightedSamples {
    /// Uniform weights `1/n`: the plain mean squared error.
    pub fn uniform(inputs: Array2<f64>, targets: Array1<f64>) -> Result<Self> {
        let n = targets.len();
        let w = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        Self::new(inputs, targets, Array1::from_elem(n, w))
    }

    pub fn new(inputs: Array2<f64>, targets: Array1<f64>, weights: Array1<f64>) -> Result<Self> {
        if inputs.nrows() != targets.len() || targets.len() != weights.len() {
            return Err(Error::Shape {
                expected: inputs.nrows(),
                got: targets.len().min(weights.len()),
            });
        }
        Ok(WeightedSamples {
            inputs,
            targets,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// The weighted objective at the current model.
    pub fn loss(&self, model: &MlpModel) -> Result<f64> {
        let y = model.forward_batch(self.inputs.view())?;
        Ok(y.iter()
            .zip(&self.targets)
            .zip(&self.weights)
            .map(|((y, z), w)| w * (y - z) * (y - z))
            .sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Training objective accumulated over the epoch's mini-batches.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// True when the relative-change rule fired before `max_epochs`.
    pub converged: bool,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

fn relative_change_below(current: f64, previous: f64, tol: f64) -> bool {
    if previous == 0.0 {
        return current == 0.0;
    }
    ((current - previous) / previous).abs() < tol
}

/// Mini-batch SGD on the weighted squared-error objective.
///
/// Each epoch visits a fresh permutation of the samples. A batch `B` takes the
/// step `-lr · ∇ (n/|B|) Σ_{i∈B} wᵢ eᵢ²`, an unbiased estimate of the full
/// objective gradient. The recorded epoch loss is `Σ wᵢ eᵢ²` with each residual
/// taken when its batch was visited. Training halts once
/// `|L(e) − L(e − window)| / L(e − window) < stop_tol` or at `max_epochs`.
pub fn train(
    mut model: MlpModel,
    data: &WeightedSamples,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    if data.inputs.ncols() != model.input_dim() {
        return Err(Error::Shape {
            expected: model.input_dim(),
            got: data.inputs.ncols(),
        });
    }
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity: Option<Gradients> = None;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        converged: false,
    };

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = data.inputs.select(Axis(0), batch);
            let trace = model.forward_trace(x.view())?;
            let out = trace.post.last().unwrap();
            let scale = n as f64 / batch.len() as f64;
            let mut upstream = Vec::with_capacity(batch.len());
            for (row, &i) in batch.iter().enumerate() {
                let e = out[[row, 0]] - data.targets[i];
                let w = data.weights[i];
                epoch_loss += w * e * e;
                upstream.push(2.0 * scale * w * e);
            }
            if !epoch_loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    loss: epoch_loss,
                });
            }
            let mut grads = model.backward_params(&trace, &upstream)?;
            if cfg.momentum > 0.0 {
                let v = velocity.get_or_insert_with(|| Gradients {
                    weights: grads.weights.iter().map(|g| Array2::zeros(g.dim())).collect(),
                    biases: grads.biases.iter().map(|g| Array1::zeros(g.len())).collect(),
                });
                for (v, g) in v.weights.iter_mut().zip(&grads.weights) {
                    v.zip_mut_with(g, |v, &g| *v = cfg.momentum * *v + lr * g);
                }
                for (v, g) in v.biases.iter_mut().zip(&grads.biases) {
                    v.zip_mut_with(g, |v, &g| *v = cfg.momentum * *v + lr * g);
                }
                model.apply_update(v);
            } else {
                for g in &mut grads.weights {
                    *g *= lr;
                }
                for g in &mut grads.biases {
                    *g *= lr;
                }
                model.apply_update(&grads);
            }
        }
        if !model.parameters_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                loss: epoch_loss,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            loss: epoch_loss,
        });
        log::debug!("epoch {epoch}: lr {lr:e} loss {epoch_loss:.6e}");
        if epoch >= cfg.stop_window_epochs {
            let previous = history.epochs[epoch - cfg.stop_window_epochs].loss;
            if relative_change_below(epoch_loss, previous, cfg.stop_tol) {
                history.converged = true;
                break;
            }
        }
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn linear(w: f64, b: f64) -> MlpModel {
        MlpModel::from_parts(vec![1, 1], vec![array![[w]]], vec![array![b]], 0).unwrap()
    }

    #[test]
    fn paper_shape_init() {
        let m = init_mlp(&[5, 512, 512, 512, 512, 512, 1], 7).unwrap();
        let shapes: Vec<_> = m.weights().iter().map(|w| w.dim()).collect();
        assert_eq!(
            shapes,
            vec![(5, 512), (512, 512), (512, 512), (512, 512), (512, 512), (512, 1)]
        );
        assert!(m.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn minimal_network_and_determinism() {
        let m = init_mlp(&[1, 1], 0).unwrap();
        assert_eq!(m.layer_count(), 1);
        assert_eq!(m.biases()[0][0], 0.0);
        let a = init_mlp(&[3, 16, 8, 1], 42).unwrap();
        let b = init_mlp(&[3, 16, 8, 1], 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_mlp(&[3, 16, 8, 1], 43).unwrap());
    }

    #[test]
    fn init_weights_within_he_range() {
        let m = init_mlp(&[20, 40, 1], 3).unwrap();
        let limit = (6.0f64 / 20.0).sqrt();
        assert!(m.weights()[0].iter().all(|v| v.abs() < limit));
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(matches!(init_mlp(&[3, 0, 1], 0), Err(Error::InvalidSpec(_))));
        assert!(matches!(init_mlp(&[3], 0), Err(Error::InvalidSpec(_))));
        assert!(matches!(init_mlp(&[3, 4, 2], 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn zero_network_outputs_bias() {
        let m = MlpModel::constant(&[4, 8, 8, 1], 2.5).unwrap();
        assert_eq!(m.forward(&[0.3, -1.0, 7.0, 2.0]).unwrap(), 2.5);
        assert_eq!(m.input_gradient(&[0.3, -1.0, 7.0, 2.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn linear_case() {
        let m = linear(-1.75, 0.0);
        assert_eq!(m.forward(&[2.0]).unwrap(), -3.5);
        assert_eq!(m.input_gradient(&[123.0]).unwrap(), vec![-1.75]);
        assert_eq!(m.input_gradient(&[-4.0]).unwrap(), vec![-1.75]);
    }

    #[test]
    fn repeated_forward_is_deterministic() {
        let m = init_mlp(&[5, 32, 32, 1], 9).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        let first = m.forward(&x).unwrap();
        for _ in 0..100 {
            assert_eq!(m.forward(&x).unwrap().to_bits(), first.to_bits());
        }
    }

    #[test]
    fn forward_shape_error() {
        let m = init_mlp(&[3, 4, 1], 0).unwrap();
        assert!(matches!(
            m.forward(&[1.0, 2.0]),
            Err(Error::Shape { expected: 3, got: 2 })
        ));
        assert!(m.input_gradient(&[1.0; 4]).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let m = init_mlp(&[3, 10, 10, 1], 5).unwrap();
        let x = array![[0.1, 0.5, -0.2], [1.0, 0.0, 0.3]];
        let y = m.forward_batch(x.view()).unwrap();
        for i in 0..2 {
            let single = m.forward(x.row(i).as_slice().unwrap()).unwrap();
            assert!((single - y[i]).abs() < 1e-14);
        }
        let trace = m.forward_trace(x.view()).unwrap();
        assert_eq!(trace.layer_count(), m.layer_count());
        assert_eq!(trace.output(), y);
    }

    #[test]
    fn hand_derivative_linear_loss() {
        // L = (w x − z)², x = 1, z = 0, w = 2: dL/dw = 2 (w x − z) x = 4.
        let m = linear(2.0, 0.0);
        let x = array![[1.0]];
        let trace = m.forward_trace(x.view()).unwrap();
        let e = trace.output()[0] - 0.0;
        let g = m.backward_params(&trace, &[2.0 * e]).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 4.0);
        assert_eq!(g.biases[0][0], 4.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = init_mlp(&[4, 8, 8, 1], 1).unwrap();
        let x = Array2::from_elem((3, 4), 0.5);
        let trace = m.forward_trace(x.view()).unwrap();
        let g = m.backward_params(&trace, &[0.0; 3]).unwrap();
        assert!(g.is_zero());
        for (gw, w) in g.weights.iter().zip(m.weights()) {
            assert_eq!(gw.dim(), w.dim());
        }
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut m = init_mlp(&[2, 4, 1], 1).unwrap();
        let x = Array2::from_elem((1, 2), 0.5);
        let trace = m.forward_trace(x.view()).unwrap();
        m.biases_mut(0)[0] += 1.0;
        assert!(matches!(
            m.backward_params(&trace, &[1.0]),
            Err(Error::StaleTrace { .. })
        ));
    }

    #[test]
    fn relu_kink_has_zero_derivative() {
        // Hidden pre-activation exactly 0 at x = 0 ⇒ subgradient 0 ⇒ ∇ = 0.
        let m = MlpModel::from_parts(
            vec![1, 1, 1],
            vec![array![[1.0]], array![[3.0]]],
            vec![array![0.0], array![0.0]],
            0,
        )
        .unwrap();
        assert_eq!(m.input_gradient(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(m.input_gradient(&[1e-3]).unwrap(), vec![3.0]);
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(0), 0.01);
        assert_eq!(cfg.learning_rate(49), 0.01);
        assert!((cfg.learning_rate(50) - 0.001).abs() < 1e-18);
        assert!((cfg.learning_rate(100) - 0.0001).abs() < 1e-19);
        for e in 0..400 {
            let k = (e / cfg.lr_decay_period_epochs) as i32;
            assert_eq!(cfg.learning_rate(e) * cfg.lr_decay_factor.powi(k), cfg.initial_lr);
        }
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig {
            lr_decay_factor: 1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            stop_tol: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn fixed_point_stops_within_window() {
        let model = init_mlp(&[2, 6, 1], 4).unwrap();
        let x = Array2::from_shape_fn((64, 2), |(i, j)| (i * 2 + j) as f64 / 128.0);
        let z = model.forward_batch(x.view()).unwrap();
        let data = WeightedSamples::uniform(x, z).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (trained, history) = train(model.clone(), &data, &cfg, 0).unwrap();
        assert!(history.converged);
        assert!(history.epochs.len() <= cfg.stop_window_epochs + 1);
        assert_eq!(trained.weights(), model.weights());
    }

    #[test]
    fn divergence_is_reported() {
        let model = init_mlp(&[1, 8, 1], 4).unwrap();
        let x = Array2::from_shape_fn((32, 1), |(i, _)| i as f64);
        let z = x.column(0).mapv(|v| 1e3 * v);
        let data = WeightedSamples::uniform(x, z).unwrap();
        let cfg = TrainConfig {
            initial_lr: 10.0,
            batch_size: 8,
            max_epochs: 50,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(model, &data, &cfg, 0),
            Err(Error::TrainingDiverged { .. })
        ));
    }

    #[test]
    fn training_is_reproducible() {
        let x = Array2::from_shape_fn((200, 2), |(i, j)| ((i * 7 + j * 3) % 50) as f64 / 50.0);
        let z = x.map_axis(Axis(1), |r| r[0] * r[0] - r[1]);
        let data = WeightedSamples::uniform(x, z).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            max_epochs: 20,
            ..TrainConfig::default()
        };
        let m = init_mlp(&[2, 16, 16, 1], 1).unwrap();
        let (a, ha) = train(m.clone(), &data, &cfg, 5).unwrap();
        let (b, hb) = train(m, &data, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }
}
