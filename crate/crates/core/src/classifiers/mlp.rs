//! Multilayer perceptron with softmax output, trained by mini-batch SGD on
//! cross-entropy. Inputs are standardised internally.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::sorted_classes;
use super::ClassifierError;
use crate::data::{ClassId, FeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)` and `z`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Dropout rate on hidden activations during training.
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Passes over the training set.
    pub iterations: usize,
    pub seed: u64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            hidden: vec![30, 30],
            activation: Activation::Sigmoid,
            dropout: 0.0,
            learning_rate: 0.1,
            batch_size: 50,
            iterations: 100,
            seed: 0,
        }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(ClassifierError::InvalidSpec("MLP needs at least one non-empty hidden layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ClassifierError::InvalidSpec(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::InvalidSpec("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(ClassifierError::InvalidSpec("batch size and iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Fully connected network; layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    activation: Activation,
    /// Row-major `out x in` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Dropout multipliers per hidden layer for one sample.
pub type DropoutMasks = Vec<Vec<f64>>;

impl Network {
    /// Glorot-uniform initialisation.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            sizes: sizes.to_vec(),
            activation,
            weights,
            biases,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// All weights then all biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&params[at..at + nw]);
            at += nw;
            b.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    fn layers(&self) -> usize {
        self.weights.len()
    }

    /// Returns pre-activations and activations of every layer; the last
    /// activation is the softmax output.
    fn forward_full(&self, x: &[f64], masks: Option<&DropoutMasks>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut zs = Vec::with_capacity(self.layers());
        let mut acts = Vec::with_capacity(self.layers() + 1);
        acts.push(x.to_vec());
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &acts[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                    row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>() + self.biases[l][o]
                })
                .collect();
            let a = if l + 1 == self.layers() {
                softmax(&z)
            } else {
                let mut a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
                if let Some(m) = masks {
                    for (ai, mi) in a.iter_mut().zip(&m[l]) {
                        *ai *= mi;
                    }
                }
                a
            };
            zs.push(z);
            acts.push(a);
        }
        (zs, acts)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_full(x, None).1.pop().expect("output layer")
    }

    /// Mean cross-entropy over the rows and its gradient w.r.t. [`Network::params`].
    pub fn loss_and_gradient(
        &self,
        x: &FeatureMatrix,
        rows: &[usize],
        targets: &[usize],
        masks: Option<&[DropoutMasks]>,
    ) -> (f64, Vec<f64>) {
        let mut grad_w: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut grad_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut loss = 0.0;
        let last = self.layers() - 1;
        for (s, &r) in rows.iter().enumerate() {
            let mask = masks.map(|m| &m[s]);
            let (zs, acts) = self.forward_full(x.row(r), mask);
            let out = &acts[last + 1];
            loss -= out[targets[s]].max(1e-300).ln();
            let mut delta: Vec<f64> = out.clone();
            delta[targets[s]] -= 1.0;
            for l in (0..=last).rev() {
                let n_in = self.sizes[l];
                let input = &acts[l];
                for (o, &d) in delta.iter().enumerate() {
                    grad_b[l][o] += d;
                    let gw = &mut grad_w[l][o * n_in..(o + 1) * n_in];
                    for (g, a) in gw.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let mut prev = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                // acts[l] already carries the dropout multiplier m, and
                // d(m f(z))/dz = m f'(z); recover f(z) to evaluate f'.
                for (k, p) in prev.iter_mut().enumerate() {
                    let m = mask.map_or(1.0, |m| m[l - 1][k]);
                    if m == 0.0 {
                        *p = 0.0;
                        continue;
                    }
                    let a = acts[l][k] / m;
                    *p *= m * self.activation.derivative(zs[l - 1][k], a);
                }
                delta = prev;
            }
        }
        let scale = 1.0 / rows.len().max(1) as f64;
        let mut grad = Vec::with_capacity(self.param_count());
        for (w, b) in grad_w.iter().zip(&grad_b) {
            grad.extend(w.iter().map(|g| g * scale));
            grad.extend(b.iter().map(|g| g * scale));
        }
        (loss * scale, grad)
    }

    fn dropout_masks(&self, rate: f64, rng: &mut impl Rng) -> DropoutMasks {
        let keep = 1.0 - rate;
        self.sizes[1..self.sizes.len() - 1]
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub(crate) spec: MlpSpec,
    pub(crate) classes: Vec<ClassId>,
    pub(crate) mean: Vec<f64>,
    pub(crate) scale: Vec<f64>,
    pub(crate) network: Network,
    /// Mean mini-batch loss of every pass.
    pub(crate) loss_history: Vec<f64>,
}

impl MlpModel {
    pub fn train(spec: &MlpSpec, x: &FeatureMatrix, y: &[ClassId]) -> Result<Self, ClassifierError> {
        spec.validate()?;
        if x.rows() == 0 {
            return Err(ClassifierError::Empty);
        }
        if x.rows() != y.len() {
            return Err(ClassifierError::DimensionMismatch {
                expected: x.rows(),
                found: y.len(),
            });
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::InvalidSpec("MLP inputs must be finite".into()));
        }
        let classes = sorted_classes(y);
        let targets: Vec<usize> = y
            .iter()
            .map(|c| classes.binary_search(c).expect("class present"))
            .collect();
        let d = x.cols();
        let n = x.rows() as f64;
        let mut mean = vec![0.0; d];
        for r in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for r in x.iter_rows() {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 1.0 };
        }
        let xs = standardize(x, &mean, &scale);

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut sizes = vec![d];
        sizes.extend_from_slice(&spec.hidden);
        sizes.push(classes.len());
        let mut network = Network::new(&sizes, spec.activation, &mut rng);
        let mut order: Vec<usize> = (0..xs.rows()).collect();
        let mut loss_history = Vec::with_capacity(spec.iterations);
        let mut params = network.params();
        for _ in 0..spec.iterations {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0usize;
            for batch in order.chunks(spec.batch_size) {
                let batch_targets: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
                let masks: Option<Vec<DropoutMasks>> = (spec.dropout > 0.0).then(|| {
                    batch
                        .iter()
                        .map(|_| network.dropout_masks(spec.dropout, &mut rng))
                        .collect()
                });
                let (loss, grad) = network.loss_and_gradient(&xs, batch, &batch_targets, masks.as_deref());
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(ClassifierError::Divergence {
                        learning_rate: spec.learning_rate,
                    });
                }
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= spec.learning_rate * g;
                }
                network.set_params(&params);
                total += loss;
                batches += 1;
            }
            loss_history.push(total / batches as f64);
        }
        Ok(Self {
            spec: spec.clone(),
            classes,
            mean,
            scale,
            network,
            loss_history,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn predict_one(&self, x: &[f64]) -> ClassId {
        let z: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        let out = self.network.forward(&z);
        // First maximum wins, i.e. the lowest class id among ties.
        let mut best = 0;
        for (i, &p) in out.iter().enumerate() {
            if p > out[best] {
                best = i;
            }
        }
        self.classes[best]
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<ClassId>, ClassifierError> {
        if x.cols() != self.input_dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        Ok((0..x.rows())
            .into_par_iter()
            .map(|i| self.predict_one(x.row(i)))
            .collect())
    }
}

fn standardize(x: &FeatureMatrix, mean: &[f64], scale: &[f64]) -> FeatureMatrix {
    let data = x
        .iter_rows()
        .flat_map(|r| r.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) * s))
        .collect();
    FeatureMatrix::new(x.rows(), x.cols(), data).expect("same shape")
}
