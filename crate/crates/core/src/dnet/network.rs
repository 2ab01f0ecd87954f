use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{DendriticLayer, Dense, Mode};
use super::{BranchNonlinearity, BranchReading, Real};
use crate::error::{invalid, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Branch count per hidden layer; 0 is a point-neuron layer.
    pub branches: Vec<usize>,
    pub nonlinearity: BranchNonlinearity,
    pub reading: BranchReading,
    pub batch_norm: bool,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input: 784,
            hidden: vec![512, 512],
            classes: 10,
            branches: vec![0, 0],
            nonlinearity: BranchNonlinearity::default(),
            reading: BranchReading::PerBranch,
            batch_norm: true,
            dropout: 0.5,
            epochs: 100,
            batch_size: 64,
            lr_start: 1e-2,
            lr_end: 1e-5,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Same branch count `k` on every hidden layer of width `width`.
    pub fn uniform(width: usize, k: usize) -> Self {
        Self { hidden: vec![width; 2], branches: vec![k; 2], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.classes < 2 {
            return invalid("need at least one input and two classes");
        }
        if self.hidden.is_empty() || self.hidden.len() != self.branches.len() {
            return invalid("hidden sizes and branch counts must be non-empty and of equal length");
        }
        let mut fan_in = self.input;
        for (&p, &k) in self.hidden.iter().zip(&self.branches) {
            if p == 0 {
                return invalid("hidden layers must be non-empty");
            }
            if k > p {
                return invalid(format!("branch count {k} exceeds the layer width {p}"));
            }
            if k > fan_in {
                return invalid(format!("branch count {k} exceeds the layer fan-in {fan_in}"));
            }
            fan_in = p;
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid("dropout rate must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return invalid("batch size and epochs must be positive");
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return invalid("learning rates must be positive");
        }
        Ok(())
    }

    /// Parameter count of the network this config builds.
    pub fn parameter_count(&self) -> usize {
        let mut fan_in = self.input;
        let mut total = 0;
        for (&p, &k) in self.hidden.iter().zip(&self.branches) {
            total += fan_in * p + p * k.max(1);
            fan_in = p;
        }
        total + fan_in * self.classes + self.classes
    }
}

/// Hidden dendritic layers followed by an affine read-out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub hidden: Vec<DendriticLayer<T>>,
    pub output: Dense<T>,
    #[serde(skip)]
    dropout_masks: Vec<Array2<T>>,
}

impl<T: Real> Network<T> {
    /// Layer `i` is seeded with `derive_seed(seed, i)`, the read-out with
    /// `derive_seed(seed, n_hidden)`.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut fan_in = config.input;
        let mut hidden = Vec::new();
        for (i, (&p, &k)) in config.hidden.iter().zip(&config.branches).enumerate() {
            hidden.push(DendriticLayer::new(
                fan_in,
                p,
                k,
                config.batch_norm,
                config.nonlinearity,
                config.reading,
                derive_seed(config.seed, i as u64),
            )?);
            fan_in = p;
        }
        let output = Dense::new(fan_in, config.classes, derive_seed(config.seed, config.hidden.len() as u64))?;
        Ok(Self { config, hidden, output, dropout_masks: Vec::new() })
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden.iter().map(DendriticLayer::parameter_count).sum::<usize>() + self.output.parameter_count()
    }

    /// Training forward pass with inverted dropout drawn from `rng`.
    pub fn forward_train(&mut self, x: ArrayView2<T>, rng: &mut impl Rng) -> Result<Array2<T>> {
        let keep = 1.0 - self.config.dropout;
        let scale = T::c(1.0 / keep);
        self.dropout_masks.clear();
        let mut h = x.to_owned();
        for layer in &mut self.hidden {
            h = layer.forward(h.view(), Mode::Train)?;
            if self.config.dropout > 0.0 {
                let mask = Array2::from_shape_fn(h.raw_dim(), |_| if rng.random::<f64>() < keep { scale } else { T::zero() });
                h = h * &mask;
                self.dropout_masks.push(mask);
            }
        }
        self.output.forward(h.view(), Mode::Train)
    }

    /// Backpropagates `d loss / d logits` through the last training pass.
    pub fn backward(&mut self, grad_logits: ArrayView2<T>) -> Result<()> {
        let mut g = self.output.backward(grad_logits)?;
        for (i, layer) in self.hidden.iter_mut().enumerate().rev() {
            if let Some(mask) = self.dropout_masks.get(i) {
                g = g * mask;
            }
            g = layer.backward(g.view())?;
        }
        Ok(())
    }

    /// Inference logits (running batch-norm statistics, no dropout).
    pub fn logits(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let mut h = x.to_owned();
        for layer in &self.hidden {
            h = layer.soma(&layer.branch_inputs_eval(h.view())?);
        }
        Ok(h.dot(&self.output.weights) + &self.output.bias)
    }

    /// Hidden activations of layer `layer` for inputs to that layer.
    pub fn hidden_activations(&self, layer: usize, x: ArrayView2<T>) -> Result<Array2<T>> {
        let l = &self.hidden[layer];
        Ok(l.soma(&l.branch_inputs_eval(x)?))
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut [T], &[T])) -> Result<()> {
        for layer in &mut self.hidden {
            layer.for_each_param(f)?;
        }
        self.output.for_each_param(f)
    }
}

pub fn argmax_rows<T: Real>(logits: &Array2<T>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Array2<T>, labels: &[u8]) -> (f64, Array2<T>) {
    let n = logits.nrows();
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let exp: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exp.iter().copied().sum();
        let label = labels[i] as usize;
        loss += (sum.ln() - (row[label] - max)).f64();
        for (c, &e) in exp.iter().enumerate() {
            let target = if c == label { T::one() } else { T::zero() };
            grad[[i, c]] = (e / sum - target) / T::c(n as f64);
        }
    }
    (loss / n as f64, grad)
}
