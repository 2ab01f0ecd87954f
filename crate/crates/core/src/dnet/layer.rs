use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::masks::{build_masks, BranchMasks};
use super::{BranchNonlinearity, BranchReading, Real};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, seeded};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch normalization of branch pre-activations with one statistic per
/// unit, pooled over the batch and the unit's branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

#[derive(Debug, Clone, Default)]
pub struct LayerGrads<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    x: Array2<T>,
    /// Normalized pre-activations (raw ones without batch norm).
    xhat: Array2<T>,
    z: Array2<T>,
    inv_std: Array1<T>,
    /// Somatic sum before the ReLU.
    soma: Array2<T>,
    /// `sum_l z` per unit (total reading only).
    total: Option<Array2<T>>,
}

/// Hidden layer of dendritic units; `branches == 0` is a point-neuron layer.
///
/// Weights are stored expanded as `fan_in x (units * m)` with `m =
/// max(branches, 1)`; column `u * m + l` holds branch `l` of unit `u` and is
/// zero outside that branch's mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DendriticLayer<T> {
    fan_in: usize,
    units: usize,
    branches: usize,
    masks: Option<BranchMasks>,
    weights: Array2<T>,
    mask: Array2<T>,
    bias: Array1<T>,
    bn: Option<BatchNorm<T>>,
    nonlinearity: BranchNonlinearity,
    reading: BranchReading,
    #[serde(skip)]
    cache: Option<Cache<T>>,
    #[serde(skip)]
    grads: Option<LayerGrads<T>>,
}

impl<T: Real> DendriticLayer<T> {
    /// Uniform init with bound `1/sqrt(branch fan-in)`; masks drawn from
    /// `derive_seed(seed, 0)`, weights from `derive_seed(seed, 1)`.
    pub fn new(
        fan_in: usize,
        units: usize,
        branches: usize,
        batch_norm: bool,
        nonlinearity: BranchNonlinearity,
        reading: BranchReading,
        seed: u64,
    ) -> Result<Self> {
        if fan_in == 0 || units == 0 {
            return invalid("layer dimensions must be positive");
        }
        let masks = if branches == 0 { None } else { Some(build_masks(fan_in, units, branches, derive_seed(seed, 0))?) };
        let m = branches.max(1);
        let mut mask = Array2::<T>::zeros((fan_in, units * m));
        match &masks {
            Some(ms) => {
                for u in 0..units {
                    for j in 0..fan_in {
                        mask[[j, u * m + ms.branch_of(u, j)]] = T::one();
                    }
                }
            }
            None => mask.fill(T::one()),
        }
        let bound = 1.0 / ((fan_in as f64) / m as f64).sqrt();
        let mut rng = seeded(derive_seed(seed, 1));
        let weights = Array2::from_shape_fn((fan_in, units * m), |_| T::c(rng.random_range(-bound..bound))) * &mask;
        let bias = Array1::from_shape_fn(units * m, |_| T::c(rng.random_range(-bound..bound)));
        let bn = batch_norm.then(|| BatchNorm {
            gamma: Array1::ones(units),
            beta: Array1::zeros(units),
            running_mean: Array1::zeros(units),
            running_var: Array1::ones(units),
        });
        Ok(Self { fan_in, units, branches, masks, weights, mask, bias, bn, nonlinearity, reading, cache: None, grads: None })
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    fn width(&self) -> usize {
        self.branches.max(1)
    }

    pub fn masks(&self) -> Option<&BranchMasks> {
        self.masks.as_ref()
    }

    pub fn nonlinearity(&self) -> BranchNonlinearity {
        self.nonlinearity
    }

    pub fn reading(&self) -> BranchReading {
        self.reading
    }

    pub fn expanded_weights(&self) -> &Array2<T> {
        &self.weights
    }

    pub fn expanded_weights_mut(&mut self) -> &mut Array2<T> {
        &mut self.weights
    }

    pub fn bias(&self) -> &Array1<T> {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Array1<T> {
        &mut self.bias
    }

    pub fn batch_norm(&self) -> Option<&BatchNorm<T>> {
        self.bn.as_ref()
    }

    pub fn batch_norm_mut(&mut self) -> Option<&mut BatchNorm<T>> {
        self.bn.as_mut()
    }

    /// Collapsed `fan_in x units` weight matrix (each input feeds one branch).
    pub fn weights(&self) -> Array2<T> {
        let m = self.width();
        Array2::from_shape_fn((self.fan_in, self.units), |(j, u)| (0..m).map(|l| self.weights[[j, u * m + l]]).sum())
    }

    /// Trainable weights plus biases, excluding normalization parameters.
    pub fn parameter_count(&self) -> usize {
        self.fan_in * self.units + self.bias.len()
    }

    pub fn grads(&self) -> Option<&LayerGrads<T>> {
        self.grads.as_ref()
    }

    /// Branch pre-activations `x W + b` (before batch norm), `n x units*m`.
    pub fn branch_sums(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.fan_in {
            return invalid(format!("expected {} inputs, got {}", self.fan_in, x.ncols()));
        }
        Ok(x.dot(&self.weights) + &self.bias)
    }

    /// Branch inputs to the nonlinearity with batch norm applied from the
    /// running statistics (inference form).
    pub fn branch_inputs_eval(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let mut b = self.branch_sums(x)?;
        if let Some(bn) = &self.bn {
            let m = self.width();
            let eps = T::c(BN_EPS);
            for u in 0..self.units {
                let scale = bn.gamma[u] / (bn.running_var[u] + eps).sqrt();
                let shift = bn.beta[u] - bn.running_mean[u] * scale;
                b.slice_mut(ndarray::s![.., u * m..(u + 1) * m]).mapv_inplace(|v| v * scale + shift);
            }
        }
        Ok(b)
    }

    /// Soma outputs from normalized branch inputs `z`.
    pub fn soma(&self, z: &Array2<T>) -> Array2<T> {
        let m = self.width();
        let nl = self.nonlinearity;
        let n = z.nrows();
        Array2::from_shape_fn((n, self.units), |(i, u)| {
            let row = z.row(i);
            let branch = row.slice(ndarray::s![u * m..(u + 1) * m]);
            let s = match (self.branches, self.reading) {
                (0, _) => branch[0],
                (_, BranchReading::PerBranch) => branch.iter().map(|&v| nl.eval(v)).sum(),
                (_, BranchReading::Total) => nl.eval(branch.sum()),
            };
            s.max(T::zero())
        })
    }

    pub fn forward(&mut self, x: ArrayView2<T>, mode: Mode) -> Result<Array2<T>> {
        let b = self.branch_sums(x)?;
        let m = self.width();
        let n = b.nrows();
        let units = self.units;
        let eps = T::c(BN_EPS);
        let (xhat, z, inv_std) = match (&mut self.bn, mode) {
            (None, _) => (b.clone(), b, Array1::ones(units)),
            (Some(bn), Mode::Eval) => {
                let inv = bn.running_var.mapv(|v| T::one() / (v + eps).sqrt());
                let mut xhat = b;
                for u in 0..units {
                    let (mu, s) = (bn.running_mean[u], inv[u]);
                    xhat.slice_mut(ndarray::s![.., u * m..(u + 1) * m]).mapv_inplace(|v| (v - mu) * s);
                }
                let z = scale_shift(&xhat, &bn.gamma, &bn.beta, m);
                (xhat, z, inv)
            }
            (Some(bn), Mode::Train) => {
                let count = T::c((n * m) as f64);
                let mut inv = Array1::zeros(units);
                let mut xhat = b;
                for u in 0..units {
                    let mut block = xhat.slice_mut(ndarray::s![.., u * m..(u + 1) * m]);
                    let mean = block.sum() / count;
                    let var = block.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
                    let s = T::one() / (var + eps).sqrt();
                    block.mapv_inplace(|v| (v - mean) * s);
                    inv[u] = s;
                    let mom = T::c(BN_MOMENTUM);
                    let unbiased = if n * m > 1 { var * count / (count - T::one()) } else { var };
                    bn.running_mean[u] = bn.running_mean[u] * (T::one() - mom) + mean * mom;
                    bn.running_var[u] = bn.running_var[u] * (T::one() - mom) + unbiased * mom;
                }
                let z = scale_shift(&xhat, &bn.gamma, &bn.beta, m);
                (xhat, z, inv)
            }
        };
        let total = (self.branches > 0 && self.reading == BranchReading::Total).then(|| {
            Array2::from_shape_fn((n, units), |(i, u)| z.slice(ndarray::s![i, u * m..(u + 1) * m]).sum())
        });
        let nl = self.nonlinearity;
        let soma = match (&total, self.branches) {
            (_, 0) => z.clone(),
            (Some(t), _) => t.mapv(|v| nl.eval(v)),
            (None, _) => Array2::from_shape_fn((n, units), |(i, u)| {
                z.slice(ndarray::s![i, u * m..(u + 1) * m]).iter().map(|&v| nl.eval(v)).sum()
            }),
        };
        let out = soma.mapv(|v| v.max(T::zero()));
        if mode == Mode::Train {
            self.cache = Some(Cache { x: x.to_owned(), xhat, z, inv_std, soma, total });
        }
        Ok(out)
    }

    /// Backpropagates `grad_out` (`n x units`) through the last training
    /// forward pass; stores parameter gradients and returns `d loss / d x`.
    pub fn backward(&mut self, grad_out: ArrayView2<T>) -> Result<Array2<T>> {
        let cache = self.cache.take().ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let n = cache.x.nrows();
        if grad_out.dim() != (n, self.units) {
            return invalid("upstream gradient shape mismatch");
        }
        let m = self.width();
        let nl = self.nonlinearity;
        let d_soma = Zip::from(&grad_out).and(&cache.soma).map_collect(|&g, &s| if s > T::zero() { g } else { T::zero() });
        let dz = match (&cache.total, self.branches) {
            (_, 0) => d_soma,
            (Some(t), _) => {
                let dt = Zip::from(&d_soma).and(t).map_collect(|&g, &v| g * nl.derivative(v));
                Array2::from_shape_fn((n, self.units * m), |(i, c)| dt[[i, c / m]])
            }
            (None, _) => Array2::from_shape_fn((n, self.units * m), |(i, c)| d_soma[[i, c / m]] * nl.derivative(cache.z[[i, c]])),
        };
        let (db, d_gamma, d_beta) = match &self.bn {
            None => (dz, Array1::zeros(0), Array1::zeros(0)),
            Some(bn) => {
                let count = T::c((n * m) as f64);
                let mut db = Array2::zeros(dz.raw_dim());
                let mut d_gamma = Array1::zeros(self.units);
                let mut d_beta = Array1::zeros(self.units);
                for u in 0..self.units {
                    let cols = ndarray::s![.., u * m..(u + 1) * m];
                    let dzu = dz.slice(cols);
                    let xh = cache.xhat.slice(cols);
                    let dg: T = Zip::from(&dzu).and(&xh).fold(T::zero(), |acc, &g, &x| acc + g * x);
                    let dbeta: T = dzu.sum();
                    d_gamma[u] = dg;
                    d_beta[u] = dbeta;
                    let gamma = bn.gamma[u];
                    let k = cache.inv_std[u] / count;
                    let sum_dxhat = dbeta * gamma;
                    let sum_dxhat_xhat = dg * gamma;
                    Zip::from(db.slice_mut(cols)).and(&dzu).and(&xh).for_each(|out, &g, &x| {
                        *out = k * (count * g * gamma - sum_dxhat - x * sum_dxhat_xhat);
                    });
                }
                (db, d_gamma, d_beta)
            }
        };
        let dw = cache.x.t().dot(&db) * &self.mask;
        let dbias = db.sum_axis(Axis(0));
        let dx = db.dot(&self.weights.t());
        self.grads = Some(LayerGrads { weights: dw, bias: dbias, gamma: d_gamma, beta: d_beta });
        Ok(dx)
    }

    /// Visits `(parameter, gradient)` pairs in a fixed order.
    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut [T], &[T])) -> Result<()> {
        let grads = self.grads.as_ref().ok_or_else(|| Error::State("no gradients; run backward first".into()))?;
        f(slice_mut(&mut self.weights)?, slice(&grads.weights)?);
        f(self.bias.as_slice_mut().expect("contiguous"), grads.bias.as_slice().expect("contiguous"));
        if let Some(bn) = &mut self.bn {
            f(bn.gamma.as_slice_mut().expect("contiguous"), grads.gamma.as_slice().expect("contiguous"));
            f(bn.beta.as_slice_mut().expect("contiguous"), grads.beta.as_slice().expect("contiguous"));
        }
        Ok(())
    }

    /// Relabels inputs (new input `i` is old input `perm[i]`), moving weight
    /// rows and masks together.
    pub fn permute_inputs(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.fan_in {
            return invalid("permutation length must equal fan-in");
        }
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.weights.row_mut(i).assign(&self.weights.row(p));
            out.mask.row_mut(i).assign(&self.mask.row(p));
        }
        out.masks = self.masks.as_ref().map(|m| m.permute_inputs(perm));
        out.cache = None;
        out.grads = None;
        Ok(out)
    }
}

fn scale_shift<T: Real>(xhat: &Array2<T>, gamma: &Array1<T>, beta: &Array1<T>, m: usize) -> Array2<T> {
    let mut z = xhat.clone();
    for (c, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
        let (g, b) = (gamma[c / m], beta[c / m]);
        col.mapv_inplace(|v| g * v + b);
    }
    z
}

fn slice_mut<T>(a: &mut Array2<T>) -> Result<&mut [T]> {
    a.as_slice_mut().ok_or_else(|| Error::Shape("parameter is not contiguous".into()))
}

fn slice<T>(a: &Array2<T>) -> Result<&[T]> {
    a.as_slice().ok_or_else(|| Error::Shape("gradient is not contiguous".into()))
}

/// Affine read-out layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    #[serde(skip)]
    input: Option<Array2<T>>,
    #[serde(skip)]
    grads: Option<(Array2<T>, Array1<T>)>,
}

impl<T: Real> Dense<T> {
    pub fn new(fan_in: usize, units: usize, seed: u64) -> Result<Self> {
        if fan_in == 0 || units == 0 {
            return invalid("layer dimensions must be positive");
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut rng = seeded(seed);
        let weights = Array2::from_shape_fn((fan_in, units), |_| T::c(rng.random_range(-bound..bound)));
        let bias = Array1::from_shape_fn(units, |_| T::c(rng.random_range(-bound..bound)));
        Ok(Self { weights, bias, input: None, grads: None })
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&mut self, x: ArrayView2<T>, mode: Mode) -> Result<Array2<T>> {
        if x.ncols() != self.weights.nrows() {
            return invalid(format!("expected {} inputs, got {}", self.weights.nrows(), x.ncols()));
        }
        if mode == Mode::Train {
            self.input = Some(x.to_owned());
        }
        Ok(x.dot(&self.weights) + &self.bias)
    }

    pub fn backward(&mut self, grad_out: ArrayView2<T>) -> Result<Array2<T>> {
        let x = self.input.take().ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let dx = grad_out.dot(&self.weights.t());
        self.grads = Some((x.t().dot(&grad_out), grad_out.sum_axis(Axis(0))));
        Ok(dx)
    }

    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut [T], &[T])) -> Result<()> {
        let (gw, gb) = self.grads.as_ref().ok_or_else(|| Error::State("no gradients; run backward first".into()))?;
        f(slice_mut(&mut self.weights)?, slice(gw)?);
        f(self.bias.as_slice_mut().expect("contiguous"), gb.as_slice().expect("contiguous"));
        Ok(())
    }
}
