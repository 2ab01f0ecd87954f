//! Device-in-the-loop inference: branch inputs become gate set-voltages, the
//! multi-gate device is programmed and read, and the read current replaces
//! the abstract soma output.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Network};
use crate::device::{cell_gate_seeds, DeviceSpec, MultiGateDevice, Protocol};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_path, derive_seed, seeded};

/// Gate voltage that the calibration maximum maps to.
pub const MAX_GATE_VOLTAGE: f64 = 4.0;

pub const DEFAULT_TABLE_STEP: f64 = 0.25;

/// How device currents are obtained during inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    /// Multilinear interpolation in a precomputed grid with spacing `step`.
    Table { step: f64 },
    /// One full device simulation per unit and sample.
    Exact,
}

impl Default for ResponseMode {
    fn default() -> Self {
        Self::Table { step: DEFAULT_TABLE_STEP }
    }
}

/// Read current of the device over a `[0, MAX_GATE_VOLTAGE]^d` grid. The
/// table is symmetric under permutation of the voltages: each cell holds the
/// measurement of its sorted voltage tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTable {
    pub branches: usize,
    pub amplitudes: Vec<f64>,
    /// Branch 0 varies fastest.
    pub currents: Vec<f64>,
}

impl ResponseTable {
    /// Programs `template` (unused gates held at 0 V) at every sorted grid
    /// tuple. Tuple seeds follow `cell_gate_seeds(seed, flat, n_gates)` of
    /// the sorted cell.
    pub fn build(template: &MultiGateDevice, protocol: &Protocol, branches: usize, step: f64, seed: u64) -> Result<Self> {
        if branches == 0 || branches > template.n_gates() {
            return invalid(format!("{branches} branches do not fit a {}-gate device", template.n_gates()));
        }
        if !(step > 0.0 && step <= MAX_GATE_VOLTAGE) {
            return invalid("table step must lie in (0, 4] V");
        }
        let n = (MAX_GATE_VOLTAGE / step).round() as usize + 1;
        if ((n - 1) as f64 * step - MAX_GATE_VOLTAGE).abs() > 1e-9 {
            return invalid("table step must divide 4 V");
        }
        let amplitudes: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        let total = n.pow(branches as u32);
        let canonical: Vec<usize> = (0..total).filter(|&f| is_sorted_desc(&unflatten(f, n, branches))).collect();
        let n_gates = template.n_gates();
        let measured = canonical
            .par_iter()
            .map(|&flat| {
                let idx = unflatten(flat, n, branches);
                let mut voltages = vec![0.0; n_gates];
                for (v, &i) in voltages.iter_mut().zip(&idx) {
                    *v = amplitudes[i];
                }
                let mut device = template.clone();
                device
                    .measure(&protocol.program(&voltages), &cell_gate_seeds(seed, flat, n_gates))
                    .map(|m| (flat, m.drain_current))
                    .map_err(|e| Error::SweepCell { coordinates: voltages, source: Box::new(e) })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut currents = vec![f64::NAN; total];
        for (flat, current) in measured {
            currents[flat] = current;
        }
        for f in 0..total {
            let mut idx = unflatten(f, n, branches);
            idx.sort_unstable_by(|a, b| b.cmp(a));
            currents[f] = currents[flatten(&idx, n)];
        }
        Ok(Self { branches, amplitudes, currents })
    }

    pub fn step(&self) -> f64 {
        self.amplitudes[1] - self.amplitudes[0]
    }

    /// Current at `voltages` (each clipped to the grid range).
    pub fn lookup(&self, voltages: &[f64]) -> f64 {
        let n = self.amplitudes.len();
        let step = self.step();
        let mut base = Vec::with_capacity(self.branches);
        let mut frac = Vec::with_capacity(self.branches);
        for &v in voltages {
            let x = (v.clamp(0.0, MAX_GATE_VOLTAGE) / step).min((n - 1) as f64);
            let i = (x.floor() as usize).min(n - 2);
            base.push(i);
            frac.push(x - i as f64);
        }
        let mut acc = 0.0;
        let mut idx = vec![0usize; self.branches];
        for corner in 0..(1usize << self.branches) {
            let mut w = 1.0;
            for b in 0..self.branches {
                let up = corner >> b & 1 == 1;
                idx[b] = base[b] + usize::from(up);
                w *= if up { frac[b] } else { 1.0 - frac[b] };
            }
            if w != 0.0 {
                acc += w * self.currents[flatten(&idx, n)];
            }
        }
        acc
    }
}

fn unflatten(mut flat: usize, n: usize, dims: usize) -> Vec<usize> {
    (0..dims)
        .map(|_| {
            let i = flat % n;
            flat /= n;
            i
        })
        .collect()
}

fn flatten(idx: &[usize], n: usize) -> usize {
    idx.iter().rev().fold(0, |acc, &i| acc * n + i)
}

fn is_sorted_desc(idx: &[usize]) -> bool {
    idx.windows(2).all(|w| w[0] >= w[1])
}

/// Candidate offsets searched during calibration.
pub const ONSET_CANDIDATES: [f64; 9] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];

/// Per-layer map from branch inputs to gate voltages and from read currents
/// back to activations. A non-positive input leaves its gate at 0 V; a
/// positive one maps linearly onto `(v_on, 4]` with `v_max` at 4 V. Then
/// `a = max(0, scale * (nu * I - i_off))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCalibration {
    pub v_max: f64,
    /// Gate voltage at which a vanishing positive input starts.
    pub v_on: f64,
    pub i_off: f64,
    pub scale: f64,
}

impl LayerCalibration {
    pub fn voltage(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        (self.v_on + (MAX_GATE_VOLTAGE - self.v_on) * z / self.v_max).min(MAX_GATE_VOLTAGE)
    }

    /// `current` already includes the unit's variation factor.
    pub fn activation(&self, current: f64) -> f64 {
        (self.scale * (current - self.i_off)).max(0.0)
    }
}

/// Calibration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    pub mode: ResponseMode,
    /// Standard deviation of the per-unit multiplicative current factor.
    pub variation_std: f64,
    /// Training images used for calibration; 0 uses all of them.
    pub calibration_samples: usize,
    pub seed: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self { mode: ResponseMode::default(), variation_std: 0.2, calibration_samples: 0, seed: 0 }
    }
}

/// Calibrated, frozen mapping between a trained network and the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceBridge {
    pub device: DeviceSpec,
    pub protocol: Protocol,
    pub mode: ResponseMode,
    pub seed: u64,
    pub variation_std: f64,
    /// Standard normal draws per layer and unit; the factor is
    /// `1 + variation_std * draw`.
    pub variation_draws: Vec<Vec<f64>>,
    pub layers: Vec<LayerCalibration>,
    /// One per hidden layer; exact mode uses them only for calibration.
    pub tables: Vec<ResponseTable>,
}

/// Gate voltages and read currents of one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// `n x units*d`.
    pub voltages: Array2<f64>,
    /// `n x units`, after the variation factor.
    pub currents: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceInference {
    pub labels: Vec<usize>,
    pub logits: Array2<f64>,
    pub layers: Vec<LayerTrace>,
}

impl InferenceBridge {
    /// Calibrates every hidden layer on `train_set`: `v_max` is the largest
    /// branch input of the abstract network and `i_off` the all-zero read
    /// current. `v_on` and `scale` are the least-squares fit of the table
    /// activation to the abstract soma output, `v_on` over
    /// [`ONSET_CANDIDATES`].
    pub fn calibrate(network: &Network<f32>, train_set: &Dataset, device: DeviceSpec, protocol: Protocol, config: BridgeConfig) -> Result<Self> {
        if !(config.variation_std >= 0.0 && config.variation_std.is_finite()) {
            return invalid("variation std must be non-negative");
        }
        if train_set.is_empty() || train_set.features != network.config.input {
            return invalid("calibration set is empty or has the wrong width");
        }
        for (i, layer) in network.hidden.iter().enumerate() {
            if layer.branches() == 0 || layer.branches() > device.n_gates {
                return invalid(format!(
                    "layer {i} has {} branches; device inference needs 1..={} branches",
                    layer.branches(),
                    device.n_gates
                ));
            }
        }
        let template = device.build(config.seed)?;
        let count = match config.calibration_samples {
            0 => train_set.len(),
            c => c.min(train_set.len()),
        };
        let mut variation_draws = Vec::new();
        for (l, layer) in network.hidden.iter().enumerate() {
            let mut rng = seeded(derive_path(config.seed, &[1, l as u64]));
            variation_draws.push((0..layer.units()).map(|_| StandardNormal.sample(&mut rng)).collect());
        }
        let mut bridge = Self {
            device,
            protocol,
            mode: config.mode,
            seed: config.seed,
            variation_std: config.variation_std,
            variation_draws,
            layers: Vec::new(),
            tables: Vec::new(),
        };
        let step = match config.mode {
            ResponseMode::Table { step } => step,
            ResponseMode::Exact => DEFAULT_TABLE_STEP,
        };
        for (l, layer) in network.hidden.iter().enumerate() {
            let reuse = bridge.tables.iter().find(|t| t.branches == layer.branches()).cloned();
            let table = match reuse {
                Some(t) => t,
                None => ResponseTable::build(&template, &protocol, layer.branches(), step, derive_path(config.seed, &[2, l as u64]))?,
            };
            bridge.tables.push(table);
        }
        let zero = vec![0.0; device.n_gates];
        let i_off = template.clone().measure(&protocol.program(&zero), &cell_gate_seeds(derive_seed(config.seed, 3), 0, device.n_gates))?.drain_current;

        let mut h: Array2<f32> = batch_rows(train_set, 0, count);
        for (l, layer) in network.hidden.iter().enumerate() {
            let z = layer.branch_inputs_eval(h.view())?;
            let target = layer.soma(&z);
            let v_max = z.iter().fold(0.0f64, |m, &v| m.max(f64::from(v)));
            if v_max <= 0.0 {
                return invalid(format!("layer {l} has no positive branch input on the calibration set"));
            }
            let table = &bridge.tables[l];
            let mut best: Option<(f64, LayerCalibration)> = None;
            for v_on in ONSET_CANDIDATES {
                let mut cal = LayerCalibration { v_max, v_on, i_off, scale: 1.0 };
                let currents = table_currents(table, &cal, z.view());
                let (mut num, mut den, mut tt) = (0.0, 0.0, 0.0);
                for (&i, &t) in currents.iter().zip(target.iter()) {
                    let x = i - i_off;
                    let t = f64::from(t);
                    num += x * t;
                    den += x * x;
                    tt += t * t;
                }
                if !(den > 0.0) {
                    continue;
                }
                cal.scale = num / den;
                // Residual of the unconstrained fit; ties keep the lower offset.
                let residual = tt - num * num / den;
                if best.is_none_or(|(r, _)| residual < r) {
                    best = Some((residual, cal));
                }
            }
            let Some((_, cal)) = best else {
                return invalid(format!("layer {l} never turns the device on during calibration"));
            };
            bridge.layers.push(cal);
            h = target;
        }
        Ok(bridge)
    }

    /// Multiplicative current factor of unit `unit` in layer `layer`.
    pub fn variation(&self, layer: usize, unit: usize) -> f64 {
        1.0 + self.variation_std * self.variation_draws[layer][unit]
    }

    pub fn with_variation(&self, std: f64) -> Self {
        Self { variation_std: std, ..self.clone() }
    }

    /// Classifies the rows of `x` through the device model.
    pub fn infer(&self, network: &Network<f32>, x: ArrayView2<f32>) -> Result<DeviceInference> {
        if self.layers.len() != network.hidden.len() {
            return invalid("bridge was calibrated for a different network");
        }
        let template = self.device.build(self.seed)?;
        let mut h = x.to_owned();
        let mut traces = Vec::with_capacity(self.layers.len());
        for (l, layer) in network.hidden.iter().enumerate() {
            let cal = self.layers[l];
            let z = layer.branch_inputs_eval(h.view())?;
            let mut currents = self.currents(&template, l, layer.branches(), &cal, z.view())?;
            for ((_, u), c) in currents.indexed_iter_mut() {
                *c *= self.variation(l, u);
            }
            h = currents.mapv(|c| cal.activation(c) as f32);
            traces.push(LayerTrace { voltages: z.mapv(|v| cal.voltage(f64::from(v))), currents });
        }
        let logits = (h.dot(&network.output.weights) + &network.output.bias).mapv(f64::from);
        let labels = super::network::argmax_rows(&logits);
        Ok(DeviceInference { labels, logits, layers: traces })
    }

    /// Device accuracy over `data`, in chunks.
    pub fn accuracy(&self, network: &Network<f32>, data: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        let chunk = 1000;
        let mut start = 0;
        while start < data.len() {
            let end = (start + chunk).min(data.len());
            let x = batch_rows(data, start, end);
            let out = self.infer(network, x.view())?;
            correct += out.labels.iter().zip(&data.labels[start..end]).filter(|(p, &t)| **p == t as usize).count();
            start = end;
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// Raw read currents `n x units` for branch inputs `z` of layer `layer`.
    fn currents(
        &self,
        template: &MultiGateDevice,
        layer: usize,
        branches: usize,
        cal: &LayerCalibration,
        z: ArrayView2<f32>,
    ) -> Result<Array2<f64>> {
        let n = z.nrows();
        let units = z.ncols() / branches;
        let voltages = |i: usize, u: usize| -> Vec<f64> {
            (0..branches).map(|b| cal.voltage(f64::from(z[[i, u * branches + b]]))).collect()
        };
        match self.mode {
            ResponseMode::Table { .. } => Ok(table_currents(&self.tables[layer], cal, z)),
            ResponseMode::Exact => {
                let n_gates = template.n_gates();
                let flat = (0..n * units)
                    .into_par_iter()
                    .map(|k| {
                        let (i, u) = (k / units, k % units);
                        let mut set = vec![0.0; n_gates];
                        set[..branches].copy_from_slice(&voltages(i, u));
                        let seeds: Vec<u64> = (0..n_gates as u64).map(|g| derive_path(self.seed, &[4, layer as u64, u as u64, i as u64, g])).collect();
                        let mut device = template.clone();
                        device
                            .measure(&self.protocol.program(&set), &seeds)
                            .map(|m| m.drain_current)
                            .map_err(|e| Error::Inference { layer, unit: u, source: Box::new(e) })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Array2::from_shape_vec((n, units), flat).map_err(|e| Error::Shape(e.to_string()))?)
            }
        }
    }
}

fn table_currents(table: &ResponseTable, cal: &LayerCalibration, z: ArrayView2<f32>) -> Array2<f64> {
    let branches = table.branches;
    let units = z.ncols() / branches;
    Array2::from_shape_fn((z.nrows(), units), |(i, u)| {
        let v: Vec<f64> = (0..branches).map(|b| cal.voltage(f64::from(z[[i, u * branches + b]]))).collect();
        table.lookup(&v)
    })
}

/// Rows `start..end` of `data` as an `f32` matrix.
pub fn batch_rows(data: &Dataset, start: usize, end: usize) -> Array2<f32> {
    let f = data.features;
    Array2::from_shape_vec((end - start, f), data.pixels[start * f..end * f].to_vec()).expect("row slice matches width")
}

/// Abstract activations of every hidden layer; used for comparisons.
pub fn abstract_hidden(network: &Network<f32>, x: ArrayView2<f32>) -> Result<Vec<Array2<f32>>> {
    let mut h = x.to_owned();
    let mut out = Vec::new();
    for layer in &network.hidden {
        h = layer.soma(&layer.branch_inputs_eval(h.view())?);
        out.push(h.clone());
    }
    Ok(out)
}
