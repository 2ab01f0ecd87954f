//! The experiments behind each `--experiment` id. Every runner returns its
//! results as data and the `write_*` functions turn them into files, so the
//! acceptance suite can check the same numbers the CLI exports.

use std::time::Instant;

use dendrofet_core::device::{sweep_grid, turn_on_voltage, MultiGateDevice, SweepResult};
use dendrofet_core::dnet::bridge::{batch_rows, InferenceBridge};
use dendrofet_core::dnet::checkpoint::Checkpoint;
use dendrofet_core::dnet::circles::make_circles;
use dendrofet_core::dnet::{evaluate, train, Dataset, EpochMetrics, Network, NetworkConfig, TrainOutcome};
use dendrofet_core::ferrodomain::{loop_area, zero_voltage_charges, FerroCap, FerroGeometry, LoopPoint, Polarity, TriangleWave};
use dendrofet_core::idx::ImageSet;
use dendrofet_core::rng::derive_path;
use ndarray::Array2;
use serde::Serialize;

use crate::config::{Config, Resolved};
use crate::error::{Error, Result};
use crate::output::OutputDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    Hysteresis,
    Transfer,
    SweepGrid,
    AblationCapacitive,
    ScalingPreset,
    Train,
    InferDevice,
    Circles,
}

impl Experiment {
    pub fn id(self) -> &'static str {
        match self {
            Experiment::Hysteresis => "hysteresis",
            Experiment::Transfer => "transfer",
            Experiment::SweepGrid => "sweep-grid",
            Experiment::AblationCapacitive => "ablation-capacitive",
            Experiment::ScalingPreset => "scaling-preset",
            Experiment::Train => "train",
            Experiment::InferDevice => "infer-device",
            Experiment::Circles => "circles",
        }
    }
}

/// Runs `experiment` and writes its files into `out`.
pub fn run(experiment: Experiment, resolved: &Resolved, out: &mut OutputDir) -> Result<()> {
    let cfg = &resolved.config;
    match experiment {
        Experiment::Hysteresis => write_hysteresis(&hysteresis(cfg)?, out),
        Experiment::Transfer => write_transfer(cfg, out),
        Experiment::SweepGrid => write_sweep(cfg, &sweep(cfg)?, "sweep", out),
        Experiment::AblationCapacitive => {
            let ablation = capacitive_ablation(cfg)?;
            write_sweep(cfg, &ablation.sweep, "ablation", out)?;
            let rows = ablation.groups.iter().map(|g| vec![g.voltage_sum, g.cells as f64, g.i_d_min, g.i_d_max, g.i_d_spread, g.phi_set_spread]);
            out.write_csv("ablation_groups.csv", &["voltage_sum_V", "cells", "i_d_min_A", "i_d_max_A", "i_d_rel_spread", "phi_set_rel_spread"], rows)?;
            out.write_json("ablation.json", &ablation.summary())?;
            Ok(())
        }
        Experiment::ScalingPreset => {
            let Some(preset) = &resolved.preset else {
                return Err(Error::Usage("scaling-preset needs --preset".into()));
            };
            let result = sweep(cfg)?;
            write_sweep(cfg, &result, &format!("preset_{preset}"), out)
        }
        Experiment::Train => {
            let (train_set, test_set) = load_fashion(cfg)?;
            let outcome = train_logged(&cfg.network, &train_set, &test_set)?;
            write_training(&outcome, out)
        }
        Experiment::InferDevice => {
            let (train_set, test_set) = load_fashion(cfg)?;
            let network = if cfg.bridge.checkpoint.is_empty() {
                let outcome = train_logged(&cfg.network, &train_set, &test_set)?;
                write_training(&outcome, out)?;
                outcome.network
            } else {
                Checkpoint::load(&cfg.bridge.checkpoint)?.network
            };
            let result = infer_device(cfg, network, &train_set, &test_set)?;
            write_inference(cfg, &result, &test_set, out)
        }
        Experiment::Circles => write_circles(&circles(cfg)?, out),
    }
}

// ---------------------------------------------------------------- hysteresis

#[derive(Debug, Clone, Serialize)]
pub struct HysteresisSummary {
    /// uC/cm^2, read back from a positively saturated capacitor.
    pub saturation_polarization: f64,
    pub saturation_charge_c: f64,
    /// Signed area of the last cycle, V*C.
    pub loop_area_vc: f64,
    /// Charge at the zero-voltage crossings of the last cycle.
    pub remanent_charges_c: Vec<f64>,
    /// Loop area with P_S = 0.
    pub ablation_loop_area_vc: f64,
    /// `C V^2` at the drive amplitude; the scale of the ablation tolerance.
    pub linear_energy_vc: f64,
}

#[derive(Debug, Clone)]
pub struct HysteresisRun {
    pub points: Vec<LoopPoint>,
    pub ablation: Vec<LoopPoint>,
    pub summary: HysteresisSummary,
}

fn drive_capacitor(cfg: &Config, geometry: FerroGeometry) -> Result<(FerroCap, Vec<LoopPoint>, usize)> {
    let h = &cfg.hysteresis;
    let params = cfg.switching.with_dt(h.dt);
    let mut cap = FerroCap::new(geometry, &params, cfg.device.n_domains, cfg.seed)?;
    cap.saturate(Polarity::Down);
    let wave = TriangleWave { amplitude: h.amplitude, period: h.period, cycles: h.cycles.max(1) }.sample(h.dt)?;
    let per_cycle = wave.voltages.len() / h.cycles.max(1);
    let points = cap.hysteresis_sweep(&wave, &params)?;
    Ok((cap, points, per_cycle))
}

pub fn hysteresis(cfg: &Config) -> Result<HysteresisRun> {
    let (cap, points, per_cycle) = drive_capacitor(cfg, cfg.ferro)?;
    let last = &points[points.len() - per_cycle..];
    // Include the preceding sample so the crossing at the cycle start counts.
    let closing = &points[points.len().saturating_sub(per_cycle + 1)..];
    let mut saturated = cap.clone();
    saturated.saturate(Polarity::Up);
    let ablated = FerroGeometry { saturation_polarization: 0.0, ..cfg.ferro };
    let (_, ablation, _) = drive_capacitor(cfg, ablated)?;
    let summary = HysteresisSummary {
        saturation_polarization: saturated.polarization(),
        saturation_charge_c: cap.saturation_charge(),
        loop_area_vc: loop_area(last),
        remanent_charges_c: zero_voltage_charges(closing),
        ablation_loop_area_vc: loop_area(&ablation[ablation.len() - per_cycle..]),
        linear_energy_vc: cap.capacitance() * cfg.hysteresis.amplitude.powi(2),
    };
    Ok(HysteresisRun { points, ablation, summary })
}

fn loop_rows(points: &[LoopPoint]) -> impl Iterator<Item = Vec<f64>> + '_ {
    points.iter().map(|p| vec![p.time, p.voltage, p.charge])
}

fn write_hysteresis(run: &HysteresisRun, out: &mut OutputDir) -> Result<()> {
    let header = ["time_s", "voltage_V", "charge_C"];
    out.write_csv("hysteresis.csv", &header, loop_rows(&run.points))?;
    out.write_csv("hysteresis_ps0.csv", &header, loop_rows(&run.ablation))?;
    out.write_json("hysteresis.json", &run.summary)?;
    Ok(())
}

// ------------------------------------------------------------------ transfer

fn write_transfer(cfg: &Config, out: &mut OutputDir) -> Result<()> {
    let t = &cfg.transfer;
    if t.points < 2 || !(t.phi_max > t.phi_min) {
        return Err(Error::config("transfer", "need at least two points and phi_max > phi_min"));
    }
    cfg.fet.validate()?;
    let phis: Vec<f64> = (0..t.points).map(|i| t.phi_min + (t.phi_max - t.phi_min) * i as f64 / (t.points - 1) as f64).collect();
    let v_ds = cfg.protocol.drain_voltage - cfg.protocol.source_voltage;
    out.write_csv("transfer.csv", &["phi_f_V", "i_d_A"], phis.iter().map(|&p| vec![p, cfg.fet.drain_current(p, v_ds)]))?;
    out.write_csv("capacitance.csv", &["phi_f_V", "c0_F"], phis.iter().map(|&p| vec![p, cfg.fet.mos_capacitance(p)]))?;
    #[derive(Serialize)]
    struct Summary {
        drain_voltage_v: f64,
        threshold_voltage_v: f64,
        threshold_current_a: f64,
        flat_band_voltage_v: f64,
        oxide_capacitance_f: f64,
    }
    out.write_json(
        "transfer.json",
        &Summary {
            drain_voltage_v: v_ds,
            threshold_voltage_v: cfg.fet.threshold_voltage,
            threshold_current_a: cfg.fet.threshold_current(v_ds),
            flat_band_voltage_v: cfg.fet.flat_band_voltage(),
            oxide_capacitance_f: cfg.fet.oxide_capacitance(),
        },
    )?;
    Ok(())
}

// --------------------------------------------------------------------- sweep

/// Freshly reset device template for `cfg`.
pub fn template(cfg: &Config) -> Result<MultiGateDevice> {
    let mut device = cfg.device_spec().build(cfg.seed)?;
    device.reset_state();
    Ok(device)
}

/// Full reset+set+read grid over `sweep.step`-spaced set voltages.
pub fn sweep(cfg: &Config) -> Result<SweepResult> {
    let amplitudes = cfg.sweep.amplitudes()?;
    Ok(sweep_grid(&template(cfg)?, &cfg.protocol, &amplitudes, cfg.seed)?)
}

/// Ordering and threshold properties of a three-gate grid.
#[derive(Debug, Clone, Serialize)]
pub struct Phenomenology {
    /// Current criterion for "on": the FET's threshold-crossing current.
    pub on_current_a: f64,
    /// Interpolated turn-on of I_D(V1) with V2 = V3 = 1 V.
    pub turn_on_v1_11: Option<f64>,
    /// I_D at V1 = 0 for every (V2, V3) with max(V2, V3) = 2 V.
    pub off_axis_currents: Vec<(f64, f64, f64)>,
    /// Every `off_axis_currents` entry is at or above `on_current_a`.
    pub on_at_zero_v1: bool,
    /// First grid V1 where the (1, 1) curve exceeds both (2, 0) and (0, 2).
    pub crossover_v1: Option<f64>,
    /// (V1, V2, V3) of the largest read current.
    pub max_cell: Vec<f64>,
    pub max_residual: f64,
}

/// Needs a three-gate grid containing 0, 1 and 2 V.
pub fn phenomenology(cfg: &Config, result: &SweepResult) -> Result<Phenomenology> {
    if result.n_gates != 3 {
        return Err(Error::config("device.n_gates", "the phenomenology analysis needs three gates"));
    }
    let current = |v: [f64; 3]| result.cell_at(&v).map(|c| c.drain_current);
    let missing = || Error::config("sweep", "the grid must contain 0, 1 and 2 V");
    let v_ds = cfg.protocol.drain_voltage - cfg.protocol.source_voltage;
    let on = cfg.fet.threshold_current(v_ds);
    let curve = |v2: f64, v3: f64| -> Result<Vec<(f64, f64)>> {
        result.amplitudes.iter().map(|&v1| current([v1, v2, v3]).map(|i| (v1, i)).ok_or_else(missing)).collect()
    };
    let c11 = curve(1.0, 1.0)?;
    let c20 = curve(2.0, 0.0)?;
    let c02 = curve(0.0, 2.0)?;
    let crossover_v1 = (0..c11.len()).find(|&k| c11[k].1 > c20[k].1.max(c02[k].1)).map(|k| c11[k].0);
    let mut off_axis_currents = Vec::new();
    for &v2 in &result.amplitudes {
        for &v3 in &result.amplitudes {
            if (v2.max(v3) - 2.0).abs() < 1e-9 {
                off_axis_currents.push((v2, v3, current([0.0, v2, v3]).ok_or_else(missing)?));
            }
        }
    }
    let max_cell = result
        .cells
        .iter()
        .max_by(|a, b| a.drain_current.total_cmp(&b.drain_current))
        .map(|c| c.voltages.clone())
        .unwrap_or_default();
    Ok(Phenomenology {
        on_current_a: on,
        turn_on_v1_11: turn_on_voltage(&c11, on),
        on_at_zero_v1: off_axis_currents.iter().all(|c| c.2 >= on),
        off_axis_currents,
        crossover_v1,
        max_cell,
        max_residual: result.max_residual(),
    })
}

fn write_sweep(cfg: &Config, result: &SweepResult, stem: &str, out: &mut OutputDir) -> Result<()> {
    let n = result.n_gates;
    let mut header: Vec<String> = (1..=n).map(|g| format!("v{g}_V")).collect();
    header.extend(["i_d_A", "phi_f_V", "max_residual"].map(String::from));
    header.extend((1..=n).map(|g| format!("p{g}_uC_cm2")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = result.cells.iter().map(|c| {
        let mut row = c.voltages.clone();
        row.extend([c.drain_current, c.phi, c.max_residual]);
        row.extend(&c.final_polarization);
        row
    });
    out.write_csv(&format!("{stem}.csv"), &header_ref, rows)?;
    let mut analysis = None;
    if n == 3 {
        for &v3 in &result.amplitudes {
            let rows = result.cells.iter().filter(|c| c.voltages[2] == v3).map(|c| vec![c.voltages[0], c.voltages[1], c.voltages[2], c.drain_current, c.phi]);
            out.write_csv(&format!("{stem}_v3_{v3:.2}V.csv"), &["v1_V", "v2_V", "v3_V", "i_d_A", "phi_f_V"], rows)?;
        }
        analysis = phenomenology(cfg, result).ok();
    }
    #[derive(Serialize)]
    struct Sidecar<'a> {
        seed: u64,
        cells: usize,
        amplitudes: &'a [f64],
        params_hash: &'a str,
        config_sha256: String,
        device: dendrofet_core::device::DeviceSpec,
        protocol: dendrofet_core::device::Protocol,
        max_residual: f64,
        analysis: Option<Phenomenology>,
    }
    out.write_json(
        &format!("{stem}.json"),
        &Sidecar {
            seed: result.seed,
            cells: result.cells.len(),
            amplitudes: &result.amplitudes,
            params_hash: &result.params_hash,
            config_sha256: crate::output::sha256_hex(cfg.to_toml().as_bytes()),
            device: cfg.device_spec(),
            protocol: cfg.protocol,
            max_residual: result.max_residual(),
            analysis,
        },
    )?;
    Ok(())
}

// ------------------------------------------------------------------ ablation

/// Cells of a polarization-free grid grouped by their capacitance-weighted
/// voltage sum (all gates are identical, so by the plain sum).
#[derive(Debug, Clone, Serialize)]
pub struct SumGroup {
    pub voltage_sum: f64,
    pub cells: usize,
    pub i_d_min: f64,
    pub i_d_max: f64,
    /// `(max - min) / max` of the read currents.
    pub i_d_spread: f64,
    /// Same for the floating-gate potential solved at the set voltages.
    pub phi_set_spread: f64,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub sweep: SweepResult,
    pub groups: Vec<SumGroup>,
}

impl Ablation {
    pub fn max_current_spread(&self) -> f64 {
        self.groups.iter().map(|g| g.i_d_spread).fold(0.0, f64::max)
    }

    pub fn max_phi_spread(&self) -> f64 {
        self.groups.iter().map(|g| g.phi_set_spread).fold(0.0, f64::max)
    }

    fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "groups": self.groups.len(),
            "max_current_rel_spread": self.max_current_spread(),
            "max_phi_set_rel_spread": self.max_phi_spread(),
        })
    }
}

fn rel_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = max.abs().max(min.abs());
    if scale == 0.0 {
        0.0
    } else {
        (max - min) / scale
    }
}

/// The sweep with `P_S = 0`.
pub fn capacitive_ablation(cfg: &Config) -> Result<Ablation> {
    let mut cfg = cfg.clone();
    cfg.ferro.saturation_polarization = 0.0;
    let result = sweep(&cfg)?;
    let device = template(&cfg)?;
    let mut groups: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for c in &result.cells {
        let s: f64 = c.voltages.iter().zip(device.gates()).map(|(v, g)| v * g.capacitance()).sum::<f64>() / device.gates()[0].capacitance();
        let phi = device.solve_floating_gate(&c.voltages)?.phi;
        match groups.iter_mut().find(|g| (g.0 - s).abs() < 1e-9) {
            Some(g) => {
                g.1.push(c.drain_current);
                g.2.push(phi);
            }
            None => groups.push((s, vec![c.drain_current], vec![phi])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let groups = groups
        .into_iter()
        .map(|(s, i, p)| SumGroup {
            voltage_sum: s,
            cells: i.len(),
            i_d_min: i.iter().copied().fold(f64::INFINITY, f64::min),
            i_d_max: i.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            i_d_spread: rel_spread(&i),
            phi_set_spread: rel_spread(&p),
        })
        .collect();
    Ok(Ablation { sweep: result, groups })
}

// ------------------------------------------------------------------ training

/// Training and test sets from `data.dir`, truncated to the configured
/// limits.
pub fn load_fashion(cfg: &Config) -> Result<(Dataset, Dataset)> {
    let dir = &cfg.data.dir;
    let load = |images: &str, labels: &str, limit: usize| -> Result<Dataset> {
        let (ip, lp) = (dir.join(images), dir.join(labels));
        for p in [&ip, &lp] {
            if !p.is_file() {
                return Err(Error::MissingDataset(p.clone()));
            }
        }
        let set = ImageSet::load(&ip, &lp)?;
        Ok(if limit > 0 && limit < set.len() { set.select(&(0..limit).collect::<Vec<_>>()) } else { set })
    };
    Ok((
        load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", cfg.data.train_limit)?,
        load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", cfg.data.test_limit)?,
    ))
}

/// Trains with one progress line per epoch on stderr.
pub fn train_logged(config: &NetworkConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainOutcome> {
    let start = Instant::now();
    eprintln!("training {} parameters, {} epochs", config.parameter_count(), config.epochs);
    Ok(train(config, train_set, test_set, |m| {
        eprintln!(
            "epoch {:>3}  lr {:.3e}  loss {:.4}  train {:.4}  test {:.4}  ({:.0} s)",
            m.epoch,
            m.lr,
            m.train_loss,
            m.train_acc,
            m.test_acc,
            start.elapsed().as_secs_f64()
        )
    })?)
}

fn metric_rows(metrics: &[EpochMetrics]) -> impl Iterator<Item = Vec<f64>> + '_ {
    metrics.iter().map(|m| vec![m.epoch as f64, m.lr, m.train_loss, m.train_acc, m.test_acc])
}

fn write_training(outcome: &TrainOutcome, out: &mut OutputDir) -> Result<()> {
    out.write_csv("metrics.csv", &["epoch", "lr", "train_loss", "train_acc", "test_acc"], metric_rows(&outcome.metrics))?;
    Checkpoint::new(outcome.network.clone(), None).save(out.path("checkpoint.json"))?;
    out.record("checkpoint.json");
    out.write_json(
        "train.json",
        &serde_json::json!({
            "parameters": outcome.network.parameter_count(),
            "final_test_acc": outcome.final_test_accuracy(),
            "best_test_acc": outcome.metrics.iter().map(|m| m.test_acc).fold(0.0, f64::max),
            "epochs": outcome.metrics.len(),
        }),
    )?;
    Ok(())
}

// ----------------------------------------------------------------- inference

#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub bridge: InferenceBridge,
    pub network: Network<f32>,
    pub abstract_acc: f64,
    /// Device accuracy with variation disabled.
    pub device_acc: f64,
    /// Device accuracy with the configured variation.
    pub device_acc_variation: f64,
}

/// Calibrates a bridge for `network` and evaluates it on `test_set`.
pub fn infer_device(cfg: &Config, network: Network<f32>, train_set: &Dataset, test_set: &Dataset) -> Result<InferenceResult> {
    if network.hidden.iter().any(|l| l.branches() == 0 || l.branches() > cfg.device.n_gates) {
        return Err(Error::config("network.branches", format!("device inference needs 1..={} branches on every hidden layer", cfg.device.n_gates)));
    }
    let bridge = InferenceBridge::calibrate(&network, train_set, cfg.device_spec(), cfg.protocol, cfg.bridge_config())?;
    let abstract_acc = evaluate(&network, test_set)?;
    let device_acc = bridge.with_variation(0.0).accuracy(&network, test_set)?;
    let device_acc_variation = bridge.accuracy(&network, test_set)?;
    Ok(InferenceResult { bridge, network, abstract_acc, device_acc, device_acc_variation })
}

fn write_inference(cfg: &Config, result: &InferenceResult, test_set: &Dataset, out: &mut OutputDir) -> Result<()> {
    Checkpoint::new(result.network.clone(), Some(result.bridge.clone())).save(out.path("device_checkpoint.json"))?;
    out.record("device_checkpoint.json");
    let n = cfg.bridge.trace_samples.min(test_set.len());
    if n > 0 {
        let x = batch_rows(test_set, 0, n);
        let traced = result.bridge.infer(&result.network, x.view())?;
        let d = result.bridge.tables.first().map_or(1, |t| t.branches);
        let mut header: Vec<String> = ["sample", "layer", "unit"].map(String::from).to_vec();
        header.extend((1..=d).map(|g| format!("v{g}_V")));
        header.extend(["i_d_A", "activation"].map(String::from));
        let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut rows = Vec::new();
        for (l, trace) in traced.layers.iter().enumerate() {
            let branches = trace.voltages.ncols() / trace.currents.ncols();
            let cal = result.bridge.layers[l];
            for ((i, u), &c) in trace.currents.indexed_iter() {
                let mut row = vec![i as f64, l as f64, u as f64];
                row.extend((0..d).map(|b| if b < branches { trace.voltages[[i, u * branches + b]] } else { 0.0 }));
                row.extend([c, cal.activation(c)]);
                rows.push(row);
            }
        }
        out.write_csv("device_traces.csv", &header_ref, rows)?;
    }
    out.write_json(
        "infer.json",
        &serde_json::json!({
            "abstract_acc": result.abstract_acc,
            "device_acc": result.device_acc,
            "device_acc_variation": result.device_acc_variation,
            "variation_std": cfg.bridge.variation_std,
            "layers": result.bridge.layers,
        }),
    )?;
    Ok(())
}

// ------------------------------------------------------------------- circles

#[derive(Debug, Clone, Serialize)]
pub struct CirclesSeed {
    pub seed: usize,
    pub point_acc: f64,
    pub dendritic_acc: f64,
}

#[derive(Debug, Clone)]
pub struct CirclesRun {
    pub seeds: Vec<CirclesSeed>,
    /// First seed: test points and the class-1 probability on a grid.
    pub test: Dataset,
    pub grid: Vec<[f64; 2]>,
    pub point_prob: Vec<f64>,
    pub dendritic_prob: Vec<f64>,
    pub branches: usize,
}

impl CirclesRun {
    pub fn mean(&self) -> (f64, f64) {
        let n = self.seeds.len() as f64;
        (self.seeds.iter().map(|s| s.point_acc).sum::<f64>() / n, self.seeds.iter().map(|s| s.dendritic_acc).sum::<f64>() / n)
    }
}

fn circles_network(cfg: &Config, branches: usize, seed: u64) -> NetworkConfig {
    let c = &cfg.circles;
    NetworkConfig {
        input: 2,
        hidden: vec![c.hidden],
        branches: vec![branches],
        classes: 2,
        batch_norm: c.batch_norm,
        dropout: c.dropout,
        epochs: c.epochs,
        batch_size: c.batch_size,
        seed,
        ..cfg.network.clone()
    }
}

fn class_one_probability(network: &Network<f32>, x: &Array2<f32>) -> Result<Vec<f64>> {
    let logits = network.logits(x.view())?;
    Ok(logits.rows().into_iter().map(|r| 1.0 / (1.0 + f64::from(r[0] - r[1]).exp())).collect())
}

/// Point-neuron vs dendritic 2-hidden-unit networks on concentric circles.
/// Seed `s` draws data from `derive_path(seed, [s, 0|1])` and initialises
/// both networks with `derive_path(seed, [s, 2])`.
pub fn circles(cfg: &Config) -> Result<CirclesRun> {
    let c = &cfg.circles;
    if c.seeds == 0 || c.grid < 2 {
        return Err(Error::config("circles", "need at least one seed and two grid points"));
    }
    let mut seeds = Vec::new();
    let mut first = None;
    for s in 0..c.seeds {
        let train_set = make_circles(c.n_train, c.factor, c.noise, derive_path(cfg.seed, &[s as u64, 0]))?;
        let test_set = make_circles(c.n_test, c.factor, c.noise, derive_path(cfg.seed, &[s as u64, 1]))?;
        let init = derive_path(cfg.seed, &[s as u64, 2]);
        let point = train(&circles_network(cfg, 0, init), &train_set, &test_set, |_| {})?;
        let dendritic = train(&circles_network(cfg, c.branches, init), &train_set, &test_set, |_| {})?;
        seeds.push(CirclesSeed { seed: s, point_acc: point.final_test_accuracy(), dendritic_acc: dendritic.final_test_accuracy() });
        if first.is_none() {
            first = Some((test_set, point.network, dendritic.network));
        }
    }
    let (test, point, dendritic) = first.expect("at least one seed");
    let grid: Vec<[f64; 2]> = (0..c.grid * c.grid)
        .map(|k| {
            let at = |i: usize| -1.5 + 3.0 * i as f64 / (c.grid - 1) as f64;
            [at(k % c.grid), at(k / c.grid)]
        })
        .collect();
    let x = Array2::from_shape_fn((grid.len(), 2), |(i, j)| grid[i][j] as f32);
    Ok(CirclesRun {
        seeds,
        point_prob: class_one_probability(&point, &x)?,
        dendritic_prob: class_one_probability(&dendritic, &x)?,
        test,
        grid,
        branches: c.branches,
    })
}

fn write_circles(run: &CirclesRun, out: &mut OutputDir) -> Result<()> {
    out.write_csv("circles.csv", &["seed", "acc_k0", "acc_dendritic"], run.seeds.iter().map(|s| vec![s.seed as f64, s.point_acc, s.dendritic_acc]))?;
    let test_rows = (0..run.test.len()).map(|i| {
        let p = run.test.image(i);
        vec![f64::from(p[0]), f64::from(p[1]), f64::from(run.test.labels[i])]
    });
    out.write_csv("circles_test.csv", &["x", "y", "label"], test_rows)?;
    for (name, probs) in [("decision_k0.csv".to_string(), &run.point_prob), (format!("decision_k{}.csv", run.branches), &run.dendritic_prob)] {
        out.write_csv(&name, &["x", "y", "p_class1"], run.grid.iter().zip(probs.iter()).map(|(g, &p)| vec![g[0], g[1], p]))?;
    }
    let (k0, kd) = run.mean();
    out.write_json("circles.json", &serde_json::json!({ "mean_acc_k0": k0, "mean_acc_dendritic": kd, "branches": run.branches, "seeds": run.seeds }))?;
    Ok(())
}
