//! Multi-gate FeFET neuron.
//!
//! `N` ferroelectric capacitors share a metal floating gate over one FET. The
//! floating-gate potential obeys the charge balance
//!
//! ```text
//! C0(phi) * phi + delta = sum_i [ Q_pol,i + C_i * (V_i - phi) ]
//! ```
//!
//! which is solved by bisection (the left side minus the right side is
//! monotone in `phi`). Transients use operator splitting per `dt`: freeze the
//! polarization, solve `phi`, then advance every gate's domains with
//! `V_FE,i = V_i - phi`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ferrodomain::{FerroCap, FerroGeometry, Polarity, SwitchingParams};
use crate::fet::FetParams;
use crate::rng::{derive_path, derive_seed, mix64};

/// Relative charge-balance residual accepted from the solver.
pub const SOLVER_TOLERANCE: f64 = 1e-9;
const MAX_BISECTIONS: usize = 400;
const BRACKET_MARGIN: f64 = 5.0;

/// Polarization state that contributes zero net charge to the floating gate.
///
/// `Zero` takes the polarization charge literally (`P * A`). `ResetState`
/// measures it from the negative-saturated reset state (`(P + P_S) * A`),
/// i.e. the bound charge of the reset configuration is compensated at the
/// floating node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarizationReference {
    Zero,
    ResetState,
}

impl PolarizationReference {
    fn offset(self, cap: &FerroCap) -> f64 {
        match self {
            PolarizationReference::Zero => 0.0,
            PolarizationReference::ResetState => cap.saturation_charge(),
        }
    }
}

/// How the floating-gate solve is interleaved with domain switching inside
/// one output step.
///
/// `Fixed` freezes the polarization for the whole step. `Adaptive` splits the
/// step into sub-steps short enough that the expected switching moves the
/// floating gate by at most `max_phi_change` volts; the history-based
/// switching probability composes exactly across sub-steps, so this only
/// refines the coupling, not the domain statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coupling {
    Fixed,
    Adaptive { max_phi_change: f64, min_substep: f64 },
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling::Adaptive { max_phi_change: 0.01, min_substep: 1e-13 }
    }
}

impl Coupling {
    fn validate(self, dt: f64) -> Result<()> {
        match self {
            Coupling::Fixed => Ok(()),
            Coupling::Adaptive { max_phi_change, min_substep } => {
                if !(max_phi_change > 0.0 && max_phi_change.is_finite()) {
                    return invalid("max_phi_change must be positive");
                }
                if !(min_substep > 0.0 && min_substep <= dt) {
                    return invalid("min_substep must be in (0, dt]");
                }
                Ok(())
            }
        }
    }
}

/// Everything needed to build a device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub n_gates: usize,
    pub n_domains: usize,
    pub geometry: FerroGeometry,
    pub fet: FetParams,
    pub switching: SwitchingParams,
    /// Residual floating-gate charge in C.
    pub floating_charge: f64,
    pub reference: PolarizationReference,
    #[serde(default)]
    pub coupling: Coupling,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self {
            n_gates: 3,
            n_domains: 1000,
            geometry: FerroGeometry::default(),
            fet: FetParams::default(),
            switching: SwitchingParams::default(),
            floating_charge: 0.0,
            reference: PolarizationReference::ResetState,
            coupling: Coupling::default(),
        }
    }
}

impl DeviceSpec {
    /// Gate `i` draws its activation fields from `derive_seed(seed, i)`.
    pub fn build(&self, seed: u64) -> Result<MultiGateDevice> {
        if self.n_gates == 0 {
            return invalid("a device needs at least one gate");
        }
        self.switching.validate()?;
        self.fet.validate()?;
        let gates = (0..self.n_gates)
            .map(|i| FerroCap::new(self.geometry, &self.switching, self.n_domains, derive_seed(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut device = MultiGateDevice::new(gates, self.fet, self.switching, self.floating_charge, self.reference)?;
        device.set_coupling(self.coupling)?;
        Ok(device)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiGateDevice {
    gates: Vec<FerroCap>,
    fet: FetParams,
    floating_charge: f64,
    switching: SwitchingParams,
    reference: PolarizationReference,
    coupling: Coupling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloatingGateSolution {
    /// V.
    pub phi: f64,
    /// |LHS - RHS| relative to the dominant charge term.
    pub residual: f64,
    pub iterations: usize,
}

/// Sum independent of term order, so permuting gates cannot change the bits.
fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

impl MultiGateDevice {
    pub fn new(
        gates: Vec<FerroCap>,
        fet: FetParams,
        switching: SwitchingParams,
        floating_charge: f64,
        reference: PolarizationReference,
    ) -> Result<Self> {
        if gates.is_empty() {
            return invalid("a device needs at least one gate");
        }
        switching.validate()?;
        fet.validate()?;
        if !floating_charge.is_finite() {
            return invalid("floating charge must be finite");
        }
        Ok(Self { gates, fet, floating_charge, switching, reference, coupling: Coupling::default() })
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn set_coupling(&mut self, coupling: Coupling) -> Result<()> {
        coupling.validate(self.switching.dt)?;
        self.coupling = coupling;
        Ok(())
    }

    pub fn gates(&self) -> &[FerroCap] {
        &self.gates
    }

    pub fn gates_mut(&mut self) -> &mut [FerroCap] {
        &mut self.gates
    }

    pub fn n_gates(&self) -> usize {
        self.gates.len()
    }

    pub fn fet(&self) -> &FetParams {
        &self.fet
    }

    pub fn switching(&self) -> &SwitchingParams {
        &self.switching
    }

    pub fn floating_charge(&self) -> f64 {
        self.floating_charge
    }

    pub fn set_floating_charge(&mut self, delta: f64) {
        self.floating_charge = delta;
    }

    pub fn reference(&self) -> PolarizationReference {
        self.reference
    }

    /// Reorders gates: gate `i` of the result is gate `order[i]` of `self`.
    pub fn permute_gates(&mut self, order: &[usize]) -> Result<()> {
        if order.len() != self.gates.len() {
            return invalid("permutation length must equal the gate count");
        }
        let mut seen = vec![false; order.len()];
        for &o in order {
            if o >= order.len() || std::mem::replace(&mut seen[o], true) {
                return invalid("not a permutation");
            }
        }
        self.gates = order.iter().map(|&o| self.gates[o].clone()).collect();
        Ok(())
    }

    /// Puts every gate back into the negative-saturated reset state.
    pub fn reset_state(&mut self) {
        for g in &mut self.gates {
            g.saturate(Polarity::Down);
        }
    }

    fn polarization_charges(&self) -> Vec<f64> {
        self.gates
            .iter()
            .map(|g| g.polarization_charge() + self.reference.offset(g))
            .collect()
    }

    /// Left and right sides of the charge balance and the dominant term.
    fn balance(&self, phi: f64, known: f64, c_sum: f64, scale: f64) -> (f64, f64) {
        let lhs = self.fet.mos_capacitance(phi) * phi;
        let residual = lhs + c_sum * phi - known;
        let scale = scale.max(lhs.abs()).max((c_sum * phi).abs());
        (residual, scale)
    }

    /// Solves the charge balance for the floating-gate potential with the
    /// current (frozen) polarization.
    pub fn solve_floating_gate(&self, terminal_voltages: &[f64]) -> Result<FloatingGateSolution> {
        if terminal_voltages.len() != self.gates.len() {
            return invalid(format!(
                "expected {} terminal voltages, got {}",
                self.gates.len(),
                terminal_voltages.len()
            ));
        }
        if terminal_voltages.iter().any(|v| !v.is_finite()) {
            return invalid("terminal voltages must be finite");
        }
        let mut pol = self.polarization_charges();
        let mut coupled: Vec<f64> = self
            .gates
            .iter()
            .zip(terminal_voltages)
            .map(|(g, v)| g.capacitance() * v)
            .collect();
        let mut caps: Vec<f64> = self.gates.iter().map(FerroCap::capacitance).collect();
        let pol_abs = pol.iter().map(|q| q.abs()).fold(0.0, f64::max) * pol.len() as f64;
        let coupled_abs = coupled.iter().map(|q| q.abs()).fold(0.0, f64::max) * coupled.len() as f64;
        let pol_sum = canonical_sum(&mut pol);
        let coupled_sum = canonical_sum(&mut coupled);
        let c_sum = canonical_sum(&mut caps);
        let known = pol_sum + coupled_sum - self.floating_charge;
        let base_scale = pol_abs.max(coupled_abs).max(self.floating_charge.abs());

        let relative = |phi: f64| {
            let (r, s) = self.balance(phi, known, c_sum, base_scale);
            (r, if s > 0.0 { r.abs() / s } else { 0.0 })
        };

        let v_min = terminal_voltages.iter().copied().fold(f64::INFINITY, f64::min);
        let v_max = terminal_voltages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (v_min - BRACKET_MARGIN, v_max + BRACKET_MARGIN);
        let mut widen = 0;
        while relative(lo).0 > 0.0 || relative(hi).0 < 0.0 {
            let w = hi - lo;
            lo -= w;
            hi += w;
            widen += 1;
            if widen > 60 {
                return Err(Error::SolverDiverged { iterations: 0, residual: f64::INFINITY });
            }
        }

        let mut best = (f64::INFINITY, lo);
        for iteration in 1..=MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let (r, rel) = relative(mid);
            if rel < best.0 {
                best = (rel, mid);
            }
            if rel <= 1e-13 || mid <= lo || mid >= hi {
                return self.finish(best, iteration);
            }
            if r > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        self.finish(best, MAX_BISECTIONS)
    }

    fn finish(&self, (residual, phi): (f64, f64), iterations: usize) -> Result<FloatingGateSolution> {
        if residual <= SOLVER_TOLERANCE {
            Ok(FloatingGateSolution { phi, residual, iterations })
        } else {
            Err(Error::SolverDiverged { iterations, residual })
        }
    }

    /// Charge-balance residual at an arbitrary potential, relative to the
    /// dominant charge term. Used by checks and brute-force oracles.
    pub fn charge_balance_residual(&self, terminal_voltages: &[f64], phi: f64) -> (f64, f64) {
        let pol: f64 = self.polarization_charges().iter().sum();
        let coupled: f64 = self.gates.iter().zip(terminal_voltages).map(|(g, v)| g.capacitance() * v).sum();
        let c_sum: f64 = self.gates.iter().map(FerroCap::capacitance).sum();
        let lhs = self.fet.mos_capacitance(phi) * phi + self.floating_charge;
        let rhs = pol + coupled - c_sum * phi;
        (lhs - rhs, lhs.abs().max(rhs.abs()))
    }

    /// Runs `program` with per-gate switching streams derived from `seed`.
    pub fn run_program(&mut self, program: &PulseProgram, seed: u64) -> Result<Trace> {
        let seeds = gate_seeds(seed, self.gates.len());
        self.run_program_with_gate_seeds(program, &seeds)
    }

    /// Runs `program` with explicit per-gate switching streams, recording
    /// the full trace.
    pub fn run_program_with_gate_seeds(&mut self, program: &PulseProgram, seeds: &[u64]) -> Result<Trace> {
        let mut rows = Vec::new();
        self.execute(program, seeds, |row| rows.push(row.clone()))?;
        Ok(Trace { rows })
    }

    /// Runs `program` and reduces it to the read-window measurement.
    pub fn measure(&mut self, program: &PulseProgram, seeds: &[u64]) -> Result<Measurement> {
        let mut acc = MeasureAccumulator::default();
        self.execute(program, seeds, |row| acc.push(row))?;
        let final_polarization = self.gates.iter().map(FerroCap::polarization).collect();
        acc.finish(final_polarization)
    }

    fn execute(&mut self, program: &PulseProgram, seeds: &[u64], mut observe: impl FnMut(&TraceRow)) -> Result<()> {
        let dt = self.switching.dt;
        let schedule = program.schedule(dt, self.gates.len())?;
        if seeds.len() != self.gates.len() {
            return invalid("one switching seed per gate is required");
        }
        for (g, &s) in self.gates.iter_mut().zip(seeds) {
            g.reseed(s);
        }
        let v_ds = program.drain_voltage - program.source_voltage;
        let mut voltages = vec![0.0; self.gates.len()];
        for step in 0..schedule.steps {
            let t = step as f64 * dt;
            if schedule.clear_histories_at == Some(step) {
                for g in &mut self.gates {
                    g.clear_histories();
                }
            }
            for (v, gate_wave) in voltages.iter_mut().zip(&schedule.voltages) {
                *v = gate_wave[step];
            }
            let sol = self
                .solve_floating_gate(&voltages)
                .map_err(|e| Error::Transient { time: t, source: Box::new(e) })?;
            let reading = schedule.read.contains(&step);
            let drain_current = reading.then(|| self.fet.drain_current(sol.phi - program.source_voltage, v_ds));
            observe(&TraceRow {
                time: t,
                phi: sol.phi,
                polarization: self.gates.iter().map(FerroCap::polarization).collect(),
                drain_current,
                residual: sol.residual,
            });
            self.advance(&voltages, sol.phi, t)?;
        }
        Ok(())
    }
}

impl MultiGateDevice {
    /// Advances all gates by one output step starting from the solved
    /// potential `phi`.
    fn advance(&mut self, voltages: &[f64], phi: f64, t: f64) -> Result<()> {
        let dt = self.switching.dt;
        let (max_change, min_sub) = match self.coupling {
            Coupling::Fixed => {
                self.step_gates(voltages, phi, &self.switching.clone());
                return Ok(());
            }
            Coupling::Adaptive { max_phi_change, min_substep } => (max_phi_change, min_substep),
        };
        let mut elapsed = 0.0;
        let mut phi = phi;
        let mut sub = dt;
        let mut first = true;
        while dt - elapsed > dt * 1e-12 {
            if !first {
                phi = self
                    .solve_floating_gate(voltages)
                    .map_err(|e| Error::Transient { time: t + elapsed, source: Box::new(e) })?
                    .phi;
            }
            first = false;
            sub = sub.min(dt - elapsed);
            loop {
                let params = self.switching.with_dt(sub);
                let change = self.expected_phi_change(voltages, phi, &params);
                if change <= max_change || sub <= min_sub {
                    break;
                }
                let shrink = 0.9 * (max_change / change).powf(1.0 / params.beta.max(1.0));
                sub = (sub * shrink.clamp(0.05, 0.5)).max(min_sub);
            }
            let params = self.switching.with_dt(sub);
            self.step_gates(voltages, phi, &params);
            elapsed += sub;
            sub *= 2.0;
        }
        Ok(())
    }

    fn step_gates(&mut self, voltages: &[f64], phi: f64, params: &SwitchingParams) {
        for (g, &v) in self.gates.iter_mut().zip(voltages) {
            g.step(v - phi, params);
        }
    }

    /// Floating-gate shift expected from one sub-step of switching, using
    /// the smaller MOS capacitance of the current and the displaced point.
    fn expected_phi_change(&self, voltages: &[f64], phi: f64, params: &SwitchingParams) -> f64 {
        let mut charges: Vec<f64> = self
            .gates
            .iter()
            .zip(voltages)
            .map(|(g, &v)| {
                let sign = if v - phi >= 0.0 { 1.0 } else { -1.0 };
                sign * g.expected_flips(v - phi, params) * g.flip_charge()
            })
            .collect();
        let moved = canonical_sum(&mut charges).abs();
        if moved == 0.0 {
            return 0.0;
        }
        let mut caps: Vec<f64> = self.gates.iter().map(FerroCap::capacitance).collect();
        let c_gates = canonical_sum(&mut caps);
        let local = moved / (self.fet.mos_capacitance(phi) + c_gates);
        let c0 = self.fet.mos_capacitance(phi).min(self.fet.mos_capacitance(phi + local)).min(self.fet.mos_capacitance(phi - local));
        moved / (c0 + c_gates)
    }
}

/// Per-gate stream seeds for a run seed.
pub fn gate_seeds(seed: u64, n_gates: usize) -> Vec<u64> {
    (0..n_gates as u64).map(|i| derive_seed(seed, i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// V.
    pub amplitude: f64,
    /// s.
    pub duration: f64,
}

/// Piecewise-constant waveform per gate plus the read conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseProgram {
    pub gates: Vec<Vec<Segment>>,
    pub drain_voltage: f64,
    pub source_voltage: f64,
    /// `[start, end)` in s; the drain current is sampled inside.
    pub read_window: (f64, f64),
    /// Zero all switching histories at this time (end of the reset pulse).
    pub clear_histories_at: Option<f64>,
}

struct Schedule {
    steps: usize,
    voltages: Vec<Vec<f64>>,
    read: std::ops::Range<usize>,
    clear_histories_at: Option<usize>,
}

fn whole_steps(duration: f64, dt: f64, what: &str) -> Result<usize> {
    let n = duration / dt;
    let rounded = n.round();
    if !(rounded >= 1.0 && (n - rounded).abs() <= 1e-6 * rounded.max(1.0)) {
        return invalid(format!("{what} {duration:e} s is not a positive multiple of dt = {dt:e} s"));
    }
    Ok(rounded as usize)
}

fn boundary_step(time: f64, dt: f64, what: &str) -> Result<usize> {
    if time == 0.0 {
        return Ok(0);
    }
    whole_steps(time, dt, what)
}

impl PulseProgram {
    fn schedule(&self, dt: f64, n_gates: usize) -> Result<Schedule> {
        if self.gates.len() != n_gates {
            return invalid(format!("program drives {} gates, device has {n_gates}", self.gates.len()));
        }
        let mut voltages = Vec::with_capacity(n_gates);
        for (i, segments) in self.gates.iter().enumerate() {
            if segments.is_empty() {
                return invalid(format!("gate {i} has no segments"));
            }
            let mut wave = Vec::new();
            for s in segments {
                if !s.amplitude.is_finite() {
                    return invalid("segment amplitude must be finite");
                }
                let n = whole_steps(s.duration, dt, "segment duration")?;
                wave.extend(std::iter::repeat_n(s.amplitude, n));
            }
            voltages.push(wave);
        }
        let steps = voltages[0].len();
        if voltages.iter().any(|w| w.len() != steps) {
            return invalid("gate waveforms must span the same total duration");
        }
        let (start, end) = self.read_window;
        let read = boundary_step(start, dt, "read window start")?..boundary_step(end, dt, "read window end")?;
        if read.start >= read.end || read.end > steps {
            return invalid("read window must be non-empty and inside the program");
        }
        let clear_histories_at = self
            .clear_histories_at
            .map(|t| boundary_step(t, dt, "history clear time"))
            .transpose()?;
        Ok(Schedule { steps, voltages, read, clear_histories_at })
    }

    pub fn validate(&self, dt: f64, n_gates: usize) -> Result<()> {
        self.schedule(dt, n_gates).map(|_| ())
    }

    pub fn duration(&self) -> f64 {
        self.gates.first().map(|g| g.iter().map(|s| s.duration).sum()).unwrap_or(0.0)
    }

    /// Holds every gate at `amplitude` for `duration` (read window covers it).
    pub fn constant(n_gates: usize, amplitude: f64, duration: f64, protocol: &Protocol) -> Self {
        Self {
            gates: vec![vec![Segment { amplitude, duration }]; n_gates],
            drain_voltage: protocol.drain_voltage,
            source_voltage: protocol.source_voltage,
            read_window: (0.0, duration),
            clear_histories_at: None,
        }
    }
}

/// Reset / set / read measurement protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub reset_voltage: f64,
    pub reset_duration: f64,
    pub set_duration: f64,
    pub read_duration: f64,
    pub drain_voltage: f64,
    pub source_voltage: f64,
    /// Zero the switching histories once the reset pulse ends.
    pub clear_histories_after_reset: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            reset_voltage: -3.0,
            reset_duration: 1e-3,
            set_duration: 1e-3,
            read_duration: 1e-3,
            drain_voltage: 0.1,
            source_voltage: 0.0,
            clear_histories_after_reset: true,
        }
    }
}

impl Protocol {
    /// Reset pulse on every gate, set pulse `set[i]` on gate `i`, then a read
    /// with all gates grounded.
    pub fn program(&self, set: &[f64]) -> PulseProgram {
        let reset_end = self.reset_duration;
        let read_start = reset_end + self.set_duration;
        PulseProgram {
            gates: set
                .iter()
                .map(|&v| {
                    vec![
                        Segment { amplitude: self.reset_voltage, duration: self.reset_duration },
                        Segment { amplitude: v, duration: self.set_duration },
                        Segment { amplitude: 0.0, duration: self.read_duration },
                    ]
                })
                .collect(),
            drain_voltage: self.drain_voltage,
            source_voltage: self.source_voltage,
            read_window: (read_start, read_start + self.read_duration),
            clear_histories_at: self.clear_histories_after_reset.then_some(reset_end),
        }
    }

    /// Only the reset pulse; the "read" covers the pulse itself.
    pub fn reset_only(&self, n_gates: usize) -> PulseProgram {
        PulseProgram {
            gates: vec![vec![Segment { amplitude: self.reset_voltage, duration: self.reset_duration }]; n_gates],
            drain_voltage: self.drain_voltage,
            source_voltage: self.source_voltage,
            read_window: (0.0, self.reset_duration),
            clear_histories_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// s.
    pub time: f64,
    /// V.
    pub phi: f64,
    /// Per gate, uC/cm^2.
    pub polarization: Vec<f64>,
    /// A; only inside the read window.
    pub drain_current: Option<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// Mean drain current over the read window.
    pub fn read_current(&self) -> Option<f64> {
        let (sum, n) = self
            .rows
            .iter()
            .filter_map(|r| r.drain_current)
            .fold((0.0, 0usize), |(s, n), i| (s + i, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(0.0, f64::max)
    }
}

#[derive(Default)]
struct MeasureAccumulator {
    current_sum: f64,
    phi_sum: f64,
    reads: usize,
    max_residual: f64,
}

impl MeasureAccumulator {
    fn push(&mut self, row: &TraceRow) {
        self.max_residual = self.max_residual.max(row.residual);
        if let Some(i) = row.drain_current {
            self.current_sum += i;
            self.phi_sum += row.phi;
            self.reads += 1;
        }
    }

    fn finish(self, final_polarization: Vec<f64>) -> Result<Measurement> {
        if self.reads == 0 {
            return Err(Error::State("program has no read samples".into()));
        }
        let n = self.reads as f64;
        Ok(Measurement {
            drain_current: self.current_sum / n,
            phi: self.phi_sum / n,
            final_polarization,
            max_residual: self.max_residual,
        })
    }
}

/// Read-window summary of one program run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Mean drain current over the read window, A.
    pub drain_current: f64,
    /// Mean floating-gate potential over the read window, V.
    pub phi: f64,
    /// Per gate at the end of the program, uC/cm^2.
    pub final_polarization: Vec<f64>,
    /// Largest relative charge-balance residual of any step.
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub voltages: Vec<f64>,
    pub drain_current: f64,
    pub phi: f64,
    pub final_polarization: Vec<f64>,
    pub max_residual: f64,
}

/// Every cell of an `amplitudes^N` set-voltage grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub amplitudes: Vec<f64>,
    pub n_gates: usize,
    pub seed: u64,
    pub params_hash: String,
    /// Gate 0 varies fastest.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let n = self.amplitudes.len();
        idx.iter().rev().fold(0, |acc, &i| acc * n + i)
    }

    pub fn grid_index(&self, flat: usize) -> Vec<usize> {
        grid_index(flat, self.amplitudes.len(), self.n_gates)
    }

    pub fn cell(&self, idx: &[usize]) -> &SweepCell {
        &self.cells[self.flat_index(idx)]
    }

    /// Cell whose set voltages equal `voltages` (to 1 uV).
    pub fn cell_at(&self, voltages: &[f64]) -> Option<&SweepCell> {
        let idx = voltages
            .iter()
            .map(|v| self.amplitudes.iter().position(|a| (a - v).abs() < 1e-6))
            .collect::<Option<Vec<_>>>()?;
        (idx.len() == self.n_gates).then(|| self.cell(&idx))
    }

    pub fn max_residual(&self) -> f64 {
        self.cells.iter().map(|c| c.max_residual).fold(0.0, f64::max)
    }
}

fn grid_index(mut flat: usize, n: usize, n_gates: usize) -> Vec<usize> {
    (0..n_gates)
        .map(|_| {
            let i = flat % n;
            flat /= n;
            i
        })
        .collect()
}

/// Order-sensitive 64-bit content hash rendered as hex.
pub fn content_hash(bytes: &[u8]) -> String {
    let h = bytes
        .chunks(8)
        .fold(0x6a09_e667_f3bc_c908u64, |h, chunk| {
            let mut word = [0u8; 8];
            word[..chunk.len()].copy_from_slice(chunk);
            mix64(h ^ u64::from_le_bytes(word)).wrapping_add(chunk.len() as u64)
        });
    format!("{:016x}", mix64(h ^ bytes.len() as u64))
}

/// Seeds of cell `cell` of a sweep with global seed `seed`.
pub fn cell_gate_seeds(seed: u64, cell: usize, n_gates: usize) -> Vec<u64> {
    (0..n_gates as u64).map(|g| derive_path(seed, &[cell as u64, g])).collect()
}

/// Runs reset+set+read for every cell of `amplitudes^N`, cloning `template`
/// per cell. Cells run in parallel on the current rayon pool; results do not
/// depend on scheduling.
pub fn sweep_grid(template: &MultiGateDevice, protocol: &Protocol, amplitudes: &[f64], seed: u64) -> Result<SweepResult> {
    if amplitudes.is_empty() {
        return invalid("sweep needs at least one amplitude");
    }
    let n_gates = template.n_gates();
    let n = amplitudes.len();
    let total = n
        .checked_pow(n_gates as u32)
        .ok_or_else(|| Error::InvalidArgument("sweep grid too large".into()))?;
    let params_hash = content_hash(&serde_json::to_vec(&(template, protocol))?);
    let cells = (0..total)
        .into_par_iter()
        .map(|flat| {
            let voltages: Vec<f64> = grid_index(flat, n, n_gates).into_iter().map(|i| amplitudes[i]).collect();
            let mut device = template.clone();
            device
                .measure(&protocol.program(&voltages), &cell_gate_seeds(seed, flat, n_gates))
                .map(|m| SweepCell {
                    voltages: voltages.clone(),
                    drain_current: m.drain_current,
                    phi: m.phi,
                    final_polarization: m.final_polarization,
                    max_residual: m.max_residual,
                })
                .map_err(|e| Error::SweepCell { coordinates: voltages, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { amplitudes: amplitudes.to_vec(), n_gates, seed, params_hash, cells })
}

/// Turn-on point of one `I_D(V_sweep)` curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOnCurve {
    /// Set voltages of the non-swept gates, in gate order.
    pub others: Vec<f64>,
    /// (V_sweep, I_D) samples.
    pub currents: Vec<(f64, f64)>,
    /// Interpolated sweep voltage where I_D first reaches the criterion;
    /// `None` if it never does, `Some(first grid value)` if already on.
    pub turn_on: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdShift {
    pub criterion: f64,
    pub curves: Vec<TurnOnCurve>,
    /// Mean turn-on voltage per sum of the other set voltages (curves that
    /// turn on only).
    pub by_other_sum: Vec<(f64, f64)>,
    /// True when the turn-on voltage never increases with the other-gate sum.
    pub monotone: bool,
}

/// Linear-interpolated crossing of `criterion` along a sampled curve.
pub fn turn_on_voltage(currents: &[(f64, f64)], criterion: f64) -> Option<f64> {
    let first = currents.first()?;
    if first.1 >= criterion {
        return Some(first.0);
    }
    currents.windows(2).find_map(|w| {
        let ((v0, i0), (v1, i1)) = (w[0], w[1]);
        (i0 < criterion && i1 >= criterion).then(|| v0 + (criterion - i0) / (i1 - i0) * (v1 - v0))
    })
}

/// Extracts the turn-on voltage of gate `sweep_gate` for every assignment
/// of the other gates accepted by `keep`.
pub fn threshold_shift_analysis(
    result: &SweepResult,
    sweep_gate: usize,
    criterion: f64,
    keep: impl Fn(&[f64]) -> bool,
) -> Result<ThresholdShift> {
    if sweep_gate >= result.n_gates {
        return invalid("sweep gate out of range");
    }
    let n = result.amplitudes.len();
    let others_total = n.pow(result.n_gates as u32 - 1);
    let mut curves = Vec::new();
    for o in 0..others_total {
        let other_idx = grid_index(o, n, result.n_gates - 1);
        let others: Vec<f64> = other_idx.iter().map(|&i| result.amplitudes[i]).collect();
        if !keep(&others) {
            continue;
        }
        let currents: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let mut idx = other_idx.clone();
                idx.insert(sweep_gate, k);
                (result.amplitudes[k], result.cell(&idx).drain_current)
            })
            .collect();
        let turn_on = turn_on_voltage(&currents, criterion);
        curves.push(TurnOnCurve { others, currents, turn_on });
    }
    if curves.is_empty() {
        return invalid("no curve matches the requested slice");
    }
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for c in &curves {
        let (Some(v), s) = (c.turn_on, c.others.iter().sum::<f64>()) else { continue };
        match sums.iter_mut().find(|e| (e.0 - s).abs() < 1e-9) {
            Some(e) => {
                e.1 += v;
                e.2 += 1;
            }
            None => sums.push((s, v, 1)),
        }
    }
    sums.sort_by(|a, b| a.0.total_cmp(&b.0));
    let by_other_sum: Vec<(f64, f64)> = sums.into_iter().map(|(s, v, k)| (s, v / k as f64)).collect();
    let monotone = by_other_sum.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    Ok(ThresholdShift { criterion, curves, by_other_sum, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fet::CapacitanceModel;
    use approx::assert_relative_eq;

    fn capacitive_device(n_gates: usize, c0_equals_ci: bool) -> MultiGateDevice {
        let geometry = FerroGeometry { saturation_polarization: 0.0, ..Default::default() };
        let c = geometry.capacitance();
        let fet = FetParams {
            capacitance_model: CapacitanceModel::Constant { farads: if c0_equals_ci { c } else { 4.0 * c } },
            ..Default::default()
        };
        DeviceSpec { n_gates, n_domains: 10, geometry, fet, ..Default::default() }.build(1).unwrap()
    }

    #[test]
    fn capacitive_divider() {
        let d = capacitive_device(3, true);
        let s = d.solve_floating_gate(&[1.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(s.phi, 0.75, max_relative = 1e-9);
        assert!(s.residual <= SOLVER_TOLERANCE);
    }

    #[test]
    fn zero_input_zero_potential() {
        let d = DeviceSpec::default().build(3).unwrap();
        let s = d.solve_floating_gate(&[0.0, 0.0, 0.0]).unwrap();
        assert!(s.phi.abs() < 1e-12);
        let literal = DeviceSpec { geometry: FerroGeometry { saturation_polarization: 0.0, ..Default::default() }, reference: PolarizationReference::Zero, ..Default::default() }
            .build(3)
            .unwrap();
        assert!(literal.solve_floating_gate(&[0.0, 0.0, 0.0]).unwrap().phi.abs() < 1e-12);
    }

    #[test]
    fn wrong_voltage_count() {
        let d = capacitive_device(3, true);
        assert!(d.solve_floating_gate(&[1.0]).is_err());
    }

    #[test]
    fn delta_shift_is_linear() {
        let mut d = capacitive_device(3, false);
        let base = d.solve_floating_gate(&[1.0, 0.5, 2.0]).unwrap().phi;
        let c_total = d.fet().mos_capacitance(0.0) + d.gates().iter().map(FerroCap::capacitance).sum::<f64>();
        let delta = 3e-12;
        d.set_floating_charge(delta);
        let shifted = d.solve_floating_gate(&[1.0, 0.5, 2.0]).unwrap().phi;
        assert_relative_eq!(shifted - base, -delta / c_total, max_relative = 1e-8);
    }

    #[test]
    fn program_validation() {
        let d = capacitive_device(2, true);
        let dt = d.switching().dt;
        let p = PulseProgram {
            gates: vec![vec![Segment { amplitude: 1.0, duration: 1.5 * dt }]; 2],
            drain_voltage: 0.1,
            source_voltage: 0.0,
            read_window: (0.0, dt),
            clear_histories_at: None,
        };
        assert!(p.validate(dt, 2).is_err());
        let uneven = PulseProgram {
            gates: vec![vec![Segment { amplitude: 1.0, duration: dt }], vec![Segment { amplitude: 1.0, duration: 2.0 * dt }]],
            ..p.clone()
        };
        assert!(uneven.validate(dt, 2).is_err());
        let ok = Protocol::default().program(&[1.0, 2.0]);
        assert!(ok.validate(dt, 2).is_ok());
        assert!(ok.validate(dt, 3).is_err());
    }

    #[test]
    fn zero_drive_is_static() {
        let mut d = DeviceSpec::default().build(5).unwrap();
        let prog = PulseProgram::constant(3, 0.0, 2e-4, &Protocol::default());
        let trace = d.run_program(&prog, 9).unwrap();
        let first = &trace.rows[0];
        for r in &trace.rows {
            assert_eq!(r.phi, first.phi);
            assert_eq!(r.polarization, first.polarization);
            assert_eq!(r.drain_current, first.drain_current);
        }
    }

    #[test]
    fn grid_indexing_round_trips() {
        let r = SweepResult { amplitudes: vec![0.0, 1.0, 2.0], n_gates: 3, seed: 0, params_hash: String::new(), cells: vec![] };
        for flat in 0..27 {
            assert_eq!(r.flat_index(&r.grid_index(flat)), flat);
        }
        assert_eq!(r.grid_index(1), vec![1, 0, 0]);
    }

    #[test]
    fn turn_on_interpolation() {
        let c = [(0.0, 0.0), (1.0, 1.0), (2.0, 3.0)];
        assert_eq!(turn_on_voltage(&c, 2.0), Some(1.5));
        assert_eq!(turn_on_voltage(&c, 5.0), None);
        assert_eq!(turn_on_voltage(&c, 0.0), Some(0.0));
    }

    #[test]
    fn content_hash_is_stable() {
        assert_eq!(content_hash(b"abc"), content_hash(b"abc"));
        assert_ne!(content_hash(b"abc"), content_hash(b"abd"));
        assert_eq!(content_hash(b"abc").len(), 16);
    }
}
