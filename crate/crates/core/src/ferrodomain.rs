//! Stochastic multi-domain ferroelectric capacitor.
//!
//! Each capacitor holds `M` independent binary domains. A domain opposing the
//! applied field accumulates a history `h = sum(dt / tau)` with
//! `tau = tau0 * exp((E_a / |E|)^alpha)`, and flips within a step with
//! probability `1 - exp(h^beta - (h + dh)^beta)`. The net polarization is
//! `P_S` times the mean domain state.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, seeded, CounterRng};
use crate::units::{
    cm2_to_m2, mv_per_cm_to_v_per_m, nm_to_m, uc_per_cm2_to_c_per_m2,
    v_per_m_to_mv_per_cm, EPSILON_0,
};

/// Parameters of the nucleation-limited switching kinetics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchingParams {
    /// Attempt time constant, s.
    pub tau0: f64,
    /// Field-acceleration exponent.
    pub alpha: f64,
    /// Weibull shape parameter.
    pub beta: f64,
    /// Mean of the activation-field distribution, MV/cm.
    pub ea_mean: f64,
    /// Standard deviation of the activation-field distribution, MV/cm.
    pub ea_sigma: f64,
    /// Monte Carlo time step, s.
    pub dt: f64,
}

impl Default for SwitchingParams {
    fn default() -> Self {
        Self {
            tau0: 2e-8,
            alpha: 4.0,
            beta: 2.0,
            ea_mean: 3.0,
            ea_sigma: 1.0,
            dt: 10e-6,
        }
    }
}

impl SwitchingParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.tau0 > 0.0, "tau0 must be positive"),
            (self.alpha > 0.0, "alpha must be positive"),
            (self.beta > 0.0, "beta must be positive"),
            (self.ea_sigma >= 0.0, "ea_sigma must be non-negative"),
            (self.dt > 0.0, "dt must be positive"),
            (self.ea_mean.is_finite(), "ea_mean must be finite"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return invalid(msg);
            }
        }
        Ok(())
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

/// Draws `count` activation fields (MV/cm) from `N(ea_mean, ea_sigma^2)`,
/// redrawing non-positive samples.
pub fn sample_activation_fields(params: &SwitchingParams, count: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return invalid("activation-field count must be at least 1");
    }
    params.validate()?;
    if params.ea_sigma == 0.0 {
        if params.ea_mean <= 0.0 {
            return invalid("degenerate activation-field distribution must have a positive mean");
        }
        return Ok(vec![params.ea_mean; count]);
    }
    let normal = Normal::new(params.ea_mean, params.ea_sigma)
        .map_err(|e| crate::Error::InvalidArgument(format!("activation-field distribution: {e}")))?;
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let draw = normal.sample(&mut rng);
        if draw > 0.0 {
            out.push(draw);
        }
    }
    Ok(out)
}

/// `tau0 * exp((e_a / |e_fe|)^alpha)` in seconds; infinite at zero field.
pub fn switching_time_constant(e_fe: f64, e_a: f64, params: &SwitchingParams) -> f64 {
    let e = e_fe.abs();
    if e == 0.0 {
        return f64::INFINITY;
    }
    params.tau0 * (e_a / e).powf(params.alpha).exp()
}

/// History increment `dt / tau` for a domain with activation field `e_a`
/// under field magnitude `e` (same units). Evaluated without forming `tau`,
/// so weak fields underflow to zero instead of overflowing.
#[inline]
fn history_increment(e_a: f64, e: f64, params: &SwitchingParams) -> f64 {
    (params.dt / params.tau0) * (-pow(e_a / e, params.alpha)).exp()
}

/// `x^a` with exact products for the common small integer exponents.
#[inline]
fn pow(x: f64, a: f64) -> f64 {
    if a == 2.0 {
        x * x
    } else if a == 4.0 {
        let x2 = x * x;
        x2 * x2
    } else if a == 1.0 {
        x
    } else {
        x.powf(a)
    }
}

/// Conditional switching probability within one step.
#[inline]
pub fn switch_probability(history: f64, increment: f64, beta: f64) -> f64 {
    -(pow(history, beta) - pow(history + increment, beta)).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Down,
    Up,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Down => -1.0,
            Polarity::Up => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    state: Polarity,
    /// V/m.
    activation_field: f64,
    history: f64,
}

impl Domain {
    pub fn state(&self) -> Polarity {
        self.state
    }

    /// Activation field in MV/cm.
    pub fn activation_field(&self) -> f64 {
        v_per_m_to_mv_per_cm(self.activation_field)
    }

    pub fn history(&self) -> f64 {
        self.history
    }
}

/// Capacitor geometry and material in table units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FerroGeometry {
    /// uC/cm^2.
    pub saturation_polarization: f64,
    /// cm^2.
    pub area: f64,
    /// nm.
    pub thickness: f64,
    /// Relative permittivity of the ferroelectric background.
    pub permittivity: f64,
}

impl Default for FerroGeometry {
    fn default() -> Self {
        Self {
            saturation_polarization: 28.0,
            // 50 um x 50 um
            area: 2.5e-5,
            thickness: 10.0,
            permittivity: 30.0,
        }
    }
}

impl FerroGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.saturation_polarization >= 0.0) {
            return invalid("saturation polarization must be non-negative");
        }
        if !(self.area > 0.0 && self.thickness > 0.0 && self.permittivity > 0.0) {
            return invalid("ferroelectric area, thickness and permittivity must be positive");
        }
        Ok(())
    }

    /// Linear (background) capacitance in F.
    pub fn capacitance(&self) -> f64 {
        EPSILON_0 * self.permittivity * cm2_to_m2(self.area) / nm_to_m(self.thickness)
    }
}

/// One ferroelectric gate capacitor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FerroCap {
    domains: Vec<Domain>,
    geometry: FerroGeometry,
    /// C/m^2.
    saturation_polarization: f64,
    /// m^2.
    area: f64,
    /// m.
    thickness: f64,
    capacitance: f64,
    rng: CounterRng,
    step_index: u64,
    up_count: usize,
}

impl FerroCap {
    /// Builds a capacitor with `n_domains` freshly drawn activation fields,
    /// every domain in the negative (reset) state.
    pub fn new(geometry: FerroGeometry, params: &SwitchingParams, n_domains: usize, seed: u64) -> Result<Self> {
        let fields = sample_activation_fields(params, n_domains, derive_seed(seed, 0))?;
        Self::from_activation_fields(geometry, &fields, derive_seed(seed, 1))
    }

    /// Builds a capacitor from explicit activation fields in MV/cm.
    pub fn from_activation_fields(geometry: FerroGeometry, fields: &[f64], stream_seed: u64) -> Result<Self> {
        geometry.validate()?;
        if fields.is_empty() {
            return invalid("a capacitor needs at least one domain");
        }
        if let Some(bad) = fields.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
            return invalid(format!("activation field must be positive, got {bad}"));
        }
        let domains = fields
            .iter()
            .map(|&e| Domain {
                state: Polarity::Down,
                activation_field: mv_per_cm_to_v_per_m(e),
                history: 0.0,
            })
            .collect();
        Ok(Self {
            domains,
            geometry,
            saturation_polarization: uc_per_cm2_to_c_per_m2(geometry.saturation_polarization),
            area: cm2_to_m2(geometry.area),
            thickness: nm_to_m(geometry.thickness),
            capacitance: geometry.capacitance(),
            rng: CounterRng::new(stream_seed),
            step_index: 0,
            up_count: 0,
        })
    }

    pub fn geometry(&self) -> &FerroGeometry {
        &self.geometry
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }

    pub fn up_count(&self) -> usize {
        self.up_count
    }

    /// Linear capacitance in F.
    pub fn capacitance(&self) -> f64 {
        self.capacitance
    }

    /// Area in m^2.
    pub fn area(&self) -> f64 {
        self.area
    }

    /// Thickness in m.
    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    /// Saturation charge `P_S * A` in C.
    pub fn saturation_charge(&self) -> f64 {
        self.saturation_polarization * self.area
    }

    /// Net polarization in uC/cm^2.
    pub fn polarization(&self) -> f64 {
        self.geometry.saturation_polarization * self.mean_state()
    }

    /// Net polarization in C/m^2.
    pub fn polarization_si(&self) -> f64 {
        self.saturation_polarization * self.mean_state()
    }

    /// Net polarization charge `P * A` in C.
    pub fn polarization_charge(&self) -> f64 {
        self.polarization_si() * self.area
    }

    /// Mean domain state in [-1, 1].
    pub fn mean_state(&self) -> f64 {
        let m = self.domains.len() as i64;
        let up = self.up_count as i64;
        (2 * up - m) as f64 / m as f64
    }

    /// Replaces the switching stream and restarts its counter.
    pub fn reseed(&mut self, stream_seed: u64) {
        self.rng = CounterRng::new(stream_seed);
        self.step_index = 0;
    }

    pub fn stream_key(&self) -> u64 {
        self.rng.key()
    }

    /// Forces every domain into `polarity` with zero history.
    pub fn saturate(&mut self, polarity: Polarity) {
        for d in &mut self.domains {
            d.state = polarity;
            d.history = 0.0;
        }
        self.up_count = match polarity {
            Polarity::Up => self.domains.len(),
            Polarity::Down => 0,
        };
    }

    pub fn clear_histories(&mut self) {
        for d in &mut self.domains {
            d.history = 0.0;
        }
    }

    /// Target state and field magnitude (V/m) for `v_fe`, or `None` when the
    /// field cannot switch anything.
    fn drive(&self, v_fe: f64) -> Option<(Polarity, f64)> {
        let field = v_fe / self.thickness;
        if field == 0.0 || !field.is_finite() {
            return None;
        }
        let target = if field > 0.0 { Polarity::Up } else { Polarity::Down };
        Some((target, field.abs()))
    }

    /// Expected number of flips if [`FerroCap::step`] were called now.
    pub fn expected_flips(&self, v_fe: f64, params: &SwitchingParams) -> f64 {
        let Some((target, magnitude)) = self.drive(v_fe) else {
            return 0.0;
        };
        self.domains
            .iter()
            .filter(|d| d.state != target)
            .map(|d| {
                let dh = history_increment(d.activation_field, magnitude, params);
                if dh == 0.0 {
                    0.0
                } else {
                    switch_probability(d.history, dh, params.beta)
                }
            })
            .sum()
    }

    /// Advances the domain ensemble by one `dt` with voltage `v_fe` across
    /// the ferroelectric. Returns the number of domains that flipped.
    pub fn step(&mut self, v_fe: f64, params: &SwitchingParams) -> usize {
        let step = self.step_index;
        self.step_index += 1;
        let Some((target, magnitude)) = self.drive(v_fe) else {
            return 0;
        };
        let mut flips = 0usize;
        for (k, d) in self.domains.iter_mut().enumerate() {
            if d.state == target {
                continue;
            }
            let dh = history_increment(d.activation_field, magnitude, params);
            if dh == 0.0 {
                continue;
            }
            let p = switch_probability(d.history, dh, params.beta);
            if self.rng.uniform(step, k as u64) < p {
                d.state = target;
                d.history = 0.0;
                flips += 1;
            } else {
                d.history += dh;
            }
        }
        match target {
            Polarity::Up => self.up_count += flips,
            Polarity::Down => self.up_count -= flips,
        }
        flips
    }

    /// Charge moved onto the electrode by one domain flip, C.
    pub fn flip_charge(&self) -> f64 {
        2.0 * self.saturation_polarization * self.area / self.domains.len() as f64
    }

    /// Total charge on the capacitor at terminal voltage `v_fe`: `P*A + C*V`.
    pub fn charge(&self, v_fe: f64) -> f64 {
        self.polarization_charge() + self.capacitance * v_fe
    }

    /// Drives the capacitor through `waveform`, returning the Q-V trajectory.
    pub fn hysteresis_sweep(&mut self, waveform: &Waveform, params: &SwitchingParams) -> Result<Vec<LoopPoint>> {
        params.validate()?;
        if waveform.dt > params.dt * (1.0 + 1e-9) {
            return invalid(format!(
                "waveform sample interval {:e} s is coarser than the switching step {:e} s",
                waveform.dt, params.dt
            ));
        }
        let stepping = params.with_dt(waveform.dt);
        let mut out = Vec::with_capacity(waveform.voltages.len());
        for (i, &v) in waveform.voltages.iter().enumerate() {
            self.step(v, &stepping);
            out.push(LoopPoint {
                time: (i + 1) as f64 * waveform.dt,
                voltage: v,
                charge: self.charge(v),
            });
        }
        Ok(out)
    }
}

/// A uniformly sampled voltage waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    /// Sample interval, s.
    pub dt: f64,
    pub voltages: Vec<f64>,
}

/// Symmetric triangle: 0 -> +A -> 0 -> -A -> 0 per period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleWave {
    pub amplitude: f64,
    pub period: f64,
    pub cycles: usize,
}

impl TriangleWave {
    pub fn value_at(&self, t: f64) -> f64 {
        let phase = (t / self.period).rem_euclid(1.0);
        let a = self.amplitude;
        if phase < 0.25 {
            4.0 * a * phase
        } else if phase < 0.75 {
            a * (2.0 - 4.0 * phase)
        } else {
            a * (4.0 * phase - 4.0)
        }
    }

    /// Samples the wave at `dt`, one sample per step, ending on the last
    /// full period.
    pub fn sample(&self, dt: f64) -> Result<Waveform> {
        if !(dt > 0.0 && self.period > 0.0) {
            return invalid("triangle period and sample interval must be positive");
        }
        let per_period = (self.period / dt).round() as usize;
        if per_period < 4 {
            return invalid("triangle needs at least four samples per period");
        }
        let n = per_period * self.cycles;
        let voltages = (1..=n).map(|i| self.value_at(i as f64 * dt)).collect();
        Ok(Waveform { dt, voltages })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopPoint {
    /// s.
    pub time: f64,
    /// V.
    pub voltage: f64,
    /// C.
    pub charge: f64,
}

/// Signed area enclosed by a closed Q-V path (shoelace), V*C.
/// Positive for counterclockwise traversal.
pub fn loop_area(points: &[LoopPoint]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            a.voltage * b.charge - b.voltage * a.charge
        })
        .sum();
    0.5 * twice
}

/// Charge where the path crosses `V = 0`, linearly interpolated between the
/// bracketing samples. One entry per crossing.
pub fn zero_voltage_charges(points: &[LoopPoint]) -> Vec<f64> {
    let mut out = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.voltage == 0.0 {
            out.push(a.charge);
        } else if a.voltage.signum() != b.voltage.signum() && b.voltage != 0.0 {
            let f = a.voltage / (a.voltage - b.voltage);
            out.push(a.charge + f * (b.charge - a.charge));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_domain(e_a: f64, seed: u64) -> FerroCap {
        FerroCap::from_activation_fields(FerroGeometry::default(), &[e_a], seed).unwrap()
    }

    #[test]
    fn degenerate_distribution_is_constant() {
        let p = SwitchingParams { ea_sigma: 0.0, ..Default::default() };
        assert_eq!(sample_activation_fields(&p, 4, 9).unwrap(), vec![3.0; 4]);
    }

    #[test]
    fn sampling_is_deterministic_and_positive() {
        let p = SwitchingParams::default();
        let a = sample_activation_fields(&p, 5000, 11).unwrap();
        let b = sample_activation_fields(&p, 5000, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&e| e > 0.0));
        assert_ne!(a, sample_activation_fields(&p, 5000, 12).unwrap());
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(matches!(
            sample_activation_fields(&SwitchingParams::default(), 0, 1),
            Err(crate::Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sample_mean_converges() {
        let p = SwitchingParams::default();
        let draws = sample_activation_fields(&p, 100_000, 2024).unwrap();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 3.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn time_constant_examples() {
        let p = SwitchingParams::default();
        assert_relative_eq!(switching_time_constant(3.0, 3.0, &p), 2e-8 * std::f64::consts::E, max_relative = 1e-12);
        assert!((switching_time_constant(3.0, 3.0, &p) - 5.437e-8).abs() < 1e-11);
        assert_eq!(switching_time_constant(0.0, 3.0, &p), f64::INFINITY);
        let slow = switching_time_constant(1.5, 3.0, &p);
        assert_relative_eq!(slow, 2e-8 * 16f64.exp(), max_relative = 1e-12);
        assert!((slow - 1.777e-1).abs() < 1e-3);
        assert_eq!(switching_time_constant(-1.5, 3.0, &p), slow);
    }

    #[test]
    fn switch_probability_example() {
        let p = switch_probability(0.0, 0.1, 2.0);
        assert_relative_eq!(p, 1.0 - (-0.01f64).exp(), max_relative = 1e-14);
        assert!((p - 0.00995).abs() < 1e-5);
    }

    #[test]
    fn zero_field_step_is_identity() {
        let p = SwitchingParams::default();
        let mut cap = FerroCap::new(FerroGeometry::default(), &p, 200, 3).unwrap();
        cap.step(2.0, &p);
        let before = cap.domains().to_vec();
        assert_eq!(cap.step(0.0, &p), 0);
        assert_eq!(cap.domains(), &before[..]);
    }

    #[test]
    fn long_constant_field_saturates() {
        let p = SwitchingParams::default();
        let mut cap = FerroCap::new(FerroGeometry::default(), &p, 500, 5).unwrap();
        for _ in 0..200 {
            cap.step(8.0, &p);
        }
        assert_eq!(cap.polarization(), 28.0);
        for _ in 0..200 {
            cap.step(-8.0, &p);
        }
        assert_eq!(cap.polarization(), -28.0);
    }

    #[test]
    fn polarization_examples() {
        let p = SwitchingParams::default();
        let mut cap = FerroCap::new(FerroGeometry::default(), &p, 10, 1).unwrap();
        cap.saturate(Polarity::Up);
        assert_eq!(cap.polarization(), 28.0);
        for d in cap.domains.iter_mut().take(5) {
            d.state = Polarity::Down;
        }
        cap.up_count = 5;
        assert_eq!(cap.polarization(), 0.0);

        let geometry = FerroGeometry { saturation_polarization: 0.0, ..Default::default() };
        let mut ablated = FerroCap::new(geometry, &p, 10, 1).unwrap();
        ablated.saturate(Polarity::Up);
        assert_eq!(ablated.polarization(), 0.0);
    }

    #[test]
    fn aligned_domains_untouched() {
        let p = SwitchingParams::default();
        let mut cap = single_domain(0.5, 1);
        cap.saturate(Polarity::Up);
        cap.step(5.0, &p);
        assert_eq!(cap.domains()[0].history(), 0.0);
        assert_eq!(cap.domains()[0].state(), Polarity::Up);
    }

    #[test]
    fn history_accumulates_until_flip() {
        // Choose a field where dt/tau = 0.1 per step.
        let p = SwitchingParams::default();
        let ratio: f64 = (p.dt / p.tau0 / 0.1).ln().powf(1.0 / p.alpha);
        let e_fe = 3.0 / ratio; // MV/cm
        let v = e_fe * 1e8 * 10e-9;
        let mut cap = single_domain(3.0, 77);
        let mut last = 0.0;
        for _ in 0..1000 {
            cap.step(v, &p);
            let d = &cap.domains()[0];
            if d.state() == Polarity::Up {
                assert_eq!(d.history(), 0.0);
                return;
            }
            assert!(d.history() > last);
            assert_relative_eq!(d.history() - last, 0.1, max_relative = 1e-9);
            last = d.history();
        }
        panic!("domain never switched");
    }

    #[test]
    fn coarse_waveform_rejected() {
        let p = SwitchingParams::default();
        let mut cap = FerroCap::new(FerroGeometry::default(), &p, 10, 1).unwrap();
        let w = Waveform { dt: 2.0 * p.dt, voltages: vec![0.0; 4] };
        assert!(cap.hysteresis_sweep(&w, &p).is_err());
    }

    #[test]
    fn linear_capacitor_has_no_loop() {
        let p = SwitchingParams::default().with_dt(1e-7);
        let geometry = FerroGeometry { saturation_polarization: 0.0, ..Default::default() };
        let mut cap = FerroCap::new(geometry, &p, 100, 1).unwrap();
        let wave = TriangleWave { amplitude: 2.5, period: 40e-6, cycles: 1 }.sample(1e-7).unwrap();
        let pts = cap.hysteresis_sweep(&wave, &p).unwrap();
        let scale = cap.capacitance() * 2.5 * 2.5;
        assert!(loop_area(&pts).abs() < 1e-12 * scale);
    }

    #[test]
    fn triangle_shape() {
        let w = TriangleWave { amplitude: 2.5, period: 40e-6, cycles: 1 };
        assert_relative_eq!(w.value_at(10e-6), 2.5);
        assert_relative_eq!(w.value_at(20e-6), 0.0, epsilon = 1e-12);
        assert_relative_eq!(w.value_at(30e-6), -2.5);
        let s = w.sample(1e-6).unwrap();
        assert_eq!(s.voltages.len(), 40);
        assert!(s.voltages.iter().all(|v| v.abs() <= 2.5 + 1e-12));
    }
}
