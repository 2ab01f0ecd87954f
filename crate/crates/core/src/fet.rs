//! Long-channel FET under the shared floating gate.
//!
//! Drain current is piecewise: exponential below threshold, square law above,
//! joined at the threshold-crossing current `I_T = K (n kT/q)^2 (1 - e^{-V_DS/(kT/q)})`
//! and floored at a leakage current. The gate capacitance `C0` follows the
//! depletion approximation: the full oxide capacitance in accumulation, oxide
//! in series with the depletion capacitance between flat band and threshold,
//! and a smooth recovery to the oxide capacitance in inversion.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::units::{cm2_to_m2, nm_to_m, per_cm3_to_per_m3, thermal_voltage, ELEMENTARY_CHARGE, EPSILON_0};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapacitanceModel {
    /// Regime-dependent depletion-approximation C-V.
    Depletion,
    /// Fixed capacitance in F.
    Constant { farads: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FetParams {
    /// nm.
    pub oxide_thickness: f64,
    pub oxide_permittivity: f64,
    /// Gate (channel) area W*L, cm^2.
    pub channel_area: f64,
    /// W/L.
    pub aspect_ratio: f64,
    /// Acceptor doping, cm^-3.
    pub substrate_doping: f64,
    /// K.
    pub temperature: f64,
    /// V.
    pub threshold_voltage: f64,
    /// Transconductance prefactor per square, A/V^2 (multiplied by W/L).
    pub mobility_factor: f64,
    /// mV/decade.
    pub subthreshold_swing: f64,
    /// A.
    pub off_current_floor: f64,
    /// Intrinsic carrier density, cm^-3.
    pub intrinsic_density: f64,
    pub silicon_permittivity: f64,
    /// Width of the depletion-to-inversion capacitance recovery, V.
    pub inversion_width: f64,
    pub capacitance_model: CapacitanceModel,
}

/// Channel area, threshold voltage and inversion width are
/// calibration constants: with the default ferroelectric stack they place the
/// (V, 1, 1) turn-on near 1.5 V, keep the all-4 V cell the largest current of
/// the set-voltage grid and let the equal-sum curves cross above 2 V.
impl Default for FetParams {
    fn default() -> Self {
        Self {
            oxide_thickness: 10.0,
            oxide_permittivity: 3.9,
            channel_area: 486.0 * 2.5e-5,
            aspect_ratio: 1.0,
            substrate_doping: 1e15,
            temperature: 300.0,
            threshold_voltage: 0.46,
            mobility_factor: 1.4e-4,
            subthreshold_swing: 80.0,
            off_current_floor: 1e-12,
            intrinsic_density: 1e10,
            silicon_permittivity: 11.7,
            inversion_width: 3.79,
            capacitance_model: CapacitanceModel::Depletion,
        }
    }
}

impl FetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.oxide_thickness > 0.0) {
            return invalid("oxide thickness must be positive");
        }
        if !(self.temperature > 0.0) {
            return invalid("temperature must be positive");
        }
        if !(self.off_current_floor > 0.0) {
            return invalid("off-current floor must be positive");
        }
        let ideal = 60.0 * self.temperature / 300.0;
        if self.subthreshold_swing < ideal - 0.3 {
            return invalid(format!(
                "subthreshold swing {} mV/dec is below the thermal limit {ideal:.1} mV/dec",
                self.subthreshold_swing
            ));
        }
        if !(self.channel_area > 0.0 && self.aspect_ratio > 0.0 && self.mobility_factor > 0.0) {
            return invalid("channel area, aspect ratio and mobility factor must be positive");
        }
        if !(self.substrate_doping > self.intrinsic_density && self.intrinsic_density > 0.0) {
            return invalid("substrate doping must exceed the intrinsic density");
        }
        if !(self.inversion_width > 0.0) {
            return invalid("inversion width must be positive");
        }
        if let CapacitanceModel::Constant { farads } = self.capacitance_model {
            if !(farads > 0.0) {
                return invalid("constant MOS capacitance must be positive");
            }
        }
        Ok(())
    }

    /// kT/q.
    pub fn thermal_voltage(&self) -> f64 {
        thermal_voltage(self.temperature)
    }

    /// Subthreshold ideality factor.
    pub fn ideality(&self) -> f64 {
        self.subthreshold_swing * 1e-3 / (self.thermal_voltage() * std::f64::consts::LN_10)
    }

    fn prefactor(&self) -> f64 {
        self.mobility_factor * self.aspect_ratio
    }

    /// Current at the subthreshold/above-threshold junction for this drain bias.
    pub fn threshold_current(&self, v_ds: f64) -> f64 {
        let vth = self.thermal_voltage();
        let nv = self.ideality() * vth;
        self.prefactor() * nv * nv * (-(-v_ds / vth).exp_m1())
    }

    /// Oxide capacitance per unit area, F/m^2.
    pub fn oxide_capacitance_per_area(&self) -> f64 {
        EPSILON_0 * self.oxide_permittivity / nm_to_m(self.oxide_thickness)
    }

    /// Total oxide capacitance, F.
    pub fn oxide_capacitance(&self) -> f64 {
        self.oxide_capacitance_per_area() * cm2_to_m2(self.channel_area)
    }

    /// Bulk Fermi potential, V.
    pub fn fermi_potential(&self) -> f64 {
        self.thermal_voltage() * (self.substrate_doping / self.intrinsic_density).ln()
    }

    fn silicon_eps(&self) -> f64 {
        EPSILON_0 * self.silicon_permittivity
    }

    fn doping_si(&self) -> f64 {
        per_cm3_to_per_m3(self.substrate_doping)
    }

    /// Depletion charge at the onset of strong inversion, C/m^2.
    pub fn threshold_depletion_charge(&self) -> f64 {
        (2.0 * ELEMENTARY_CHARGE * self.silicon_eps() * self.doping_si() * 2.0 * self.fermi_potential()).sqrt()
    }

    /// Flat-band voltage implied by the threshold voltage.
    pub fn flat_band_voltage(&self) -> f64 {
        self.threshold_voltage
            - 2.0 * self.fermi_potential()
            - self.threshold_depletion_charge() / self.oxide_capacitance_per_area()
    }

    /// Per-area capacitance in depletion for gate voltage `v_g` with
    /// `v_fb < v_g <= v_t`.
    fn depletion_capacitance_per_area(&self, v_g: f64) -> f64 {
        let cox = self.oxide_capacitance_per_area();
        let es = self.silicon_eps();
        let na = self.doping_si();
        let gamma = (2.0 * ELEMENTARY_CHARGE * es * na).sqrt() / cox;
        let drive = (v_g - self.flat_band_voltage()).max(0.0);
        // v_g - v_fb = psi + gamma * sqrt(psi); solve for sqrt(psi).
        let root = 0.5 * (-gamma + (gamma * gamma + 4.0 * drive).sqrt());
        let psi = root * root;
        if psi <= 0.0 {
            return cox;
        }
        let width = (2.0 * es * psi / (ELEMENTARY_CHARGE * na)).sqrt();
        let cdep = es / width;
        cox * cdep / (cox + cdep)
    }

    /// Drain current in A for floating-gate (gate-source) voltage `phi_f` and
    /// drain-source bias `v_ds >= 0`.
    pub fn drain_current(&self, phi_f: f64, v_ds: f64) -> f64 {
        let v_ds = v_ds.max(0.0);
        let i_t = self.threshold_current(v_ds);
        let overdrive = phi_f - self.threshold_voltage;
        let current = if overdrive <= 0.0 {
            i_t * (overdrive / (self.ideality() * self.thermal_voltage())).exp()
        } else {
            let k = self.prefactor();
            let strong = if overdrive < v_ds {
                0.5 * overdrive * overdrive
            } else {
                overdrive * v_ds - 0.5 * v_ds * v_ds
            };
            i_t + k * strong
        };
        current.max(self.off_current_floor)
    }

    /// MOS gate capacitance `C0` in F at floating-gate voltage `phi_f`.
    pub fn mos_capacitance(&self, phi_f: f64) -> f64 {
        let per_area = match self.capacitance_model {
            CapacitanceModel::Constant { farads } => return farads,
            CapacitanceModel::Depletion => {
                let cox = self.oxide_capacitance_per_area();
                let v_fb = self.flat_band_voltage();
                let v_t = self.threshold_voltage;
                if phi_f <= v_fb {
                    cox
                } else if phi_f <= v_t {
                    self.depletion_capacitance_per_area(phi_f)
                } else {
                    let c_min = self.depletion_capacitance_per_area(v_t);
                    cox - (cox - c_min) * (-(phi_f - v_t) / self.inversion_width).exp()
                }
            }
        };
        per_area * cm2_to_m2(self.channel_area)
    }
}

/// Free-function form of [`FetParams::drain_current`].
pub fn drain_current(phi_f: f64, v_ds: f64, params: &FetParams) -> f64 {
    params.drain_current(phi_f, v_ds)
}

/// Free-function form of [`FetParams::mos_capacitance`].
pub fn mos_capacitance(phi_f: f64, params: &FetParams) -> f64 {
    params.mos_capacitance(phi_f)
}

/// Least-squares hinge `a * max(phi - b, 0) + c` over a sampled curve; the
/// knee is scanned on the sample grid. Returns `(a, b, c, max_abs_error)`.
pub fn fit_hinge(samples: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let mut best = (0.0, 0.0, 0.0, f64::INFINITY);
    for &(knee, _) in samples {
        // Linear least squares in (a, c) for the basis (max(x - knee, 0), 1).
        let (mut s_hh, mut s_h, mut s_hy, mut s_y) = (0.0, 0.0, 0.0, 0.0);
        let n = samples.len() as f64;
        for &(x, y) in samples {
            let h = (x - knee).max(0.0);
            s_hh += h * h;
            s_h += h;
            s_hy += h * y;
            s_y += y;
        }
        let det = s_hh * n - s_h * s_h;
        if det.abs() < 1e-300 {
            continue;
        }
        let a = (s_hy * n - s_h * s_y) / det;
        let c = (s_hh * s_y - s_h * s_hy) / det;
        let err = samples
            .iter()
            .map(|&(x, y)| (a * (x - knee).max(0.0) + c - y).abs())
            .fold(0.0, f64::max);
        if err < best.3 {
            best = (a, knee, c, err);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    }

    #[test]
    fn off_floor_deep_below_threshold() {
        let p = FetParams::default();
        assert_eq!(p.drain_current(-0.5, 0.1), p.off_current_floor);
    }

    #[test]
    fn threshold_point_is_junction_current() {
        let p = FetParams::default();
        let at = p.drain_current(p.threshold_voltage, 0.1);
        assert_relative_eq!(at, p.threshold_current(0.1), max_relative = 1e-12);
        let below = p.drain_current(p.threshold_voltage - 1e-12, 0.1);
        let above = p.drain_current(p.threshold_voltage + 1e-12, 0.1);
        assert!((below - above).abs() <= 1e-6 * at);
    }

    #[test]
    fn transfer_slope_positive_above_floor() {
        let p = FetParams::default();
        let xs = grid(-0.5, 2.0, 0.01);
        for w in xs.windows(2) {
            let (a, b) = (p.drain_current(w[0], 0.1), p.drain_current(w[1], 0.1));
            assert!(b >= a);
            if a > p.off_current_floor {
                assert!((b - a) / (w[1] - w[0]) > 0.0);
            }
        }
    }

    #[test]
    fn monotone_in_drain_bias() {
        let p = FetParams::default();
        for phi in grid(-0.5, 2.0, 0.1) {
            let mut last = 0.0;
            for vds in grid(0.0, 1.0, 0.05) {
                let i = p.drain_current(phi, vds);
                assert!(i >= last);
                last = i;
            }
        }
    }

    #[test]
    fn capacitance_limits() {
        let p = FetParams::default();
        let cox = p.oxide_capacitance();
        assert_relative_eq!(cox, EPSILON_0 * 3.9 * p.channel_area * 1e-4 / 10e-9, max_relative = 1e-12);
        assert_relative_eq!(p.mos_capacitance(p.threshold_voltage + 100.0), cox, max_relative = 1e-9);
        assert_eq!(p.mos_capacitance(p.flat_band_voltage() - 1.0), cox);
        let mid = 0.5 * (p.flat_band_voltage() + p.threshold_voltage);
        assert!(p.mos_capacitance(mid) < cox);
    }

    #[test]
    fn capacitance_is_continuous() {
        let p = FetParams::default();
        for x in [p.flat_band_voltage(), p.threshold_voltage] {
            let a = p.mos_capacitance(x - 1e-12);
            let b = p.mos_capacitance(x + 1e-12);
            assert!((a - b).abs() <= 1e-6 * a, "jump at {x}: {a} vs {b}");
        }
    }

    #[test]
    fn constant_model() {
        let p = FetParams { capacitance_model: CapacitanceModel::Constant { farads: 3e-12 }, ..Default::default() };
        assert_eq!(p.mos_capacitance(-3.0), 3e-12);
        assert_eq!(p.mos_capacitance(3.0), 3e-12);
    }

    #[test]
    fn rejects_sub_thermal_swing() {
        let p = FetParams { subthreshold_swing: 50.0, ..Default::default() };
        assert!(p.validate().is_err());
        let hot = FetParams { temperature: 400.0, subthreshold_swing: 70.0, ..Default::default() };
        assert!(hot.validate().is_err());
        assert!(FetParams::default().validate().is_ok());
    }

    #[test]
    fn hinge_fit_of_exact_hinge() {
        let pts: Vec<(f64, f64)> = grid(-1.0, 1.0, 0.1).into_iter().map(|x| (x, 2.0 * (x - 0.3).max(0.0) + 1.0)).collect();
        let (a, b, c, err) = fit_hinge(&pts);
        assert_relative_eq!(a, 2.0, max_relative = 1e-9);
        assert_relative_eq!(b, 0.3, epsilon = 1e-9);
        assert_relative_eq!(c, 1.0, max_relative = 1e-9);
        assert!(err < 1e-9);
    }
}
