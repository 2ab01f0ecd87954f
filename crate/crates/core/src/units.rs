//! Physical constants and unit conversions.
//!
//! Everything inside the models is SI. Table-style inputs (MV/cm, uC/cm^2,
//! nm, cm^2, cm^-3) are converted once at the API boundary with these helpers.

/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

pub fn mv_per_cm_to_v_per_m(e: f64) -> f64 {
    e * 1e8
}

pub fn v_per_m_to_mv_per_cm(e: f64) -> f64 {
    e * 1e-8
}

pub fn uc_per_cm2_to_c_per_m2(p: f64) -> f64 {
    p * 1e-2
}

pub fn c_per_m2_to_uc_per_cm2(p: f64) -> f64 {
    p * 1e2
}

pub fn nm_to_m(x: f64) -> f64 {
    x * 1e-9
}

pub fn cm2_to_m2(a: f64) -> f64 {
    a * 1e-4
}

pub fn per_cm3_to_per_m3(n: f64) -> f64 {
    n * 1e6
}

/// Thermal voltage kT/q in volts.
pub fn thermal_voltage(temperature_k: f64) -> f64 {
    BOLTZMANN * temperature_k / ELEMENTARY_CHARGE
}
