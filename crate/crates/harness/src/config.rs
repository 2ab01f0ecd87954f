//! Layered configuration: built-in defaults, then an optional preset, then a
//! TOML file, then `--set key=value` overrides.
//!
//! Every key of the file and of the overrides must already exist in the
//! defaults; values must keep the default's type (integers are accepted
//! where floats are expected). Overrides also accept the table symbols in
//! [`ALIASES`] and a unit suffix on numbers (`t_FE=5nm`, `dt=10us`).

use std::path::{Path, PathBuf};

use dendrofet_core::device::{Coupling, DeviceSpec, PolarizationReference, Protocol};
use dendrofet_core::dnet::bridge::{BridgeConfig, ResponseMode};
use dendrofet_core::dnet::NetworkConfig;
use dendrofet_core::ferrodomain::{FerroGeometry, SwitchingParams};
use dendrofet_core::fet::FetParams;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed of every device-level experiment.
    pub seed: u64,
    pub device: DeviceSection,
    pub ferro: FerroGeometry,
    pub switching: SwitchingParams,
    pub fet: FetParams,
    pub protocol: Protocol,
    pub sweep: SweepSection,
    pub hysteresis: HysteresisSection,
    pub transfer: TransferSection,
    pub data: DataSection,
    /// `network.seed` seeds training; `--seed` sets it together with `seed`.
    pub network: NetworkConfig,
    pub bridge: BridgeSection,
    pub circles: CirclesSection,
}

impl Default for Config {
    fn default() -> Self {
        let spec = DeviceSpec::default();
        Self {
            seed: 0,
            device: DeviceSection {
                n_gates: spec.n_gates,
                n_domains: spec.n_domains,
                floating_charge: spec.floating_charge,
                reference: spec.reference,
                coupling: spec.coupling,
            },
            ferro: spec.geometry,
            switching: spec.switching,
            fet: spec.fet,
            protocol: Protocol::default(),
            sweep: SweepSection::default(),
            hysteresis: HysteresisSection::default(),
            transfer: TransferSection::default(),
            data: DataSection::default(),
            network: NetworkConfig::default(),
            bridge: BridgeSection::default(),
            circles: CirclesSection::default(),
        }
    }
}

impl Config {
    pub fn device_spec(&self) -> DeviceSpec {
        DeviceSpec {
            n_gates: self.device.n_gates,
            n_domains: self.device.n_domains,
            geometry: self.ferro,
            fet: self.fet,
            switching: self.switching,
            floating_charge: self.device.floating_charge,
            reference: self.device.reference,
            coupling: self.device.coupling,
        }
    }

    pub fn bridge_config(&self) -> BridgeConfig {
        BridgeConfig {
            mode: match self.bridge.mode {
                BridgeMode::Table => ResponseMode::Table { step: self.bridge.table_step },
                BridgeMode::Exact => ResponseMode::Exact,
            },
            variation_std: self.bridge.variation_std,
            calibration_samples: self.bridge.calibration_samples,
            seed: self.seed,
        }
    }

    /// The resolved configuration as a TOML tree.
    pub fn to_table(&self) -> Table {
        Table::try_from(self).expect("configuration serializes to TOML")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub n_gates: usize,
    pub n_domains: usize,
    /// C.
    pub floating_charge: f64,
    pub reference: PolarizationReference,
    pub coupling: Coupling,
}

/// Set-voltage grid `0, step, ..., max` applied to every gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub step: f64,
    pub max: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { step: 0.5, max: 4.0 }
    }
}

impl SweepSection {
    pub fn amplitudes(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.max >= 0.0) {
            return Err(Error::config("sweep", "step must be positive and max non-negative"));
        }
        let n = (self.max / self.step).round() as usize;
        if ((n as f64) * self.step - self.max).abs() > 1e-9 {
            return Err(Error::config("sweep", "step must divide max"));
        }
        Ok((0..=n).map(|i| i as f64 * self.step).collect())
    }
}

/// Triangle drive of a single gate capacitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HysteresisSection {
    /// V.
    pub amplitude: f64,
    /// s.
    pub period: f64,
    /// Cycles written out; the first one starts from negative saturation.
    pub cycles: usize,
    /// Integration step, s.
    pub dt: f64,
}

impl Default for HysteresisSection {
    fn default() -> Self {
        Self { amplitude: 2.5, period: 40e-6, cycles: 2, dt: 1e-7 }
    }
}

/// Floating-gate potential range of the FET transfer export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    pub phi_min: f64,
    pub phi_max: f64,
    pub points: usize,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self { phi_min: -1.0, phi_max: 3.0, points: 401 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding the four IDX files.
    pub dir: PathBuf,
    /// First `n` training images only; 0 keeps all.
    pub train_limit: usize,
    /// First `n` test images only; 0 keeps all.
    pub test_limit: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("data/fashion-mnist"), train_limit: 0, test_limit: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeMode {
    Table,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSection {
    pub mode: BridgeMode,
    /// V.
    pub table_step: f64,
    pub variation_std: f64,
    /// 0 uses the whole training set.
    pub calibration_samples: usize,
    /// Checkpoint to run on; empty trains `network` first.
    pub checkpoint: String,
    /// Test images whose per-layer gate voltages and currents are exported.
    pub trace_samples: usize,
}

impl Default for BridgeSection {
    fn default() -> Self {
        Self {
            mode: BridgeMode::Table,
            table_step: 0.25,
            variation_std: 0.2,
            calibration_samples: 0,
            checkpoint: String::new(),
            trace_samples: 8,
        }
    }
}

/// Concentric-circles comparison of a 2-2-2 network with and without
/// branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CirclesSection {
    pub n_train: usize,
    pub n_test: usize,
    /// Inner radius relative to the outer one.
    pub factor: f64,
    pub noise: f64,
    pub seeds: usize,
    pub hidden: usize,
    pub branches: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub batch_norm: bool,
    pub dropout: f64,
    /// Decision-grid points per axis.
    pub grid: usize,
}

impl Default for CirclesSection {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_test: 500,
            factor: 0.5,
            noise: 0.1,
            seeds: 5,
            hidden: 2,
            branches: 2,
            epochs: 200,
            batch_size: 16,
            batch_norm: true,
            dropout: 0.0,
            grid: 101,
        }
    }
}

/// Table symbols accepted as override keys.
pub const ALIASES: [(&str, &str); 14] = [
    ("N_dom", "device.n_domains"),
    ("dt", "switching.dt"),
    ("P_S", "ferro.saturation_polarization"),
    ("tau0", "switching.tau0"),
    ("alpha", "switching.alpha"),
    ("beta", "switching.beta"),
    ("E_a", "switching.ea_mean"),
    ("E_a_sigma", "switching.ea_sigma"),
    ("T", "fet.temperature"),
    ("N_A", "fet.substrate_doping"),
    ("t_ox", "fet.oxide_thickness"),
    ("t_FE", "ferro.thickness"),
    ("V_DS", "protocol.drain_voltage"),
    ("V_S", "protocol.source_voltage"),
];

/// Named bundles; each changes exactly the listed keys.
pub const PRESETS: [(&str, &str, f64); 4] = [
    ("lateral", "device.n_domains", 20.0),
    ("vertical", "ferro.thickness", 5.0),
    ("low-ea", "switching.ea_mean", 1.0),
    ("high-ea", "switching.ea_mean", 5.0),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

/// A configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: Config,
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
    pub overrides: Vec<String>,
}

/// Resolves defaults <- preset <- file <- overrides.
pub fn resolve(file: Option<&Path>, preset: Option<&str>, overrides: &[String]) -> Result<Resolved> {
    let defaults = Config::default().to_table();
    let mut merged = defaults.clone();
    if let Some(name) = preset {
        let Some(&(_, key, value)) = PRESETS.iter().find(|p| p.0 == name) else {
            return Err(Error::Usage(format!("unknown preset `{name}`; expected one of {}", preset_names().join(", "))));
        };
        let path: Vec<&str> = key.split('.').collect();
        let default = lookup(&defaults, &path).expect("preset keys exist");
        set_path(&mut merged, &path, coerce(default, Value::Float(value)).expect("preset values fit their keys"));
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
        let user = parse_file(&text, &path.display().to_string())?;
        merge_checked(&mut merged, &defaults, &user, &mut Vec::new(), &|key| {
            let line = find_line(&text, key).map_or(String::new(), |l| format!(":{l}"));
            format!("{}{line}", path.display())
        })?;
    }
    for o in overrides {
        apply_override(&mut merged, &defaults, o)?;
    }
    let config: Config = merged.try_into().map_err(|e: toml::de::Error| Error::config("configuration", e.message().to_string()))?;
    Ok(Resolved {
        config,
        preset: preset.map(str::to_string),
        file: file.map(Path::to_path_buf),
        overrides: overrides.to_vec(),
    })
}

/// Resolves a configuration from TOML text alone; used by tests and by the
/// reproduction path from a written `config.toml`.
pub fn from_str(text: &str) -> Result<Config> {
    let defaults = Config::default().to_table();
    let mut merged = defaults.clone();
    let user = parse_file(text, "<string>")?;
    merge_checked(&mut merged, &defaults, &user, &mut Vec::new(), &|key| {
        find_line(text, key).map_or("<string>".to_string(), |l| format!("<string>:{l}"))
    })?;
    merged.try_into().map_err(|e: toml::de::Error| Error::config("<string>", e.message().to_string()))
}

fn parse_file(text: &str, name: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
        let location = line.map_or(name.to_string(), |l| format!("{name}:{l}"));
        Error::config(location, e.message().trim().to_string())
    })
}

fn merge_checked(
    merged: &mut Table,
    defaults: &Table,
    user: &Table,
    prefix: &mut Vec<String>,
    locate: &dyn Fn(&[String]) -> String,
) -> Result<()> {
    for (key, value) in user {
        prefix.push(key.clone());
        let Some(default) = defaults.get(key) else {
            let dotted = prefix.join(".");
            let hint = nearest_key(&dotted).map_or(String::new(), |k| format!("; did you mean `{k}`?"));
            return Err(Error::config(locate(prefix), format!("unknown key `{dotted}`{hint}")));
        };
        match (default, value) {
            (Value::Table(d), Value::Table(u)) => {
                let Some(Value::Table(m)) = merged.get_mut(key) else { unreachable!("merged mirrors defaults") };
                merge_checked(m, d, u, prefix, locate)?;
            }
            _ => {
                let v = coerce(default, value.clone()).ok_or_else(|| {
                    Error::config(
                        locate(prefix),
                        format!("type mismatch for `{}`: expected {}, found {}", prefix.join("."), default.type_str(), value.type_str()),
                    )
                })?;
                merged.insert(key.clone(), v);
            }
        }
        prefix.pop();
    }
    Ok(())
}

/// `value` converted to the type of `default`, if compatible.
fn coerce(default: &Value, value: Value) -> Option<Value> {
    match (default, value) {
        (Value::Float(_), Value::Integer(i)) => Some(Value::Float(i as f64)),
        (Value::Integer(_), Value::Float(f)) if f.fract() == 0.0 && f.abs() < 9e15 => Some(Value::Integer(f as i64)),
        (Value::Array(d), Value::Array(u)) => {
            let proto = d.first();
            let items = u.into_iter().map(|v| match proto {
                Some(p) => coerce(p, v),
                None => Some(v),
            });
            items.collect::<Option<Vec<_>>>().map(Value::Array)
        }
        (d, v) if std::mem::discriminant(d) == std::mem::discriminant(&v) => Some(v),
        _ => None,
    }
}

fn lookup<'a>(table: &'a Table, path: &[&str]) -> Option<&'a Value> {
    let (last, parents) = path.split_last()?;
    let mut t = table;
    for p in parents {
        t = t.get(*p)?.as_table()?;
    }
    t.get(*last)
}

fn set_path(table: &mut Table, path: &[&str], value: Value) {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut t = table;
    for p in parents {
        t = t.get_mut(*p).and_then(Value::as_table_mut).expect("path exists in defaults");
    }
    t.insert(last.to_string(), value);
}

fn apply_override(merged: &mut Table, defaults: &Table, text: &str) -> Result<()> {
    let location = format!("--set {text}");
    let Some((raw_key, raw_value)) = text.split_once('=') else {
        return Err(Error::Usage(format!("override `{text}` is not of the form key=value")));
    };
    let raw_key = raw_key.trim();
    let key = ALIASES.iter().find(|a| a.0 == raw_key).map_or(raw_key, |a| a.1);
    let path: Vec<&str> = key.split('.').collect();
    let Some(default) = lookup(defaults, &path).filter(|v| !v.is_table()) else {
        let hint = nearest_key(raw_key).map_or(String::new(), |k| format!("; did you mean `{k}`?"));
        return Err(Error::config(location, format!("unknown key `{raw_key}`{hint}")));
    };
    let value = parse_value(raw_value.trim(), key, default);
    let v = coerce(default, value.clone()).ok_or_else(|| {
        Error::config(&location, format!("type mismatch for `{key}`: expected {}, found {}", default.type_str(), value.type_str()))
    })?;
    set_path(merged, &path, v);
    Ok(())
}

/// Parses an override value: TOML literal, number with a unit, or a bare
/// string.
fn parse_value(raw: &str, key: &str, default: &Value) -> Value {
    if let Ok(t) = format!("v = {raw}").parse::<Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    match with_unit(raw, key) {
        Some(v) if default.is_float() => Value::Float(v),
        _ => Value::String(raw.to_string()),
    }
}

/// Number with a unit suffix, converted to the unit `key` is stored in.
fn with_unit(raw: &str, key: &str) -> Option<f64> {
    let split = raw.find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')?;
    let (number, unit) = raw.split_at(split);
    let x: f64 = number.trim().parse().ok()?;
    let unit = unit.trim();
    // Divide by exact powers of ten so that "10us" is exactly 1e-5.
    let divisor = match (unit_of(key)?, unit) {
        ("s", "s") | ("nm", "nm") | ("V", "V") | ("K", "K") | ("MV/cm", "MV/cm") => 1.0,
        ("s", "ms") | ("V", "mV") => 1e3,
        ("s", "us") => 1e6,
        ("s", "ns") => 1e9,
        _ => return None,
    };
    Some(x / divisor)
}

fn unit_of(key: &str) -> Option<&'static str> {
    Some(match key {
        "switching.dt" | "switching.tau0" | "hysteresis.period" | "hysteresis.dt" => "s",
        k if k.starts_with("protocol.") && k.ends_with("_duration") => "s",
        "ferro.thickness" | "fet.oxide_thickness" => "nm",
        "protocol.reset_voltage" | "protocol.drain_voltage" | "protocol.source_voltage" | "hysteresis.amplitude" | "sweep.step" | "sweep.max" => "V",
        "fet.threshold_voltage" | "bridge.table_step" => "V",
        "fet.temperature" => "K",
        "switching.ea_mean" | "switching.ea_sigma" => "MV/cm",
        _ => return None,
    })
}

/// Every leaf key of the defaults, dotted.
pub fn known_keys() -> Vec<String> {
    fn walk(t: &Table, prefix: &str, out: &mut Vec<String>) {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                Value::Table(sub) => walk(sub, &key, out),
                _ => out.push(key),
            }
        }
    }
    let mut out = Vec::new();
    walk(&Config::default().to_table(), "", &mut out);
    out
}

/// Closest known key or alias to `key`, by case-insensitive edit similarity
/// on the full dotted path and on the last segment.
pub fn nearest_key(key: &str) -> Option<String> {
    let lower = key.to_lowercase();
    let last = lower.rsplit('.').next().unwrap_or(&lower).to_string();
    let score = |candidate: &str| {
        let c = candidate.to_lowercase();
        let c_last = c.rsplit('.').next().unwrap_or(&c).to_string();
        strsim::normalized_damerau_levenshtein(&lower, &c).max(strsim::normalized_damerau_levenshtein(&last, &c_last))
    };
    known_keys()
        .into_iter()
        .chain(ALIASES.iter().map(|a| a.0.to_string()))
        .map(|k| (score(&k), k))
        .filter(|(s, _)| *s > 0.4)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

/// 1-based line of `path` in TOML `text`: a `key = ...` line under the
/// matching `[section]`, a dotted key, or the section header itself.
fn find_line(text: &str, path: &[String]) -> Option<usize> {
    let mut section: Vec<String> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            section = header.trim_matches('[').split('.').map(|s| s.trim().trim_matches('"').to_string()).collect();
            if section == path {
                return Some(i + 1);
            }
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let mut full = section.clone();
        full.extend(lhs.split('.').map(|s| s.trim().trim_matches('"').to_string()));
        if full == path || (full.len() < path.len() && path.starts_with(&full)) {
            return Some(i + 1);
        }
    }
    None
}

/// Dotted keys whose values differ between two resolved configurations.
pub fn diff(a: &Config, b: &Config) -> Vec<String> {
    fn walk(a: &Table, b: &Table, prefix: &str, out: &mut Vec<String>) {
        for (k, va) in a {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match (va, b.get(k)) {
                (Value::Table(ta), Some(Value::Table(tb))) => walk(ta, tb, &key, out),
                (x, Some(y)) if x == y => {}
                _ => out.push(key),
            }
        }
    }
    let mut out = Vec::new();
    walk(&a.to_table(), &b.to_table(), "", &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        assert_eq!(from_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unit_suffixes() {
        assert_eq!(with_unit("5nm", "ferro.thickness"), Some(5.0));
        assert_eq!(with_unit("10us", "switching.dt"), Some(10e-6));
        assert_eq!(with_unit("5nm", "switching.dt"), None);
        assert!((with_unit("2.5e-3ms", "protocol.set_duration").unwrap() - 2.5e-6).abs() < 1e-21);
    }

    #[test]
    fn line_lookup() {
        let text = "seed = 1\n\n[ferro]\nthickness = 5\n[device.coupling]\nkind = \"fixed\"\n";
        assert_eq!(find_line(text, &["ferro".into(), "thickness".into()]), Some(4));
        assert_eq!(find_line(text, &["device".into(), "coupling".into(), "kind".into()]), Some(6));
        assert_eq!(find_line(text, &["seed".into()]), Some(1));
    }
}
