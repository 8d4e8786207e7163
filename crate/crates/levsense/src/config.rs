//! JSON run configuration: sensor parameters in laboratory units plus
//! optional experiment overrides. Unknown keys are rejected so that a typo
//! cannot silently fall back to a default.

use std::path::Path;

use levsense_core::harness::{SimulationSettings, MAX_SQUEEZE_RATIO};
use levsense_core::units::{hz_to_angular, kev_c_to_momentum, OscillatorParams};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::AppError;

pub const CONFIG_KEYS: &[&str] = &[
    "mass_kg",
    "freq_hz",
    "eta",
    "gamma_qb_hz",
    "n_init",
    "kappa_imp",
    "gamma_fb_hz",
    "p_zp_kev_c",
    "pulse_voltage_v",
    "n_trials",
    "r_grid",
    "tau_grid_ns",
    "readout_periods",
    "dt_per_period",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Syntax(String),
    #[error("top level must be a JSON object")]
    NotAnObject,
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("{key}: {detail}")]
    BadValue { key: &'static str, detail: String },
    #[error("{key} must be {constraint} (got {value})")]
    Constraint {
        key: &'static str,
        constraint: String,
        value: String,
    },
}

/// Every configurable value in file units. `p_zp_kev_c = None` reports in
/// the nominal zero-point momentum of the configured mass and frequency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mass_kg: f64,
    pub freq_hz: f64,
    pub eta: f64,
    pub gamma_qb_hz: f64,
    pub n_init: f64,
    pub kappa_imp: f64,
    pub gamma_fb_hz: f64,
    pub p_zp_kev_c: Option<f64>,
    pub pulse_voltage_v: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_grid_ns: Option<Vec<f64>>,
    pub readout_periods: f64,
    pub dt_per_period: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let settings = SimulationSettings::default();
        RunConfig {
            mass_kg: 1.2e-18,
            freq_hz: 52e3,
            eta: 0.14,
            gamma_qb_hz: 3.4e3,
            n_init: 1.2,
            kappa_imp: 6.0e6,
            gamma_fb_hz: 10e3,
            p_zp_kev_c: Some(7.92),
            pulse_voltage_v: 2.0,
            n_trials: None,
            r_grid: None,
            tau_grid_ns: None,
            readout_periods: settings.readout_periods,
            dt_per_period: settings.steps_per_period,
        }
    }
}

impl RunConfig {
    pub fn params(&self) -> OscillatorParams {
        OscillatorParams {
            mass: self.mass_kg,
            omega_base: hz_to_angular(self.freq_hz),
            eta: self.eta,
            gamma_qb: hz_to_angular(self.gamma_qb_hz),
            n_init: self.n_init,
            kappa_imp: self.kappa_imp,
            gamma_fb: hz_to_angular(self.gamma_fb_hz),
            pulse_voltage: self.pulse_voltage_v,
            p_zp_override: self.p_zp_kev_c.map(kev_c_to_momentum),
        }
    }

    pub fn settings(&self) -> SimulationSettings {
        SimulationSettings {
            steps_per_period: self.dt_per_period,
            readout_periods: self.readout_periods,
            ..SimulationSettings::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Err(levsense_core::Error::InvalidParameter { name, constraint, .. }) = self.params().validate() {
            let (key, value) = self.file_value(name);
            return Err(ConfigError::Constraint {
                key,
                constraint: constraint.to_string(),
                value,
            });
        }
        if let Some(n) = self.n_trials {
            constraint(n >= 2, "n_trials", "at least 2", n)?;
        }
        if let Some(grid) = &self.r_grid {
            constraint(!grid.is_empty(), "r_grid", "non-empty", "[]")?;
            for &r in grid {
                constraint(
                    (1.0..=MAX_SQUEEZE_RATIO).contains(&r),
                    "r_grid",
                    "in [1, 6]: larger ratios reach the mechanical-vibration band whose excess backaction is not modelled",
                    r,
                )?;
            }
        }
        if let Some(grid) = &self.tau_grid_ns {
            constraint(!grid.is_empty(), "tau_grid_ns", "non-empty", "[]")?;
            for &t in grid {
                constraint(t >= 0.0 && t.is_finite(), "tau_grid_ns", "non-negative", t)?;
            }
        }
        let ok = self.readout_periods >= 1.0 && self.readout_periods.is_finite();
        constraint(ok, "readout_periods", "at least 1", self.readout_periods)?;
        constraint(
            self.dt_per_period >= levsense_core::dynamics::MIN_STEPS_PER_PERIOD && self.dt_per_period.is_finite(),
            "dt_per_period",
            "at least 50",
            self.dt_per_period,
        )?;
        Ok(())
    }

    /// Config key and file-unit value behind a parameter name.
    fn file_value(&self, param: &str) -> (&'static str, String) {
        match param {
            "mass" => ("mass_kg", self.mass_kg.to_string()),
            "omega_base" => ("freq_hz", self.freq_hz.to_string()),
            "eta" => ("eta", self.eta.to_string()),
            "gamma_qb" => ("gamma_qb_hz", self.gamma_qb_hz.to_string()),
            "n_init" => ("n_init", self.n_init.to_string()),
            "kappa_imp" => ("kappa_imp", self.kappa_imp.to_string()),
            "gamma_fb" => ("gamma_fb_hz", self.gamma_fb_hz.to_string()),
            "pulse_voltage" => ("pulse_voltage_v", self.pulse_voltage_v.to_string()),
            "p_zp_override" => ("p_zp_kev_c", format!("{:?}", self.p_zp_kev_c)),
            _ => ("config", String::from("?")),
        }
    }
}

fn constraint(ok: bool, key: &'static str, what: &str, value: impl ToString) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Constraint {
            key,
            constraint: what.to_string(),
            value: value.to_string(),
        })
    }
}

fn field<T: DeserializeOwned>(map: &Map<String, Value>, key: &'static str) -> Result<Option<T>, ConfigError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| ConfigError::BadValue {
                key,
                detail: e.to_string(),
            }),
    }
}

/// Parses and validates a configuration document; absent keys keep their
/// defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let map = value.as_object().ok_or(ConfigError::NotAnObject)?;
    if let Some(k) = map.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey(k.clone()));
    }
    let mut c = RunConfig::default();
    macro_rules! set {
        ($($key:ident),*) => {
            $(if let Some(v) = field(map, stringify!($key))? {
                c.$key = v;
            })*
        };
    }
    set!(mass_kg, freq_hz, eta, gamma_qb_hz, n_init, kappa_imp, gamma_fb_hz, pulse_voltage_v, readout_periods, dt_per_period);
    // `null` selects the nominal zero-point momentum.
    if map.contains_key("p_zp_kev_c") {
        c.p_zp_kev_c = field::<Option<f64>>(map, "p_zp_kev_c")?.flatten();
    }
    c.n_trials = field(map, "n_trials")?;
    c.r_grid = field(map, "r_grid")?;
    c.tau_grid_ns = field(map, "tau_grid_ns")?;
    c.validate()?;
    Ok(c)
}

pub fn load_config(path: &Path) -> Result<RunConfig, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    Ok(parse_config(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = parse_config("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.params(), OscillatorParams::default());
    }

    #[test]
    fn serialized_config_parses_back() {
        let c = RunConfig {
            r_grid: Some(vec![1.0, 2.0]),
            n_trials: Some(50),
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
    }
}
