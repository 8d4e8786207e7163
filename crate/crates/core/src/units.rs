//! Physical constants, sensor parameters and unit conversions.
//!
//! Internally every rate is angular (rad/s). Momenta are either SI (kg·m/s),
//! keV/c, or dimensionless multiples of the zero-point momentum.

use core::f64::consts::PI;

use crate::{Error, Result};

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Momentum of 1 eV/c in kg·m/s.
pub const EV_C_MOMENTUM: f64 = 5.344_286e-28;

/// Longest pulse for which the transferred momentum is treated as impulsive.
pub const MAX_IMPULSIVE_PULSE_S: f64 = 1e-6;

/// How ratios are expressed in decibels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbConvention {
    /// `10·log10(value / reference)` applied to amplitude (momentum) ratios.
    TenLogRatio,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitContext {
    pub hbar: f64,
    pub ev_c_momentum: f64,
    pub db_convention: DbConvention,
}

impl UnitContext {
    pub const CODATA: UnitContext = UnitContext {
        hbar: HBAR,
        ev_c_momentum: EV_C_MOMENTUM,
        db_convention: DbConvention::TenLogRatio,
    };
}

impl Default for UnitContext {
    fn default() -> Self {
        UnitContext::CODATA
    }
}

/// Physical and noise parameters of the levitated sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorParams {
    /// kg
    pub mass: f64,
    /// Base trap frequency Ω (rad/s).
    pub omega_base: f64,
    /// Detection efficiency in (0, 1].
    pub eta: f64,
    /// Measurement-backaction phonon heating rate (rad/s).
    pub gamma_qb: f64,
    /// Phonon occupation after feedback cooling.
    pub n_init: f64,
    /// Impulse calibration: zero-point momenta per volt-second.
    pub kappa_imp: f64,
    /// Cold-damping rate (rad/s).
    pub gamma_fb: f64,
    /// Amplitude of the electrode voltage pulse (V).
    pub pulse_voltage: f64,
    /// Calibrated zero-point momentum (kg·m/s) used for absolute-unit reporting.
    pub p_zp_override: Option<f64>,
}

impl Default for OscillatorParams {
    /// Nominal values of the 100 nm silica particle along the trap axis.
    fn default() -> Self {
        OscillatorParams {
            mass: 1.2e-18,
            omega_base: 2.0 * PI * 52e3,
            eta: 0.14,
            gamma_qb: 2.0 * PI * 3.4e3,
            n_init: 1.2,
            kappa_imp: 6.0e6,
            gamma_fb: 2.0 * PI * 10e3,
            pulse_voltage: 2.0,
            p_zp_override: Some(kev_c_to_momentum(7.92)),
        }
    }
}

fn check(ok: bool, name: &'static str, constraint: &'static str, value: f64) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            constraint,
            value,
        })
    }
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<()> {
        check(self.mass > 0.0 && self.mass.is_finite(), "mass", "positive", self.mass)?;
        check(
            self.omega_base > 0.0 && self.omega_base.is_finite(),
            "omega_base",
            "positive",
            self.omega_base,
        )?;
        check(self.eta > 0.0 && self.eta <= 1.0, "eta", "in (0,1]", self.eta)?;
        check(
            self.gamma_qb >= 0.0 && self.gamma_qb.is_finite(),
            "gamma_qb",
            "non-negative",
            self.gamma_qb,
        )?;
        check(
            self.gamma_qb < self.omega_base,
            "gamma_qb",
            "below the trap frequency (weak-coupling regime)",
            self.gamma_qb,
        )?;
        check(
            self.n_init >= 0.0 && self.n_init.is_finite(),
            "n_init",
            "non-negative",
            self.n_init,
        )?;
        check(
            self.kappa_imp >= 0.0 && self.kappa_imp.is_finite(),
            "kappa_imp",
            "non-negative",
            self.kappa_imp,
        )?;
        check(
            self.gamma_fb >= 0.0 && self.gamma_fb.is_finite(),
            "gamma_fb",
            "non-negative",
            self.gamma_fb,
        )?;
        check(
            self.pulse_voltage.is_finite(),
            "pulse_voltage",
            "finite",
            self.pulse_voltage,
        )?;
        if let Some(p) = self.p_zp_override {
            check(p > 0.0 && p.is_finite(), "p_zp_override", "positive", p)?;
        }
        Ok(())
    }

    /// Oscillation period at the base frequency (s).
    pub fn base_period(&self) -> f64 {
        2.0 * PI / self.omega_base
    }

    /// Momentum diffusion rate into ⟨P²⟩ at full trap power (1/s).
    pub fn diffusion_base(&self) -> f64 {
        4.0 * self.gamma_qb
    }

    /// Information rate of the position record at full trap power (1/s).
    pub fn meas_rate(&self) -> f64 {
        4.0 * self.eta * self.gamma_qb
    }

    /// The same sensor with a ground-state initialization and unit detection
    /// efficiency: the reference for the ideal conventional protocol.
    pub fn ideal(&self) -> OscillatorParams {
        OscillatorParams {
            eta: 1.0,
            n_init: 0.0,
            ..*self
        }
    }

    /// Zero-point momentum used for absolute-unit reports: the calibrated
    /// override when present, the nominal value otherwise.
    pub fn reporting_zero_point_momentum(&self) -> f64 {
        self.p_zp_override
            .unwrap_or_else(|| zero_point_momentum(self))
    }
}

/// Nominal zero-point momentum `√(ħ m Ω / 2)` (kg·m/s).
///
/// Ignores `p_zp_override`; see [`OscillatorParams::reporting_zero_point_momentum`].
pub fn zero_point_momentum(params: &OscillatorParams) -> f64 {
    libm::sqrt(HBAR * params.mass * params.omega_base / 2.0)
}

/// Zero-point position `√(ħ / (2 m Ω))` (m).
pub fn zero_point_position(params: &OscillatorParams) -> f64 {
    libm::sqrt(HBAR / (2.0 * params.mass * params.omega_base))
}

pub fn momentum_to_kev_c(p: f64) -> f64 {
    p / (1000.0 * EV_C_MOMENTUM)
}

pub fn kev_c_to_momentum(kev_c: f64) -> f64 {
    kev_c * 1000.0 * EV_C_MOMENTUM
}

/// `10·log10(value / reference)` for amplitude ratios.
pub fn db_ratio(value: f64, reference: f64) -> Result<f64> {
    if !(value > 0.0 && reference > 0.0) || !value.is_finite() || !reference.is_finite() {
        return Err(Error::Domain("decibel ratio needs positive finite operands"));
    }
    Ok(10.0 * libm::log10(value / reference))
}

pub fn hz_to_angular(f: f64) -> f64 {
    2.0 * PI * f
}

pub fn angular_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Momentum transferred by an electrode pulse, in zero-point units.
///
/// Pulses longer than [`MAX_IMPULSIVE_PULSE_S`] are accepted with a warning;
/// the linear transfer model is then outside its calibrated range.
pub fn impulse_from_pulse(params: &OscillatorParams, pulse_voltage: f64, duration: f64) -> Result<f64> {
    if duration < 0.0 || !duration.is_finite() {
        return Err(Error::InvalidParameter {
            name: "pulse_duration",
            constraint: "non-negative",
            value: duration,
        });
    }
    if duration > MAX_IMPULSIVE_PULSE_S {
        log::warn!(
            "pulse duration {duration:e} s exceeds {MAX_IMPULSIVE_PULSE_S:e} s; impulsive approximation degraded"
        );
    }
    Ok(params.kappa_imp * pulse_voltage * duration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use alloc::string::ToString;

    fn nominal() -> OscillatorParams {
        OscillatorParams::default()
    }

    #[test]
    fn nominal_zero_point_momentum() {
        // √(1.054571817e-34 · 1.2e-18 · 2π·52e3 / 2), evaluated with mpmath at 30 digits
        let p = zero_point_momentum(&nominal());
        assert_relative_eq!(p, 4.546_794_349_355_714e-24, max_relative = 1e-12);
        assert_relative_eq!(momentum_to_kev_c(p), 8.507_767_640_720_788, max_relative = 1e-12);
    }

    #[test]
    fn zero_point_momentum_scaling() {
        let base = nominal();
        let heavy = OscillatorParams {
            mass: 4.0 * base.mass,
            ..base
        };
        assert_relative_eq!(
            zero_point_momentum(&heavy),
            2.0 * zero_point_momentum(&base),
            max_relative = 1e-14
        );
        let slow = OscillatorParams {
            omega_base: 1e-300,
            ..base
        };
        assert!(zero_point_momentum(&slow) < 1e-150);
    }

    #[test]
    fn kev_conversion() {
        assert_eq!(momentum_to_kev_c(0.0), 0.0);
        assert_relative_eq!(momentum_to_kev_c(EV_C_MOMENTUM), 0.001, max_relative = 1e-15);
    }

    #[test]
    fn db_examples() {
        assert_relative_eq!(db_ratio(6.9, 7.92).unwrap(), -0.598_760_9, epsilon = 1e-6);
        assert_relative_eq!(
            db_ratio(6.9, core::f64::consts::SQRT_2 * 7.92).unwrap(),
            -2.103_910_9,
            epsilon = 1e-6
        );
        assert_eq!(db_ratio(3.3, 3.3).unwrap(), 0.0);
        assert_relative_eq!(db_ratio(10.0, 1.0).unwrap(), 10.0);
        assert!(db_ratio(0.0, 1.0).is_err());
        assert!(db_ratio(1.0, -1.0).is_err());
    }

    #[test]
    fn impulse_examples() {
        let p = nominal();
        assert_relative_eq!(impulse_from_pulse(&p, 2.0, 100e-9).unwrap(), 1.2, max_relative = 1e-12);
        assert_eq!(impulse_from_pulse(&p, 2.0, 0.0).unwrap(), 0.0);
        assert!(impulse_from_pulse(&p, 2.0, -1e-9).is_err());
        // Beyond the impulsive range: still computed.
        assert_relative_eq!(impulse_from_pulse(&p, 2.0, 2e-6).unwrap(), 24.0, max_relative = 1e-12);
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let bad_eta = OscillatorParams { eta: 1.5, ..nominal() };
        let err = bad_eta.validate().unwrap_err();
        assert!(err.to_string().starts_with("eta must be in (0,1]"), "{err}");
        let strong = OscillatorParams {
            gamma_qb: 2.0 * nominal().omega_base,
            ..nominal()
        };
        assert!(strong.validate().is_err());
        assert!(OscillatorParams { mass: 0.0, ..nominal() }.validate().is_err());
        assert!(OscillatorParams { n_init: -0.1, ..nominal() }.validate().is_err());
        assert!(nominal().validate().is_ok());
    }

    proptest! {
        #[test]
        fn zero_point_momentum_squares_back(m in 1e-21f64..1e-15, f in 1e3f64..1e6) {
            let params = OscillatorParams { mass: m, omega_base: hz_to_angular(f), ..nominal() };
            let p = zero_point_momentum(&params);
            let target = HBAR * m * params.omega_base / 2.0;
            prop_assert!(((p * p - target) / target).abs() < 1e-12);
        }

        #[test]
        fn kev_round_trip(p in -1e-20f64..1e-20) {
            let back = kev_c_to_momentum(momentum_to_kev_c(p));
            prop_assert!((back - p).abs() <= 1e-12 * p.abs());
        }

        #[test]
        fn db_is_additive(a in 1e-6f64..1e6, b in 1e-6f64..1e6, c in 1e-6f64..1e6) {
            let lhs = db_ratio(a, b).unwrap() + db_ratio(b, c).unwrap();
            prop_assert!((lhs - db_ratio(a, c).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn impulse_is_bilinear(u in -10.0f64..10.0, tau in 0.0f64..1e-6, k in 1.0f64..4.0) {
            let p = nominal();
            let base = impulse_from_pulse(&p, u, tau).unwrap();
            prop_assert!((impulse_from_pulse(&p, k * u, tau).unwrap() - k * base).abs() <= 1e-12 * base.abs().max(1e-300));
            prop_assert!((impulse_from_pulse(&p, u, k * tau).unwrap() - k * base).abs() <= 1e-12 * base.abs().max(1e-300));
        }
    }
}
