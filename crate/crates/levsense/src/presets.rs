//! Named experiment configurations at desk scale.

use clap::ValueEnum;

use crate::config::RunConfig;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TRIALS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetName {
    /// Conventional protocol, τ = 1000 and 100 ns.
    Fig3Conventional,
    /// Amplified protocol at r = √4 and √12, τ = 100 ns.
    Fig3Amplified,
    /// Displacement versus τ on a log grid for r = 1, √4, √12.
    Fig4Scaling,
    /// Null-kick sensitivity over r from 1 to √12.
    Fig5Sensitivity,
    /// The acceptance suite.
    Selftest,
}

impl PresetName {
    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Fig3Conventional => "fig3-conventional",
            PresetName::Fig3Amplified => "fig3-amplified",
            PresetName::Fig4Scaling => "fig4-scaling",
            PresetName::Fig5Sensitivity => "fig5-sensitivity",
            PresetName::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: PresetName,
    pub n_trials: usize,
    pub r_grid: Vec<f64>,
    pub tau_grid_ns: Vec<f64>,
}

/// Five log-spaced durations from 100 ns to 1 µs.
pub fn log_tau_grid_ns() -> Vec<f64> {
    (0..5).map(|i| 100.0 * 10f64.powf(i as f64 / 4.0)).collect()
}

impl ExperimentPreset {
    pub fn defaults(name: PresetName) -> Self {
        let (r_grid, tau_grid_ns) = match name {
            PresetName::Fig3Conventional => (vec![1.0], vec![1000.0, 100.0]),
            PresetName::Fig3Amplified => (vec![2.0, 12f64.sqrt()], vec![100.0]),
            PresetName::Fig4Scaling => (vec![1.0, 2.0, 12f64.sqrt()], log_tau_grid_ns()),
            PresetName::Fig5Sensitivity => ((1..=6).map(|k| if k == 1 { 1.0 } else { (2.0 * k as f64).sqrt() }).collect(), vec![0.0]),
            PresetName::Selftest => (Vec::new(), Vec::new()),
        };
        ExperimentPreset {
            name,
            n_trials: DEFAULT_TRIALS,
            r_grid,
            tau_grid_ns,
        }
    }

    /// Preset defaults overridden by the config file, then by `--trials`.
    pub fn resolve(name: PresetName, config: &RunConfig, trials: Option<usize>) -> Self {
        let mut p = Self::defaults(name);
        if let Some(n) = config.n_trials {
            p.n_trials = n;
        }
        if let Some(g) = &config.r_grid {
            p.r_grid = g.clone();
        }
        if let Some(g) = &config.tau_grid_ns {
            p.tau_grid_ns = g.clone();
        }
        if let Some(n) = trials {
            p.n_trials = n;
        }
        p
    }
}
