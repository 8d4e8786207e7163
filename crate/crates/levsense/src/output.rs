use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use levsense_core::harness::{InitMode, SimulationSettings};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{AppError, Result};

/// Output directory that remembers every file written to it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| AppError::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `rel` (which may contain `/`) through a buffered writer.
    pub fn write<F>(&mut self, rel: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| AppError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| AppError::io(&path, e))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    /// Writes `manifest.json` listing the files written so far.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<Vec<String>> {
        manifest.outputs = self.files.clone();
        self.write("manifest.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &manifest).map_err(|e| AppError::format("manifest", e.to_string()))?;
            writeln!(w).map_err(|e| AppError::io("manifest.json", e))
        })?;
        Ok(self.files)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SettingsRecord {
    pub steps_per_period: f64,
    pub readout_periods: f64,
    pub retro_prior: f64,
    pub init: &'static str,
    pub noise: bool,
}

impl From<&SimulationSettings> for SettingsRecord {
    fn from(s: &SimulationSettings) -> Self {
        SettingsRecord {
            steps_per_period: s.steps_per_period,
            readout_periods: s.readout_periods,
            retro_prior: s.retro_prior,
            init: match s.init {
                InitMode::Thermal => "thermal",
                InitMode::ColdDamping => "cold_damping",
            },
            noise: s.noise,
        }
    }
}

/// Everything needed to repeat a run bit for bit. Worker count and wall
/// time are left out on purpose: they do not affect the results.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub seed: u64,
    pub n_trials: usize,
    pub r_grid: Vec<f64>,
    pub tau_grid_ns: Vec<f64>,
    /// Effective configuration in file units; loadable with `--config`.
    pub config: RunConfig,
    pub settings: SettingsRecord,
    pub outputs: Vec<String>,
    pub results: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: &RunConfig, settings: &SimulationSettings) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            preset: None,
            seed,
            n_trials: 0,
            r_grid: Vec::new(),
            tau_grid_ns: Vec::new(),
            config: config.clone(),
            settings: settings.into(),
            outputs: Vec::new(),
            results: serde_json::Value::Null,
        }
    }
}
