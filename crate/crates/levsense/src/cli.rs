//! Command-line front end. Exit codes: 0 success, 1 rejected input, 2
//! failure while running.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use levsense_core::dynamics::thermal_state;
use levsense_core::estimation::{kalman_forward, EstimationModel, FilterState};
use levsense_core::harness::{check_ratio, TrialPlan};
use levsense_core::protocol::build_for_ratio;
use serde_json::json;

use crate::config::{load_config, RunConfig};
use crate::error::{AppError, Result};
use crate::experiments::{self, Experiment, PhaseSpaceEnsemble, ScalingRun, SensitivityRow};
use crate::formats::{write_record_binary, write_record_csv, write_schedule_json, write_trajectory_csv};
use crate::output::{Manifest, OutputDir};
use crate::parallel::{default_workers, Parallel};
use crate::presets::{log_tau_grid_ns, ExperimentPreset, PresetName, DEFAULT_SEED};
use crate::selftest::{run_selftest, SelftestOptions};

#[derive(Debug, Parser)]
#[command(name = "levsense", version, about = "Squeezing-amplified impulse sensing with a levitated oscillator")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for all trials.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Trials per ensemble.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory [default: out/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it [default: all cores].
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a named experiment preset.
    Run {
        preset: PresetName,
        #[command(flatten)]
        common: Common,
    },
    /// Fit k(r) over pulse durations for each squeeze ratio, then k₁.
    SweepR {
        #[command(flatten)]
        common: Common,
        /// Squeeze ratios; accepts `sqrt(x)`.
        #[arg(long, value_delimiter = ',', value_parser = parse_ratio)]
        r_grid: Option<Vec<f64>>,
        /// Pulse durations in ns.
        #[arg(long, value_delimiter = ',')]
        tau_ns: Option<Vec<f64>>,
    },
    /// Displacement versus pulse duration at one squeeze ratio.
    SweepTau {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_ratio, default_value = "sqrt(12)")]
        r: f64,
        #[arg(long, value_delimiter = ',')]
        tau_ns: Option<Vec<f64>>,
    },
    /// Minimum detectable impulse over squeeze ratios.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', value_parser = parse_ratio)]
        r_grid: Option<Vec<f64>>,
    },
    /// Run the acceptance suite and print one line per criterion.
    Selftest {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print a protocol schedule as JSON.
    Schedule {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_ratio, default_value = "1")]
        r: f64,
        #[arg(long, default_value_t = 100.0)]
        tau_ns: f64,
    },
    /// Write the schedule, readout record and filter trajectory of one trial.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_ratio, default_value = "sqrt(12)")]
        r: f64,
        #[arg(long, default_value_t = 100.0)]
        tau_ns: f64,
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
}

/// A number or `sqrt(x)`.
pub fn parse_ratio(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let inner = s.strip_prefix("sqrt(").and_then(|t| t.strip_suffix(')'));
    let v = match inner {
        Some(x) => x.trim().parse::<f64>().map(f64::sqrt),
        None => s.parse::<f64>(),
    }
    .map_err(|e| format!("`{s}`: {e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not a finite number"))
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(config: Option<&Path>) -> Result<RunConfig> {
    match config {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn executor(workers: Option<usize>) -> Result<Parallel> {
    let n = workers.unwrap_or_else(default_workers);
    if n == 0 {
        return Err(AppError::Usage("--workers must be at least 1".into()));
    }
    Parallel::new(n).map_err(|e| AppError::Usage(format!("cannot start {n} workers: {e}")))
}

fn ns(grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|t| t / 1e9).collect()
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { preset, common } => {
            if preset == PresetName::Selftest {
                return selftest(common.seed, common.workers);
            }
            let config = load(common.config.as_deref())?;
            let p = ExperimentPreset::resolve(preset, &config, common.trials);
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(preset.as_str()));
            let job = Job::new(&common, &config, p.n_trials, out)?;
            let label = format!("run {}", preset.as_str());
            match preset {
                PresetName::Fig3Conventional | PresetName::Fig3Amplified => {
                    job.phase_space(&label, Some(preset), &p.r_grid, &p.tau_grid_ns)
                }
                PresetName::Fig4Scaling => job.scaling(&label, Some(preset), &p.r_grid, &p.tau_grid_ns),
                PresetName::Fig5Sensitivity => job.sensitivity(&label, Some(preset), &p.r_grid),
                PresetName::Selftest => unreachable!(),
            }
        }
        Command::SweepR { common, r_grid, tau_ns } => {
            let config = load(common.config.as_deref())?;
            let r_grid = r_grid.or(config.r_grid.clone()).unwrap_or_else(|| vec![1.0, 2.0, 12f64.sqrt()]);
            let tau = tau_ns.or(config.tau_grid_ns.clone()).unwrap_or_else(log_tau_grid_ns);
            let job = Job::from_common(&common, &config, "sweep-r")?;
            job.scaling("sweep-r", None, &r_grid, &tau)
        }
        Command::SweepTau { common, r, tau_ns } => {
            let config = load(common.config.as_deref())?;
            let tau = tau_ns.or(config.tau_grid_ns.clone()).unwrap_or_else(log_tau_grid_ns);
            let job = Job::from_common(&common, &config, "sweep-tau")?;
            job.scaling("sweep-tau", None, &[r], &tau)
        }
        Command::Sensitivity { common, r_grid } => {
            let config = load(common.config.as_deref())?;
            let r_grid = r_grid
                .or(config.r_grid.clone())
                .unwrap_or_else(|| ExperimentPreset::defaults(PresetName::Fig5Sensitivity).r_grid);
            let job = Job::from_common(&common, &config, "sensitivity")?;
            job.sensitivity("sensitivity", None, &r_grid)
        }
        Command::Selftest { seed, workers } => selftest(seed, workers),
        Command::Schedule { config, r, tau_ns } => {
            let config = load(config.as_deref())?;
            check_ratio(r)?;
            let params = config.params();
            let schedule = build_for_ratio(&params, r, tau_ns / 1e9, config.settings().readout_duration(&params))?;
            let stdout = std::io::stdout();
            write_schedule_json(&schedule, stdout.lock())?;
            println!();
            Ok(())
        }
        Command::Trace { common, r, tau_ns, trial } => {
            let config = load(common.config.as_deref())?;
            let job = Job::from_common(&common, &config, "trace")?;
            job.trace(r, tau_ns, trial)
        }
    }
}

fn selftest(seed: u64, workers: Option<usize>) -> Result<()> {
    let workers = workers.unwrap_or_else(default_workers).max(1);
    let results = run_selftest(SelftestOptions { seed, workers })?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.ok()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        Err(AppError::SelftestFailed(failed))
    } else {
        Ok(())
    }
}

struct Job {
    exp: Experiment,
    config: RunConfig,
    exec: Parallel,
    out: PathBuf,
}

impl Job {
    fn new(common: &Common, config: &RunConfig, n_trials: usize, out: PathBuf) -> Result<Self> {
        Ok(Job {
            exp: Experiment {
                params: config.params(),
                settings: config.settings(),
                n_trials,
                seed: common.seed,
            },
            config: config.clone(),
            exec: executor(common.workers)?,
            out,
        })
    }

    fn from_common(common: &Common, config: &RunConfig, name: &str) -> Result<Self> {
        let n = common.trials.or(config.n_trials).unwrap_or(crate::presets::DEFAULT_TRIALS);
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name));
        Self::new(common, config, n, out)
    }

    fn manifest(&self, command: &str, preset: Option<PresetName>, r_grid: &[f64], tau_ns: &[f64]) -> Manifest {
        let mut m = Manifest::new(command, self.exp.seed, &self.config, &self.exp.settings);
        m.preset = preset.map(|p| p.as_str().to_string());
        m.n_trials = self.exp.n_trials;
        m.r_grid = r_grid.to_vec();
        m.tau_grid_ns = tau_ns.to_vec();
        m
    }

    fn done(&self, files: Vec<String>) {
        println!("wrote {} files to {}", files.len(), self.out.display());
    }

    fn phase_space(&self, command: &str, preset: Option<PresetName>, r_grid: &[f64], tau_ns: &[f64]) -> Result<()> {
        let runs = experiments::phase_space(&self.exp, r_grid, &ns(tau_ns), &self.exec)?;
        let mut dir = OutputDir::create(&self.out)?;
        for run in &runs {
            dir.write(&format!("{}/ensemble.csv", run.label()), |w| experiments::write_ensemble_csv(&run.ensemble, w))?;
        }
        dir.write("summary.csv", |w| experiments::write_summary_csv(&runs, w))?;
        for run in &runs {
            println!(
                "r = {:.4}, tau = {:.0} ns: displacement {:.3} +- {:.3}, sigma_tot {:.3}",
                run.r,
                run.tau * 1e9,
                run.stats.displacement,
                run.stats.displacement_se,
                run.stats.sigma_tot
            );
        }
        let mut m = self.manifest(command, preset, r_grid, tau_ns);
        m.results = json!(runs.iter().map(summary_json).collect::<Vec<_>>());
        self.done(dir.finish(m)?);
        Ok(())
    }

    fn scaling(&self, command: &str, preset: Option<PresetName>, r_grid: &[f64], tau_ns: &[f64]) -> Result<()> {
        let run = experiments::scaling(&self.exp, r_grid, &ns(tau_ns), &self.exec)?;
        let mut dir = OutputDir::create(&self.out)?;
        dir.write("scaling.csv", |w| experiments::write_scaling_csv(&run, w))?;
        dir.write("gains.csv", |w| experiments::write_gains_csv(&run, w))?;
        print_scaling(&run);
        let mut m = self.manifest(command, preset, r_grid, tau_ns);
        m.results = json!({ "k1": run.k1, "k1_configured": run.k1_configured });
        self.done(dir.finish(m)?);
        Ok(())
    }

    fn sensitivity(&self, command: &str, preset: Option<PresetName>, r_grid: &[f64]) -> Result<()> {
        let rows = experiments::sensitivity(&self.exp, r_grid, &self.exec)?;
        let mut dir = OutputDir::create(&self.out)?;
        dir.write("sensitivity.csv", |w| experiments::write_sensitivity_csv(&rows, w))?;
        print_sensitivity(&rows);
        let m = self.manifest(command, preset, r_grid, &[0.0]);
        self.done(dir.finish(m)?);
        Ok(())
    }

    fn trace(&self, r: f64, tau_ns: f64, trial: usize) -> Result<()> {
        check_ratio(r)?;
        let p = &self.exp.params;
        let schedule = build_for_ratio(p, r, tau_ns / 1e9, self.exp.settings.readout_duration(p))?;
        let plan = TrialPlan::new(&schedule, p, &self.exp.settings)?;
        let (result, record) = plan.run_trial_with_record(trial, self.exp.seed)?;
        let prior = FilterState::forward(thermal_state(p.n_init)?, record.t0);
        let trajectory = kalman_forward(&record, &EstimationModel::readout(p), prior)?;
        let mut dir = OutputDir::create(&self.out)?;
        dir.write("schedule.json", |w| write_schedule_json(&schedule, w))?;
        dir.write("record.csv", |w| write_record_csv(&record, w))?;
        dir.write("record.lkr", |w| write_record_binary(&record, w))?;
        dir.write("trajectory.csv", |w| write_trajectory_csv(&trajectory, w))?;
        println!(
            "trial {trial}: estimate ({:.4}, {:.4}), true ({:.4}, {:.4})",
            result.outcome.q, result.outcome.p, result.true_state.q, result.true_state.p
        );
        let mut m = self.manifest("trace", None, &[r], &[tau_ns]);
        m.n_trials = 1;
        m.results = json!({
            "trial_index": trial,
            "trial_seed": result.seed,
            "estimate": [result.outcome.q, result.outcome.p],
            "estimate_cov": [result.outcome_cov.xx, result.outcome_cov.xy, result.outcome_cov.yy],
            "true_state": [result.true_state.q, result.true_state.p],
        });
        self.done(dir.finish(m)?);
        Ok(())
    }
}

fn summary_json(run: &PhaseSpaceEnsemble) -> serde_json::Value {
    json!({
        "r": run.r,
        "tau_s": run.tau,
        "kick_dp": run.ensemble.kick_dp,
        "displacement": run.stats.displacement,
        "displacement_se": run.stats.displacement_se,
        "sigma_tot": run.stats.sigma_tot,
        "sigma_tot_se": run.stats.sigma_tot_se,
    })
}

fn print_scaling(run: &ScalingRun) {
    for g in &run.gains {
        println!("r = {:.4}: k = {:.4e} +- {:.2e} /s, k/r = {:.4e} /s", g.r, g.k, g.k_se, g.k / g.r);
    }
    if let Some(k1) = &run.k1 {
        println!(
            "k1 = {:.4e} +- {:.2e} /s (calibration {:.4e} /s)",
            k1.slope, k1.slope_se, run.k1_configured
        );
    }
}

fn print_sensitivity(rows: &[SensitivityRow]) {
    for row in rows {
        let p = &row.point;
        println!(
            "r = {:.4}: sigma_tot {:.3} (model {:.3}), dP_min {:.3} zp = {:.2} keV/c, {:+.2} dB vs p_zp, {:+.2} dB vs sqrt2 p_zp",
            p.r, p.sigma_tot, p.model.sigma_tot, p.dp_min_zp, p.dp_min_kev_c, p.db_vs_pzp, p.db_vs_ideal
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parser() {
        assert_eq!(parse_ratio("2").unwrap(), 2.0);
        assert_eq!(parse_ratio("sqrt(12)").unwrap(), 12f64.sqrt());
        assert!(parse_ratio("sqrt(x)").is_err());
        assert!(parse_ratio("inf").is_err());
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
