//! Phase-space ensembles, displacement scaling and sensitivity sweeps, with
//! their CSV tables.

use std::io::Write;

use levsense_core::harness::{
    ensemble_stats, fit_displacement_vs_tau, fit_k1, noise_budget_envelope, run_ensemble, sensitivity_curve,
    DisplacementPoint, Ensemble, EnsembleStats, GainPoint, OriginFit, ParamUncertainty, SensitivityPoint,
    SimulationSettings, TrialExecutor,
};
use levsense_core::protocol::build_for_ratio;
use levsense_core::units::OscillatorParams;
use serde::Serialize;

use crate::error::{AppError, Result};
use crate::formats::fmt9;

/// Everything that determines the outcome of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct Experiment {
    pub params: OscillatorParams,
    pub settings: SimulationSettings,
    pub n_trials: usize,
    pub seed: u64,
}

impl Experiment {
    pub fn ensemble<E: TrialExecutor + ?Sized>(&self, r: f64, tau: f64, exec: &E) -> Result<Ensemble> {
        levsense_core::harness::check_ratio(r)?;
        let schedule = build_for_ratio(&self.params, r, tau, self.settings.readout_duration(&self.params))?;
        log::info!("ensemble r = {r:.4}, tau = {:.0} ns, {} trials", tau * 1e9, self.n_trials);
        Ok(run_ensemble(&schedule, &self.params, &self.settings, self.n_trials, self.seed, exec)?)
    }
}

fn csv_err(e: csv::Error) -> AppError {
    AppError::format("CSV output", e.to_string())
}

fn write_rows<W: Write>(w: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for row in rows {
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| AppError::io("<csv>", e))
}

pub struct PhaseSpaceEnsemble {
    pub r: f64,
    pub tau: f64,
    pub ensemble: Ensemble,
    pub stats: EnsembleStats,
}

impl PhaseSpaceEnsemble {
    /// Output subdirectory name, e.g. `r3.4641_tau100ns`.
    pub fn label(&self) -> String {
        format!("r{:.4}_tau{:.0}ns", self.r, self.tau * 1e9)
    }
}

pub fn phase_space<E: TrialExecutor + ?Sized>(
    exp: &Experiment,
    r_grid: &[f64],
    tau_grid: &[f64],
    exec: &E,
) -> Result<Vec<PhaseSpaceEnsemble>> {
    let mut out = Vec::new();
    for &r in r_grid {
        for &tau in tau_grid {
            let ensemble = exp.ensemble(r, tau, exec)?;
            let stats = ensemble_stats(&ensemble)?;
            out.push(PhaseSpaceEnsemble { r, tau, ensemble, stats });
        }
    }
    Ok(out)
}

/// `trial_index,q_est,p_est,q_true,p_true`
pub fn write_ensemble_csv<W: Write>(ensemble: &Ensemble, w: W) -> Result<()> {
    write_rows(
        w,
        &["trial_index", "q_est", "p_est", "q_true", "p_true"],
        ensemble.trials.iter().map(|t| {
            vec![
                t.trial_index.to_string(),
                fmt9(t.outcome.q),
                fmt9(t.outcome.p),
                fmt9(t.true_state.q),
                fmt9(t.true_state.p),
            ]
        }),
    )
}

/// One row of ensemble statistics per (r, τ).
pub fn write_summary_csv<W: Write>(runs: &[PhaseSpaceEnsemble], w: W) -> Result<()> {
    write_rows(
        w,
        &[
            "r", "tau_s", "kick_dp", "axis", "mean_q", "mean_p", "cov_qq", "cov_qp", "cov_pp", "displacement",
            "displacement_se", "sigma_tot", "sigma_tot_se", "ellipse_major", "ellipse_minor", "ellipse_angle",
        ],
        runs.iter().map(|run| {
            let s = &run.stats;
            let axis = match s.axis {
                levsense_core::harness::Axis::Q => "q",
                levsense_core::harness::Axis::P => "p",
            };
            let mut row = vec![fmt9(run.r), fmt9(run.tau), fmt9(run.ensemble.kick_dp), axis.to_string()];
            row.extend(
                [
                    s.mean.q,
                    s.mean.p,
                    s.cov.xx,
                    s.cov.xy,
                    s.cov.yy,
                    s.displacement,
                    s.displacement_se,
                    s.sigma_tot,
                    s.sigma_tot_se,
                    s.ellipse.semi_major,
                    s.ellipse.semi_minor,
                    s.ellipse.angle,
                ]
                .map(fmt9),
            );
            row
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub r: f64,
    pub tau: f64,
    pub dq_mean: f64,
    pub dq_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub slope_se: f64,
}

impl From<&OriginFit> for LineFit {
    fn from(f: &OriginFit) -> Self {
        LineFit {
            slope: f.slope,
            slope_se: f.slope_se,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRun {
    pub rows: Vec<ScalingRow>,
    pub gains: Vec<GainPoint>,
    /// Present when at least two squeeze ratios were swept.
    pub k1: Option<LineFit>,
    /// Calibration slope `kappa_imp · U_p` the fit should recover.
    pub k1_configured: f64,
}

/// Displacement versus pulse duration for each squeeze ratio, the slopes
/// `k(r)` and, across ratios, `k₁`.
pub fn scaling<E: TrialExecutor + ?Sized>(exp: &Experiment, r_grid: &[f64], tau_grid: &[f64], exec: &E) -> Result<ScalingRun> {
    let mut rows = Vec::new();
    let mut gains = Vec::new();
    for &r in r_grid {
        let mut points = Vec::with_capacity(tau_grid.len());
        for &tau in tau_grid {
            let stats = ensemble_stats(&exp.ensemble(r, tau, exec)?)?;
            points.push(DisplacementPoint {
                tau,
                displacement: stats.displacement,
                se: stats.displacement_se,
            });
            rows.push(ScalingRow {
                r,
                tau,
                dq_mean: stats.displacement,
                dq_se: stats.displacement_se,
            });
        }
        let fit = fit_displacement_vs_tau(&points)?;
        gains.push(GainPoint {
            r,
            k: fit.slope,
            k_se: fit.slope_se,
        });
    }
    let k1 = if gains.len() >= 2 { Some(LineFit::from(&fit_k1(&gains)?)) } else { None };
    Ok(ScalingRun {
        rows,
        gains,
        k1,
        k1_configured: exp.params.kappa_imp * exp.params.pulse_voltage,
    })
}

/// `r,tau_s,dq_mean,dq_se`
pub fn write_scaling_csv<W: Write>(run: &ScalingRun, w: W) -> Result<()> {
    write_rows(
        w,
        &["r", "tau_s", "dq_mean", "dq_se"],
        run.rows.iter().map(|p| [p.r, p.tau, p.dq_mean, p.dq_se].map(fmt9).to_vec()),
    )
}

/// `r,k,k_se,k_over_r`
pub fn write_gains_csv<W: Write>(run: &ScalingRun, w: W) -> Result<()> {
    write_rows(
        w,
        &["r", "k", "k_se", "k_over_r"],
        run.gains.iter().map(|g| [g.r, g.k, g.k_se, g.k / g.r].map(fmt9).to_vec()),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub point: SensitivityPoint,
    /// Model `sigma_tot` range over the parameter uncertainties.
    pub model_lo: f64,
    pub model_hi: f64,
}

pub fn sensitivity<E: TrialExecutor + ?Sized>(exp: &Experiment, r_grid: &[f64], exec: &E) -> Result<Vec<SensitivityRow>> {
    log::info!("sensitivity over {} ratios, {} trials each", r_grid.len(), exp.n_trials);
    let curve = sensitivity_curve(&exp.params, r_grid, exp.n_trials, &exp.settings, exp.seed, exec)?;
    curve
        .points
        .into_iter()
        .map(|point| {
            let (model_lo, model_hi) = noise_budget_envelope(&exp.params, point.r, &ParamUncertainty::default())?;
            Ok(SensitivityRow {
                point,
                model_lo,
                model_hi,
            })
        })
        .collect()
}

/// `r,sigma_tot,dp_min_zp,dp_min_kev_c,db_vs_ideal,db_vs_pzp` followed by
/// standard errors and the model prediction with its envelope.
pub fn write_sensitivity_csv<W: Write>(rows: &[SensitivityRow], w: W) -> Result<()> {
    write_rows(
        w,
        &[
            "r",
            "sigma_tot",
            "dp_min_zp",
            "dp_min_kev_c",
            "db_vs_ideal",
            "db_vs_pzp",
            "sigma_tot_se",
            "dp_min_kev_c_se",
            "db_se",
            "model_sigma_tot",
            "model_sigma_lo",
            "model_sigma_hi",
        ],
        rows.iter().map(|row| {
            let p = &row.point;
            [
                p.r,
                p.sigma_tot,
                p.dp_min_zp,
                p.dp_min_kev_c,
                p.db_vs_ideal,
                p.db_vs_pzp,
                p.sigma_tot_se,
                p.dp_min_kev_c_se,
                p.db_se,
                p.model.sigma_tot,
                row.model_lo,
                row.model_hi,
            ]
            .map(fmt9)
            .to_vec()
        }),
    )
}
