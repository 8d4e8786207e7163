//! The acceptance suite: analytic identities of the dynamics and estimator,
//! plus Monte-Carlo targets for the noise budget, scaling, sensitivity,
//! determinism and statistical honesty.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::time::{Duration, Instant};

use levsense_core::dynamics::{
    propagate_unconditional, quarter_period_map, soft_quarter_period, DynamicsModel, GaussianState,
};
use levsense_core::estimation::{retrodict_with_prior, riccati_steady_state, EstimationModel, Retrodictor};
use levsense_core::harness::{
    ensemble_stats, fit_displacement_vs_tau, noise_budget, run_ensemble, sensitivity_point, Axis, DisplacementPoint,
    Ensemble, SimulationSettings, TrialPlan,
};
use levsense_core::linalg::{Mat2, Vec2};
use levsense_core::protocol::{build_amplified, build_conventional, build_for_ratio};
use levsense_core::units::OscillatorParams;

use crate::error::Result;
use crate::experiments::{self, Experiment};
use crate::parallel::Parallel;

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub time_limit: Option<Duration>,
}

impl CriterionResult {
    pub fn within_time(&self) -> bool {
        self.time_limit.is_none_or(|limit| self.elapsed <= limit)
    }

    pub fn ok(&self) -> bool {
        self.passed && self.within_time()
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.ok() { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2} {}: {} ({:.2} s", self.id, self.name, self.detail, self.elapsed.as_secs_f64())?;
        match self.time_limit {
            Some(l) => write!(f, ", limit {} s)", l.as_secs()),
            None => write!(f, ")"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    pub seed: u64,
    pub workers: usize,
}

type Check = (bool, String);

struct Suite<'a> {
    params: OscillatorParams,
    settings: SimulationSettings,
    opts: SelftestOptions,
    exec: &'a Parallel,
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn axis_var(cov: &Mat2, axis: Axis) -> f64 {
    match axis {
        Axis::Q => cov.xx,
        Axis::P => cov.yy,
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

impl Suite<'_> {
    fn ensemble(&self, params: &OscillatorParams, r: f64, tau: f64, n: usize) -> Result<Ensemble> {
        let schedule = build_for_ratio(params, r, tau, self.settings.readout_duration(params))?;
        Ok(run_ensemble(&schedule, params, &self.settings, n, self.opts.seed, self.exec)?)
    }

    fn quarter_map(&self) -> Result<Check> {
        let p = &self.params;
        let mut worst: f64 = 0.0;
        for r in [1.0, 2.0, 12f64.sqrt()] {
            let model = DynamicsModel::soft(p, r).without_noise();
            let dt = 2.0 * std::f64::consts::PI * r / p.omega_base / self.settings.steps_per_period;
            let duration = soft_quarter_period(p.omega_base, r);
            let s = quarter_period_map(r)?;
            let cov = Mat2::symmetric(2.0, 0.3, 0.8);
            let mut cols = [Vec2::ZERO; 2];
            for (col, e) in cols.iter_mut().zip([Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]) {
                *col = propagate_unconditional(&GaussianState::new(e, cov), &model, duration, dt)?.mean;
            }
            let out = propagate_unconditional(&GaussianState::new(Vec2::ZERO, cov), &model, duration, dt)?;
            let got = Mat2::new(cols[0].q, cols[1].q, cols[0].p, cols[1].p);
            worst = worst.max(got.max_abs_diff(&s)).max(out.cov.max_abs_diff(&s.congruence(&cov)));
        }
        Ok((worst <= 1e-9, format!("max entry error {worst:.1e} (tol 1e-9) for r in {{1, 2, sqrt12}}")))
    }

    fn amplification_identity(&self) -> Result<Check> {
        let p = &self.params;
        let settings = SimulationSettings::noiseless();
        let init = GaussianState::new(Vec2::new(0.7, -0.4), Mat2::symmetric(2.0, 0.3, 0.8));
        let calib = p.kappa_imp * p.pulse_voltage;
        let mut worst: f64 = 0.0;
        for r in [2.0, 12f64.sqrt()] {
            for dp in [0.3, 1.2, 12.0] {
                let schedule = build_amplified(p, r, dp / calib, settings.readout_duration(p))?;
                let dp = schedule.kick_dp();
                let out = TrialPlan::new(&schedule, p, &settings)?.propagate_state(&init);
                let expected = Vec2::new(-init.mean.q + r * dp, -init.mean.p);
                worst = worst.max(out.mean.max_abs_diff(expected)).max(out.cov.max_abs_diff(&init.cov));
            }
        }
        Ok((
            worst <= 1e-9,
            format!("max deviation from (-Q0 + r dP, -P0) and V0: {worst:.1e} (tol 1e-9)"),
        ))
    }

    fn heating(&self) -> Result<Check> {
        let p = &self.params;
        let model = DynamicsModel::base(p, false);
        let t = 10.0 * p.base_period();
        let out = propagate_unconditional(&GaussianState::ground(), &model, t, p.base_period() / self.settings.steps_per_period)?;
        let expected = p.gamma_qb * t;
        let got = out.occupation();
        Ok((
            rel(got, expected) <= 0.02,
            format!("occupation gain {got:.5} vs Gamma t = {expected:.5}"),
        ))
    }

    fn variance_floor(&self) -> Result<Check> {
        let lossy = riccati_steady_state(&EstimationModel::readout(&self.params))?.xx;
        let ideal = riccati_steady_state(&EstimationModel::readout(&OscillatorParams {
            eta: 1.0,
            ..self.params
        }))?
        .xx;
        let target = 1.0 / self.params.eta.sqrt();
        Ok((
            rel(lossy, target) <= 0.03 && rel(ideal, 1.0) <= 0.03,
            format!("V11 = {lossy:.4} (target {target:.4}), eta = 1: {ideal:.4} (target 1)"),
        ))
    }

    fn retrodiction(&self) -> Result<Check> {
        let p = &self.params;
        let model = EstimationModel::readout(p);
        let fwd = riccati_steady_state(&model)?;
        let schedule = build_amplified(p, 2.0, 0.0, self.settings.readout_duration(p))?;
        let plan = TrialPlan::new(&schedule, p, &self.settings)?;
        let (_, rec_a) = plan.run_trial_with_record(0, self.opts.seed)?;
        let (_, rec_b) = plan.run_trial_with_record(1, self.opts.seed)?;
        let cached = Retrodictor::new(&model, rec_a.dt, rec_a.len(), self.settings.retro_prior)?.covariance();
        let a = retrodict_with_prior(&rec_a, &model, rec_a.t0, self.settings.retro_prior)?;
        let b = retrodict_with_prior(&rec_b, &model, rec_b.t0, self.settings.retro_prior)?;
        let spread = a.cov.max_abs_diff(&b.cov).max(a.cov.max_abs_diff(&cached));
        // Time reversal flips the sign of momentum, hence of the correlation.
        let ok = rel(a.cov.xx, fwd.xx) <= 0.05
            && rel(a.cov.yy, fwd.yy) <= 0.05
            && rel(-a.cov.xy, fwd.xy) <= 0.05
            && spread <= 1e-12;
        Ok((
            ok,
            format!(
                "retro (Vqq, Vqp, Vpp) = ({:.4}, {:.4}, {:.4}) vs forward ({:.4}, {:.4}, {:.4}) with Vqp mirrored; record dependence {spread:.1e}",
                a.cov.xx, a.cov.xy, a.cov.yy, fwd.xx, fwd.xy, fwd.yy
            ),
        ))
    }

    fn noise_offset(&self) -> Result<Check> {
        let s = ensemble_stats(&self.ensemble(&self.params, 1.01, 0.0, 2000)?)?;
        let model = noise_budget(&self.params, 1.0)?.sigma_tot;
        Ok((
            (s.sigma_tot - 2.46).abs() <= 0.15,
            format!(
                "sigma_tot(1.01) = {:.4} +- {:.4} (target 2.46 +- 0.15; sqrt(2n+1+1/sqrt(eta)) = {model:.4})",
                s.sigma_tot, s.sigma_tot_se
            ),
        ))
    }

    fn recoil_growth(&self) -> Result<Check> {
        let mut ok = true;
        let mut parts = Vec::new();
        for r in [2.0, 12f64.sqrt()] {
            let s = ensemble_stats(&self.ensemble(&self.params, r, 0.0, 5000)?)?;
            let model = noise_budget(&self.params, r)?.sigma_tot;
            ok &= rel(s.sigma_tot, model) <= 0.05;
            if r > 3.0 {
                ok &= (s.sigma_tot - 2.74).abs() <= 0.14;
            }
            parts.push(format!("r = {r:.3}: {:.4} vs model {model:.4}", s.sigma_tot));
        }
        Ok((ok, parts.join("; ")))
    }

    fn linear_scaling(&self) -> Result<Check> {
        let mut ratios = Vec::new();
        for r in [1.0, 2.0, 12f64.sqrt()] {
            let mut pts = Vec::new();
            for tau in [100e-9, 300e-9, 1000e-9] {
                let s = ensemble_stats(&self.ensemble(&self.params, r, tau, 2000)?)?;
                pts.push(DisplacementPoint {
                    tau,
                    displacement: s.displacement,
                    se: s.displacement_se,
                });
            }
            ratios.push((r, fit_displacement_vs_tau(&pts)?.slope / r));
        }
        let mean = ratios.iter().map(|x| x.1).sum::<f64>() / ratios.len() as f64;
        let dev = ratios.iter().map(|x| rel(x.1, mean)).fold(0.0, f64::max);
        let listed: Vec<String> = ratios.iter().map(|(r, k)| format!("{r:.3}: {k:.4e}")).collect();
        Ok((
            dev < 0.05,
            format!("k(r)/r [1/s] {}; max deviation {:.2}% (tol 5%)", listed.join(", "), 100.0 * dev),
        ))
    }

    fn ideal_limit(&self) -> Result<Check> {
        let ideal = self.params.ideal();
        let analytic = noise_budget(&ideal, 1.0)?.sigma_tot;
        let point = sensitivity_point(&ideal, 1.0, analytic, 0.0)?;
        // Ground state prepared at the kick: the release lead shrinks to one
        // integration step.
        let lead = ideal.base_period() / self.settings.steps_per_period;
        let schedule = build_conventional(&ideal, 0.0, lead, self.settings.readout_duration(&ideal))?;
        let ens = run_ensemble(&schedule, &ideal, &self.settings, 5000, self.opts.seed, self.exec)?;
        let mc = ensemble_stats(&ens)?.sigma_tot;
        Ok((
            (point.dp_min_zp - SQRT_2).abs() <= 1e-6 && rel(mc, SQRT_2) <= 0.05,
            format!("analytic dP_min = {:.9}, Monte-Carlo {mc:.4} (target sqrt2 = {SQRT_2:.4})", point.dp_min_zp),
        ))
    }

    fn headline(&self) -> Result<Check> {
        // A large ensemble keeps the dB bounds several standard errors away.
        let r = 12f64.sqrt();
        let s = ensemble_stats(&self.ensemble(&self.params, r, 0.0, 20_000)?)?;
        let pt = sensitivity_point(&self.params, r, s.sigma_tot, s.sigma_tot_se)?;
        let ok = (5.8..=7.7).contains(&pt.dp_min_kev_c)
            && (-1.1..=-0.2).contains(&pt.db_vs_pzp)
            && (-2.6..=-1.6).contains(&pt.db_vs_ideal);
        Ok((
            ok,
            format!(
                "dP_min(sqrt12) = {:.3} +- {:.3} keV/c, {:.3} dB vs p_zp, {:.3} dB vs sqrt2 p_zp (N = 20000)",
                pt.dp_min_kev_c, pt.dp_min_kev_c_se, pt.db_vs_pzp, pt.db_vs_ideal
            ),
        ))
    }

    fn determinism(&self) -> Result<Check> {
        let run = |workers: usize| -> Result<Vec<u8>> {
            let exec = Parallel::new(workers).expect("thread pool");
            let exp = Experiment {
                params: self.params,
                settings: self.settings,
                n_trials: 200,
                seed: self.opts.seed,
            };
            let mut bytes = Vec::new();
            for run in experiments::phase_space(&exp, &[1.0, 12f64.sqrt()], &[100e-9], &exec)? {
                experiments::write_ensemble_csv(&run.ensemble, &mut bytes)?;
            }
            let rows = experiments::sensitivity(&exp, &[1.0, 2.0], &exec)?;
            experiments::write_sensitivity_csv(&rows, &mut bytes)?;
            Ok(bytes)
        };
        let (one, eight) = (run(1)?, run(8)?);
        Ok((
            one == eight && !one.is_empty(),
            format!("{} bytes of ensemble and sensitivity CSV, 1 vs 8 workers identical: {}", one.len(), one == eight),
        ))
    }

    fn honesty(&self) -> Result<Check> {
        let mut ok = true;
        let mut parts = Vec::new();
        for r in [1.0, 12f64.sqrt()] {
            let ens = self.ensemble(&self.params, r, 0.0, 2000)?;
            for axis in [Axis::Q, Axis::P] {
                let sd = axis_var(&ens.estimator_cov, axis).sqrt();
                let z: Vec<f64> = ens.trials.iter().map(|t| (axis.of(t.outcome) - axis.of(t.true_state)) / sd).collect();
                let v = sample_variance(&z);
                ok &= (v - 1.0).abs() <= 0.1;
                parts.push(format!("r = {r:.3} {axis:?}: {v:.3}"));
            }
        }
        Ok((ok, format!("normalized error variance {}", parts.join(", "))))
    }
}

/// Runs all twelve criteria in order.
pub fn run_selftest(opts: SelftestOptions) -> Result<Vec<CriterionResult>> {
    let exec = Parallel::new(opts.workers).expect("thread pool");
    let suite = Suite {
        params: OscillatorParams::default(),
        settings: SimulationSettings::default(),
        opts,
        exec: &exec,
    };
    type Runner<'a> = fn(&Suite<'a>) -> Result<Check>;
    let criteria: [(u8, &str, Runner, Option<u64>); 12] = [
        (1, "quarter-map exactness", Suite::quarter_map, Some(1)),
        (2, "amplification identity", Suite::amplification_identity, Some(1)),
        (3, "heating conservation", Suite::heating, Some(1)),
        (4, "variance floor", Suite::variance_floor, Some(10)),
        (5, "retrodiction equivalence", Suite::retrodiction, Some(30)),
        (6, "noise budget offset", Suite::noise_offset, Some(120)),
        (7, "recoil growth", Suite::recoil_growth, Some(180)),
        (8, "linear scaling", Suite::linear_scaling, Some(180)),
        (9, "ideal conventional limit", Suite::ideal_limit, None),
        (10, "headline sensitivity", Suite::headline, Some(180)),
        (11, "determinism", Suite::determinism, None),
        (12, "statistical honesty", Suite::honesty, None),
    ];
    let mut out = Vec::with_capacity(criteria.len());
    for (id, name, run, limit) in criteria {
        let start = Instant::now();
        let (passed, detail) = match run(&suite) {
            Ok(check) => check,
            Err(e) => (false, format!("error: {e}")),
        };
        let result = CriterionResult {
            id,
            name,
            passed,
            detail,
            elapsed: start.elapsed(),
            time_limit: limit.map(Duration::from_secs),
        };
        log::info!("{result}");
        out.push(result);
    }
    Ok(out)
}
