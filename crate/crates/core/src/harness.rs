//! Monte-Carlo trials of the kick protocols and the statistics built on them:
//! phase-space ensembles, displacement fits, the noise budget and the
//! minimum detectable impulse.
//!
//! Each trial follows a hidden phase-space point through the schedule with
//! sampled process noise, generates the readout record from it and estimates
//! the state at the protocol reference time by retrodiction. Trials draw
//! from independent ChaCha8 streams seeded from `(master_seed, trial_index)`,
//! so results do not depend on execution order.

use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{measurement_update, thermal_state, DynamicsModel, GaussianState, Stepper};
use crate::estimation::{EstimationModel, Retrodictor, DEFAULT_RETRO_PRIOR};
use crate::linalg::{Mat2, Vec2};
use crate::protocol::{build_for_ratio, ensure_valid, ProtocolSchedule, SegmentKind, DEFAULT_READOUT_PERIODS};
use crate::record::MeasurementRecord;
use crate::units::{db_ratio, momentum_to_kev_c, OscillatorParams};
use crate::{Error, Result};

/// Largest squeeze ratio accepted by the analysis: beyond it the soft trap
/// sits in the band of mechanical vibrations whose excess backaction is not
/// modelled.
pub const MAX_SQUEEZE_RATIO: f64 = 6.0;

/// How a trial's initial state is prepared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Draw from the thermal state at the configured occupation.
    Thermal,
    /// Simulate the cold-damping hold: feedback on the forward-filtered
    /// momentum estimate, starting from the thermal state.
    ColdDamping,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSettings {
    /// Integration steps per local oscillation period.
    pub steps_per_period: f64,
    /// Readout length in base periods.
    pub readout_periods: f64,
    pub init: InitMode,
    /// Prior variance of the backward filter.
    pub retro_prior: f64,
    /// When false every trial is deterministic: no initial spread, process
    /// noise or measurement noise.
    pub noise: bool,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            steps_per_period: 200.0,
            readout_periods: DEFAULT_READOUT_PERIODS,
            init: InitMode::Thermal,
            retro_prior: DEFAULT_RETRO_PRIOR,
            noise: true,
        }
    }
}

impl SimulationSettings {
    pub fn noiseless() -> Self {
        SimulationSettings {
            noise: false,
            ..Self::default()
        }
    }

    pub fn readout_duration(&self, params: &OscillatorParams) -> f64 {
        self.readout_periods * params.base_period()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.steps_per_period >= crate::dynamics::MIN_STEPS_PER_PERIOD) {
            return Err(Error::InvalidParameter {
                name: "dt_per_period",
                constraint: "at least 50",
                value: self.steps_per_period,
            });
        }
        if !(self.readout_periods >= 1.0) || !self.readout_periods.is_finite() {
            return Err(Error::InvalidParameter {
                name: "readout_periods",
                constraint: "at least 1",
                value: self.readout_periods,
            });
        }
        if !(self.retro_prior > 0.0) {
            return Err(Error::InvalidParameter {
                name: "retro_prior",
                constraint: "positive",
                value: self.retro_prior,
            });
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-trial seed derived from the master seed and the trial index.
pub fn trial_seed(master_seed: u64, trial_index: usize) -> u64 {
    mix(mix(master_seed) ^ (trial_index as u64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    /// Retrodicted `(Q, P)` at the protocol reference time.
    pub outcome: Vec2,
    /// Covariance reported by the estimator.
    pub outcome_cov: Mat2,
    /// Hidden simulated state at the same instant.
    pub true_state: Vec2,
    pub trial_index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum Phase {
    Evolve(Stepper),
    ColdDamping { stepper: Stepper, gamma_fb: f64 },
    Kick(f64),
}

/// A schedule compiled into per-segment step kernels plus a cached
/// retrodictor, shared read-only by all trials of an ensemble.
#[derive(Debug, Clone)]
pub struct TrialPlan {
    params: OscillatorParams,
    schedule: ProtocolSchedule,
    settings: SimulationSettings,
    init: GaussianState,
    init_factor: Mat2,
    phases: Vec<Phase>,
    readout: Stepper,
    retrodictor: Retrodictor,
}

impl TrialPlan {
    pub fn new(schedule: &ProtocolSchedule, params: &OscillatorParams, settings: &SimulationSettings) -> Result<Self> {
        params.validate()?;
        settings.validate()?;
        ensure_valid(schedule, params)?;
        let last = schedule.segments.last().expect("validated schedule is non-empty");
        if last.kind != SegmentKind::Readout {
            return Err(Error::Domain("the readout must be the final segment"));
        }
        let model_for = |seg| {
            let m = DynamicsModel::for_segment(params, seg);
            if settings.noise {
                m
            } else {
                m.without_noise()
            }
        };
        let step_for = |m: &DynamicsModel| 2.0 * PI / m.local_omega() / settings.steps_per_period;
        let mut phases = Vec::new();
        for seg in &schedule.segments[..schedule.segments.len() - 1] {
            match seg.kind {
                SegmentKind::Kick => phases.push(Phase::Kick(seg.kick_dp)),
                SegmentKind::FeedbackHold => {
                    if settings.init == InitMode::ColdDamping && seg.duration > 0.0 {
                        let mut m = model_for(seg);
                        m.gamma_fb = 0.0;
                        let stepper = Stepper::new(&m, seg.duration, step_for(&m))?;
                        phases.push(Phase::ColdDamping {
                            stepper,
                            gamma_fb: params.gamma_fb,
                        });
                    }
                }
                _ => {
                    let m = model_for(seg);
                    phases.push(Phase::Evolve(Stepper::new(&m, seg.duration, step_for(&m))?));
                }
            }
        }
        let readout_model = model_for(last);
        let readout = Stepper::new(&readout_model, last.duration, step_for(&readout_model))?;
        // Estimation always assumes the physical noise model.
        let estimator = EstimationModel::readout(params);
        let retrodictor = Retrodictor::new(&estimator, readout.step(), readout.n_steps, settings.retro_prior)?;
        let init = thermal_state(params.n_init)?;
        let init_factor = init.cov.cholesky_lower().ok_or(Error::Degenerate("initial covariance"))?;
        Ok(TrialPlan {
            params: *params,
            schedule: schedule.clone(),
            settings: *settings,
            init,
            init_factor,
            phases,
            readout,
            retrodictor,
        })
    }

    pub fn schedule(&self) -> &ProtocolSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &OscillatorParams {
        &self.params
    }

    pub fn settings(&self) -> &SimulationSettings {
        &self.settings
    }

    /// Covariance the retrodictor reports for every trial.
    pub fn estimator_covariance(&self) -> Mat2 {
        self.retrodictor.covariance()
    }

    /// Covariance of the hidden state at the reference time, from the
    /// unconditional evolution of the initial state through the schedule.
    pub fn true_state_covariance(&self) -> Mat2 {
        self.propagate_state(&self.init).cov
    }

    /// Unconditional evolution of a Gaussian state from the start of the
    /// simulated timeline to the reference time. A cold-damping hold is
    /// skipped: its closed-loop statistics have no simple unconditional form.
    pub fn propagate_state(&self, state: &GaussianState) -> GaussianState {
        let mut s = *state;
        for phase in &self.phases {
            match phase {
                Phase::Evolve(st) => {
                    for _ in 0..st.n_steps {
                        s = st.predict(&s);
                    }
                }
                Phase::Kick(dp) => s = s.apply_impulse(*dp),
                Phase::ColdDamping { .. } => {}
            }
        }
        s
    }

    fn normal(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.settings.noise {
            StandardNormal.sample(rng)
        } else {
            0.0
        }
    }

    fn cold_damping(&self, stepper: &Stepper, gamma_fb: f64, x: Vec2, rng: &mut ChaCha8Rng) -> Vec2 {
        let h = stepper.step();
        let mu = stepper.model.meas_rate;
        let sqrt_mu = libm::sqrt(mu);
        let mut x = x;
        let mut est = self.init;
        for _ in 0..stepper.n_steps {
            if mu > 0.0 {
                let y = sqrt_mu * x.q + self.normal(rng) / libm::sqrt(h);
                est = measurement_update(&est, mu, h, y);
            }
            let push = -gamma_fb * h * est.mean.p;
            x.p += push;
            est.mean.p += push;
            x = stepper.kernel.transition.mul_vec(x) + self.process_noise(stepper, rng);
            est = stepper.predict(&est);
        }
        x
    }

    fn process_noise(&self, stepper: &Stepper, rng: &mut ChaCha8Rng) -> Vec2 {
        if self.settings.noise {
            stepper.sample_process_noise(rng)
        } else {
            Vec2::ZERO
        }
    }

    /// Runs one trial. Pre-protocol records are not generated unless the
    /// cold-damping loop needs them; the estimate uses post-protocol data only.
    pub fn run_trial(&self, trial_index: usize, master_seed: u64) -> Result<TrialResult> {
        self.run_trial_with_record(trial_index, master_seed).map(|(t, _)| t)
    }

    /// Like [`run_trial`](Self::run_trial), also returning the readout record.
    pub fn run_trial_with_record(&self, trial_index: usize, master_seed: u64) -> Result<(TrialResult, MeasurementRecord)> {
        let seed = trial_seed(master_seed, trial_index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = Vec2::new(self.normal(&mut rng), self.normal(&mut rng));
        let mut x = self.init.mean + self.init_factor.mul_vec(xi);
        for phase in &self.phases {
            match phase {
                Phase::Evolve(st) => {
                    for _ in 0..st.n_steps {
                        x = st.kernel.transition.mul_vec(x) + self.process_noise(st, &mut rng);
                    }
                }
                Phase::ColdDamping { stepper, gamma_fb } => {
                    x = self.cold_damping(stepper, *gamma_fb, x, &mut rng);
                }
                Phase::Kick(dp) => x.p += dp,
            }
        }
        let true_state = x;
        let h = self.readout.step();
        let sqrt_mu = libm::sqrt(self.params.meas_rate());
        let mut record = MeasurementRecord::with_capacity(self.schedule.t_zero, h, self.readout.n_steps);
        for _ in 0..self.readout.n_steps {
            record.push(sqrt_mu * x.q + self.normal(&mut rng) / libm::sqrt(h));
            x = self.readout.kernel.transition.mul_vec(x) + self.process_noise(&self.readout, &mut rng);
        }
        let est = self.retrodictor.estimate(&record)?;
        if !est.estimate.is_finite() {
            return Err(Error::Degenerate("non-finite trial estimate"));
        }
        let result = TrialResult {
            outcome: est.estimate,
            outcome_cov: est.cov,
            true_state,
            trial_index,
            seed,
        };
        Ok((result, record))
    }
}

/// Strategy for executing the independent trials of an ensemble. Results
/// must be returned ordered by trial index.
pub trait TrialExecutor {
    fn run_trials(&self, plan: &TrialPlan, n_trials: usize, master_seed: u64) -> Result<Vec<TrialResult>>;
}

/// Runs trials one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl TrialExecutor for Sequential {
    fn run_trials(&self, plan: &TrialPlan, n_trials: usize, master_seed: u64) -> Result<Vec<TrialResult>> {
        (0..n_trials)
            .map(|i| {
                plan.run_trial(i, master_seed).map_err(|e| Error::Trial {
                    index: i,
                    source: alloc::boxed::Box::new(e),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub trials: Vec<TrialResult>,
    pub squeeze_ratio: f64,
    pub pulse_duration: f64,
    pub kick_dp: f64,
    pub amplified: bool,
    pub params: OscillatorParams,
    pub master_seed: u64,
    /// Analytic covariance of the hidden state at the reference time.
    pub true_state_cov: Mat2,
    /// Covariance reported by the estimator.
    pub estimator_cov: Mat2,
}

impl Ensemble {
    /// Axis carrying the signal: position after anti-squeezing, momentum
    /// right after the kick in the conventional protocol.
    pub fn signal_axis(&self) -> Axis {
        if self.amplified {
            Axis::Q
        } else {
            Axis::P
        }
    }

    pub fn outcomes(&self) -> Vec<Vec2> {
        self.trials.iter().map(|t| t.outcome).collect()
    }
}

pub fn run_ensemble<E: TrialExecutor + ?Sized>(
    schedule: &ProtocolSchedule,
    params: &OscillatorParams,
    settings: &SimulationSettings,
    n_trials: usize,
    master_seed: u64,
    executor: &E,
) -> Result<Ensemble> {
    if n_trials < 2 {
        return Err(Error::InsufficientData {
            what: "trials",
            needed: 2,
            got: n_trials,
        });
    }
    let plan = TrialPlan::new(schedule, params, settings)?;
    let trials = executor.run_trials(&plan, n_trials, master_seed)?;
    debug_assert!(trials.iter().enumerate().all(|(i, t)| t.trial_index == i));
    Ok(Ensemble {
        trials,
        squeeze_ratio: schedule.squeeze_ratio,
        pulse_duration: schedule.pulse_duration,
        kick_dp: schedule.kick_dp(),
        amplified: schedule.is_amplified(),
        params: *params,
        master_seed,
        true_state_cov: plan.true_state_covariance(),
        estimator_cov: plan.estimator_covariance(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Q,
    P,
}

impl Axis {
    pub fn of(self, v: Vec2) -> f64 {
        match self {
            Axis::Q => v.q,
            Axis::P => v.p,
        }
    }
}

/// 1σ covariance ellipse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceEllipse {
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Orientation of the major axis from the Q axis (rad).
    pub angle: f64,
}

impl CovarianceEllipse {
    pub fn from_covariance(cov: &Mat2) -> Self {
        let (l1, l2) = cov.symmetric_eigenvalues();
        CovarianceEllipse {
            semi_major: libm::sqrt(l1.max(0.0)),
            semi_minor: libm::sqrt(l2.max(0.0)),
            angle: 0.5 * libm::atan2(cov.xy + cov.yx, cov.xx - cov.yy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleStats {
    pub n: usize,
    pub mean: Vec2,
    /// Unbiased sample covariance.
    pub cov: Mat2,
    pub axis: Axis,
    /// Sample mean along the signal axis.
    pub displacement: f64,
    pub displacement_se: f64,
    /// Sample standard deviation along the signal axis.
    pub sigma_tot: f64,
    /// Jackknife standard error of `sigma_tot`.
    pub sigma_tot_se: f64,
    pub ellipse: CovarianceEllipse,
}

pub fn ensemble_stats(ensemble: &Ensemble) -> Result<EnsembleStats> {
    point_stats(&ensemble.outcomes(), ensemble.signal_axis())
}

/// Sample statistics of a phase-space point cloud.
pub fn point_stats(points: &[Vec2], axis: Axis) -> Result<EnsembleStats> {
    let n = points.len();
    if n < 10 {
        return Err(Error::InsufficientData {
            what: "points for covariance estimation",
            needed: 10,
            got: n,
        });
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Degenerate("non-finite point in ensemble"));
    }
    let nf = n as f64;
    let mean = points.iter().fold(Vec2::ZERO, |acc, &p| acc + p).scale(1.0 / nf);
    let cov = points
        .iter()
        .fold(Mat2::ZERO, |acc, &p| {
            let d = p - mean;
            acc + d.outer(d)
        })
        .scale(1.0 / (nf - 1.0));
    let var_axis = match axis {
        Axis::Q => cov.xx,
        Axis::P => cov.yy,
    };
    let sigma_tot = libm::sqrt(var_axis);

    // Leave-one-out standard deviations from centred power sums.
    let centred: Vec<f64> = points.iter().map(|&p| axis.of(p) - axis.of(mean)).collect();
    let s1: f64 = centred.iter().sum();
    let s2: f64 = centred.iter().map(|d| d * d).sum();
    let m = nf - 1.0;
    let loo: Vec<f64> = centred
        .iter()
        .map(|&d| {
            let (a, b) = (s1 - d, s2 - d * d);
            libm::sqrt(((b - a * a / m) / (m - 1.0)).max(0.0))
        })
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / nf;
    let jack_var = loo.iter().map(|s| (s - loo_mean) * (s - loo_mean)).sum::<f64>() * (nf - 1.0) / nf;

    Ok(EnsembleStats {
        n,
        mean,
        cov,
        axis,
        displacement: axis.of(mean),
        displacement_se: sigma_tot / libm::sqrt(nf),
        sigma_tot,
        sigma_tot_se: libm::sqrt(jack_var),
        ellipse: CovarianceEllipse::from_covariance(&cov),
    })
}

/// Least-squares line through the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginFit {
    pub slope: f64,
    /// 1σ uncertainty of the slope.
    pub slope_se: f64,
    pub residuals: Vec<f64>,
}

fn fit_through_origin(xs: &[f64], ys: &[f64], ses: &[f64], min_distinct: usize, what: &'static str) -> Result<OriginFit> {
    let mut distinct: Vec<f64> = xs.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() < min_distinct {
        return Err(Error::InsufficientData {
            what,
            needed: min_distinct,
            got: distinct.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite fit input"));
    }
    let weighted = ses.iter().all(|&s| s > 0.0 && s.is_finite());
    let w = |i: usize| if weighted { 1.0 / (ses[i] * ses[i]) } else { 1.0 };
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..xs.len() {
        sxy += w(i) * xs[i] * ys[i];
        sxx += w(i) * xs[i] * xs[i];
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate("all abscissae are zero"));
    }
    let slope = sxy / sxx;
    let residuals: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - slope * x).collect();
    let slope_se = if weighted {
        libm::sqrt(1.0 / sxx)
    } else {
        let rss: f64 = residuals.iter().map(|r| r * r).sum();
        libm::sqrt(rss / (xs.len() as f64 - 1.0) / sxx)
    };
    Ok(OriginFit {
        slope,
        slope_se,
        residuals,
    })
}

/// Mean displacement along the signal axis for one pulse duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementPoint {
    /// s
    pub tau: f64,
    pub displacement: f64,
    pub se: f64,
}

pub fn displacement_points(ensembles: &[Ensemble]) -> Result<Vec<DisplacementPoint>> {
    ensembles
        .iter()
        .map(|e| {
            let s = ensemble_stats(e)?;
            Ok(DisplacementPoint {
                tau: e.pulse_duration,
                displacement: s.displacement,
                se: s.displacement_se,
            })
        })
        .collect()
}

/// Amplification slope `k(r)` in `ΔQ = k(r)·τ`, weighted by the standard
/// errors when all are positive.
///
/// For `r = 1` the signal axis is the momentum right after the kick, which
/// equals the position displacement a quarter period later.
pub fn fit_displacement_vs_tau(points: &[DisplacementPoint]) -> Result<OriginFit> {
    let xs: Vec<f64> = points.iter().map(|p| p.tau).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.displacement).collect();
    let ses: Vec<f64> = points.iter().map(|p| p.se).collect();
    fit_through_origin(&xs, &ys, &ses, 3, "distinct pulse durations")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainPoint {
    pub r: f64,
    pub k: f64,
    pub k_se: f64,
}

/// Proportionality constant `k₁` in `k(r) = k₁·r`.
pub fn fit_k1(points: &[GainPoint]) -> Result<OriginFit> {
    let xs: Vec<f64> = points.iter().map(|p| p.r).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.k).collect();
    let ses: Vec<f64> = points.iter().map(|p| p.k_se).collect();
    fit_through_origin(&xs, &ys, &ses, 2, "distinct squeeze ratios")
}

/// Predicted position variance after the protocol, by source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBudget {
    /// Initial-state variance `2n + 1`.
    pub sigma_qi_sq: f64,
    /// Estimation variance `1/√η`.
    pub sigma_qf_sq: f64,
    /// Recoil heating during the soft phases, `2π Γ_qb r / Ω`, amplified by
    /// the anti-squeeze; zero for the conventional protocol (`r = 1`).
    pub recoil_term: f64,
    pub sigma_tot: f64,
}

impl NoiseBudget {
    fn new(sigma_qi_sq: f64, sigma_qf_sq: f64, recoil_term: f64) -> Self {
        NoiseBudget {
            sigma_qi_sq,
            sigma_qf_sq,
            recoil_term,
            sigma_tot: libm::sqrt(sigma_qi_sq + sigma_qf_sq + recoil_term),
        }
    }
}

/// Closed-form noise budget. Recoil diffusion `4Γ_qb/r²` over the soft span
/// `πr/Ω` reaches the position quadrature with gain `r sin(Ωt/r)`, which
/// integrates to `2π Γ_qb r/Ω`.
pub fn noise_budget(params: &OscillatorParams, r: f64) -> Result<NoiseBudget> {
    params.validate()?;
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::InvalidParameter {
            name: "squeeze ratio",
            constraint: "at least 1",
            value: r,
        });
    }
    let recoil = if r == 1.0 {
        0.0
    } else {
        2.0 * PI * params.gamma_qb * r / params.omega_base
    };
    Ok(NoiseBudget::new(
        2.0 * params.n_init + 1.0,
        1.0 / libm::sqrt(params.eta),
        recoil,
    ))
}

/// 1σ parameter uncertainties for model envelopes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamUncertainty {
    pub eta: f64,
    /// rad/s
    pub gamma_qb: f64,
    pub n_init: f64,
}

impl Default for ParamUncertainty {
    fn default() -> Self {
        ParamUncertainty {
            eta: 0.02,
            gamma_qb: 2.0 * PI * 0.5e3,
            n_init: 0.6,
        }
    }
}

/// Range of the model `sigma_tot` over the corners of the parameter box
/// `params ± uncertainty` (clamped to valid values).
pub fn noise_budget_envelope(params: &OscillatorParams, r: f64, unc: &ParamUncertainty) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for corner in 0..8u8 {
        let sign = |bit: u8| if corner & (1 << bit) != 0 { 1.0 } else { -1.0 };
        let p = OscillatorParams {
            eta: (params.eta + sign(0) * unc.eta).clamp(1e-6, 1.0),
            gamma_qb: (params.gamma_qb + sign(1) * unc.gamma_qb).max(0.0),
            n_init: (params.n_init + sign(2) * unc.n_init).max(0.0),
            ..*params
        };
        let s = noise_budget(&p, r)?.sigma_tot;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityPoint {
    pub r: f64,
    pub sigma_tot: f64,
    pub sigma_tot_se: f64,
    /// ΔP_min = sigma_tot / r in zero-point units.
    pub dp_min_zp: f64,
    pub dp_min_zp_se: f64,
    pub dp_min_kev_c: f64,
    pub dp_min_kev_c_se: f64,
    /// Relative to the ideal conventional limit √2·p_zp.
    pub db_vs_ideal: f64,
    /// Relative to one zero-point momentum.
    pub db_vs_pzp: f64,
    /// Standard error of either dB figure.
    pub db_se: f64,
    pub model: NoiseBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCurve {
    pub points: Vec<SensitivityPoint>,
}

/// Converts a measured position spread into the minimum detectable impulse
/// at squeeze ratio `r`.
pub fn sensitivity_point(params: &OscillatorParams, r: f64, sigma_tot: f64, sigma_tot_se: f64) -> Result<SensitivityPoint> {
    let p_zp_kev = momentum_to_kev_c(params.reporting_zero_point_momentum());
    let dp = sigma_tot / r;
    let dp_se = sigma_tot_se / r;
    Ok(SensitivityPoint {
        r,
        sigma_tot,
        sigma_tot_se,
        dp_min_zp: dp,
        dp_min_zp_se: dp_se,
        dp_min_kev_c: dp * p_zp_kev,
        dp_min_kev_c_se: dp_se * p_zp_kev,
        db_vs_ideal: db_ratio(dp, SQRT_2)?,
        db_vs_pzp: db_ratio(dp, 1.0)?,
        db_se: 10.0 / core::f64::consts::LN_10 * sigma_tot_se / sigma_tot,
        model: noise_budget(params, r)?,
    })
}

/// Minimum detectable impulse versus squeeze ratio from null-kick ensembles:
/// the conventional protocol at `r = 1`, the amplified one otherwise.
pub fn sensitivity_curve<E: TrialExecutor + ?Sized>(
    params: &OscillatorParams,
    r_grid: &[f64],
    n_trials: usize,
    settings: &SimulationSettings,
    master_seed: u64,
    executor: &E,
) -> Result<SensitivityCurve> {
    if r_grid.is_empty() {
        return Err(Error::InsufficientData {
            what: "squeeze ratios",
            needed: 1,
            got: 0,
        });
    }
    let mut points = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        check_ratio(r)?;
        let schedule = build_for_ratio(params, r, 0.0, settings.readout_duration(params))?;
        let ensemble = run_ensemble(&schedule, params, settings, n_trials, master_seed, executor)?;
        let stats = ensemble_stats(&ensemble)?;
        points.push(sensitivity_point(params, r, stats.sigma_tot, stats.sigma_tot_se)?);
    }
    Ok(SensitivityCurve { points })
}

pub fn check_ratio(r: f64) -> Result<()> {
    if !(1.0..=MAX_SQUEEZE_RATIO).contains(&r) {
        return Err(Error::InvalidParameter {
            name: "r",
            constraint: "in [1, 6]",
            value: r,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{build_amplified, build_conventional, DEFAULT_RELEASE_LEAD};
    use approx::assert_relative_eq;

    fn params() -> OscillatorParams {
        OscillatorParams::default()
    }

    fn readout(p: &OscillatorParams) -> f64 {
        SimulationSettings::default().readout_duration(p)
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(trial_seed(42, 7), trial_seed(42, 7));
        assert_ne!(trial_seed(42, 7), trial_seed(42, 8));
        assert_ne!(trial_seed(42, 7), trial_seed(43, 7));
    }

    #[test]
    fn noiseless_trials_are_identical_and_amplify() {
        let p = params();
        let r = 12f64.sqrt();
        let s = build_amplified(&p, r, 100e-9, readout(&p)).unwrap();
        let settings = SimulationSettings {
            retro_prior: f64::INFINITY,
            ..SimulationSettings::noiseless()
        };
        let e = run_ensemble(&s, &p, &settings, 5, 1, &Sequential).unwrap();
        let first = e.trials[0];
        assert!(e.trials.iter().all(|t| t.outcome == first.outcome && t.true_state == first.true_state));
        // √12 · 1.2 = 4.157
        assert!((first.true_state.q - r * 1.2).abs() < 1e-9);
        assert!(first.true_state.p.abs() < 1e-9);
        assert!((first.outcome.q - r * 1.2).abs() < 1e-9, "{:?}", first.outcome);
    }

    #[test]
    fn same_seed_reproduces_ensemble() {
        let p = params();
        let s = build_amplified(&p, 2.0, 100e-9, readout(&p)).unwrap();
        let st = SimulationSettings::default();
        let a = run_ensemble(&s, &p, &st, 20, 9, &Sequential).unwrap();
        let b = run_ensemble(&s, &p, &st, 20, 9, &Sequential).unwrap();
        assert_eq!(a.trials, b.trials);
        let c = run_ensemble(&s, &p, &st, 20, 10, &Sequential).unwrap();
        assert_ne!(a.trials, c.trials);
    }

    #[test]
    fn conventional_ensemble_is_displaced_by_kick() {
        let p = params();
        let s = build_conventional(&p, 1000e-9, DEFAULT_RELEASE_LEAD, readout(&p)).unwrap();
        let e = run_ensemble(&s, &p, &SimulationSettings::default(), 200, 3, &Sequential).unwrap();
        let st = ensemble_stats(&e).unwrap();
        assert_eq!(st.axis, Axis::P);
        assert!((st.displacement - 12.0).abs() < 2.0 * st.sigma_tot / libm::sqrt(200.0) * 1.5);
    }

    #[test]
    fn too_few_trials_rejected() {
        let p = params();
        let s = build_amplified(&p, 2.0, 0.0, readout(&p)).unwrap();
        assert!(run_ensemble(&s, &p, &SimulationSettings::default(), 1, 0, &Sequential).is_err());
    }

    #[test]
    fn identical_points_have_zero_spread() {
        let pts = [Vec2::new(1.0, 2.0); 12];
        let st = point_stats(&pts, Axis::Q).unwrap();
        assert_eq!(st.cov, Mat2::ZERO);
        assert_eq!(st.sigma_tot, 0.0);
        assert!(point_stats(&pts[..5], Axis::Q).is_err());
        let mut bad = pts;
        bad[3].q = f64::NAN;
        assert!(point_stats(&bad, Axis::Q).is_err());
    }

    #[test]
    fn isotropic_cloud_has_round_ellipse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec2> = (0..10_000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                Vec2::new(1.5 * a, 1.5 * b)
            })
            .collect();
        let st = point_stats(&pts, Axis::Q).unwrap();
        assert_relative_eq!(st.ellipse.semi_major, st.ellipse.semi_minor, max_relative = 0.03);
        assert_relative_eq!(st.ellipse.semi_major, 1.5, max_relative = 0.03);
        // Jackknife SE of a Gaussian standard deviation ≈ σ/√(2n).
        assert_relative_eq!(st.sigma_tot_se, 1.5 / libm::sqrt(20_000.0), max_relative = 0.1);
    }

    #[test]
    fn noiseless_scaling_fit_is_exact() {
        let p = params();
        let r = 2.0;
        let pts: Vec<DisplacementPoint> = [100e-9, 300e-9, 1000e-9]
            .iter()
            .map(|&tau| {
                let dq = r * crate::units::impulse_from_pulse(&p, p.pulse_voltage, tau).unwrap();
                DisplacementPoint { tau, displacement: dq, se: 0.0 }
            })
            .collect();
        let fit = fit_displacement_vs_tau(&pts).unwrap();
        let k1 = p.kappa_imp * p.pulse_voltage;
        assert_relative_eq!(fit.slope, 2.0 * k1, max_relative = 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
        let zeros: Vec<_> = pts.iter().map(|p| DisplacementPoint { displacement: 0.0, ..*p }).collect();
        assert_eq!(fit_displacement_vs_tau(&zeros).unwrap().slope, 0.0);
        assert!(fit_displacement_vs_tau(&pts[..2]).is_err());
    }

    #[test]
    fn k1_fit() {
        let pts: Vec<GainPoint> = [1.0, 2.0, 12f64.sqrt()]
            .iter()
            .map(|&r| GainPoint { r, k: 5.0 * r, k_se: 0.1 })
            .collect();
        let fit = fit_k1(&pts).unwrap();
        assert_relative_eq!(fit.slope, 5.0, max_relative = 1e-12);
        assert!(fit_k1(&pts[..1]).is_err());
        // 6e6 zp/(V·s) · 2 V
        let p = params();
        assert_relative_eq!(p.kappa_imp * p.pulse_voltage, 1.2e7);
        assert_relative_eq!(p.kappa_imp * p.pulse_voltage * 100e-9, 1.2, max_relative = 1e-12);
    }

    #[test]
    fn noise_budget_examples() {
        let p = params();
        let conv = noise_budget(&p, 1.0).unwrap();
        assert_relative_eq!(conv.sigma_qi_sq, 3.4, max_relative = 1e-12);
        assert_relative_eq!(conv.sigma_qf_sq, 2.672_612, max_relative = 1e-6);
        assert_eq!(conv.recoil_term, 0.0);
        assert_relative_eq!(conv.sigma_tot, 2.464_267, max_relative = 1e-6);
        let amp = noise_budget(&p, 12f64.sqrt()).unwrap();
        // 2π · (3.4/52) · √12
        assert_relative_eq!(amp.recoil_term, 1.423_134_886, max_relative = 1e-8);
        assert_relative_eq!(amp.sigma_tot, 2.737_836_245, max_relative = 1e-8);
        let quiet = OscillatorParams { gamma_qb: 0.0, ..p };
        assert_eq!(noise_budget(&quiet, 3.0).unwrap().recoil_term, 0.0);
        assert_relative_eq!(noise_budget(&p.ideal(), 1.0).unwrap().sigma_tot, SQRT_2, max_relative = 1e-12);
        assert!(noise_budget(&p, 0.5).is_err());
    }

    #[test]
    fn envelope_brackets_nominal() {
        let p = params();
        for r in [1.0, 2.0, 12f64.sqrt()] {
            let (lo, hi) = noise_budget_envelope(&p, r, &ParamUncertainty::default()).unwrap();
            let mid = noise_budget(&p, r).unwrap().sigma_tot;
            assert!(lo < mid && mid < hi);
        }
    }

    #[test]
    fn model_sensitivity_decreases_along_amplified_branch() {
        let p = params();
        let mut prev = f64::INFINITY;
        for i in 0..=50 {
            let r = 1.001 + (12f64.sqrt() - 1.001) * i as f64 / 50.0;
            let dp = noise_budget(&p, r).unwrap().sigma_tot / r;
            assert!(dp < prev);
            prev = dp;
        }
    }

    #[test]
    fn sensitivity_point_units() {
        let p = params();
        let pt = sensitivity_point(&p, 12f64.sqrt(), 2.7379, 0.01).unwrap();
        assert_relative_eq!(pt.dp_min_zp, 0.790_36, max_relative = 1e-4);
        assert_relative_eq!(pt.dp_min_kev_c, 0.790_36 * 7.92, max_relative = 1e-4);
        assert_relative_eq!(pt.db_vs_pzp, 10.0 * libm::log10(pt.dp_min_zp), max_relative = 1e-12);
        let ideal = sensitivity_point(&p, 1.0, SQRT_2, 0.0).unwrap();
        assert!(ideal.db_vs_ideal.abs() < 1e-12);
    }

    #[test]
    fn ratio_cap() {
        assert!(check_ratio(6.0).is_ok());
        assert!(check_ratio(6.5).is_err());
        assert!(check_ratio(0.9).is_err());
    }
}
