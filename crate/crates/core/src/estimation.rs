//! Forward Kalman filtering, backward retrodiction and steady-state Riccati
//! solutions for the readout segment.
//!
//! The discrete filters use the same exact transition and process-noise
//! matrices as the simulator, so data generation and estimation share one
//! model. A record sample `y_k` is a measurement of `√μ·Q(t_k)` with
//! variance `1/dt`.

use alloc::vec::Vec;

use crate::dynamics::{ensure_positive_definite, measurement_update, DynamicsModel, GaussianState, StepKernel};
use crate::linalg::{Mat2, Vec2};
use crate::protocol::ProtocolSchedule;
use crate::record::MeasurementRecord;
use crate::units::OscillatorParams;
use crate::{Error, Result};

/// Variance of the uninformative prior placed at the end of a record.
pub const DEFAULT_RETRO_PRIOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub estimate: Vec2,
    pub cov: Mat2,
    pub t: f64,
    pub direction: Direction,
}

impl FilterState {
    pub fn forward(state: GaussianState, t: f64) -> Self {
        FilterState {
            estimate: state.mean,
            cov: state.cov,
            t,
            direction: Direction::Forward,
        }
    }

    fn gaussian(&self) -> GaussianState {
        GaussianState::new(self.estimate, self.cov)
    }
}

/// Dynamics of the monitored readout: base trap, no feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationModel {
    pub dynamics: DynamicsModel,
}

impl EstimationModel {
    pub fn readout(params: &OscillatorParams) -> Self {
        EstimationModel {
            dynamics: DynamicsModel::base(params, true),
        }
    }

    pub fn from_dynamics(dynamics: DynamicsModel) -> Self {
        EstimationModel { dynamics }
    }

    pub fn meas_rate(&self) -> f64 {
        self.dynamics.meas_rate
    }

    /// Right-hand side `AV + VAᵀ + D − μ V CᵀC V` of the conditional
    /// covariance equation.
    pub fn riccati_rhs(&self, v: &Mat2) -> Mat2 {
        let a = self.dynamics.drift();
        let av = a * *v;
        let col = Vec2::new(v.xx, v.yx);
        (av + av.transpose() + self.dynamics.diffusion() - col.outer(col).scale(self.meas_rate())).symmetrized()
    }

    fn kernel(&self, dt: f64) -> Result<StepKernel> {
        self.dynamics.validate()?;
        let max = self.dynamics.max_step();
        if dt > max * (1.0 + 1e-12) {
            return Err(Error::StepTooCoarse { dt, max });
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                constraint: "positive",
                value: dt,
            });
        }
        Ok(StepKernel::new(&self.dynamics, dt))
    }

    fn local_period(&self) -> f64 {
        2.0 * core::f64::consts::PI / self.dynamics.local_omega()
    }
}

/// Kalman–Bucy recursion over a record. Entry `k` of the result is the
/// estimate at `t0 + k·dt` given samples before that time; the trajectory
/// has `len + 1` entries. Gated-off samples are skipped.
pub fn kalman_forward(
    record: &MeasurementRecord,
    model: &EstimationModel,
    init: FilterState,
) -> Result<Vec<FilterState>> {
    ensure_positive_definite(&init.cov, "forward filter prior", init.t)?;
    let kernel = model.kernel(record.dt)?;
    let mu = model.meas_rate();
    let mut out = Vec::with_capacity(record.len() + 1);
    let mut state = init.gaussian();
    out.push(FilterState::forward(state, record.t0));
    for (k, (&y, &on)) in record.samples.iter().zip(&record.gate).enumerate() {
        if on && mu > 0.0 {
            state = measurement_update(&state, mu, record.dt, y);
        }
        state = GaussianState::new(
            kernel.transition.mul_vec(state.mean),
            kernel.transition.congruence(&state.cov) + kernel.noise,
        );
        let t = record.time_of(k + 1);
        ensure_positive_definite(&state.cov, "forward filter", t)?;
        out.push(FilterState::forward(state, t));
    }
    Ok(out)
}

/// Backward-prediction operator `Fᵀ (I + Λ Q)⁻¹` for information `Λ`.
fn backward_gain(kernel: &StepKernel, info: &Mat2) -> Result<Mat2> {
    let inner = (Mat2::IDENTITY + *info * kernel.noise)
        .inverse()
        .ok_or(Error::Degenerate("backward information update is singular"))?;
    Ok(kernel.transition.transpose() * inner)
}

fn prior_information(prior_variance: f64) -> Mat2 {
    if prior_variance.is_infinite() {
        Mat2::ZERO
    } else {
        Mat2::scaled_identity(1.0 / prior_variance)
    }
}

fn check_span(record: &MeasurementRecord, model: &EstimationModel, target_time: f64) -> Result<usize> {
    let tol = 1e-6 * record.dt;
    if target_time < record.t0 - tol || target_time > record.end_time() + tol {
        return Err(Error::TargetOutsideRecord {
            target: target_time,
            start: record.t0,
            end: record.end_time(),
        });
    }
    let start = record.index_at(target_time);
    let available = record.end_time() - record.time_of(start);
    let required = model.local_period();
    if available < required * (1.0 - 1e-9) {
        return Err(Error::RecordTooShort { required, available });
    }
    Ok(start)
}

fn finish(info: Mat2, info_vec: Vec2, t: f64) -> Result<FilterState> {
    let cov = info
        .inverse()
        .ok_or(Error::Degenerate("record carries no information about the state"))?
        .symmetrized();
    ensure_positive_definite(&cov, "retrodiction", t)?;
    Ok(FilterState {
        estimate: cov.mul_vec(info_vec),
        cov,
        t,
        direction: Direction::Backward,
    })
}

/// Estimate of the state at `target_time` conditioned only on later record
/// samples, from a backward information filter with an uninformative prior
/// of variance [`DEFAULT_RETRO_PRIOR`] at the end of the record.
pub fn retrodict(record: &MeasurementRecord, model: &EstimationModel, target_time: f64) -> Result<FilterState> {
    retrodict_with_prior(record, model, target_time, DEFAULT_RETRO_PRIOR)
}

/// As [`retrodict`] with an explicit prior variance; `f64::INFINITY` starts
/// from zero information.
pub fn retrodict_with_prior(
    record: &MeasurementRecord,
    model: &EstimationModel,
    target_time: f64,
    prior_variance: f64,
) -> Result<FilterState> {
    let start = check_span(record, model, target_time)?;
    let kernel = model.kernel(record.dt)?;
    let mu = model.meas_rate();
    let (info_q, sqrt_mu_dt) = (mu * record.dt, libm::sqrt(mu) * record.dt);
    let mut info = prior_information(prior_variance);
    let mut info_vec = Vec2::ZERO;
    for k in (start..record.len()).rev() {
        let gain = backward_gain(&kernel, &info)?;
        info = (gain * info * kernel.transition).symmetrized();
        info_vec = gain.mul_vec(info_vec);
        if record.gate[k] && mu > 0.0 {
            info.xx += info_q;
            info_vec.q += sqrt_mu_dt * record.samples[k];
        }
    }
    finish(info, info_vec, record.time_of(start))
}

/// Backward information filter for fully gated records of fixed length.
///
/// The information-matrix recursion does not depend on the data, so it is
/// run once; each record then costs one 2×2 matrix-vector product per sample.
#[derive(Debug, Clone)]
pub struct Retrodictor {
    gains: Vec<Mat2>,
    cov: Mat2,
    sqrt_mu_dt: f64,
}

impl Retrodictor {
    pub fn new(model: &EstimationModel, dt: f64, n_samples: usize, prior_variance: f64) -> Result<Self> {
        let kernel = model.kernel(dt)?;
        let required = model.local_period();
        let available = n_samples as f64 * dt;
        if available < required * (1.0 - 1e-9) {
            return Err(Error::RecordTooShort { required, available });
        }
        let mu = model.meas_rate();
        let mut info = prior_information(prior_variance);
        let mut gains = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let gain = backward_gain(&kernel, &info)?;
            info = (gain * info * kernel.transition).symmetrized();
            info.xx += mu * dt;
            gains.push(gain);
        }
        gains.reverse();
        let cov = info
            .inverse()
            .ok_or(Error::Degenerate("record carries no information about the state"))?
            .symmetrized();
        ensure_positive_definite(&cov, "retrodiction", 0.0)?;
        Ok(Retrodictor {
            gains,
            cov,
            sqrt_mu_dt: libm::sqrt(mu) * dt,
        })
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Covariance of the estimate at the start of the record.
    pub fn covariance(&self) -> Mat2 {
        self.cov
    }

    /// Estimate at the start of `record`, which must be fully gated on and
    /// as long as this retrodictor.
    pub fn estimate(&self, record: &MeasurementRecord) -> Result<FilterState> {
        if record.len() != self.gains.len() {
            return Err(Error::InsufficientData {
                what: "record samples",
                needed: self.gains.len(),
                got: record.len(),
            });
        }
        if !record.fully_gated_on() {
            return Err(Error::Domain("cached retrodiction needs a fully gated record"));
        }
        let mut info_vec = Vec2::ZERO;
        for (gain, &y) in self.gains.iter().zip(&record.samples).rev() {
            info_vec = gain.mul_vec(info_vec);
            info_vec.q += self.sqrt_mu_dt * y;
        }
        Ok(FilterState {
            estimate: self.cov.mul_vec(info_vec),
            cov: self.cov,
            t: record.t0,
            direction: Direction::Backward,
        })
    }
}

/// Steady conditional covariance of the continuously monitored oscillator.
///
/// Integrates the Riccati equation from `V = I` with RK4 (200 steps per
/// period) until the period-averaged entries change by less than 1e-10 from
/// one period to the next, and returns that period average.
pub fn riccati_steady_state(model: &EstimationModel) -> Result<Mat2> {
    model.dynamics.validate()?;
    if !(model.meas_rate() > 0.0) {
        return Err(Error::Domain("steady-state Riccati solution needs a positive measurement rate"));
    }
    const STEPS: usize = 200;
    const MAX_PERIODS: usize = 100_000;
    let h = model.local_period() / STEPS as f64;
    let f = |v: &Mat2| model.riccati_rhs(v);
    let mut v = Mat2::IDENTITY;
    let mut previous: Option<Mat2> = None;
    for _ in 0..MAX_PERIODS {
        let mut sum = Mat2::ZERO;
        for _ in 0..STEPS {
            let k1 = f(&v);
            let k2 = f(&(v + k1.scale(h / 2.0)));
            let k3 = f(&(v + k2.scale(h / 2.0)));
            let k4 = f(&(v + k3.scale(h)));
            v += (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(h / 6.0);
            sum += v;
        }
        if !v.is_finite() || v.max_abs() > 1e12 {
            return Err(Error::NotDetectable("covariance diverged"));
        }
        let avg = sum.scale(1.0 / STEPS as f64).symmetrized();
        if let Some(prev) = previous {
            if avg.max_abs_diff(&prev) < 1e-10 {
                return Ok(avg);
            }
        }
        previous = Some(avg);
    }
    Err(Error::NotDetectable("no convergence within the iteration budget"))
}

/// Best estimate of the phase-space point at the protocol reference time,
/// from the post-protocol record only.
///
/// The pre-protocol record is accepted for interface symmetry but not used:
/// the estimate is conditioned on data after the kick.
pub fn estimate_trial_outcome(
    _pre: Option<&MeasurementRecord>,
    post: &MeasurementRecord,
    model: &EstimationModel,
    schedule: &ProtocolSchedule,
) -> Result<FilterState> {
    retrodict(post, model, schedule.t_zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{sample_path, thermal_state, Stepper};
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(eta: f64) -> OscillatorParams {
        OscillatorParams { eta, ..OscillatorParams::default() }
    }

    fn dt(p: &OscillatorParams) -> f64 {
        p.base_period() / 200.0
    }

    /// Steady state of `AV + VAᵀ + D − μVCᵀCV = 0` for an undamped base trap:
    /// `b = μa²/(2Ω)`, `a² + b² = D/μ`, `c = a + μab/Ω`.
    fn are_oracle(p: &OscillatorParams) -> Mat2 {
        let (w, d, mu) = (p.omega_base, p.diffusion_base(), p.meas_rate());
        let k = mu / (2.0 * w);
        // k² a⁴ + a² − d/μ = 0
        let a2 = (-1.0 + libm::sqrt(1.0 + 4.0 * k * k * d / mu)) / (2.0 * k * k);
        let a = libm::sqrt(a2);
        let b = k * a2;
        Mat2::symmetric(a, b, a + mu * a * b / w)
    }

    #[test]
    fn steady_state_reaches_efficiency_floor() {
        let v = riccati_steady_state(&EstimationModel::readout(&params(0.14))).unwrap();
        assert_relative_eq!(v.xx, 1.0 / libm::sqrt(0.14), max_relative = 0.03);
        let v1 = riccati_steady_state(&EstimationModel::readout(&params(1.0))).unwrap();
        assert_relative_eq!(v1.xx, 1.0, max_relative = 0.03);
    }

    #[test]
    fn steady_state_matches_closed_form_and_residual() {
        for eta in [0.14, 0.5, 1.0] {
            let p = params(eta);
            let model = EstimationModel::readout(&p);
            let v = riccati_steady_state(&model).unwrap();
            assert!(v.max_abs_diff(&are_oracle(&p)) < 1e-8, "eta={eta}: {v:?}");
            assert!(model.riccati_rhs(&v).max_abs() < 1e-8 * p.omega_base);
        }
    }

    #[test]
    fn steady_state_is_rate_independent_in_rotating_wave_regime() {
        let p = params(0.14);
        let v = riccati_steady_state(&EstimationModel::readout(&p)).unwrap();
        let slow = OscillatorParams { gamma_qb: 0.25 * p.gamma_qb, ..p };
        let vf = riccati_steady_state(&EstimationModel::readout(&slow)).unwrap();
        assert_relative_eq!(v.xx, vf.xx, max_relative = 0.03);
        assert_relative_eq!(v.yy, vf.yy, max_relative = 0.03);
    }

    #[test]
    fn steady_state_requires_measurement() {
        let mut model = EstimationModel::readout(&params(0.14));
        model.dynamics.meas_rate = 0.0;
        assert!(riccati_steady_state(&model).is_err());
    }

    fn simulated_record(p: &OscillatorParams, periods: f64, seed: u64) -> (Vec2, MeasurementRecord) {
        let model = DynamicsModel::base(p, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Vec2::new(1.0, -2.0);
        let (_, rec) = sample_path(x0, &model, periods * p.base_period(), dt(p), 0.0, &mut rng).unwrap();
        (x0, rec)
    }

    #[test]
    fn forward_filter_without_information_follows_prior() {
        let p = params(0.14);
        let (_, rec) = simulated_record(&p, 2.0, 1);
        let mut model = EstimationModel::readout(&p);
        model.dynamics.meas_rate = 0.0;
        let init = FilterState::forward(GaussianState::new(Vec2::new(1.0, 0.0), Mat2::IDENTITY), 0.0);
        let traj = kalman_forward(&rec, &model, init).unwrap();
        let stepper = Stepper::new(&model.dynamics, rec.duration(), rec.dt).unwrap();
        let mut s = init.gaussian();
        for _ in 0..stepper.n_steps {
            s = stepper.predict(&s);
        }
        let last = traj.last().unwrap();
        assert!(last.estimate.max_abs_diff(s.mean) < 1e-12);
        assert!(last.cov.max_abs_diff(&s.cov) < 1e-12);
    }

    #[test]
    fn forward_filter_converges_to_steady_state() {
        for eta in [0.14, 1.0] {
            let p = params(eta);
            let (_, rec) = simulated_record(&p, 30.0, 2);
            let model = EstimationModel::readout(&p);
            let init = FilterState::forward(thermal_state(10.0).unwrap(), 0.0);
            let traj = kalman_forward(&rec, &model, init).unwrap();
            let last_period = &traj[traj.len() - 200..];
            let avg: f64 = last_period.iter().map(|s| s.cov.xx).sum::<f64>() / 200.0;
            assert_relative_eq!(avg, 1.0 / libm::sqrt(eta), max_relative = 0.03);
        }
    }

    #[test]
    fn retrodiction_of_noiseless_oscillation_matches_least_squares() {
        // Oracle: fit (Q₀, P₀) to y_k = √μ (Q₀ cos Ωt_k + P₀ sin Ωt_k).
        let p = OscillatorParams { eta: 1.0, gamma_qb: 2.0 * core::f64::consts::PI * 20e3, ..params(1.0) };
        let model = EstimationModel::readout(&p);
        let (q0, p0) = (1.7, -0.6);
        let h = dt(&p);
        let sqrt_mu = libm::sqrt(p.meas_rate());
        let mut rec = MeasurementRecord::new(0.0, h);
        for k in 0..2000 {
            let t = k as f64 * h;
            let wt = p.omega_base * t;
            rec.push(sqrt_mu * (q0 * libm::cos(wt) + p0 * libm::sin(wt)));
        }
        let (mut scc, mut scs, mut sss, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (t, y) in rec.active() {
            let (c, s) = (sqrt_mu * libm::cos(p.omega_base * t), sqrt_mu * libm::sin(p.omega_base * t));
            scc += c * c;
            scs += c * s;
            sss += s * s;
            syc += y * c;
            sys += y * s;
        }
        let normal = Mat2::symmetric(scc, scs, sss);
        let lsq = normal.inverse().unwrap().mul_vec(Vec2::new(syc, sys));
        let retro = retrodict(&rec, &model, 0.0).unwrap();
        assert!(lsq.max_abs_diff(Vec2::new(q0, p0)) < 1e-9);
        assert!(retro.estimate.max_abs_diff(lsq) < 1e-3, "{:?}", retro.estimate);
        assert_eq!(retro.direction, Direction::Backward);
    }

    #[test]
    fn retrodicted_covariance_mirrors_forward_steady_state() {
        // Reversing time maps P → −P, so the backward steady covariance is the
        // forward one with the correlation sign flipped.
        let p = params(0.14);
        let model = EstimationModel::readout(&p);
        let (_, rec) = simulated_record(&p, 20.0, 3);
        let retro = retrodict(&rec, &model, 0.0).unwrap();
        let fwd = riccati_steady_state(&model).unwrap();
        assert_relative_eq!(retro.cov.xx, fwd.xx, max_relative = 0.05);
        assert_relative_eq!(retro.cov.yy, fwd.yy, max_relative = 0.05);
        assert!((retro.cov.xy + fwd.xy).abs() < 0.05 * fwd.xx);
    }

    #[test]
    fn perfect_efficiency_retrodiction_reaches_zero_point() {
        let p = params(1.0);
        let (_, rec) = simulated_record(&p, 10.0, 4);
        let retro = retrodict(&rec, &EstimationModel::readout(&p), 0.0).unwrap();
        assert_relative_eq!(retro.cov.xx, 1.0, max_relative = 0.03);
    }

    #[test]
    fn retrodicted_covariance_is_data_independent() {
        let p = params(0.14);
        let model = EstimationModel::readout(&p);
        let (_, a) = simulated_record(&p, 10.0, 5);
        let (_, b) = simulated_record(&p, 10.0, 6);
        let ra = retrodict(&a, &model, 0.0).unwrap();
        let rb = retrodict(&b, &model, 0.0).unwrap();
        assert!(ra.cov.max_abs_diff(&rb.cov) < 1e-12);
        assert!(ra.estimate.max_abs_diff(rb.estimate) > 1e-3);
    }

    #[test]
    fn retrodiction_is_insensitive_to_prior_scale() {
        let p = params(0.14);
        let model = EstimationModel::readout(&p);
        let (_, rec) = simulated_record(&p, 10.0, 7);
        let lo = retrodict_with_prior(&rec, &model, 0.0, 1e4).unwrap();
        let hi = retrodict_with_prior(&rec, &model, 0.0, 1e8).unwrap();
        assert!(lo.cov.max_abs_diff(&hi.cov) < 1e-3 * hi.cov.xx);
        assert!(lo.estimate.max_abs_diff(hi.estimate) < 1e-3 * (1.0 + hi.estimate.q.abs()));
    }

    #[test]
    fn cached_retrodictor_matches_direct_filter() {
        let p = params(0.14);
        let model = EstimationModel::readout(&p);
        let (_, rec) = simulated_record(&p, 10.0, 8);
        let direct = retrodict(&rec, &model, 0.0).unwrap();
        let cached = Retrodictor::new(&model, rec.dt, rec.len(), DEFAULT_RETRO_PRIOR).unwrap();
        let est = cached.estimate(&rec).unwrap();
        assert!(est.cov.max_abs_diff(&direct.cov) < 1e-12);
        assert!(est.estimate.max_abs_diff(direct.estimate) < 1e-10);
    }

    #[test]
    fn short_or_misplaced_records_are_rejected() {
        let p = params(0.14);
        let model = EstimationModel::readout(&p);
        let (_, rec) = simulated_record(&p, 0.5, 9);
        assert!(matches!(retrodict(&rec, &model, 0.0), Err(Error::RecordTooShort { .. })));
        let (_, rec) = simulated_record(&p, 2.0, 9);
        assert!(matches!(retrodict(&rec, &model, -1.0), Err(Error::TargetOutsideRecord { .. })));
        assert!(matches!(
            retrodict(&rec, &model, 1.5 * p.base_period()),
            Err(Error::RecordTooShort { .. })
        ));
        assert!(retrodict(&rec, &model, 0.5 * p.base_period()).is_ok());
    }
}
