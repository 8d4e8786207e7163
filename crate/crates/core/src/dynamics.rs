//! Gaussian phase-space dynamics under a piecewise-constant trap frequency.
//!
//! Coordinates are normalized by the zero-point values at the *base*
//! frequency Ω at all times, so a trap softened to Ω/r has drift
//!
//! ```text
//! dQ/dt = Ω P
//! dP/dt = −Ω ρ² Q − γ_fb P        (ρ = Ω(t)/Ω)
//! ```
//!
//! Each step uses the exact transition `e^{A h}` and the exactly integrated
//! process-noise covariance, so noiseless runs are exact to rounding error.
//! Only the measurement innovation enters at first order in the step.

use core::f64::consts::PI;

use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{expm, integrated_noise, Mat2, Vec2};
use crate::protocol::{Segment, SegmentKind};
use crate::record::MeasurementRecord;
use crate::units::OscillatorParams;
use crate::{Error, Result};

/// Minimum number of integration steps per local oscillation period.
pub const MIN_STEPS_PER_PERIOD: f64 = 50.0;

/// Mean and covariance of a Gaussian state in zero-point units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub mean: Vec2,
    pub cov: Mat2,
}

impl GaussianState {
    pub fn ground() -> Self {
        GaussianState {
            mean: Vec2::ZERO,
            cov: Mat2::IDENTITY,
        }
    }

    pub fn new(mean: Vec2, cov: Mat2) -> Self {
        GaussianState { mean, cov }
    }

    /// Applies a linear phase-space map to mean and covariance.
    pub fn transformed(&self, map: &Mat2) -> Self {
        GaussianState {
            mean: map.mul_vec(self.mean),
            cov: map.congruence(&self.cov),
        }
    }

    /// Instantaneous momentum kick; the covariance is untouched.
    pub fn apply_impulse(&self, dp: f64) -> Self {
        GaussianState {
            mean: Vec2::new(self.mean.q, self.mean.p + dp),
            cov: self.cov,
        }
    }

    /// Phonon occupation `(V₁₁ + V₂₂ − 2)/4` of the fluctuations, ignoring
    /// the coherent displacement.
    pub fn occupation(&self) -> f64 {
        (self.cov.trace() - 2.0) / 4.0
    }

    pub fn is_physical(&self) -> bool {
        self.mean.is_finite() && self.cov.is_positive_definite()
    }
}

/// Centred thermal state with `V = (2n+1) I`.
pub fn thermal_state(n: f64) -> Result<GaussianState> {
    if !(n >= 0.0) || !n.is_finite() {
        return Err(Error::InvalidParameter {
            name: "occupation",
            constraint: "non-negative",
            value: n,
        });
    }
    Ok(GaussianState {
        mean: Vec2::ZERO,
        cov: Mat2::scaled_identity(2.0 * n + 1.0),
    })
}

/// Transfer matrix of a quarter period in a trap softened by `r`:
/// `[[0, r], [−1/r, 0]]`.
pub fn quarter_period_map(r: f64) -> Result<Mat2> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::InvalidParameter {
            name: "squeeze ratio",
            constraint: "at least 1",
            value: r,
        });
    }
    Ok(Mat2::new(0.0, r, -1.0 / r, 0.0))
}

/// Duration of a quarter oscillation in a trap softened by `r` (s).
pub fn soft_quarter_period(omega_base: f64, r: f64) -> f64 {
    PI * r / (2.0 * omega_base)
}

/// Piecewise-constant linear model of one protocol segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsModel {
    /// rad/s
    pub omega_base: f64,
    /// Instantaneous Ω(t)/Ω.
    pub freq_ratio: f64,
    /// rad/s
    pub gamma_fb: f64,
    /// Injection rate into the P–P covariance entry (1/s).
    pub diffusion_p: f64,
    /// Information rate of the position record (1/s); zero when gated off.
    pub meas_rate: f64,
}

impl DynamicsModel {
    /// Full-power trap, with or without an active position record.
    pub fn base(params: &OscillatorParams, measured: bool) -> Self {
        DynamicsModel {
            omega_base: params.omega_base,
            freq_ratio: 1.0,
            gamma_fb: 0.0,
            diffusion_p: params.diffusion_base(),
            meas_rate: if measured { params.meas_rate() } else { 0.0 },
        }
    }

    /// Trap softened to Ω/r. Optical power drops by r², and so does the
    /// photon-recoil diffusion; detection is off.
    pub fn soft(params: &OscillatorParams, r: f64) -> Self {
        DynamicsModel {
            omega_base: params.omega_base,
            freq_ratio: 1.0 / r,
            gamma_fb: 0.0,
            diffusion_p: params.diffusion_base() / (r * r),
            meas_rate: 0.0,
        }
    }

    /// Model for a schedule segment. Feedback is represented by viscous
    /// damping at `gamma_fb`.
    pub fn for_segment(params: &OscillatorParams, segment: &Segment) -> Self {
        match segment.kind {
            SegmentKind::Soft => DynamicsModel::soft(params, 1.0 / segment.freq_ratio),
            _ => {
                let mut m = DynamicsModel::base(params, segment.measurement_on);
                m.freq_ratio = segment.freq_ratio;
                if segment.feedback_on {
                    m.gamma_fb = params.gamma_fb;
                }
                m
            }
        }
    }

    pub fn without_noise(self) -> Self {
        DynamicsModel {
            diffusion_p: 0.0,
            meas_rate: 0.0,
            ..self
        }
    }

    pub fn drift(&self) -> Mat2 {
        let w = self.omega_base;
        Mat2::new(0.0, w, -w * self.freq_ratio * self.freq_ratio, -self.gamma_fb)
    }

    pub fn diffusion(&self) -> Mat2 {
        Mat2::diag(0.0, self.diffusion_p)
    }

    pub fn local_omega(&self) -> f64 {
        self.omega_base * self.freq_ratio
    }

    /// Largest admissible integration step (s).
    pub fn max_step(&self) -> f64 {
        2.0 * PI / self.local_omega() / MIN_STEPS_PER_PERIOD
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let non_negative = |v: f64| v >= 0.0 && v.is_finite();
        if !positive(self.omega_base) {
            return Err(Error::InvalidParameter {
                name: "omega_base",
                constraint: "positive",
                value: self.omega_base,
            });
        }
        if !positive(self.freq_ratio) {
            return Err(Error::InvalidParameter {
                name: "freq_ratio",
                constraint: "positive",
                value: self.freq_ratio,
            });
        }
        for (name, v) in [
            ("gamma_fb", self.gamma_fb),
            ("diffusion_p", self.diffusion_p),
            ("meas_rate", self.meas_rate),
        ] {
            if !non_negative(v) {
                return Err(Error::InvalidParameter {
                    name,
                    constraint: "non-negative",
                    value: v,
                });
            }
        }
        Ok(())
    }
}

/// One exact step of a linear model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepKernel {
    pub dt: f64,
    pub transition: Mat2,
    pub noise: Mat2,
    pub noise_factor: Mat2,
}

impl StepKernel {
    pub fn new(model: &DynamicsModel, dt: f64) -> Self {
        let a = model.drift();
        let noise = if model.diffusion_p > 0.0 {
            integrated_noise(&a, &model.diffusion(), dt)
        } else {
            Mat2::ZERO
        };
        let noise_factor = noise
            .cholesky_lower()
            .expect("integrated diffusion is positive semi-definite");
        StepKernel {
            dt,
            transition: expm(&a, dt),
            noise,
            noise_factor,
        }
    }
}

/// A validated uniform step grid over one piecewise-constant span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stepper {
    pub model: DynamicsModel,
    pub kernel: StepKernel,
    pub n_steps: usize,
}

impl Stepper {
    /// Splits `duration` into the fewest equal steps no longer than `dt`.
    pub fn new(model: &DynamicsModel, duration: f64, dt: f64) -> Result<Self> {
        model.validate()?;
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(Error::InvalidParameter {
                name: "duration",
                constraint: "non-negative",
                value: duration,
            });
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                constraint: "positive",
                value: dt,
            });
        }
        let max = model.max_step();
        if dt > max * (1.0 + 1e-12) {
            return Err(Error::StepTooCoarse { dt, max });
        }
        let n_steps = if duration == 0.0 {
            0
        } else {
            libm::ceil(duration / dt - 1e-9).max(1.0) as usize
        };
        let h = if n_steps == 0 { dt } else { duration / n_steps as f64 };
        Ok(Stepper {
            model: *model,
            kernel: StepKernel::new(model, h),
            n_steps,
        })
    }

    pub fn step(&self) -> f64 {
        self.kernel.dt
    }

    pub fn measured(&self) -> bool {
        self.model.meas_rate > 0.0
    }

    /// Unconditional prediction of one step.
    pub fn predict(&self, state: &GaussianState) -> GaussianState {
        GaussianState {
            mean: self.kernel.transition.mul_vec(state.mean),
            cov: self.kernel.transition.congruence(&state.cov) + self.kernel.noise,
        }
    }

    /// Advances a phase-space point by one step with sampled process noise,
    /// returning the record sample taken at the start of the step.
    pub fn advance_point<R: RngCore + ?Sized>(&self, x: Vec2, rng: &mut R) -> (Vec2, Option<f64>) {
        let y = if self.measured() {
            let sqrt_mu = libm::sqrt(self.model.meas_rate);
            let xi: f64 = StandardNormal.sample(rng);
            Some(sqrt_mu * x.q + xi / libm::sqrt(self.kernel.dt))
        } else {
            None
        };
        let next = self.kernel.transition.mul_vec(x) + self.sample_process_noise(rng);
        (next, y)
    }

    pub fn sample_process_noise<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vec2 {
        if self.kernel.noise == Mat2::ZERO {
            return Vec2::ZERO;
        }
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        self.kernel.noise_factor.mul_vec(Vec2::new(a, b))
    }
}

/// Kalman update of `state` with one record sample `y` of variance `1/dt`.
///
/// Uses the Joseph form so the covariance stays symmetric positive definite.
pub(crate) fn measurement_update(state: &GaussianState, meas_rate: f64, dt: f64, y: f64) -> GaussianState {
    let sqrt_mu = libm::sqrt(meas_rate);
    let v = state.cov;
    let innovation_var = meas_rate * v.xx + 1.0 / dt;
    let gain = Vec2::new(v.xx, v.yx).scale(sqrt_mu / innovation_var);
    let innovation = y - sqrt_mu * state.mean.q;
    let i_kh = Mat2::new(1.0 - gain.q * sqrt_mu, 0.0, -gain.p * sqrt_mu, 1.0);
    GaussianState {
        mean: state.mean + gain.scale(innovation),
        cov: i_kh.congruence(&v) + gain.outer(gain).scale(1.0 / dt),
    }
}

pub(crate) fn ensure_positive_definite(cov: &Mat2, context: &'static str, time: f64) -> Result<()> {
    if cov.is_positive_definite() {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite {
            context,
            time,
            v11: cov.xx,
            v12: cov.xy,
            v22: cov.yy,
        })
    }
}

/// Evolves a Gaussian state over `duration` under a constant model.
///
/// Without a noise stream the unconditional evolution `V̇ = AV + VAᵀ + D` is
/// returned and no record is produced. With a noise stream and a non-zero
/// `meas_rate` the state is conditioned on a synthetic record
/// `y = √μ ⟨Q⟩ + ξ/√dt` that is generated on the fly and returned; with
/// detection off the record is fully gated.
pub fn propagate<R: RngCore + ?Sized>(
    state: &GaussianState,
    model: &DynamicsModel,
    duration: f64,
    dt: f64,
    t_start: f64,
    rng: Option<&mut R>,
) -> Result<(GaussianState, Option<MeasurementRecord>)> {
    let stepper = Stepper::new(model, duration, dt)?;
    let h = stepper.step();
    let mut s = *state;
    ensure_positive_definite(&s.cov, "propagate", t_start)?;
    match rng {
        None => {
            for k in 0..stepper.n_steps {
                s = stepper.predict(&s);
                ensure_positive_definite(&s.cov, "propagate", t_start + (k + 1) as f64 * h)?;
            }
            Ok((s, None))
        }
        Some(rng) => {
            let mut record = MeasurementRecord::with_capacity(t_start, h, stepper.n_steps);
            let sqrt_mu = libm::sqrt(model.meas_rate);
            for k in 0..stepper.n_steps {
                if stepper.measured() {
                    let xi: f64 = StandardNormal.sample(rng);
                    let y = sqrt_mu * s.mean.q + xi / libm::sqrt(h);
                    record.push(y);
                    s = measurement_update(&s, model.meas_rate, h, y);
                } else {
                    record.push_gated_off();
                }
                s = stepper.predict(&s);
                ensure_positive_definite(&s.cov, "propagate", t_start + (k + 1) as f64 * h)?;
            }
            Ok((s, Some(record)))
        }
    }
}

/// [`propagate`] without a noise stream: `V̇ = AV + VAᵀ + D`, mean by the
/// deterministic drift.
pub fn propagate_unconditional(
    state: &GaussianState,
    model: &DynamicsModel,
    duration: f64,
    dt: f64,
) -> Result<GaussianState> {
    propagate::<rand_chacha::ChaCha8Rng>(state, model, duration, dt, 0.0, None).map(|(s, _)| s)
}

/// Evolves a single phase-space point with sampled process noise, emitting
/// the record it produces. The point is the hidden ground truth of a
/// Monte-Carlo trial; averaging over many paths reproduces [`propagate`]
/// without a noise stream.
pub fn sample_path<R: RngCore + ?Sized>(
    point: Vec2,
    model: &DynamicsModel,
    duration: f64,
    dt: f64,
    t_start: f64,
    rng: &mut R,
) -> Result<(Vec2, MeasurementRecord)> {
    let stepper = Stepper::new(model, duration, dt)?;
    let mut record = MeasurementRecord::with_capacity(t_start, stepper.step(), stepper.n_steps);
    let mut x = point;
    for _ in 0..stepper.n_steps {
        let (next, y) = stepper.advance_point(x, rng);
        match y {
            Some(y) => record.push(y),
            None => record.push_gated_off(),
        }
        x = next;
    }
    Ok((x, record))
}
