use levsense_core::dynamics::{sample_path, thermal_state, DynamicsModel};
use levsense_core::estimation::{
    kalman_forward, retrodict, retrodict_with_prior, riccati_steady_state, EstimationModel, FilterState, Retrodictor,
};
use levsense_core::linalg::Vec2;
use levsense_core::units::OscillatorParams;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(eta: f64) -> OscillatorParams {
    OscillatorParams {
        eta,
        ..OscillatorParams::default()
    }
}

/// Steady Riccati solution of the undamped, continuously measured
/// oscillator, solved by hand. With `V = [[x, b], [b, c]]` the three
/// stationarity conditions read `2Ωb = μx²`, `Ω(c − x) = μxb` and
/// `2Ωb + μb² = D`, so `x² + b² = D/μ`.
fn are_oracle(p: &OscillatorParams) -> (f64, f64, f64) {
    let (w, mu, d) = (p.omega_base, p.meas_rate(), p.diffusion_base());
    // y + k²y² = D/μ with y = x².
    let k = mu / (2.0 * w);
    let y = (-1.0 + (1.0 + 4.0 * k * k * d / mu).sqrt()) / (2.0 * k * k);
    let x = y.sqrt();
    let b = k * y;
    (x, b, x + mu * x * b / w)
}

#[test]
fn steady_state_against_hand_solution() {
    for eta in [0.05, 0.14, 0.6, 1.0] {
        let p = params(eta);
        let v = riccati_steady_state(&EstimationModel::readout(&p)).unwrap();
        let (vqq, vqp, vpp) = are_oracle(&p);
        assert!((v.xx - vqq).abs() < 1e-8 * vqq, "eta {eta}: {} vs {vqq}", v.xx);
        assert!((v.xy - vqp).abs() < 1e-8, "eta {eta}: {} vs {vqp}", v.xy);
        assert!((v.yy - vpp).abs() < 1e-8 * vpp, "eta {eta}: {} vs {vpp}", v.yy);
        // Weak-measurement limit of the position variance.
        assert!((v.xx * eta.sqrt() - 1.0).abs() < 0.03);
    }
}

fn noisy_record(p: &OscillatorParams, periods: f64, seed: u64) -> (Vec2, levsense_core::record::MeasurementRecord) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = DynamicsModel::base(p, true);
    let start = Vec2::new(1.5, -0.5);
    let (_, rec) = sample_path(start, &model, periods * p.base_period(), p.base_period() / 200.0, 0.0, &mut rng).unwrap();
    (start, rec)
}

#[test]
fn cached_and_direct_retrodiction_agree() {
    let p = params(0.14);
    let model = EstimationModel::readout(&p);
    let (_, rec) = noisy_record(&p, 10.0, 3);
    let direct = retrodict(&rec, &model, rec.t0).unwrap();
    let cached = Retrodictor::new(&model, rec.dt, rec.len(), 1e6).unwrap().estimate(&rec).unwrap();
    assert!(direct.estimate.max_abs_diff(cached.estimate) < 1e-9);
    assert!(direct.cov.max_abs_diff(&cached.cov) < 1e-12);
}

#[test]
fn retrodiction_errors_match_reported_covariance() {
    let p = params(0.14);
    let model = EstimationModel::readout(&p);
    let n = 400;
    let mut z = Vec::with_capacity(n);
    let mut cov = None;
    for seed in 0..n as u64 {
        let (start, rec) = noisy_record(&p, 10.0, seed);
        let est = retrodict(&rec, &model, rec.t0).unwrap();
        cov = Some(est.cov);
        z.push((est.estimate.q - start.q) / est.cov.xx.sqrt());
    }
    let var = z.iter().map(|x| x * x).sum::<f64>() / n as f64;
    // χ²₄₀₀/400 has a standard deviation of 0.07.
    assert!((var - 1.0).abs() < 0.25, "normalized error variance {var}, cov {cov:?}");
}

#[test]
fn forward_filter_tracks_the_true_state() {
    let p = params(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = DynamicsModel::base(&p, true);
    let prior = FilterState::forward(thermal_state(1.2).unwrap(), 0.0);
    let mut errs = Vec::new();
    for _ in 0..200 {
        let start = Vec2::new(1.0, 0.5);
        let (end, rec) = sample_path(start, &model, 10.0 * p.base_period(), p.base_period() / 200.0, 0.0, &mut rng).unwrap();
        let traj = kalman_forward(&rec, &EstimationModel::readout(&p), prior).unwrap();
        let last = traj.last().unwrap();
        errs.push(((last.estimate.q - end.q) / last.cov.xx.sqrt()).powi(2));
    }
    let var = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!((var - 1.0).abs() < 0.3, "{var}");
}

#[test]
fn flat_and_weak_priors_agree() {
    let p = params(0.14);
    let model = EstimationModel::readout(&p);
    let (_, rec) = noisy_record(&p, 10.0, 5);
    let flat = retrodict_with_prior(&rec, &model, rec.t0, f64::INFINITY).unwrap();
    let weak = retrodict_with_prior(&rec, &model, rec.t0, 1e6).unwrap();
    assert!(flat.estimate.max_abs_diff(weak.estimate) < 1e-4);
}
