use levsense_core::dynamics::{propagate_unconditional, thermal_state, DynamicsModel, GaussianState};
use levsense_core::harness::{SimulationSettings, TrialPlan};
use levsense_core::linalg::{Mat2, Vec2};
use levsense_core::protocol::{build_amplified, build_conventional, DEFAULT_RELEASE_LEAD};
use levsense_core::units::OscillatorParams;
use proptest::prelude::*;

fn params() -> OscillatorParams {
    OscillatorParams::default()
}

fn readout(p: &OscillatorParams) -> f64 {
    SimulationSettings::default().readout_duration(p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Squeeze, kick, anti-squeeze: the kick reappears along Q scaled by r,
    // the initial state is inverted and its covariance is untouched.
    #[test]
    fn amplification_identity(
        r in 1.05f64..6.0,
        tau in 0.0f64..1e-6,
        q0 in -5.0f64..5.0,
        p0 in -5.0f64..5.0,
        a in 0.2f64..4.0,
        b in 0.2f64..4.0,
        c in -0.9f64..0.9,
    ) {
        let p = params();
        let cov = Mat2::symmetric(a, c * (a * b).sqrt(), b);
        let schedule = build_amplified(&p, r, tau, readout(&p)).unwrap();
        let plan = TrialPlan::new(&schedule, &p, &SimulationSettings::noiseless()).unwrap();
        let out = plan.propagate_state(&GaussianState::new(Vec2::new(q0, p0), cov));
        let dp = schedule.kick_dp();
        prop_assert!((out.mean.q - (-q0 + r * dp)).abs() < 1e-9);
        prop_assert!((out.mean.p + p0).abs() < 1e-9);
        prop_assert!(out.cov.max_abs_diff(&cov) < 1e-9);
    }

    // Free evolution with recoil heating never violates the uncertainty
    // relation and raises the occupation linearly.
    #[test]
    fn heating_is_linear_and_physical(n in 0.0f64..5.0, periods in 1u32..20) {
        let p = params();
        let t = periods as f64 * p.base_period();
        let model = DynamicsModel::base(&p, false);
        let start = thermal_state(n).unwrap();
        let out = propagate_unconditional(&start, &model, t, p.base_period() / 200.0).unwrap();
        prop_assert!(out.is_physical());
        prop_assert!(((out.occupation() - n) / (p.gamma_qb * t) - 1.0).abs() < 1e-6);
    }
}

#[test]
fn conventional_protocol_kicks_momentum_at_reference_time() {
    let p = params();
    let schedule = build_conventional(&p, 500e-9, DEFAULT_RELEASE_LEAD, readout(&p)).unwrap();
    let plan = TrialPlan::new(&schedule, &p, &SimulationSettings::noiseless()).unwrap();
    let out = plan.propagate_state(&GaussianState::ground());
    // 6e6 · 2 V · 500 ns
    assert!((out.mean.p - 6.0).abs() < 1e-12);
    assert!(out.mean.q.abs() < 1e-12);
}

#[test]
fn recoil_during_soft_phases_matches_closed_form() {
    // Noise on, no kick, no readout noise: the Q variance added by the soft
    // phases is 2πΓr/Ω on top of the inverted initial state.
    let p = params();
    for r in [2.0, 12f64.sqrt(), 5.0] {
        let schedule = build_amplified(&p, r, 0.0, readout(&p)).unwrap();
        let plan = TrialPlan::new(&schedule, &p, &SimulationSettings::default()).unwrap();
        let out = plan.propagate_state(&GaussianState::ground());
        let recoil = 2.0 * std::f64::consts::PI * p.gamma_qb * r / p.omega_base;
        assert!(((out.cov.xx - 1.0) / recoil - 1.0).abs() < 1e-6, "r = {r}: {:?}", out.cov);
    }
}

#[test]
fn rejects_invalid_protocols() {
    let p = params();
    assert!(build_amplified(&p, 1.0, 0.0, readout(&p)).is_err());
    assert!(build_amplified(&p, 2.0, 0.0, 0.5 * p.base_period()).is_err());
    assert!(build_conventional(&p, -1e-9, DEFAULT_RELEASE_LEAD, readout(&p)).is_err());
    let coarse = SimulationSettings {
        steps_per_period: 20.0,
        ..SimulationSettings::default()
    };
    let s = build_amplified(&p, 2.0, 0.0, readout(&p)).unwrap();
    assert!(TrialPlan::new(&s, &p, &coarse).is_err());
}
