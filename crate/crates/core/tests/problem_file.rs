mod common;

use ccsynth::benchmarks::{fixture_di, fixture_quad};
use ccsynth::distributions::ScalarDistribution;
use ccsynth::dynamics::double_integrator;
use ccsynth::problem::InitialState;
use ccsynth::problem_file::{parse_problem, DistributionSpec, ProblemFile, DEFAULT_EPSILON, DEFAULT_ETA};
use ccsynth::Error;

fn di_text() -> String {
    fixture_di().problem_text()
}

#[test]
fn double_integrator_builder_sets_the_benchmark_data() {
    let (spec, ov) = parse_problem(&di_text()).unwrap();
    let (a, b) = double_integrator(0.25);
    assert_eq!(spec.system.abar.view((0, 0), (2, 2)), a);
    assert_eq!(spec.system.h.view((0, 0), (2, 1)), b);
    assert_eq!(spec.system.horizon, 10);
    assert_eq!(spec.initial_state, InitialState::Fixed(nalgebra::DVector::from_vec(vec![-1.0, 0.0])));
    assert!(spec.input_lo.iter().all(|v| *v == -20.0) && spec.input_hi.iter().all(|v| *v == 20.0));
    assert_eq!(spec.delta, 0.1);
    assert_eq!((spec.epsilon, spec.eta), (DEFAULT_EPSILON, DEFAULT_ETA));
    assert_eq!(ov.ccp.tau_max, 1e4);
    assert_eq!(ov.ccp.tau0, 0.1);
    // rates 5 and 10 are exponential means 0.2 and 0.1
    let c = spec.disturbance.components();
    assert_eq!(c.len(), 20);
    assert!((c[0].mean() - 0.2).abs() < 1e-15 && (c[1].mean() - 0.1).abs() < 1e-15);
    assert_eq!(spec.state_weights.iter().take(4).copied().collect::<Vec<_>>(), vec![10.0, 1.0, 10.0, 1.0]);
    assert!(spec.input_weights.iter().all(|r| *r == 1e-3));
    // corridor at step 1: x1 <= 5.222 - 0.222 and -x1 <= 5.222 - 0.222
    assert!((spec.rows[0].bound - 5.0).abs() < 1e-12);
    assert_eq!(spec.rows[0].step, Some(1));
    // target at step 10: 2.111 - 0.111 * 10
    assert!((spec.desired[18] - 1.001).abs() < 1e-12);
}

#[test]
fn unknown_keys_are_named_in_the_error() {
    let text = di_text().replacen("\"horizon\"", "\"foo\": 1,\n  \"horizon\"", 1);
    match ProblemFile::from_json(&text) {
        Err(Error::Schema { path, reason }) => assert!(reason.contains("foo") || path.contains("foo"), "{path}: {reason}"),
        other => panic!("expected a schema error, got {other:?}"),
    }
    let nested = di_text().replacen("\"ts\": 0.25", "\"ts\": 0.25, \"foo\": 2", 1);
    match ProblemFile::from_json(&nested) {
        Err(Error::Schema { path, reason }) => {
            assert!(path.starts_with("system"), "{path}");
            assert!(reason.contains("foo"), "{reason}");
        }
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn canonical_form_round_trips() {
    for text in [di_text(), fixture_quad().problem_text(), common::two_channel_toy(1.0, 0.1, 0.05)] {
        let file = ProblemFile::from_json(&text).unwrap();
        let again = ProblemFile::from_json(&file.canonical()).unwrap();
        assert_eq!(file.build().unwrap(), again.build().unwrap());
        assert_eq!(again.canonical(), ProblemFile::from_json(&again.canonical()).unwrap().canonical());
    }
}

#[test]
fn invalid_values_are_value_errors() {
    let bad_delta = di_text().replace("\"delta\": 0.1", "\"delta\": 1.0");
    assert!(matches!(parse_problem(&bad_delta), Err(Error::Value(_))));
    let zero_horizon = di_text().replace("\"horizon\": 10", "\"horizon\": 0");
    assert!(matches!(parse_problem(&zero_horizon), Err(Error::Value(_))));
    let bad_scale = di_text().replace("\"rate\": 5.0", "\"rate\": -5.0");
    assert!(parse_problem(&bad_scale).is_err());
    let mut file = fixture_di().problem;
    file.state_weights = vec![10.0];
    assert!(matches!(file.build(), Err(Error::DimensionMismatch(_))));
}

#[test]
fn exponential_accepts_scale_or_rate() {
    let scale = DistributionSpec::Exponential { scale: Some(0.2), rate: None }.to_distribution().unwrap();
    let rate = DistributionSpec::Exponential { scale: None, rate: Some(5.0) }.to_distribution().unwrap();
    assert_eq!(scale, rate);
    assert_eq!(scale, ScalarDistribution::exponential(0.2).unwrap());
    assert!(DistributionSpec::Exponential { scale: Some(0.2), rate: Some(5.0) }.to_distribution().is_err());
    assert!(DistributionSpec::Exponential { scale: None, rate: None }.to_distribution().is_err());
    let json: DistributionSpec = serde_json::from_str(r#"{"type":"exponential","scale":5.0}"#).unwrap();
    assert_eq!(json.to_distribution().unwrap().mean(), 5.0);
}

#[test]
fn waypoints_spread_uniformly_over_the_horizon() {
    let spec = fixture_quad().problem.build().unwrap();
    let n = 12;
    let at = |t: usize, i: usize| spec.desired[(t - 1) * n + i];
    assert_eq!((at(1, 0), at(1, 1), at(1, 2)), (20.0, 50.0, 25.0));
    assert_eq!((at(10, 0), at(10, 1), at(10, 2)), (50.0, 20.0, 25.0));
    assert!((at(4, 0) - 30.0).abs() < 1e-12 && (at(4, 1) - 40.0).abs() < 1e-12);
    assert!((1..=10).all(|t| (3..n).all(|i| at(t, i) == 0.0)));
}

#[test]
fn quadrotor_builder_injects_wind_on_positions() {
    let spec = fixture_quad().problem.build().unwrap();
    assert_eq!((spec.system.n, spec.system.m, spec.system.p), (12, 4, 3));
    assert_eq!(spec.num_rows(), 60);
    let c = spec.disturbance.components();
    assert_eq!(c.len(), 30);
    assert_ne!(c[0], c[29]);
    let file = fixture_quad().problem;
    let offset = file.system.input_offset().unwrap();
    assert!((offset[0] - 4.6892).abs() < 1e-4);
}
