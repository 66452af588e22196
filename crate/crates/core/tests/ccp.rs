mod common;

use ccsynth::ccp::{build_subproblem, check_exit, lse_linearize, solve_ccp, CcpConfig, CcpStatus, ExitReason, Iterate};
use ccsynth::problem_file::parse_problem;
use ccsynth::program::{build_dc, BuildOptions};
use ccsynth::qp::{AdmmSolver, QpBackend, QpSettings, QpStatus};
use ccsynth::solve::{solve, Method, SolveStatus};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn lse(t: &DVector<f64>) -> f64 {
    let top = t.max();
    top + t.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

#[test]
fn lse_gradient_matches_finite_differences() {
    let r = DVector::from_vec(vec![-0.3, -1.2, 0.0, -0.05, -2.5]);
    let (value, grad) = lse_linearize(&r);
    assert!((value - lse(&r)).abs() < 1e-14);
    let h = 1e-6;
    for i in 0..r.len() {
        let mut up = r.clone();
        let mut dn = r.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (lse(&up) - lse(&dn)) / (2.0 * h);
        assert!((fd - grad[i]).abs() < 1e-8, "component {i}: {fd} vs {}", grad[i]);
    }
    assert!((grad.sum() - 1.0).abs() < 1e-14);
}

proptest! {
    #[test]
    fn lse_lies_above_its_linearization(
        r in prop::collection::vec(-5.0..0.0f64, 1..20),
        shift in prop::collection::vec(-3.0..3.0f64, 20),
    ) {
        let r = DVector::from_vec(r);
        let t = DVector::from_fn(r.len(), |i, _| r[i] + shift[i]);
        let (value, grad) = lse_linearize(&r);
        prop_assert!(lse(&t) >= value + grad.dot(&(&t - &r)) - 1e-12);
    }
}

/// Budget on the risks holds exactly when the log-sum-exp row does.
#[test]
fn risk_budget_matches_log_sum_exp_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut agree = 0;
    for _ in 0..10_000 {
        let l = rng.random_range(1..=50);
        let delta: f64 = rng.random_range(1e-4..0.5);
        let d: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..2.0 * delta / l as f64)).collect();
        let sum: f64 = d.iter().sum();
        let t = DVector::from_iterator(l, d.iter().map(|x| (1.0 - x).ln()));
        let row = lse(&t) >= (l as f64 - delta).ln();
        assert_eq!(sum <= delta, row, "L = {l}, delta = {delta}, sum = {sum}");
        agree += 1;
    }
    assert_eq!(agree, 10_000);
}

#[test]
fn exit_rule_examples() {
    let cfg = CcpConfig::default();
    let settled = Iterate { objective: 12.0, slack: 0.0 };
    assert_eq!(check_exit(&settled, &settled, 1.0, &cfg), ExitReason::Converged);
    let moving = Iterate { objective: 11.0, slack: 0.0 };
    assert_eq!(check_exit(&settled, &moving, 1.0, &cfg), ExitReason::Continue);
    let slack = Iterate { objective: 12.0, slack: 1e-3 };
    assert_eq!(check_exit(&slack, &slack, 1.0, &cfg), ExitReason::Continue);
    assert_eq!(check_exit(&settled, &settled, 2.0 * cfg.tau_max, &cfg), ExitReason::TauExhausted);
}

#[test]
fn zero_penalty_subproblem_is_always_solvable() {
    let (spec, _) = parse_problem(&common::two_channel_toy(1.405, 0.1, 1e-3)).unwrap();
    let dc = build_dc(&spec, &BuildOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut backend = AdmmSolver::new(QpSettings::default());
    for _ in 0..20 {
        let r = DVector::from_fn(2, |_, _| rng.random_range(-4.0..0.0));
        let qp = build_subproblem(&dc, &r, 0.0).unwrap();
        let sol = backend.solve(&qp, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "r = {r:?}");
    }
}

#[test]
fn feasible_linearization_point_needs_no_slack() {
    let (spec, ov) = parse_problem(&common::scalar_gaussian_toy(2.0, 0.05, 1e-3, (-10.0, 10.0))).unwrap();
    let dc = build_dc(&spec, &BuildOptions::default()).unwrap();
    let mut backend = AdmmSolver::new(ov.qp);
    let res = solve_ccp(&dc, &ov.ccp, &mut backend).unwrap();
    assert_eq!(res.status, CcpStatus::Converged);
    let qp = build_subproblem(&dc, &res.t, 1e4).unwrap();
    let sol = backend.solve(&qp, None).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!(sol.x[2] < 1e-7, "slack {}", sol.x[2]);
}

#[test]
fn single_gaussian_row_agrees_with_closed_form_and_gaussian_program() {
    let (bound, delta) = (2.0, 0.05);
    let (spec, ov) = parse_problem(&common::scalar_gaussian_toy(bound, delta, 1e-4, (-10.0, 10.0))).unwrap();
    let z = Normal::standard().inverse_cdf(1.0 - delta);
    let u_exact = bound - z;
    let exact = (u_exact - 5.0).powi(2) + 1.0 + 0.01 * u_exact * u_exact;

    let dc = solve(&spec, Method::Dc, &ov).unwrap();
    let gq = solve(&spec, Method::GaussianQp, &ov).unwrap();
    assert_eq!(dc.status, SolveStatus::Converged);
    assert_eq!(gq.status, SolveStatus::Optimal);
    let (a, b) = (dc.objective.unwrap(), gq.objective.unwrap());
    assert!((a - b).abs() <= 1e-3 * b, "dc {a} vs gaussian {b}");
    for (name, obj, u) in [("dc", a, dc.u[0]), ("gaussian", b, gq.u[0])] {
        assert!(u <= u_exact + 1e-6, "{name}: u = {u} beyond {u_exact}");
        assert!(obj >= exact - 1e-6 && obj <= exact * (1.0 + 2e-3), "{name}: {obj} vs {exact}");
    }
}

#[test]
fn competing_rows_over_budget_end_with_positive_slack() {
    // each row alone reaches risk 0.08 at best, so the pair needs 0.16 > 0.1
    let (spec, ov) = parse_problem(&common::two_channel_toy(1.405, 0.1, 1e-3)).unwrap();
    let sol = solve(&spec, Method::Dc, &ov).unwrap();
    assert_eq!(sol.status, SolveStatus::SlackPositive);
    assert!(sol.total_risk.unwrap() > 0.15);
}

#[test]
fn near_sure_requirement_with_tight_bounds_is_reported_infeasible() {
    let (spec, ov) = parse_problem(&common::scalar_gaussian_toy(3.0, 1e-9, 0.1, (0.0, 1.0))).unwrap();
    let dc = build_dc(&spec, &BuildOptions::default()).unwrap();
    let mut backend = AdmmSolver::new(ov.qp);
    let res = solve_ccp(&dc, &ov.ccp, &mut backend).unwrap();
    assert_eq!(res.status, CcpStatus::SubproblemFailed);
    let sol = solve(&spec, Method::Dc, &ov).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn invalid_configuration_is_rejected() {
    let bad = CcpConfig { gamma: 1.0, ..CcpConfig::default() };
    assert!(bad.validate().is_err());
    let bad = CcpConfig { tau0: 2e4, ..CcpConfig::default() };
    assert!(bad.validate().is_err());
}
