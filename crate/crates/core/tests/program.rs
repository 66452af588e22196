mod common;

use ccsynth::benchmarks::fixture_di;
use ccsynth::problem::{objective_value, verify_feasibility, InitialState};
use ccsynth::problem_file::parse_problem;
use ccsynth::program::{
    build_dc, build_dc_random_x0, build_gaussian_qp, build_moment_baseline_qp, cantelli_multiplier, quadratic_objective,
    BuildOptions,
};
use ccsynth::quadrature::QuadratureConfig;
use ccsynth::solve::{solve, Method, SolveStatus};
use ccsynth::Error;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn double_integrator_has_two_rows_per_step() {
    let spec = fixture_di().problem.build().unwrap();
    assert_eq!(spec.num_rows(), 20);
    assert_eq!(spec.system.input_len(), 10);
    let dc = build_dc(&spec, &BuildOptions::default()).unwrap();
    assert_eq!(dc.num_rows(), 20);
    assert_eq!(dc.num_vars(), 30);
}

#[test]
fn row_approximations_stay_within_eta_below_the_log_cdf() {
    let spec = fixture_di().problem.build().unwrap();
    let dc = build_dc(&spec, &BuildOptions::default()).unwrap();
    let quad = QuadratureConfig::default();
    for (i, row) in dc.rows.iter().enumerate().step_by(3) {
        for k in 0..=40 {
            let x = row.x_lo + (row.x_hi - row.x_lo) * k as f64 / 40.0;
            let exact = row.law.cdf(x, &quad).unwrap().ln();
            let approx = row.pwa.eval(x);
            assert!(approx <= exact + 1e-6, "row {i} at {x}: {approx} above {exact}");
            assert!(approx >= exact - spec.eta - 1e-6, "row {i} at {x}: {approx} too far below {exact}");
        }
    }
}

#[test]
fn quadratic_form_matches_expected_cost() {
    let spec = fixture_di().problem.build().unwrap();
    let (p, q, c) = quadratic_objective(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let u = DVector::from_fn(10, |_, _| rng.random_range(-20.0..20.0));
        let quadratic = 0.5 * u.dot(&(&p * &u)) + q.dot(&u) + c;
        let direct = objective_value(&spec, &u).unwrap();
        assert!((quadratic - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{quadratic} vs {direct}");
    }
}

#[test]
fn point_mass_initial_law_matches_fixed_initial_state() {
    let fixed = fixture_di().problem.build().unwrap();
    let InitialState::Fixed(x0) = fixed.initial_state.clone() else { panic!("fixture has a fixed initial state") };
    let random = fixed.with_point_mass_initial_state(&x0).unwrap();
    let quad = QuadratureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let u = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let a = verify_feasibility(&fixed, &u, &quad).unwrap();
        let b = verify_feasibility(&random, &u, &quad).unwrap();
        for (pa, pb) in a.phi.iter().zip(&b.phi) {
            assert!((pa - pb).abs() < 1e-6, "{pa} vs {pb}");
        }
        let (oa, ob) = (objective_value(&fixed, &u).unwrap(), objective_value(&random, &u).unwrap());
        assert!((oa - ob).abs() < 1e-9 * oa);
    }
    let dc = build_dc_random_x0(&random, &BuildOptions::default()).unwrap();
    assert_eq!(dc.num_rows(), 20);
    assert!(build_dc(&random, &BuildOptions::default()).is_err());
    assert!(build_dc_random_x0(&fixed, &BuildOptions::default()).is_err());
}

#[test]
fn moment_baseline_reports_the_first_impossible_row() {
    let (spec, _) = parse_problem(&common::scalar_gaussian_toy(2.0, 0.05, 0.1, (0.0, 1.0))).unwrap();
    assert!(matches!(build_moment_baseline_qp(&spec), Err(Error::RowInfeasible { row: 0 })));
    let sol = solve(&spec, Method::MomentBaseline, &Default::default()).unwrap();
    assert_eq!((sol.status, sol.infeasible_row), (SolveStatus::Infeasible, Some(0)));
}

#[test]
fn cantelli_multiplier_examples() {
    assert!((cantelli_multiplier(0.1) - 3.0).abs() < 1e-15);
    assert!((cantelli_multiplier(0.5) - 1.0).abs() < 1e-15);
    assert!((cantelli_multiplier(0.2) - 2.0).abs() < 1e-15);
}

#[test]
fn moment_baseline_tightens_by_the_cantelli_margin() {
    let (spec, ov) = parse_problem(&common::scalar_gaussian_toy(2.0, 0.05, 0.1, (-10.0, 10.0))).unwrap();
    let m = build_moment_baseline_qp(&spec).unwrap();
    assert!((m.multiplier - 19f64.sqrt()).abs() < 1e-12);
    let sol = solve(&spec, Method::MomentBaseline, &ov).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    let u_edge = 2.0 - 19f64.sqrt();
    assert!((sol.u[0] - u_edge).abs() < 1e-5, "{} vs {u_edge}", sol.u[0]);
    assert_eq!(sol.delta, vec![0.05]);
    let feas = verify_feasibility(&spec, &sol.u_vector(), &QuadratureConfig::default()).unwrap();
    assert!(feas.satisfied && feas.total_risk < 0.05);
}

#[test]
fn moment_baseline_cannot_certify_the_double_integrator() {
    let spec = fixture_di().problem.build().unwrap();
    let sol = solve(&spec, Method::MomentBaseline, &Default::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!(sol.u.is_empty() && sol.objective.is_none());
}

#[test]
fn gaussian_program_needs_gaussian_laws_and_small_budgets() {
    let spec = fixture_di().problem.build().unwrap();
    assert!(matches!(build_gaussian_qp(&spec, 1e-6), Err(Error::NotGaussian(0))));
    let (spec, _) = parse_problem(&common::scalar_gaussian_toy(2.0, 0.6, 0.1, (-10.0, 10.0))).unwrap();
    assert!(matches!(build_gaussian_qp(&spec, 1e-6), Err(Error::DeltaTooLarge(_))));
    let (spec, _) = parse_problem(&common::scalar_gaussian_toy(2.0, 0.05, 0.1, (-10.0, 10.0))).unwrap();
    assert!(build_gaussian_qp(&spec, 0.05).is_err());
    let g = build_gaussian_qp(&spec, 1e-6).unwrap();
    assert!((g.sigmas[0] - 1.0).abs() < 1e-12);
}

#[test]
fn dc_solution_meets_the_budget_exactly() {
    let (spec, ov) = parse_problem(&common::scalar_gaussian_toy(2.0, 0.05, 0.05, (-10.0, 10.0))).unwrap();
    let sol = solve(&spec, Method::Dc, &ov).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    let feas = verify_feasibility(&spec, &sol.u_vector(), &QuadratureConfig::default()).unwrap();
    assert!(feas.satisfied, "exact risk {}", feas.total_risk);
    assert!(feas.total_risk <= sol.total_risk.unwrap() + 1e-9);
}
