mod common;

use std::fs;
use std::path::Path;

use ccsynth::benchmarks::fixture_di;
use ccsynth::cli::{run_from, EXIT_ERROR, EXIT_INFEASIBLE};
use ccsynth::solve::Solution;
use statrs::distribution::{ContinuousCDF, Normal};

const MIXTURE_LAW: &str = r#"{"terms":[
  {"weight":1.0,"law":{"type":"exponential","scale":0.5}},
  {"weight":0.5,"law":{"type":"exponential","scale":0.25}},
  {"weight":0.75,"law":{"type":"exponential","scale":0.1667}}]}"#;

fn write_toy(dir: &Path) -> String {
    let p = dir.join("toy.json");
    fs::write(&p, common::scalar_gaussian_toy(2.0, 0.05, 0.05, (-10.0, 10.0))).unwrap();
    p.to_string_lossy().into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn without_timings(text: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn solve_then_validate_a_toy_problem() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_toy(dir.path());
    let out = path(dir.path(), "run");
    let code = run_from(["ccsynth", "solve", &problem, "--out", &out, "--trace", "--dump-program"]);
    assert_eq!(code, 0);
    for f in ["solution.json", "mean_trajectory.csv", "feasibility.json", "trace.csv", "program.json"] {
        assert!(dir.path().join("run").join(f).exists(), "{f} missing");
    }
    let trace = fs::read_to_string(dir.path().join("run/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective,slack,tau\n") && trace.lines().count() > 1);

    let solution = path(dir.path(), "run/solution.json");
    let code = run_from(["ccsynth", "validate", &problem, &solution, "--samples", "20000", "--out", &out, "--dump-limit", "5"]);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/mc_report.json")).unwrap()).unwrap();
    assert!(report["satisfaction"].as_f64().unwrap() > 0.94);
    let samples = fs::read_to_string(dir.path().join("run/samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 5);

    let code = run_from(["ccsynth", "validate", &problem, &solution, "--samples", "100", "--out", &out]);
    assert!(code == 0 || code == EXIT_INFEASIBLE);
}

#[test]
fn solving_twice_gives_identical_json_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_toy(dir.path());
    let (a, b) = (path(dir.path(), "a"), path(dir.path(), "b"));
    assert_eq!(run_from(["ccsynth", "solve", &problem, "--out", &a]), 0);
    assert_eq!(run_from(["ccsynth", "solve", &problem, "--out", &b]), 0);
    let read = |d: &str| fs::read_to_string(Path::new(d).join("solution.json")).unwrap();
    assert_eq!(without_timings(&read(&a)), without_timings(&read(&b)));
}

#[test]
fn gaussian_program_runs_a_single_qp() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_toy(dir.path());
    let out = path(dir.path(), "g");
    assert_eq!(run_from(["ccsynth", "solve", &problem, "--method", "gaussian-qp", "--out", &out]), 0);
    let sol: Solution = serde_json::from_str(&fs::read_to_string(dir.path().join("g/solution.json")).unwrap()).unwrap();
    assert!(sol.trace.is_empty());
    assert_eq!(sol.timings.qp_s.len(), 1);
}

#[test]
fn unsafe_input_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_toy(dir.path());
    let out = path(dir.path(), "run");
    assert_eq!(run_from(["ccsynth", "solve", &problem, "--out", &out]), 0);
    let sol_path = dir.path().join("run/solution.json");
    let mut sol: Solution = serde_json::from_str(&fs::read_to_string(&sol_path).unwrap()).unwrap();
    sol.u = vec![2.0];
    fs::write(&sol_path, serde_json::to_string(&sol).unwrap()).unwrap();
    let code = run_from(["ccsynth", "validate", &problem, &sol_path.to_string_lossy(), "--samples", "10000", "--out", &out]);
    assert_eq!(code, EXIT_INFEASIBLE);
}

#[test]
fn moment_baseline_on_the_double_integrator_exits_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("di.json");
    fs::write(&p, fixture_di().problem_text()).unwrap();
    let out = path(dir.path(), "mb");
    let code = run_from(["ccsynth", "solve", &p.to_string_lossy(), "--method", "moment-baseline", "--out", &out]);
    assert_eq!(code, EXIT_INFEASIBLE);
}

#[test]
fn errors_map_to_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "x");
    assert_eq!(run_from(["ccsynth", "solve", &path(dir.path(), "missing.json"), "--out", &out]), EXIT_ERROR);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, common::scalar_gaussian_toy(2.0, 0.05, 0.05, (-10.0, 10.0)).replacen("\"horizon\"", "\"foo\": 0, \"horizon\"", 1)).unwrap();
    assert_eq!(run_from(["ccsynth", "solve", &bad.to_string_lossy(), "--out", &out]), EXIT_ERROR);
    assert_eq!(run_from(["ccsynth", "solve"]), EXIT_ERROR);
    assert_eq!(run_from(["ccsynth", "cdf", "--law", "{\"terms\": []}"]), EXIT_ERROR);
}

#[test]
fn cdf_of_a_gaussian_matches_the_error_function() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "cdf.csv");
    let law = r#"{"terms":[{"weight":2.0,"law":{"type":"gaussian","mean":1.0,"stddev":0.5}}]}"#;
    assert_eq!(run_from(["ccsynth", "cdf", "--law", law, "--points", "101", "--out", &out]), 0);
    let oracle = Normal::new(2.0, 1.0).unwrap();
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,cdf"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (s, p) = l.split_once(',').unwrap();
            (s.parse().unwrap(), p.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 101);
    assert!((rows[0].0 + 4.0).abs() < 1e-12 && (rows[100].0 - 8.0).abs() < 1e-12);
    for (s, p) in rows {
        assert!((p - oracle.cdf(s)).abs() < 1e-6, "s = {s}: {p} vs {}", oracle.cdf(s));
    }
}

#[test]
fn cdf_of_the_exponential_mixture_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let law_path = path(dir.path(), "law.json");
    fs::write(&law_path, MIXTURE_LAW).unwrap();
    let out = path(dir.path(), "cdf.csv");
    assert_eq!(run_from(["ccsynth", "cdf", "--law", &law_path, "--lo", "0", "--hi", "3", "--out", &out]), 0);
    let values: Vec<f64> =
        fs::read_to_string(&out).unwrap().lines().skip(1).map(|l| l.split_once(',').unwrap().1.parse().unwrap()).collect();
    assert_eq!(values.len(), 200);
    assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    assert!(values[0] < 1e-6 && values[199] > 0.99);
}

#[test]
fn pwa_dump_writes_pieces() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "pwa.csv");
    assert_eq!(run_from(["ccsynth", "pwa-dump", "--law", MIXTURE_LAW, "--eta", "0.1", "--out", &out]), 0);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("slope,intercept,left,right"));
    let slopes: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(slopes.len() >= 3);
    assert!(slopes.iter().all(|m| *m >= 0.0));
}
