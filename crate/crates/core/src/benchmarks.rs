//! Shipped benchmark fixtures and the solve-then-validate harness behind the
//! `benchmark` subcommand.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{verify_feasibility, FeasibilityReport, ProblemSpec};
use crate::problem_file::{ProblemFile, SolverOverrides};
use crate::solve::{solve, Method, Solution};
use crate::validation::{estimate_satisfaction, McReport};

const DI_JSON: &str = include_str!("../fixtures/v1/di.json");
const QUAD_JSON: &str = include_str!("../fixtures/v1/quad.json");
const DI_SWEEP_JSON: &str = include_str!("../fixtures/v1/di_sweep.json");

/// Horizons of the solve-time sweep.
pub const SWEEP_HORIZONS: [usize; 7] = [5, 10, 15, 20, 25, 30, 35];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    /// Accepted objective range.
    pub objective: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_objective: Option<f64>,
    pub min_satisfaction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_satisfaction: Option<f64>,
    pub max_wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkFixture {
    pub name: String,
    /// Where each problem value and envelope bound comes from.
    pub provenance: BTreeMap<String, String>,
    pub envelope: Envelope,
    pub problem: ProblemFile,
}

impl BenchmarkFixture {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Schema { path, reason: e.into_inner().to_string() }
        })
    }

    /// Problem file text accepted by `parse_problem`.
    pub fn problem_text(&self) -> String {
        serde_json::to_string_pretty(&self.problem).expect("problem files serialize")
    }
}

pub fn fixture_di() -> BenchmarkFixture {
    BenchmarkFixture::from_json(DI_JSON).expect("shipped fixture parses")
}

pub fn fixture_quad() -> BenchmarkFixture {
    BenchmarkFixture::from_json(QUAD_JSON).expect("shipped fixture parses")
}

/// Double integrator sweep instance at horizon `n`, with time normalized so
/// the corridor and target span the same interval for every horizon.
pub fn fixture_di_sweep(n: usize) -> BenchmarkFixture {
    let mut f = BenchmarkFixture::from_json(DI_SWEEP_JSON).expect("shipped fixture parses");
    let base = f.problem.horizon as f64 * f.problem.time_scale;
    f.problem.horizon = n;
    f.problem.time_scale = base / n as f64;
    f
}

/// One table row: computed and Monte Carlo cost and satisfaction, and wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub name: String,
    pub horizon: usize,
    pub computed_cost: Option<f64>,
    pub mc_cost: Option<f64>,
    pub computed_satisfaction: Option<f64>,
    pub mc_satisfaction: Option<f64>,
    pub solve_time_s: f64,
    pub wall_time_s: f64,
}

impl BenchmarkRow {
    pub const CSV_HEADER: &'static str =
        "name,horizon,computed_cost,mc_cost,computed_satisfaction,mc_satisfaction,solve_time_s,wall_time_s";

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        format!(
            "{},{},{},{},{},{},{},{}",
            self.name,
            self.horizon,
            f(self.computed_cost),
            f(self.mc_cost),
            f(self.computed_satisfaction),
            f(self.mc_satisfaction),
            self.solve_time_s,
            self.wall_time_s
        )
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub spec: ProblemSpec,
    pub overrides: SolverOverrides,
    pub solution: Solution,
    /// Exact per-row check of the returned input.
    pub feasibility: Option<FeasibilityReport>,
    pub mc: Option<McReport>,
    pub row: BenchmarkRow,
}

/// Solves a fixture and, when `samples > 0` and the solve succeeded, validates it.
pub fn run_benchmark(fixture: &BenchmarkFixture, method: Method, samples: usize, seed: u64) -> Result<BenchmarkRun> {
    let start = Instant::now();
    let spec = fixture.problem.build()?;
    let overrides = fixture.problem.solver;
    let solution = solve(&spec, method, &overrides)?;
    let solve_time_s = solution.timings.total_s;
    let (feasibility, mc) = if solution.status.is_success() {
        let u = solution.u_vector();
        let feas = verify_feasibility(&spec, &u, &overrides.quadrature)?;
        let mc = if samples > 0 { Some(estimate_satisfaction(&spec, &u, samples, seed)?) } else { None };
        (Some(feas), mc)
    } else {
        (None, None)
    };
    let row = BenchmarkRow {
        name: fixture.name.clone(),
        horizon: fixture.problem.horizon,
        computed_cost: solution.objective,
        mc_cost: mc.as_ref().map(|m| m.empirical_cost),
        computed_satisfaction: solution.total_risk.map(|r| 1.0 - r),
        mc_satisfaction: mc.as_ref().map(|m| m.satisfaction),
        solve_time_s,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(BenchmarkRun { spec, overrides, solution, feasibility, mc, row })
}
