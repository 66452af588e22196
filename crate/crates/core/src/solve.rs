//! End-to-end synthesis: build the chosen program, solve it, and collect the
//! allocation, objective and per-phase timings.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ccp::{solve_ccp, CcpStatus, TraceEntry};
use crate::error::{Error, Result};
use crate::problem::{objective_value, InitialState, ProblemSpec};
use crate::problem_file::SolverOverrides;
use crate::program::{build_dc, build_dc_random_x0, build_gaussian_qp, build_moment_baseline_qp, BuildOptions};
use crate::qp::{AdmmSolver, QpBackend, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Characteristic-function DC program solved by penalty CCP.
    Dc,
    /// One-shot QP for Gaussian disturbances.
    GaussianQp,
    /// Open-loop Cantelli tightening with a uniform allocation.
    MomentBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Optimal,
    SlackPositive,
    MaxIter,
    Infeasible,
}

impl SolveStatus {
    pub fn is_success(self) -> bool {
        matches!(self, Self::Converged | Self::Optimal)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub build_s: f64,
    pub qp_s: Vec<f64>,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub method: Method,
    pub status: SolveStatus,
    pub u: Vec<f64>,
    /// Per-row risk allocation chosen by the solver.
    pub delta: Vec<f64>,
    pub total_risk: Option<f64>,
    pub objective: Option<f64>,
    /// Row that made the problem infeasible, when known.
    pub infeasible_row: Option<usize>,
    pub qp_iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEntry>,
    pub timings: Timings,
}

impl Solution {
    fn infeasible(method: Method, row: Option<usize>, timings: Timings) -> Self {
        Self {
            method,
            status: SolveStatus::Infeasible,
            u: Vec::new(),
            delta: Vec::new(),
            total_risk: None,
            objective: None,
            infeasible_row: row,
            qp_iterations: 0,
            trace: Vec::new(),
            timings,
        }
    }

    pub fn u_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u)
    }
}

pub fn build_options(overrides: &SolverOverrides) -> BuildOptions {
    BuildOptions { quadrature: overrides.quadrature, ..BuildOptions::default() }
}

pub fn solve(spec: &ProblemSpec, method: Method, overrides: &SolverOverrides) -> Result<Solution> {
    let start = Instant::now();
    overrides.qp.validate()?;
    let mut backend = AdmmSolver::new(overrides.qp);
    let finish = |mut s: Solution| {
        s.timings.total_s = start.elapsed().as_secs_f64();
        s
    };

    match method {
        Method::Dc => {
            let opts = build_options(overrides);
            let built = match spec.initial_state {
                InitialState::Fixed(_) => build_dc(spec, &opts),
                InitialState::Random(_) => build_dc_random_x0(spec, &opts),
            };
            let build_s = start.elapsed().as_secs_f64();
            let dc = match built {
                Ok(dc) => dc,
                Err(Error::RowInfeasible { row }) => {
                    return Ok(finish(Solution::infeasible(method, Some(row), Timings { build_s, ..Timings::default() })))
                }
                Err(e) => return Err(e),
            };
            let res = solve_ccp(&dc, &overrides.ccp, &mut backend)?;
            if res.status == CcpStatus::SubproblemFailed {
                let t = Timings { build_s, qp_s: res.qp_seconds, total_s: 0.0 };
                return Ok(finish(Solution::infeasible(method, None, t)));
            }
            let status = match res.status {
                CcpStatus::Converged => SolveStatus::Converged,
                CcpStatus::SlackPositive => SolveStatus::SlackPositive,
                CcpStatus::MaxIter => SolveStatus::MaxIter,
                CcpStatus::SubproblemFailed => SolveStatus::Infeasible,
            };
            let delta: Vec<f64> = res.delta.iter().copied().collect();
            Ok(finish(Solution {
                method,
                status,
                total_risk: Some(delta.iter().sum()),
                objective: Some(objective_value(spec, &res.u)?),
                u: res.u.iter().copied().collect(),
                delta,
                infeasible_row: None,
                qp_iterations: res.qp_iterations,
                trace: res.trace,
                timings: Timings { build_s, qp_s: res.qp_seconds, total_s: 0.0 },
            }))
        }
        Method::GaussianQp | Method::MomentBaseline => {
            let (qp, nu, uniform) = if method == Method::GaussianQp {
                let g = build_gaussian_qp(spec, overrides.delta_lb())?;
                (g.qp, g.n_u, None)
            } else {
                match build_moment_baseline_qp(spec) {
                    Ok(m) => (m.qp, spec.system.input_len(), Some(spec.delta / spec.num_rows() as f64)),
                    Err(Error::RowInfeasible { row }) => {
                        let t = Timings { build_s: start.elapsed().as_secs_f64(), ..Timings::default() };
                        return Ok(finish(Solution::infeasible(method, Some(row), t)));
                    }
                    Err(e) => return Err(e),
                }
            };
            let build_s = start.elapsed().as_secs_f64();
            let clock = Instant::now();
            let sol = backend.solve(&qp, None)?;
            let timings = Timings { build_s, qp_s: vec![clock.elapsed().as_secs_f64()], total_s: 0.0 };
            let status = match sol.status {
                QpStatus::Optimal => SolveStatus::Optimal,
                QpStatus::MaxIter => SolveStatus::MaxIter,
                QpStatus::PrimalInfeasible | QpStatus::DualInfeasible => {
                    return Ok(finish(Solution::infeasible(method, None, timings)))
                }
            };
            let u = sol.x.rows(0, nu).into_owned();
            let delta: Vec<f64> = match uniform {
                Some(share) => vec![share; spec.num_rows()],
                None => sol.x.rows(nu, spec.num_rows()).iter().copied().collect(),
            };
            Ok(finish(Solution {
                method,
                status,
                total_risk: Some(delta.iter().sum()),
                objective: Some(objective_value(spec, &u)?),
                u: u.iter().copied().collect(),
                delta,
                infeasible_row: None,
                qp_iterations: sol.iterations,
                trace: Vec::new(),
                timings,
            }))
        }
    }
}
