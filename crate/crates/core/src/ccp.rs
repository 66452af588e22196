//! Penalty convex-concave procedure for the DC program. The reverse-convex
//! row `log(sum exp(t_i)) >= log(L - delta)` is replaced by its linearization
//! at `r` plus a slack `s >= 0` charged at `tau * s`; `r` tracks the previous
//! `t` and `tau` grows geometrically.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::program::DcProgram;
use crate::qp::{QpBackend, QpProblem, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLinearization {
    /// `r_i = log(1 - delta / L)`, the uniform allocation in `t` coordinates.
    UniformRisk,
    /// `r_i = delta / L`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcpConfig {
    pub tau0: f64,
    pub tau_max: f64,
    pub gamma: f64,
    pub eps_dc: f64,
    pub eps_viol: f64,
    pub max_iter: usize,
    pub init: InitialLinearization,
}

impl Default for CcpConfig {
    fn default() -> Self {
        Self {
            tau0: 0.1,
            tau_max: 1e4,
            gamma: 2.0,
            eps_dc: 1e-6,
            eps_viol: 1e-6,
            max_iter: 100,
            init: InitialLinearization::UniformRisk,
        }
    }
}

impl CcpConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau0 > 0.0
            && self.tau0 <= self.tau_max
            && self.gamma > 1.0
            && self.eps_dc > 0.0
            && self.eps_viol > 0.0
            && self.max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Value(format!("invalid CCP configuration: {self:?}")))
        }
    }

    pub fn initial_point(&self, rows: usize, delta: f64) -> DVector<f64> {
        let share = delta / rows as f64;
        match self.init {
            InitialLinearization::UniformRisk => DVector::from_element(rows, (1.0 - share).ln()),
            InitialLinearization::Literal => DVector::from_element(rows, share),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcpStatus {
    Converged,
    SlackPositive,
    MaxIter,
    SubproblemFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Converged,
    TauExhausted,
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub slack: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcpResult {
    pub u: DVector<f64>,
    pub t: DVector<f64>,
    pub delta: DVector<f64>,
    pub slack: f64,
    pub objective: f64,
    pub status: CcpStatus,
    pub trace: Vec<TraceEntry>,
    pub qp_iterations: usize,
    /// Wall time of each subproblem solve.
    pub qp_seconds: Vec<f64>,
}

/// `(log sum exp(r), softmax(r))`.
pub fn lse_linearize(r: &DVector<f64>) -> (f64, DVector<f64>) {
    let top = r.max();
    let w = r.map(|v| (v - top).exp());
    let sum = w.sum();
    (top + sum.ln(), w / sum)
}

/// Problem over `[U; t; s]` with the log-sum-exp row linearized at `r`.
pub fn build_subproblem(dc: &DcProgram, r: &DVector<f64>, tau: f64) -> Result<QpProblem> {
    let (nu, nr) = (dc.n_u, dc.num_rows());
    if r.len() != nr {
        return Err(Error::DimensionMismatch(format!("linearization point has length {}, expected {nr}", r.len())));
    }
    let nv = nu + nr + 1;
    let (base_a, base_l, base_u) = dc.linear_constraints(1);
    let m = base_a.nrows();
    let mut a = DMatrix::zeros(m + 2, nv);
    a.rows_mut(0, m).copy_from(&base_a);
    let mut l = base_l.insert_rows(m, 2, 0.0);
    let mut u = base_u.insert_rows(m, 2, f64::INFINITY);

    // g.t + s >= log(L - delta) - lse(r) + g.r
    let (value, grad) = lse_linearize(r);
    for i in 0..nr {
        a[(m, nu + i)] = grad[i];
    }
    a[(m, nu + nr)] = 1.0;
    l[m] = (nr as f64 - dc.delta).ln() - value + grad.dot(r);
    a[(m + 1, nu + nr)] = 1.0;
    l[m + 1] = 0.0;
    u[m + 1] = f64::INFINITY;

    let mut p = DMatrix::zeros(nv, nv);
    p.view_mut((0, 0), (nu, nu)).copy_from(&dc.obj_p);
    let mut q = DVector::zeros(nv);
    q.rows_mut(0, nu).copy_from(&dc.obj_q);
    q[nu + nr] = tau;
    QpProblem::new(p, q, a, l, u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Iterate {
    pub objective: f64,
    pub slack: f64,
}

/// Stops when the penalized objective change is below `eps_dc` and the slack
/// below `eps_viol`, or when `tau` has passed `tau_max`.
pub fn check_exit(prev: &Iterate, curr: &Iterate, tau: f64, cfg: &CcpConfig) -> ExitReason {
    if tau > cfg.tau_max {
        return ExitReason::TauExhausted;
    }
    let change = (prev.objective - curr.objective + tau * (prev.slack - curr.slack)).abs();
    if change <= cfg.eps_dc && curr.slack <= cfg.eps_viol {
        ExitReason::Converged
    } else {
        ExitReason::Continue
    }
}

pub fn solve_ccp(dc: &DcProgram, cfg: &CcpConfig, backend: &mut dyn QpBackend) -> Result<CcpResult> {
    cfg.validate()?;
    let (nu, nr) = (dc.n_u, dc.num_rows());
    let mut r = cfg.initial_point(nr, dc.delta);
    let mut tau = cfg.tau0;
    let mut trace = Vec::new();
    let mut warm: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut prev: Option<Iterate> = None;
    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    let mut last: Option<(DVector<f64>, f64)> = None;
    let mut qp_iterations = 0;
    let mut qp_seconds = Vec::new();
    let mut status = CcpStatus::MaxIter;

    for iteration in 0..cfg.max_iter {
        let qp = build_subproblem(dc, &r, tau)?;
        let clock = Instant::now();
        let sol = backend
            .solve(&qp, warm.as_ref().map(|(x, y)| (x, y)))
            .map_err(|e| Error::SubproblemFailed { iteration, reason: e.to_string() })?;
        qp_iterations += sol.iterations;
        qp_seconds.push(clock.elapsed().as_secs_f64());
        if sol.status == QpStatus::PrimalInfeasible {
            // s absorbs the linearized row, so the remaining rows alone are infeasible
            let x = sol.x;
            let u = x.rows(0, nu).into_owned();
            let t = x.rows(nu, nr).into_owned();
            let delta = t.map(|v| 1.0 - v.exp());
            let slack = x[nu + nr].max(0.0);
            let status = CcpStatus::SubproblemFailed;
            return Ok(CcpResult { objective: dc.objective(&u), u, t, delta, slack, status, trace, qp_iterations, qp_seconds });
        }
        if sol.status != QpStatus::Optimal {
            return Err(Error::SubproblemFailed { iteration, reason: format!("QP status {:?}", sol.status) });
        }
        let x = sol.x.clone();
        let u = x.rows(0, nu).into_owned();
        let t = x.rows(nu, nr).into_owned();
        let slack = x[nu + nr].max(0.0);
        let objective = dc.objective(&u);
        trace.push(TraceEntry { iteration, objective, slack, tau });

        if slack <= cfg.eps_viol && best.as_ref().is_none_or(|(obj, _, _)| objective < *obj) {
            best = Some((objective, x.clone(), slack));
        }
        let curr = Iterate { objective, slack };
        let reason = prev.map_or(ExitReason::Continue, |p| check_exit(&p, &curr, tau, cfg));
        last = Some((x.clone(), slack));
        warm = Some((sol.x, sol.y));
        prev = Some(curr);
        if reason == ExitReason::Converged {
            status = CcpStatus::Converged;
            break;
        }
        if reason == ExitReason::TauExhausted {
            break;
        }
        r = t;
        tau = (cfg.gamma * tau).min(cfg.tau_max);
    }

    let (x, slack) = match (status, best) {
        (CcpStatus::Converged, _) => last.expect("at least one iterate"),
        (_, Some((_, x, s))) => (x, s),
        (_, None) => {
            status = CcpStatus::SlackPositive;
            last.expect("at least one iterate")
        }
    };
    let u = x.rows(0, nu).into_owned();
    let t = x.rows(nu, nr).into_owned();
    let delta = t.map(|v| 1.0 - v.exp());
    Ok(CcpResult { objective: dc.objective(&u), u, t, delta, slack, status, trace, qp_iterations, qp_seconds })
}
