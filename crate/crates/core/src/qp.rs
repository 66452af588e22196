//! Dense convex QP solver: `min 1/2 x'Px + q'x  s.t.  l <= Ax <= u`.
//!
//! Operator splitting (ADMM) on the Ruiz-equilibrated problem, with per-row
//! step sizes, adaptive rho, infeasibility detection from iterate differences
//! and a final polish on the guessed active set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    /// Checks shapes and bounds; `p` is symmetrized.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>, a: DMatrix<f64>, l: DVector<f64>, u: DVector<f64>) -> Result<Self> {
        let n = q.len();
        if p.shape() != (n, n) || a.ncols() != n || l.len() != a.nrows() || u.len() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "P {:?}, q {}, A {:?}, l {}, u {}",
                p.shape(),
                n,
                a.shape(),
                l.len(),
                u.len()
            )));
        }
        if let Some(i) = (0..l.len()).find(|&i| l[i] > u[i] || l[i].is_nan() || u[i].is_nan()) {
            return Err(Error::Value(format!("row {i}: lower bound {} exceeds upper bound {}", l[i], u[i])));
        }
        let p = (&p + p.transpose()) * 0.5;
        Ok(Self { p, q, a, l, u })
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_rows(&self) -> usize {
        self.l.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            eps_infeasible: 1e-7,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            adaptive_rho: true,
            polish: true,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_abs >= 0.0
            && self.eps_rel >= 0.0
            && self.eps_abs + self.eps_rel > 0.0
            && self.max_iter > 0
            && self.rho > 0.0
            && self.sigma > 0.0
            && self.alpha > 0.0
            && self.alpha < 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Value(format!("invalid QP settings: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

/// Stationarity `||Px + q + A'y||`, bound violation, and `max |y_i| * slack_i`
/// against the side selected by the sign of `y_i`.
pub fn kkt_residuals(qp: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
    let stationarity = (&qp.p * x + &qp.q + qp.a.tr_mul(y)).amax();
    let ax = &qp.a * x;
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..ax.len() {
        primal = primal.max(qp.l[i] - ax[i]).max(ax[i] - qp.u[i]);
        let slack = if y[i] > 0.0 {
            qp.u[i] - ax[i]
        } else if y[i] < 0.0 {
            ax[i] - qp.l[i]
        } else {
            0.0
        };
        let c = if slack.is_finite() { y[i].abs() * slack.abs() } else { y[i].abs() };
        complementarity = complementarity.max(c);
    }
    KktResiduals { stationarity, primal: primal.max(0.0), complementarity }
}

/// Solver-agnostic interface used by the convex-concave driver.
pub trait QpBackend {
    fn solve(&mut self, qp: &QpProblem, warm: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<QpSolution>;
}

#[derive(Debug, Clone, Default)]
pub struct AdmmSolver {
    pub settings: QpSettings,
}

impl AdmmSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }
}

impl QpBackend for AdmmSolver {
    fn solve(&mut self, qp: &QpProblem, warm: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<QpSolution> {
        solve_qp(qp, &self.settings, warm)
    }
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 50;
/// Past this many iterations polishing is attempted regardless of residuals.
const STALL_ITERS: usize = 1000;

struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn clip_scale(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.clamp(1e-4, 1e4)
    }
}

fn equilibrate(qp: &QpProblem, iters: usize) -> Scaled {
    let (n, m) = (qp.num_vars(), qp.num_rows());
    let mut p = qp.p.clone();
    let mut q = qp.q.clone();
    let mut a = qp.a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0;
    for _ in 0..iters {
        let dd = DVector::from_fn(n, |j, _| {
            let col = p.column(j).amax().max(if m > 0 { a.column(j).amax() } else { 0.0 });
            1.0 / clip_scale(col).sqrt()
        });
        let de = DVector::from_fn(m, |i, _| 1.0 / clip_scale(a.row(i).amax()).sqrt());
        for j in 0..n {
            p.column_mut(j).scale_mut(dd[j]);
            a.column_mut(j).scale_mut(dd[j]);
        }
        for i in 0..n {
            p.row_mut(i).scale_mut(dd[i]);
        }
        for i in 0..m {
            a.row_mut(i).scale_mut(de[i]);
        }
        q.component_mul_assign(&dd);
        d.component_mul_assign(&dd);
        e.component_mul_assign(&de);

        let mean_col = if n > 0 { (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64 } else { 0.0 };
        let gamma = 1.0 / clip_scale(mean_col.max(q.amax()));
        p *= gamma;
        q *= gamma;
        c *= gamma;
    }
    let l = qp.l.component_mul(&e);
    let u = qp.u.component_mul(&e);
    Scaled { p, q, a, l, u, d, e, c }
}

fn row_rhos(l: &DVector<f64>, u: &DVector<f64>, rho: f64) -> DVector<f64> {
    DVector::from_fn(l.len(), |i, _| {
        if l[i] == f64::NEG_INFINITY && u[i] == f64::INFINITY {
            RHO_MIN
        } else if u[i] - l[i] < 1e-4 {
            (RHO_EQ_FACTOR * rho).min(RHO_MAX)
        } else {
            rho
        }
    })
}

fn factor(s: &Scaled, sigma: f64, rho: &DVector<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = s.q.len();
    let mut ra = s.a.clone();
    for i in 0..ra.nrows() {
        ra.row_mut(i).scale_mut(rho[i]);
    }
    let k = &s.p + DMatrix::identity(n, n) * sigma + s.a.tr_mul(&ra);
    k.cholesky().ok_or(Error::NumericalBreakdown)
}

/// Solves `qp`; `warm` is an optional `(x, y)` starting pair.
pub fn solve_qp(qp: &QpProblem, cfg: &QpSettings, warm: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<QpSolution> {
    cfg.validate()?;
    let (n, m) = (qp.num_vars(), qp.num_rows());
    let s = equilibrate(qp, cfg.scaling_iters);
    let mut rho_base = cfg.rho;
    let mut rho = row_rhos(&s.l, &s.u, rho_base);
    let mut chol = factor(&s, cfg.sigma, &rho)?;

    let (mut x, mut y) = match warm {
        Some((x0, y0)) if x0.len() == n && y0.len() == m => {
            (x0.component_div(&s.d), y0.component_div(&s.e) * s.c)
        }
        _ => (DVector::zeros(n), DVector::zeros(m)),
    };
    let mut z = (&s.a * &x).zip_zip_map(&s.l, &s.u, |v, lo, hi| v.clamp(lo, hi));

    let unscale = |x: &DVector<f64>, y: &DVector<f64>| (x.component_mul(&s.d), y.component_mul(&s.e) / s.c);
    let mut last = (f64::INFINITY, f64::INFINITY);

    for iter in 1..=cfg.max_iter {
        let rhs = &x * cfg.sigma - &s.q + s.a.tr_mul(&(rho.component_mul(&z) - &y));
        let xt = chol.solve(&rhs);
        let zt = &s.a * &xt;
        let x_new = &xt * cfg.alpha + &x * (1.0 - cfg.alpha);
        let zr = &zt * cfg.alpha + &z * (1.0 - cfg.alpha);
        let z_new = (&zr + y.component_div(&rho)).zip_zip_map(&s.l, &s.u, |v, lo, hi| v.clamp(lo, hi));
        let y_new = &y + rho.component_mul(&(&zr - &z_new));

        let dx = &x_new - &x;
        let dy = &y_new - &y;
        x = x_new;
        y = y_new;
        z = z_new;
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::NumericalBreakdown);
        }

        if iter % CHECK_EVERY != 0 && iter != cfg.max_iter {
            continue;
        }
        let r = residuals(&s, &x, &y, &z, cfg);
        last = (r.prim, r.dual);
        if r.prim <= r.eps_prim && r.dual <= r.eps_dual {
            let (xu, yu) = unscale(&x, &y);
            if cfg.polish {
                if let Some(sol) = polish(qp, &xu, &yu, cfg, iter) {
                    return Ok(sol);
                }
            }
            return Ok(QpSolution {
                x: xu,
                y: yu,
                status: QpStatus::Optimal,
                primal_res: r.prim,
                dual_res: r.dual,
                iterations: iter,
                polished: false,
            });
        }
        let close = r.prim <= 1e-3 * (1.0 + r.prim_scale) && r.dual <= 1e-3 * (1.0 + r.dual_scale);
        if cfg.polish && iter % (5 * CHECK_EVERY) == 0 && (close || iter >= STALL_ITERS) {
            let (xu, yu) = unscale(&x, &y);
            if let Some(sol) = polish(qp, &xu, &yu, cfg, iter) {
                return Ok(sol);
            }
        }
        if primal_infeasible(qp, &s, &dy, cfg.eps_infeasible) {
            let (xu, yu) = unscale(&x, &dy);
            return Ok(QpSolution {
                x: xu,
                y: yu,
                status: QpStatus::PrimalInfeasible,
                primal_res: r.prim,
                dual_res: r.dual,
                iterations: iter,
                polished: false,
            });
        }
        if dual_infeasible(qp, &s, &dx, cfg.eps_infeasible) {
            let (xu, yu) = unscale(&dx, &y);
            return Ok(QpSolution {
                x: xu,
                y: yu,
                status: QpStatus::DualInfeasible,
                primal_res: r.prim,
                dual_res: r.dual,
                iterations: iter,
                polished: false,
            });
        }
        if cfg.adaptive_rho && iter % ADAPT_EVERY == 0 && m > 0 {
            let ratio = ((r.prim / (r.prim_scale + 1e-30)) / (r.dual / (r.dual_scale + 1e-30)).max(1e-30)).sqrt();
            let new_rho = (rho_base * ratio).clamp(RHO_MIN, RHO_MAX);
            if new_rho.is_finite() && (new_rho > 5.0 * rho_base || new_rho < 0.2 * rho_base) {
                rho_base = new_rho;
                rho = row_rhos(&s.l, &s.u, rho_base);
                chol = factor(&s, cfg.sigma, &rho)?;
            }
        }
    }

    let (xu, yu) = unscale(&x, &y);
    if cfg.polish {
        if let Some(sol) = polish(qp, &xu, &yu, cfg, cfg.max_iter) {
            return Ok(sol);
        }
    }
    Ok(QpSolution {
        x: xu,
        y: yu,
        status: QpStatus::MaxIter,
        primal_res: last.0,
        dual_res: last.1,
        iterations: cfg.max_iter,
        polished: false,
    })
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
    prim_scale: f64,
    dual_scale: f64,
}

fn residuals(s: &Scaled, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, cfg: &QpSettings) -> Residuals {
    let ax = (&s.a * x).component_div(&s.e);
    let zu = z.component_div(&s.e);
    let prim = if ax.is_empty() { 0.0 } else { (&ax - &zu).amax() };
    let px = (&s.p * x).component_div(&s.d) / s.c;
    let aty = s.a.tr_mul(y).component_div(&s.d) / s.c;
    let qu = s.q.component_div(&s.d) / s.c;
    let dual = (&px + &aty + &qu).amax();
    let prim_scale = if ax.is_empty() { 0.0 } else { ax.amax().max(zu.amax()) };
    let dual_scale = px.amax().max(aty.amax()).max(qu.amax());
    Residuals {
        prim,
        dual,
        eps_prim: cfg.eps_abs + cfg.eps_rel * prim_scale,
        eps_dual: cfg.eps_abs + cfg.eps_rel * dual_scale,
        prim_scale,
        dual_scale,
    }
}

fn primal_infeasible(qp: &QpProblem, s: &Scaled, dy_scaled: &DVector<f64>, eps: f64) -> bool {
    let dy = dy_scaled.component_mul(&s.e);
    let norm = dy.amax();
    if norm < 1e-12 {
        return false;
    }
    let at_dy = s.a.tr_mul(dy_scaled).component_div(&s.d);
    if at_dy.amax() > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        if dy[i] > 0.0 {
            if qp.u[i] == f64::INFINITY {
                return false;
            }
            support += qp.u[i] * dy[i];
        } else if dy[i] < 0.0 {
            if qp.l[i] == f64::NEG_INFINITY {
                return false;
            }
            support += qp.l[i] * dy[i];
        }
    }
    support < -eps * norm
}

fn dual_infeasible(qp: &QpProblem, s: &Scaled, dx_scaled: &DVector<f64>, eps: f64) -> bool {
    let dx = dx_scaled.component_mul(&s.d);
    let norm = dx.amax();
    if norm < 1e-12 {
        return false;
    }
    if (&qp.p * &dx).amax() > eps * norm || qp.q.dot(&dx) >= -eps * norm {
        return false;
    }
    let adx = &qp.a * &dx;
    (0..adx.len()).all(|i| {
        let lo_ok = qp.l[i] == f64::NEG_INFINITY || adx[i] >= -eps * norm;
        let hi_ok = qp.u[i] == f64::INFINITY || adx[i] <= eps * norm;
        lo_ok && hi_ok
    })
}

/// Solves the equality-constrained QP on the active set guessed from `(x, y)`,
/// then refines the set a few times by dropping rows whose multiplier has the
/// wrong sign and adding violated rows. Returns `None` unless the result meets
/// the tolerances with correct dual signs.
fn polish(qp: &QpProblem, x: &DVector<f64>, y: &DVector<f64>, cfg: &QpSettings, iterations: usize) -> Option<QpSolution> {
    let ax = &qp.a * x;
    // -1 lower, +1 upper, 2 equality, 0 inactive
    let mut side: Vec<i8> = (0..qp.num_rows())
        .map(|i| {
            if qp.u[i] - qp.l[i] < 1e-10 {
                2
            } else if qp.l[i].is_finite() && ax[i] - qp.l[i] < -y[i] {
                -1
            } else if qp.u[i].is_finite() && qp.u[i] - ax[i] < y[i] {
                1
            } else {
                0
            }
        })
        .collect();

    for _ in 0..POLISH_ROUNDS {
        let (xp, yp) = reduced_kkt_solve(qp, &side)?;
        let kkt_res = kkt_residuals(qp, &xp, &yp);
        let axp = &qp.a * &xp;
        let dual_scale = (&qp.p * &xp).amax().max(qp.a.tr_mul(&yp).amax()).max(qp.q.amax());
        let eps_dual = cfg.eps_abs + cfg.eps_rel * dual_scale;
        // per-row primal tolerance, so rows of small magnitude are held tightly
        let row_tol = |i: usize| {
            let bound = [qp.l[i], qp.u[i]].into_iter().filter(|b| b.is_finite()).fold(0.0, |m: f64, b| m.max(b.abs()));
            cfg.eps_abs + cfg.eps_rel * axp[i].abs().max(bound)
        };

        let mut changed = false;
        let mut feasible = true;
        for i in 0..side.len() {
            let wrong_sign = match side[i] {
                1 => yp[i] < -eps_dual,
                -1 => yp[i] > eps_dual,
                _ => false,
            };
            let tol = row_tol(i);
            if wrong_sign {
                side[i] = 0;
                changed = true;
            } else if axp[i] > qp.u[i] + tol {
                feasible = false;
                if side[i] == 0 {
                    side[i] = 1;
                    changed = true;
                }
            } else if axp[i] < qp.l[i] - tol {
                feasible = false;
                if side[i] == 0 {
                    side[i] = -1;
                    changed = true;
                }
            }
        }
        if !changed && feasible && kkt_res.stationarity <= eps_dual {
            return Some(QpSolution {
                x: xp,
                y: yp,
                status: QpStatus::Optimal,
                primal_res: kkt_res.primal,
                dual_res: kkt_res.stationarity,
                iterations,
                polished: true,
            });
        }
        if !changed {
            return None;
        }
    }
    None
}

const POLISH_ROUNDS: usize = 25;

/// Regularized KKT solve with the rows marked in `side` held at their bounds,
/// followed by iterative refinement against the exact system.
fn reduced_kkt_solve(qp: &QpProblem, side: &[i8]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.num_vars();
    let active: Vec<usize> = (0..side.len()).filter(|&i| side[i] != 0).collect();
    let k = active.len();
    let delta = 1e-9;
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&qp.q));
    for (r, &i) in active.iter().enumerate() {
        let row = qp.a.row(i);
        for j in 0..n {
            kkt[(n + r, j)] = row[j];
            kkt[(j, n + r)] = row[j];
        }
        rhs[n + r] = if side[i] == 1 { qp.u[i] } else { qp.l[i] };
    }
    let mut reg = kkt.clone();
    for j in 0..n {
        reg[(j, j)] += delta;
    }
    for r in 0..k {
        reg[(n + r, n + r)] -= delta;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..10 {
        let res = &rhs - &kkt * &sol;
        if res.amax() < 1e-14 * (1.0 + rhs.amax()) {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut yp = DVector::zeros(qp.num_rows());
    for (r, &i) in active.iter().enumerate() {
        yp[i] = sol[n + r];
    }
    Some((sol.rows(0, n).into_owned(), yp))
}
