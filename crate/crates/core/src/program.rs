//! Assembly of the optimization programs solved for a [`ProblemSpec`]:
//! the difference-of-convex program over `(U, t)` with `t_i = log(1 - delta_i)`,
//! the one-shot QP for Gaussian disturbances, and a Cantelli moment baseline.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::inversion::LinearFunctionalLaw;
use crate::problem::{InitialState, ProblemSpec};
use crate::pwa::{sandwich, Piece, PwaUnderapprox, SandwichOptions};
use crate::qp::QpProblem;
use crate::quadrature::QuadratureConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildOptions {
    pub quadrature: QuadratureConfig,
    pub sandwich: SandwichOptions,
    /// The PWA domain ends at the quantile `1 - upper_tail` when the input box allows more.
    pub upper_tail: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            quadrature: QuadratureConfig::default(),
            // log-CDF values carry quadrature noise well above 1e-12
            sandwich: SandwichOptions { concavity_tol: 1e-6, ..SandwichOptions::default() },
            upper_tail: 1e-9,
        }
    }
}

/// One chance-constrained row: `P(law <= d - hp . U) >= exp(t)`.
#[derive(Debug, Clone)]
pub struct DcRow {
    pub law: LinearFunctionalLaw,
    /// `H' p` for the row's coefficient vector `p`.
    pub hp: DVector<f64>,
    pub d: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    /// Underapproximation of `log CDF` on `[x_lo, x_hi]`, capped flat beyond `x_hi`.
    pub pwa: PwaUnderapprox,
}

/// Variables `[U; t]`; objective `1/2 U'PU + q'U + constant`.
#[derive(Debug, Clone)]
pub struct DcProgram {
    pub n_u: usize,
    pub rows: Vec<DcRow>,
    pub obj_p: DMatrix<f64>,
    pub obj_q: DVector<f64>,
    pub obj_const: f64,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    pub delta: f64,
}

impl DcProgram {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_vars(&self) -> usize {
        self.n_u + self.rows.len()
    }

    pub fn t_lower(&self) -> f64 {
        (1.0 - self.delta).ln()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.obj_p * u)) + self.obj_q.dot(u) + self.obj_const
    }

    /// Linear rows over `[U; t]` padded with `extra` trailing zero columns:
    /// input box, quantile floor, one row per PWA piece, and `t` bounds.
    pub fn linear_constraints(&self, extra: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let (nu, nr) = (self.n_u, self.rows.len());
        let pieces: usize = self.rows.iter().map(|r| r.pwa.len()).sum();
        let total = nu + nr + pieces + nr;
        let mut a = DMatrix::zeros(total, nu + nr + extra);
        let mut l = DVector::from_element(total, f64::NEG_INFINITY);
        let mut u = DVector::from_element(total, f64::INFINITY);
        let mut k = 0;
        for j in 0..nu {
            a[(k, j)] = 1.0;
            l[k] = self.u_lo[j];
            u[k] = self.u_hi[j];
            k += 1;
        }
        for row in &self.rows {
            a.view_mut((k, 0), (1, nu)).copy_from(&row.hp.transpose());
            u[k] = row.d - row.x_lo;
            k += 1;
        }
        for (i, row) in self.rows.iter().enumerate() {
            // t_i <= m (d - hp.U) + c
            for piece in row.pwa.pieces() {
                a.view_mut((k, 0), (1, nu)).copy_from(&(row.hp.transpose() * piece.slope));
                a[(k, nu + i)] = 1.0;
                u[k] = piece.slope * row.d + piece.intercept;
                k += 1;
            }
        }
        for i in 0..nr {
            a[(k, nu + i)] = 1.0;
            l[k] = self.t_lower();
            u[k] = 0.0;
            k += 1;
        }
        (a, l, u)
    }

    /// Diagnostic JSON: per-row constants and PWA pieces.
    pub fn dump_json(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "hp": r.hp.as_slice(),
                    "d": r.d,
                    "x_lo": r.x_lo,
                    "x_hi": r.x_hi,
                    "mean": r.law.mean(),
                    "stddev": r.law.stddev(),
                    "pieces": r.pwa.pieces(),
                })
            })
            .collect();
        serde_json::json!({
            "n_u": self.n_u,
            "delta": self.delta,
            "objective": {
                "p": self.obj_p.as_slice(),
                "q": self.obj_q.as_slice(),
                "constant": self.obj_const,
            },
            "u_lo": self.u_lo.as_slice(),
            "u_hi": self.u_hi.as_slice(),
            "rows": rows,
        })
    }
}

/// `1/2 U'PU + q'U + c` equal to the expected cost, with `c` holding `tr(QC)`.
pub fn quadratic_objective(spec: &ProblemSpec) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let h = &spec.system.h;
    let qh = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| spec.state_weights[i] * h[(i, j)]);
    let mut p = h.tr_mul(&qh) * 2.0;
    for j in 0..p.ncols() {
        p[(j, j)] += 2.0 * spec.input_weights[j];
    }
    let a = spec.free_offset();
    let qa = a.component_mul(&spec.state_weights);
    let q = h.tr_mul(&qa) * 2.0;
    let c = a.dot(&qa) + spec.covariance()?.weighted_trace(&spec.state_weights);
    Ok((p, q, c))
}

/// Smallest `hp . U` over the input box.
fn min_over_box(hp: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    hp.iter().zip(lo.iter().zip(hi.iter())).map(|(h, (l, u))| (h * l).min(h * u)).sum()
}

fn build_row(spec: &ProblemSpec, index: usize, opts: &BuildOptions) -> Result<DcRow> {
    let row = &spec.rows[index];
    let (law, d) = spec.row_law(row)?;
    let hp = spec.system.h.tr_mul(&row.coeffs);
    let quad = &opts.quadrature;
    let box_hi = d - min_over_box(&hp, &spec.input_lo, &spec.input_hi);

    if law.is_degenerate() {
        let x_lo = law.offset();
        if box_hi < x_lo {
            return Err(Error::RowInfeasible { row: index });
        }
        let pwa = PwaUnderapprox::affine(0.0, 0.0, (x_lo, box_hi.max(x_lo)));
        return Ok(DcRow { law, hp, d, x_lo, x_hi: box_hi, pwa });
    }

    let tol = 1e-10 * law.stddev().max(1e-300);
    let x_lo = law.inverse_cdf(spec.epsilon, quad, tol)?;
    let x_hi = box_hi.min(law.inverse_cdf(1.0 - opts.upper_tail, quad, tol)?);
    if x_hi <= x_lo {
        return Err(Error::RowInfeasible { row: index });
    }
    let mut pwa = sandwich(|x| law.log_cdf_and_grad(x, quad), x_lo, x_hi, spec.eta, &opts.sandwich)?;
    let top = law.cdf(x_hi, quad)?.ln();
    pwa.push_piece(Piece { slope: 0.0, intercept: top, left: x_hi, right: f64::INFINITY });
    Ok(DcRow { law, hp, d, x_lo, x_hi, pwa })
}

fn assemble(spec: &ProblemSpec, opts: &BuildOptions) -> Result<DcProgram> {
    spec.validate()?;
    let rows = (0..spec.num_rows())
        .into_par_iter()
        .map(|i| build_row(spec, i, opts))
        .collect::<Result<Vec<_>>>()?;
    let (obj_p, obj_q, obj_const) = quadratic_objective(spec)?;
    Ok(DcProgram {
        n_u: spec.system.input_len(),
        rows,
        obj_p,
        obj_q,
        obj_const,
        u_lo: spec.input_lo.clone(),
        u_hi: spec.input_hi.clone(),
        delta: spec.delta,
    })
}

/// DC program for a known initial state.
pub fn build_dc(spec: &ProblemSpec, opts: &BuildOptions) -> Result<DcProgram> {
    if !matches!(spec.initial_state, InitialState::Fixed(_)) {
        return Err(Error::Value("build_dc needs a fixed initial state".into()));
    }
    assemble(spec, opts)
}

/// DC program for a random initial state independent of the disturbance.
pub fn build_dc_random_x0(spec: &ProblemSpec, opts: &BuildOptions) -> Result<DcProgram> {
    if !matches!(spec.initial_state, InitialState::Random(_)) {
        return Err(Error::Value("build_dc_random_x0 needs a random initial state".into()));
    }
    assemble(spec, opts)
}

/// `z -> -Phi^{-1}(1 - z)` for the standard normal, with its derivative.
pub fn neg_normal_quantile(z: f64) -> (f64, f64) {
    let n = Normal::standard();
    let x = n.inverse_cdf(1.0 - z);
    (-x, 1.0 / n.pdf(x))
}

/// One-shot QP for Gaussian disturbances: variables `[U; delta]`.
#[derive(Debug, Clone)]
pub struct GaussianQp {
    pub qp: QpProblem,
    pub n_u: usize,
    pub pwa: PwaUnderapprox,
    /// `||C^{1/2} p_i||` per row.
    pub sigmas: Vec<f64>,
    pub obj_const: f64,
}

pub fn build_gaussian_qp(spec: &ProblemSpec, delta_lb: f64) -> Result<GaussianQp> {
    spec.validate()?;
    spec.disturbance.all_gaussian().map_err(Error::NotGaussian)?;
    if let InitialState::Random(x0) = &spec.initial_state {
        x0.all_gaussian().map_err(Error::NotGaussian)?;
    }
    if spec.delta > 0.5 {
        return Err(Error::DeltaTooLarge(spec.delta));
    }
    if !(delta_lb > 0.0 && delta_lb < spec.delta) {
        return Err(Error::Value(format!("delta_lb must lie in (0, delta), got {delta_lb}")));
    }
    let pwa = sandwich(|z| Ok(neg_normal_quantile(z)), delta_lb, spec.delta, spec.eta, &SandwichOptions::default())?;

    let (nu, nr) = (spec.system.input_len(), spec.num_rows());
    let cov = spec.covariance()?;
    let mean0 = &spec.system.abar * spec.initial_state.mean()
        + &spec.system.g * DVector::from_vec(spec.disturbance.means());
    let sigmas: Vec<f64> = spec.rows.iter().map(|r| cov.stddev_along(&r.coeffs)).collect();

    let total = nu + nr * pwa.len() + nr + 1;
    let mut a = DMatrix::zeros(total, nu + nr);
    let mut l = DVector::from_element(total, f64::NEG_INFINITY);
    let mut u = DVector::from_element(total, f64::INFINITY);
    let mut k = 0;
    for j in 0..nu {
        a[(k, j)] = 1.0;
        l[k] = spec.input_lo[j];
        u[k] = spec.input_hi[j];
        k += 1;
    }
    for (i, row) in spec.rows.iter().enumerate() {
        let hp = spec.system.h.tr_mul(&row.coeffs);
        let rhs = row.bound - row.coeffs.dot(&mean0);
        // hp.U - sigma (m delta + c) <= q - p.(Abar x0 + G mu_W)
        for piece in pwa.pieces() {
            a.view_mut((k, 0), (1, nu)).copy_from(&hp.transpose());
            a[(k, nu + i)] = -sigmas[i] * piece.slope;
            u[k] = rhs + sigmas[i] * piece.intercept;
            k += 1;
        }
    }
    for i in 0..nr {
        a[(k, nu + i)] = 1.0;
        l[k] = delta_lb;
        u[k] = spec.delta;
        k += 1;
    }
    for i in 0..nr {
        a[(k, nu + i)] = 1.0;
    }
    u[k] = spec.delta;

    let (p_u, q_u, obj_const) = quadratic_objective(spec)?;
    let mut p = DMatrix::zeros(nu + nr, nu + nr);
    p.view_mut((0, 0), (nu, nu)).copy_from(&p_u);
    let mut q = DVector::zeros(nu + nr);
    q.rows_mut(0, nu).copy_from(&q_u);
    Ok(GaussianQp { qp: QpProblem::new(p, q, a, l, u)?, n_u: nu, pwa, sigmas, obj_const })
}

/// Cantelli multiplier `sqrt((1 - d) / d)`.
pub fn cantelli_multiplier(delta: f64) -> f64 {
    ((1.0 - delta) / delta).sqrt()
}

/// Open-loop moment baseline over `U` with the fixed allocation `delta / L`.
#[derive(Debug, Clone)]
pub struct MomentQp {
    pub qp: QpProblem,
    pub obj_const: f64,
    pub multiplier: f64,
}

pub fn build_moment_baseline_qp(spec: &ProblemSpec) -> Result<MomentQp> {
    spec.validate()?;
    if spec.delta <= 0.0 {
        return Err(Error::Value("the moment baseline needs delta > 0".into()));
    }
    let (nu, nr) = (spec.system.input_len(), spec.num_rows());
    let kappa = cantelli_multiplier(spec.delta / nr as f64);
    let cov = spec.covariance()?;
    let mean0 = &spec.system.abar * spec.initial_state.mean()
        + &spec.system.g * DVector::from_vec(spec.disturbance.means());

    let mut a = DMatrix::zeros(nu + nr, nu);
    let mut l = DVector::from_element(nu + nr, f64::NEG_INFINITY);
    let mut u = DVector::from_element(nu + nr, f64::INFINITY);
    for j in 0..nu {
        a[(j, j)] = 1.0;
        l[j] = spec.input_lo[j];
        u[j] = spec.input_hi[j];
    }
    for (i, row) in spec.rows.iter().enumerate() {
        let hp = spec.system.h.tr_mul(&row.coeffs);
        let rhs = row.bound - row.coeffs.dot(&mean0) - kappa * cov.stddev_along(&row.coeffs);
        if rhs < min_over_box(&hp, &spec.input_lo, &spec.input_hi) {
            return Err(Error::RowInfeasible { row: i });
        }
        a.view_mut((nu + i, 0), (1, nu)).copy_from(&hp.transpose());
        u[nu + i] = rhs;
    }
    let (p, q, obj_const) = quadratic_objective(spec)?;
    Ok(MomentQp { qp: QpProblem::new(p, q, a, l, u)?, obj_const, multiplier: kappa })
}
