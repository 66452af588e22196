//! Linear time-varying dynamics `x(k+1) = A(k) x(k) + B(k) u(k) + E(k) w(k)`,
//! their stacked horizon form `X = Abar x0 + H U + G W`, moments of `X`,
//! zero-order-hold discretization and the quadrotor hover linearization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::DisturbanceVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LtvSystem {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    e: Vec<DMatrix<f64>>,
}

impl LtvSystem {
    /// Full-state additive disturbance (`E = I`).
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = a.first().map_or(0, |m| m.nrows());
        let e = vec![DMatrix::identity(n, n); a.len()];
        Self::with_injection(a, b, e)
    }

    pub fn with_injection(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>, e: Vec<DMatrix<f64>>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::DimensionMismatch("horizon must be at least 1".into()));
        }
        if a.len() != b.len() || a.len() != e.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} A, {} B and {} E matrices",
                a.len(),
                b.len(),
                e.len()
            )));
        }
        let n = a[0].nrows();
        let m = b[0].ncols();
        let p = e[0].ncols();
        for k in 0..a.len() {
            if a[k].shape() != (n, n) || b[k].shape() != (n, m) || e[k].shape() != (n, p) {
                return Err(Error::DimensionMismatch(format!("step {k} has inconsistent matrix shapes")));
            }
        }
        Ok(Self { a, b, e })
    }

    /// Same matrices at every step.
    pub fn time_invariant(a: DMatrix<f64>, b: DMatrix<f64>, horizon: usize) -> Result<Self> {
        Self::new(vec![a; horizon], vec![b; horizon])
    }

    pub fn time_invariant_with_injection(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        e: DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        Self::with_injection(vec![a; horizon], vec![b; horizon], vec![e; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.e[0].ncols()
    }

    /// Steps the recursion; returns `[x(1); ...; x(N)]`.
    pub fn simulate(&self, x0: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, m, p, big_n) = (self.state_dim(), self.input_dim(), self.disturbance_dim(), self.horizon());
        if x0.len() != n || u.len() != m * big_n || w.len() != p * big_n {
            return Err(Error::DimensionMismatch("simulate inputs".into()));
        }
        let mut out = DVector::zeros(n * big_n);
        let mut x = x0.clone();
        for k in 0..big_n {
            x = &self.a[k] * &x + &self.b[k] * u.rows(k * m, m) + &self.e[k] * w.rows(k * p, p);
            out.rows_mut(k * n, n).copy_from(&x);
        }
        Ok(out)
    }
}

/// `X = Abar x0 + H U + G W` over the horizon, with `X = [x(1); ...; x(N)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub abar: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
}

pub fn stack(sys: &LtvSystem) -> StackedSystem {
    let (n, m, p, big_n) = (sys.state_dim(), sys.input_dim(), sys.disturbance_dim(), sys.horizon());
    let mut abar = DMatrix::zeros(n * big_n, n);
    let mut h = DMatrix::zeros(n * big_n, m * big_n);
    let mut g = DMatrix::zeros(n * big_n, p * big_n);

    let mut phi = DMatrix::<f64>::identity(n, n);
    for i in 0..big_n {
        phi = &sys.a[i] * &phi;
        abar.view_mut((i * n, 0), (n, n)).copy_from(&phi);
    }
    // block (i, k) = A(i) ... A(k+1) B(k), row block i holding x(i+1)
    for k in 0..big_n {
        let mut hb = sys.b[k].clone();
        let mut gb = sys.e[k].clone();
        for i in k..big_n {
            if i > k {
                hb = &sys.a[i] * &hb;
                gb = &sys.a[i] * &gb;
            }
            h.view_mut((i * n, k * m), (n, m)).copy_from(&hb);
            g.view_mut((i * n, k * p), (n, p)).copy_from(&gb);
        }
    }
    StackedSystem { abar, h, g, n, m, p, horizon: big_n }
}

impl StackedSystem {
    pub fn state_len(&self) -> usize {
        self.n * self.horizon
    }

    pub fn input_len(&self) -> usize {
        self.m * self.horizon
    }

    pub fn disturbance_len(&self) -> usize {
        self.p * self.horizon
    }

    /// `E[X] = Abar x0_mean + H U + G mu_W`.
    pub fn state_mean(&self, x0_mean: &DVector<f64>, u: &DVector<f64>, w: &DisturbanceVector) -> Result<DVector<f64>> {
        if x0_mean.len() != self.n || u.len() != self.input_len() || w.len() != self.disturbance_len() {
            return Err(Error::DimensionMismatch("state_mean inputs".into()));
        }
        Ok(&self.abar * x0_mean + &self.h * u + &self.g * DVector::from_vec(w.means()))
    }

    /// Covariance of `X` in factored form; `x0` adds `Abar C_x0 Abar^T` when random.
    pub fn covariance(&self, w: &DisturbanceVector, x0: Option<&DisturbanceVector>) -> Result<FactoredCovariance> {
        if w.len() != self.disturbance_len() {
            return Err(Error::DimensionMismatch("disturbance length".into()));
        }
        let sd_w: Vec<f64> = w.variances().iter().map(|v| v.sqrt()).collect();
        let mut factor = self.g.clone();
        for (j, s) in sd_w.iter().enumerate() {
            factor.column_mut(j).scale_mut(*s);
        }
        if let Some(x0) = x0 {
            if x0.len() != self.n {
                return Err(Error::DimensionMismatch("initial-state law length".into()));
            }
            let mut fx = self.abar.clone();
            for (j, v) in x0.variances().iter().enumerate() {
                fx.column_mut(j).scale_mut(v.sqrt());
            }
            let mut both = DMatrix::zeros(factor.nrows(), factor.ncols() + fx.ncols());
            both.columns_mut(0, fx.ncols()).copy_from(&fx);
            both.columns_mut(fx.ncols(), factor.ncols()).copy_from(&factor);
            factor = both;
        }
        Ok(FactoredCovariance { factor })
    }
}

/// `C = F F^T`, never formed densely.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredCovariance {
    pub factor: DMatrix<f64>,
}

impl FactoredCovariance {
    /// `q^T C q`.
    pub fn quad_form(&self, q: &DVector<f64>) -> f64 {
        (self.factor.tr_mul(q)).norm_squared()
    }

    /// `||C^{1/2} q||`.
    pub fn stddev_along(&self, q: &DVector<f64>) -> f64 {
        self.quad_form(q).sqrt()
    }

    /// `tr(diag(q_diag) C)`.
    pub fn weighted_trace(&self, q_diag: &DVector<f64>) -> f64 {
        self.factor.row_iter().zip(q_diag.iter()).map(|(row, w)| w * row.norm_squared()).sum()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

/// Zero-order-hold discretization via the exponential of `[[A, B], [0, 0]] * ts`.
pub fn zoh_discretize(ac: &DMatrix<f64>, bc: &DMatrix<f64>, ts: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = ac.nrows();
    let m = bc.ncols();
    if ac.ncols() != n || bc.nrows() != n {
        return Err(Error::DimensionMismatch("zoh_discretize shapes".into()));
    }
    if !(ts > 0.0) {
        return Err(Error::Value(format!("sampling time must be positive, got {ts}")));
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * ts));
    let e = aug.exp();
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    pub gravity: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self { mass: 0.478, ixx: 0.0117, iyy: 0.0117, izz: 0.00234, gravity: 9.81 }
    }
}

impl QuadrotorParams {
    pub fn hover_input(&self) -> [f64; 4] {
        [self.mass * self.gravity, 0.0, 0.0, 0.0]
    }
}

/// Rigid-body quadrotor, state `[p, p_dot, (phi, theta, psi), rates]`, input `[thrust, moments]`.
pub fn quadrotor_rhs(x: &[f64; 12], u: &[f64; 4], prm: &QuadrotorParams) -> [f64; 12] {
    let (phi, theta, psi) = (x[6], x[7], x[8]);
    let (dphi, dtheta, dpsi) = (x[9], x[10], x[11]);
    let thrust = u[0] / prm.mass;
    let mut dx = [0.0; 12];
    dx[..3].copy_from_slice(&x[3..6]);
    dx[3] = thrust * (psi.cos() * theta.sin() + theta.cos() * phi.sin() * psi.sin());
    dx[4] = thrust * (psi.sin() * theta.sin() - theta.cos() * phi.sin() * psi.cos());
    dx[5] = thrust * phi.cos() * theta.cos() - prm.gravity;
    dx[6..9].copy_from_slice(&x[9..12]);
    dx[9] = (prm.iyy - prm.izz) / prm.ixx * dtheta * dpsi + u[1] / prm.ixx;
    dx[10] = (prm.izz - prm.ixx) / prm.iyy * dphi * dpsi + u[2] / prm.iyy;
    dx[11] = (prm.ixx - prm.iyy) / prm.izz * dtheta * dphi + u[3] / prm.izz;
    dx
}

/// Jacobians of [`quadrotor_rhs`] at zero state and hover thrust.
pub fn linearize_quadrotor(prm: &QuadrotorParams) -> (DMatrix<f64>, DMatrix<f64>, [f64; 4]) {
    let g = prm.gravity;
    let mut a = DMatrix::zeros(12, 12);
    for i in 0..3 {
        a[(i, i + 3)] = 1.0;
        a[(i + 6, i + 9)] = 1.0;
    }
    a[(3, 7)] = g;
    a[(4, 6)] = -g;
    let mut b = DMatrix::zeros(12, 4);
    b[(5, 0)] = 1.0 / prm.mass;
    b[(9, 1)] = 1.0 / prm.ixx;
    b[(10, 2)] = 1.0 / prm.iyy;
    b[(11, 3)] = 1.0 / prm.izz;
    (a, b, prm.hover_input())
}

/// `[[1, ts], [0, 1]]`, `[ts^2 / 2; ts]`.
pub fn double_integrator(ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]), DMatrix::from_row_slice(2, 1, &[0.5 * ts * ts, ts]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::ScalarDistribution;

    #[test]
    fn one_step_identity_stack() {
        let sys = LtvSystem::time_invariant(DMatrix::identity(2, 2), DMatrix::identity(2, 2), 1).unwrap();
        let ss = stack(&sys);
        assert_eq!(ss.abar, DMatrix::identity(2, 2));
        assert_eq!(ss.h, DMatrix::identity(2, 2));
        assert_eq!(ss.g, DMatrix::identity(2, 2));
    }

    #[test]
    fn double_integrator_two_step_blocks() {
        let (a, b) = double_integrator(0.25);
        let ss = stack(&LtvSystem::time_invariant(a.clone(), b.clone(), 2).unwrap());
        assert_eq!(ss.h.view((0, 0), (2, 1)), b.view((0, 0), (2, 1)));
        assert_eq!(ss.h.view((0, 1), (2, 1)), DMatrix::zeros(2, 1));
        assert_eq!(ss.h.view((2, 0), (2, 1)), (&a * &b).view((0, 0), (2, 1)));
        assert_eq!(ss.h.view((2, 1), (2, 1)), b.view((0, 0), (2, 1)));
        assert_eq!(ss.abar.view((2, 0), (2, 2)), (&a * &a).view((0, 0), (2, 2)));
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let r = LtvSystem::new(vec![DMatrix::identity(2, 2)], vec![DMatrix::zeros(3, 1)]);
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn zoh_of_zero_dynamics() {
        let bc = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let (ad, bd) = zoh_discretize(&DMatrix::zeros(2, 2), &bc, 0.3).unwrap();
        assert!((ad - DMatrix::identity(2, 2)).norm() < 1e-15);
        assert!((bd - bc * 0.3).norm() < 1e-15);
    }

    #[test]
    fn zoh_double_integrator() {
        let ac = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let bc = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let (ad, bd) = zoh_discretize(&ac, &bc, 0.25).unwrap();
        let (a_ref, b_ref) = double_integrator(0.25);
        assert!((ad - a_ref).norm() < 1e-14);
        assert!((bd - &b_ref).norm() < 1e-14);
        assert!((b_ref[(0, 0)] - 0.03125).abs() < 1e-16);
    }

    #[test]
    fn hover_input_and_vertical_channel() {
        let prm = QuadrotorParams::default();
        let (_, b, hover) = linearize_quadrotor(&prm);
        assert!((hover[0] - 4.6892).abs() < 1e-3);
        assert!((b[(5, 0)] - 1.0 / 0.478).abs() < 1e-12);
        let x = [0.0; 12];
        assert!(quadrotor_rhs(&x, &hover, &prm)[5].abs() < 1e-12);
    }

    #[test]
    fn tr_qc_matches_columns() {
        let (a, b) = double_integrator(0.25);
        let ss = stack(&LtvSystem::time_invariant(a, b, 3).unwrap());
        let w = DisturbanceVector::iid(
            &[ScalarDistribution::exponential(2.0).unwrap(), ScalarDistribution::uniform(0.0, 1.0).unwrap()],
            3,
        )
        .unwrap();
        let cov = ss.covariance(&w, None).unwrap();
        let var = w.variances();
        let brute: f64 = (0..ss.g.ncols()).map(|j| var[j] * ss.g.column(j).norm_squared()).sum();
        let ones = DVector::from_element(6, 1.0);
        assert!((cov.weighted_trace(&ones) - brute).abs() < 1e-12);
        let dense = cov.dense();
        let q = DVector::from_fn(6, |i, _| i as f64 - 2.0);
        assert!((cov.quad_form(&q) - (q.transpose() * &dense * &q)[(0, 0)]).abs() < 1e-12);
    }
}
