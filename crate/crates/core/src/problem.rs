//! Stochastic optimal control problem data and the exact evaluation of a
//! candidate open-loop input: expected cost and per-row constraint probabilities.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::DisturbanceVector;
use crate::dynamics::{FactoredCovariance, StackedSystem};
use crate::error::{Error, Result};
use crate::inversion::LinearFunctionalLaw;
use crate::quadrature::QuadratureConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Fixed(DVector<f64>),
    /// Independent of the disturbance.
    Random(DisturbanceVector),
}

impl InitialState {
    pub fn mean(&self) -> DVector<f64> {
        match self {
            Self::Fixed(x) => x.clone(),
            Self::Random(law) => DVector::from_vec(law.means()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Fixed(x) => x.len(),
            Self::Random(law) => law.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Half-space `coeffs . X <= bound` on the stacked state `X = [x(1); ...; x(N)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRow {
    pub coeffs: DVector<f64>,
    pub bound: f64,
    /// Time step the row constrains, when it touches a single step.
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub system: StackedSystem,
    pub disturbance: DisturbanceVector,
    pub initial_state: InitialState,
    /// Diagonal of `Q` over the stacked state.
    pub state_weights: DVector<f64>,
    /// Diagonal of `R` over the stacked input.
    pub input_weights: DVector<f64>,
    pub desired: DVector<f64>,
    pub input_lo: DVector<f64>,
    pub input_hi: DVector<f64>,
    pub rows: Vec<StateRow>,
    pub delta: f64,
    pub epsilon: f64,
    pub eta: f64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        let ss = &self.system;
        let (nx, nu, nw) = (ss.state_len(), ss.input_len(), ss.disturbance_len());
        let dims = [
            ("disturbance", self.disturbance.len(), nw),
            ("initial state", self.initial_state.len(), ss.n),
            ("state weights", self.state_weights.len(), nx),
            ("input weights", self.input_weights.len(), nu),
            ("desired trajectory", self.desired.len(), nx),
            ("input lower bounds", self.input_lo.len(), nu),
            ("input upper bounds", self.input_hi.len(), nu),
        ];
        for (what, got, want) in dims {
            if got != want {
                return Err(Error::DimensionMismatch(format!("{what}: length {got}, expected {want}")));
            }
        }
        if self.rows.is_empty() {
            return Err(Error::Value("at least one state constraint row is required".into()));
        }
        if let Some(i) = self.rows.iter().position(|r| r.coeffs.len() != nx || !r.bound.is_finite()) {
            return Err(Error::DimensionMismatch(format!("constraint row {i} does not match the stacked state")));
        }
        if self.state_weights.iter().any(|&w| w < 0.0) || self.input_weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Value("state weights must be >= 0 and input weights > 0".into()));
        }
        if (0..nu).any(|k| !(self.input_lo[k] <= self.input_hi[k])) {
            return Err(Error::Value("input box has lo > hi".into()));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Value(format!("delta must lie in [0, 1), got {}", self.delta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0 - self.delta) {
            return Err(Error::Value(format!("epsilon must lie in (0, 1 - delta], got {}", self.epsilon)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Value(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Copy with a point-mass initial law at the given state.
    pub fn with_point_mass_initial_state(&self, x0: &DVector<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.initial_state = InitialState::Random(DisturbanceVector::point_mass(x0.as_slice())?);
        Ok(out)
    }

    pub fn covariance(&self) -> Result<FactoredCovariance> {
        let x0 = match &self.initial_state {
            InitialState::Fixed(_) => None,
            InitialState::Random(law) => Some(law),
        };
        self.system.covariance(&self.disturbance, x0)
    }

    /// Mean of the stacked state under input `u`.
    pub fn state_mean(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.system.state_mean(&self.initial_state.mean(), u, &self.disturbance)
    }

    /// `E[X] - X_d` at `U = 0`.
    pub fn free_offset(&self) -> DVector<f64> {
        let ss = &self.system;
        &ss.abar * self.initial_state.mean() + &ss.g * DVector::from_vec(self.disturbance.means()) - &self.desired
    }

    /// Law of `coeffs . X` at `U = 0`, together with the constant `q` it is compared against.
    pub fn row_law(&self, row: &StateRow) -> Result<(LinearFunctionalLaw, f64)> {
        let ss = &self.system;
        let gw = ss.g.tr_mul(&row.coeffs);
        match &self.initial_state {
            InitialState::Fixed(x0) => {
                let law = LinearFunctionalLaw::new(gw.as_slice(), &self.disturbance)?;
                Ok((law, row.bound - row.coeffs.dot(&(&ss.abar * x0))))
            }
            InitialState::Random(x0) => {
                let aw = ss.abar.tr_mul(&row.coeffs);
                let law = LinearFunctionalLaw::with_initial_state(aw.as_slice(), x0, gw.as_slice(), &self.disturbance)?;
                Ok((law, row.bound))
            }
        }
    }
}

/// Expected cost `E[(X - X_d)' Q (X - X_d)] + U' R U`.
pub fn objective_value(spec: &ProblemSpec, u: &DVector<f64>) -> Result<f64> {
    if u.len() != spec.system.input_len() {
        return Err(Error::DimensionMismatch(format!("U has length {}, expected {}", u.len(), spec.system.input_len())));
    }
    let err = spec.state_mean(u)? - &spec.desired;
    let track: f64 = err.iter().zip(spec.state_weights.iter()).map(|(e, w)| w * e * e).sum();
    let effort: f64 = u.iter().zip(spec.input_weights.iter()).map(|(v, r)| r * v * v).sum();
    Ok(track + effort + spec.covariance()?.weighted_trace(&spec.state_weights))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// `P(row i holds)` for each row.
    pub phi: Vec<f64>,
    /// `1 - phi`, the tightest risk allocation.
    pub delta: Vec<f64>,
    pub total_risk: f64,
    pub satisfied: bool,
    /// Row with the largest violation probability.
    pub worst_row: usize,
}

/// Evaluates every row's probability exactly and checks `sum(1 - phi) <= delta`.
pub fn verify_feasibility(spec: &ProblemSpec, u: &DVector<f64>, quad: &QuadratureConfig) -> Result<FeasibilityReport> {
    if u.len() != spec.system.input_len() {
        return Err(Error::DimensionMismatch(format!("U has length {}, expected {}", u.len(), spec.system.input_len())));
    }
    let hu = &spec.system.h * u;
    let phi = spec
        .rows
        .par_iter()
        .map(|row| {
            let (law, d) = spec.row_law(row)?;
            law.cdf(d - row.coeffs.dot(&hu), quad)
        })
        .collect::<Result<Vec<f64>>>()?;
    let delta: Vec<f64> = phi.iter().map(|p| 1.0 - p).collect();
    let total_risk: f64 = delta.iter().sum();
    let worst_row = delta
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(FeasibilityReport { satisfied: total_risk <= spec.delta, phi, delta, total_risk, worst_row })
}
