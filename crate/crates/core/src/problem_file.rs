//! JSON problem files: schema, defaults, canonical form and expansion into a
//! [`ProblemSpec`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ccp::CcpConfig;
use crate::distributions::{DisturbanceVector, ScalarDistribution};
use crate::dynamics::{double_integrator, linearize_quadrotor, stack, zoh_discretize, LtvSystem, QuadrotorParams};
use crate::error::{Error, Result};
use crate::problem::{InitialState, ProblemSpec, StateRow};
use crate::qp::QpSettings;
use crate::quadrature::QuadratureConfig;

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_DELTA_LB: f64 = 1e-6;

/// Scalar law literal. Exponentials take either `scale` (the mean) or `rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Gaussian {
        mean: f64,
        stddev: f64,
    },
    Exponential {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Triangular {
        lo: f64,
        mode: f64,
        hi: f64,
    },
    Constant {
        value: f64,
    },
}

impl DistributionSpec {
    pub fn to_distribution(&self) -> Result<ScalarDistribution> {
        match *self {
            Self::Gaussian { mean, stddev } => ScalarDistribution::gaussian(mean, stddev),
            Self::Exponential { scale: Some(s), rate: None } => ScalarDistribution::exponential(s),
            Self::Exponential { scale: None, rate: Some(r) } if r > 0.0 => ScalarDistribution::exponential(1.0 / r),
            Self::Exponential { scale: None, rate: Some(r) } => {
                Err(Error::Value(format!("exponential rate must be positive, got {r}")))
            }
            Self::Exponential { .. } => Err(Error::Value("exponential needs exactly one of scale or rate".into())),
            Self::Uniform { lo, hi } => ScalarDistribution::uniform(lo, hi),
            Self::Triangular { lo, mode, hi } => ScalarDistribution::triangular(lo, mode, hi),
            Self::Constant { value } => ScalarDistribution::constant(value),
        }
    }
}

impl From<ScalarDistribution> for DistributionSpec {
    fn from(d: ScalarDistribution) -> Self {
        match d {
            ScalarDistribution::Gaussian { mean, stddev } => Self::Gaussian { mean, stddev },
            ScalarDistribution::Exponential { scale } => Self::Exponential { scale: Some(scale), rate: None },
            ScalarDistribution::Uniform { lo, hi } => Self::Uniform { lo, hi },
            ScalarDistribution::Triangular { lo, mode, hi } => Self::Triangular { lo, mode, hi },
            ScalarDistribution::Constant { value } => Self::Constant { value },
        }
    }
}

fn laws(specs: &[DistributionSpec]) -> Result<Vec<ScalarDistribution>> {
    specs.iter().map(DistributionSpec::to_distribution).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    DoubleIntegrator {
        ts: f64,
    },
    /// Hover linearization; `U` is the deviation from the hover input and the
    /// disturbance enters the three position states.
    QuadrotorHover {
        ts: f64,
        #[serde(default)]
        params: QuadrotorParams,
    },
    /// Time-invariant `x(k+1) = A x(k) + B u(k) + E w(k)`, `E = I` when omitted.
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        e: Option<Vec<Vec<f64>>>,
    },
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::DimensionMismatch(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl SystemSpec {
    fn build(&self, horizon: usize) -> Result<LtvSystem> {
        match self {
            Self::DoubleIntegrator { ts } => {
                check_ts(*ts)?;
                let (a, b) = double_integrator(*ts);
                LtvSystem::time_invariant(a, b, horizon)
            }
            Self::QuadrotorHover { ts, params } => {
                check_ts(*ts)?;
                let (ac, bc, _) = linearize_quadrotor(params);
                let (a, b) = zoh_discretize(&ac, &bc, *ts)?;
                let mut e = DMatrix::zeros(12, 3);
                e.view_mut((0, 0), (3, 3)).fill_with_identity();
                LtvSystem::time_invariant_with_injection(a, b, e, horizon)
            }
            Self::Explicit { a, b, e } => {
                let a = matrix(a, "a")?;
                let b = matrix(b, "b")?;
                match e {
                    Some(e) => LtvSystem::time_invariant_with_injection(a, b, matrix(e, "e")?, horizon),
                    None => LtvSystem::time_invariant(a, b, horizon),
                }
            }
        }
    }

    /// Input offset added to `U` to obtain the physical input.
    pub fn input_offset(&self) -> Option<Vec<f64>> {
        match self {
            Self::QuadrotorHover { params, .. } => Some(params.hover_input().to_vec()),
            _ => None,
        }
    }
}

fn check_ts(ts: f64) -> Result<()> {
    if ts > 0.0 && ts.is_finite() {
        Ok(())
    } else {
        Err(Error::Value(format!("sampling time must be positive, got {ts}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStateSpec {
    Fixed(Vec<f64>),
    /// One law per state coordinate.
    Random(Vec<DistributionSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    /// The same per-step law at every step.
    Iid(Vec<DistributionSpec>),
    /// `first` for steps `k < at_step`, `second` afterwards (steps counted from 0).
    Switched { first: Vec<DistributionSpec>, second: Vec<DistributionSpec>, at_step: usize },
    /// All `p N` components in step-major order.
    Explicit(Vec<DistributionSpec>),
}

impl DisturbanceSpec {
    fn build(&self, p: usize, horizon: usize) -> Result<DisturbanceVector> {
        let per_step = |v: &[DistributionSpec]| -> Result<Vec<ScalarDistribution>> {
            if v.len() != p {
                return Err(Error::DimensionMismatch(format!("per-step disturbance has {} laws, expected {p}", v.len())));
            }
            laws(v)
        };
        match self {
            Self::Iid(v) => DisturbanceVector::iid(&per_step(v)?, horizon),
            Self::Switched { first, second, at_step } => {
                let (a, b) = (per_step(first)?, per_step(second)?);
                let all = (0..horizon).flat_map(|k| if k < *at_step { a.clone() } else { b.clone() }).collect();
                DisturbanceVector::new(all)
            }
            Self::Explicit(v) => {
                if v.len() != p * horizon {
                    return Err(Error::DimensionMismatch(format!(
                        "explicit disturbance has {} laws, expected {}",
                        v.len(),
                        p * horizon
                    )));
                }
                DisturbanceVector::new(laws(v)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DesiredSpec {
    /// `x_d(t) = slope * t' + intercept` with `t' = time_scale * t`, `t = 1..N`.
    Affine { slope: Vec<f64>, intercept: Vec<f64> },
    /// Piecewise-linear through `points`, spread uniformly over steps `1..N`;
    /// only the listed `states` are set, all others are zero.
    Waypoints { states: Vec<usize>, points: Vec<Vec<f64>> },
    Explicit(Vec<f64>),
}

impl DesiredSpec {
    fn build(&self, n: usize, horizon: usize, time_scale: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(n * horizon);
        match self {
            Self::Affine { slope, intercept } => {
                if slope.len() != n || intercept.len() != n {
                    return Err(Error::DimensionMismatch(format!("affine desired trajectory needs {n} slopes and intercepts")));
                }
                for t in 1..=horizon {
                    for i in 0..n {
                        out[(t - 1) * n + i] = slope[i] * t as f64 * time_scale + intercept[i];
                    }
                }
            }
            Self::Waypoints { states, points } => {
                if points.is_empty() || points.iter().any(|p| p.len() != states.len()) || states.iter().any(|&s| s >= n) {
                    return Err(Error::DimensionMismatch("waypoints must list one value per named state".into()));
                }
                let segments = (points.len() - 1) as f64;
                for t in 1..=horizon {
                    let frac = if horizon > 1 { (t - 1) as f64 / (horizon - 1) as f64 } else { 0.0 };
                    let pos = frac * segments;
                    let k = (pos.floor() as usize).min(points.len().saturating_sub(2));
                    let w = if points.len() > 1 { pos - k as f64 } else { 0.0 };
                    for (j, &s) in states.iter().enumerate() {
                        let a = points[k][j];
                        let b = points.get(k + 1).map_or(a, |p| p[j]);
                        out[(t - 1) * n + s] = a + w * (b - a);
                    }
                }
            }
            Self::Explicit(v) => {
                if v.len() != n * horizon {
                    return Err(Error::DimensionMismatch(format!("explicit desired trajectory needs {} entries", n * horizon)));
                }
                out.copy_from_slice(v);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RowSpec {
    /// `coeffs . x(t) <= bound + bound_slope * t'` for each listed step (all steps by default).
    PerStep {
        coeffs: Vec<f64>,
        bound: f64,
        #[serde(default)]
        bound_slope: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<Vec<usize>>,
    },
    /// `coeffs . X <= bound` over the stacked state.
    Stacked { coeffs: Vec<f64>, bound: f64 },
}

impl RowSpec {
    fn expand(&self, n: usize, horizon: usize, time_scale: f64, out: &mut Vec<StateRow>) -> Result<()> {
        match self {
            Self::PerStep { coeffs, bound, bound_slope, steps } => {
                if coeffs.len() != n {
                    return Err(Error::DimensionMismatch(format!("per-step row needs {n} coefficients")));
                }
                let all: Vec<usize> = (1..=horizon).collect();
                for &t in steps.as_deref().unwrap_or(&all) {
                    if t == 0 || t > horizon {
                        return Err(Error::Value(format!("row step {t} outside 1..={horizon}")));
                    }
                    let mut c = DVector::zeros(n * horizon);
                    c.rows_mut((t - 1) * n, n).copy_from_slice(coeffs);
                    out.push(StateRow { coeffs: c, bound: bound + bound_slope * t as f64 * time_scale, step: Some(t) });
                }
            }
            Self::Stacked { coeffs, bound } => {
                if coeffs.len() != n * horizon {
                    return Err(Error::DimensionMismatch(format!("stacked row needs {} coefficients", n * horizon)));
                }
                out.push(StateRow { coeffs: DVector::from_column_slice(coeffs), bound: *bound, step: None });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOverrides {
    pub qp: QpSettings,
    pub ccp: CcpConfig,
    pub quadrature: QuadratureConfig,
    /// Lower end of the per-row risk range in the Gaussian QP.
    pub delta_lb: Option<f64>,
}

impl SolverOverrides {
    pub fn delta_lb(&self) -> f64 {
        self.delta_lb.unwrap_or(DEFAULT_DELTA_LB)
    }
}

fn default_time_scale() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub system: SystemSpec,
    pub horizon: usize,
    /// Multiplies the step index wherever time enters (rows and affine targets).
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
    pub initial_state: InitialStateSpec,
    pub disturbance: DisturbanceSpec,
    /// Per-step diagonal of `Q` (length `n`) or the full stacked diagonal.
    pub state_weights: Vec<f64>,
    /// Per-step diagonal of `R` (length `m`) or the full stacked diagonal.
    pub input_weights: Vec<f64>,
    pub desired: DesiredSpec,
    pub input_box: InputBox,
    pub constraints: Vec<RowSpec>,
    pub delta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub solver: SolverOverrides,
}

fn broadcast(v: &[f64], per_step: usize, horizon: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() == per_step {
        Ok(DVector::from_iterator(per_step * horizon, (0..horizon).flat_map(|_| v.iter().copied())))
    } else if v.len() == per_step * horizon {
        Ok(DVector::from_column_slice(v))
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what} has length {}, expected {per_step} or {}",
            v.len(),
            per_step * horizon
        )))
    }
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Schema { path, reason: e.into_inner().to_string() }
        })
    }

    /// Pretty JSON with every default written out.
    pub fn canonical(&self) -> String {
        let mut out = self.clone();
        out.solver.delta_lb = Some(self.solver.delta_lb());
        serde_json::to_string_pretty(&out).expect("problem files serialize")
    }

    pub fn build(&self) -> Result<ProblemSpec> {
        let horizon = self.horizon;
        if horizon == 0 {
            return Err(Error::Value("horizon must be at least 1".into()));
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(Error::Value(format!("time_scale must be positive, got {}", self.time_scale)));
        }
        self.solver.qp.validate()?;
        self.solver.ccp.validate()?;
        let sys = self.system.build(horizon)?;
        let (n, m, p) = (sys.state_dim(), sys.input_dim(), sys.disturbance_dim());
        let system = stack(&sys);
        let disturbance = self.disturbance.build(p, horizon)?;
        let initial_state = match &self.initial_state {
            InitialStateSpec::Fixed(x) => InitialState::Fixed(DVector::from_column_slice(x)),
            InitialStateSpec::Random(v) => InitialState::Random(DisturbanceVector::new(laws(v)?)?),
        };
        let mut rows = Vec::new();
        for r in &self.constraints {
            r.expand(n, horizon, self.time_scale, &mut rows)?;
        }
        let spec = ProblemSpec {
            system,
            disturbance,
            initial_state,
            state_weights: broadcast(&self.state_weights, n, horizon, "state_weights")?,
            input_weights: broadcast(&self.input_weights, m, horizon, "input_weights")?,
            desired: self.desired.build(n, horizon, self.time_scale)?,
            input_lo: broadcast(&self.input_box.lo, m, horizon, "input_box.lo")?,
            input_hi: broadcast(&self.input_box.hi, m, horizon, "input_box.hi")?,
            rows,
            delta: self.delta,
            epsilon: self.epsilon,
            eta: self.eta,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Parses and validates a problem file, returning the problem and its solver overrides.
pub fn parse_problem(text: &str) -> Result<(ProblemSpec, SolverOverrides)> {
    let file = ProblemFile::from_json(text)?;
    Ok((file.build()?, file.solver))
}
