//! Scalar disturbance laws and independent products of them.
//!
//! Every variant has a log-concave density (the point mass is the degenerate
//! limit), which is what makes the CDF of any weighted sum log-concave.

use num_complex::Complex64;
use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

/// Below this |z| the triangular ramp transform is summed as a power series.
const RAMP_SERIES_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarDistribution {
    Gaussian { mean: f64, stddev: f64 },
    /// `scale` is the mean of the law.
    Exponential { scale: f64 },
    Uniform { lo: f64, hi: f64 },
    Triangular { lo: f64, mode: f64, hi: f64 },
    /// Point mass, used for deterministic coordinates and known initial states.
    Constant { value: f64 },
}

impl ScalarDistribution {
    pub fn gaussian(mean: f64, stddev: f64) -> Result<Self> {
        Self::Gaussian { mean, stddev }.validated()
    }

    pub fn exponential(scale: f64) -> Result<Self> {
        Self::Exponential { scale }.validated()
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::Uniform { lo, hi }.validated()
    }

    pub fn triangular(lo: f64, mode: f64, hi: f64) -> Result<Self> {
        Self::Triangular { lo, mode, hi }.validated()
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::Constant { value }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Gaussian { mean, stddev } => mean.is_finite() && stddev.is_finite() && stddev > 0.0,
            Self::Exponential { scale } => scale.is_finite() && scale > 0.0,
            Self::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Self::Triangular { lo, mode, hi } => {
                lo.is_finite() && hi.is_finite() && lo < hi && lo <= mode && mode <= hi
            }
            Self::Constant { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Value(format!("invalid distribution parameters: {self:?}")))
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, Self::Constant { .. })
    }

    /// E[exp(j beta w)].
    pub fn cf(&self, beta: f64) -> Complex64 {
        match *self {
            Self::Gaussian { mean, stddev } => {
                Complex64::from_polar((-0.5 * stddev * stddev * beta * beta).exp(), mean * beta)
            }
            Self::Exponential { scale } => Complex64::new(1.0, -scale * beta).inv(),
            Self::Uniform { lo, hi } => {
                let half = 0.5 * beta * (hi - lo);
                let sinc = if half.abs() < 1e-8 { 1.0 - half * half / 6.0 } else { half.sin() / half };
                Complex64::from_polar(sinc, 0.5 * (lo + hi) * beta)
            }
            Self::Triangular { lo, mode, hi } => {
                // Mixture of a rising ramp on [lo, mode] and a falling ramp on [mode, hi].
                let left = mode - lo;
                let right = hi - mode;
                let body = ramp_cf(-beta * left) * left + ramp_cf(beta * right) * right;
                Complex64::from_polar(1.0, mode * beta) * body / (left + right)
            }
            Self::Constant { value } => Complex64::from_polar(1.0, value * beta),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Gaussian { mean, .. } => mean,
            Self::Exponential { scale } => scale,
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::Triangular { lo, mode, hi } => (lo + mode + hi) / 3.0,
            Self::Constant { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Gaussian { stddev, .. } => stddev * stddev,
            Self::Exponential { scale } => scale * scale,
            Self::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            Self::Triangular { lo, mode, hi } => {
                (lo * lo + hi * hi + mode * mode - lo * hi - lo * mode - hi * mode) / 18.0
            }
            Self::Constant { .. } => 0.0,
        }
    }

    pub fn moments(&self) -> (f64, f64) {
        (self.mean(), self.variance())
    }

    pub fn cdf_closed_form(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, stddev } => 0.5 * erfc(-(x - mean) / (stddev * SQRT_2)),
            Self::Exponential { scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x / scale).exp_m1()
                }
            }
            Self::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Self::Triangular { lo, mode, hi } => {
                if x <= lo {
                    0.0
                } else if x >= hi {
                    1.0
                } else if x <= mode {
                    (x - lo).powi(2) / ((hi - lo) * (mode - lo))
                } else {
                    1.0 - (hi - x).powi(2) / ((hi - lo) * (hi - mode))
                }
            }
            Self::Constant { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Density; zero for the point mass.
    pub fn pdf_closed_form(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, stddev } => {
                let z = (x - mean) / stddev;
                (-0.5 * z * z).exp() / (stddev * (2.0 * PI).sqrt())
            }
            Self::Exponential { scale } => {
                if x < 0.0 {
                    0.0
                } else {
                    (-x / scale).exp() / scale
                }
            }
            Self::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Self::Triangular { lo, mode, hi } => {
                if x < lo || x > hi {
                    0.0
                } else if x < mode {
                    2.0 * (x - lo) / ((hi - lo) * (mode - lo))
                } else if x > mode {
                    2.0 * (hi - x) / ((hi - lo) * (hi - mode))
                } else {
                    2.0 / (hi - lo)
                }
            }
            Self::Constant { .. } => 0.0,
        }
    }

    /// Closed-form quantile for u in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, stddev } => mean - stddev * SQRT_2 * erfc_inv(2.0 * u),
            Self::Exponential { scale } => -scale * (-u).ln_1p(),
            Self::Uniform { lo, hi } => lo + u * (hi - lo),
            Self::Triangular { lo, mode, hi } => {
                let split = (mode - lo) / (hi - lo);
                if u <= split {
                    lo + (u * (hi - lo) * (mode - lo)).sqrt()
                } else {
                    hi - ((1.0 - u) * (hi - lo) * (hi - mode)).sqrt()
                }
            }
            Self::Constant { value } => value,
        }
    }

    /// One draw by inverse transform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Constant { value } => value,
            _ => {
                let u: f64 = rng.sample(Open01);
                self.quantile(u)
            }
        }
    }
}

/// Normalized transform of a ramp density: `2 (1 + jz - e^{jz}) / z^2`.
fn ramp_cf(z: f64) -> Complex64 {
    if z.abs() < RAMP_SERIES_CUTOFF {
        // 2 * sum_{k>=0} (jz)^k / (k+2)!
        let jz = Complex64::new(0.0, z);
        let mut term = Complex64::new(0.5, 0.0);
        let mut sum = term;
        for k in 1..24 {
            term = term * jz / (k as f64 + 2.0);
            sum += term;
        }
        sum * 2.0
    } else {
        let e = Complex64::from_polar(1.0, z);
        (Complex64::new(1.0, z) - e) * (2.0 / (z * z))
    }
}

/// Ordered independent components of a stacked random vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceVector {
    components: Vec<ScalarDistribution>,
}

impl DisturbanceVector {
    pub fn new(components: Vec<ScalarDistribution>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Value("disturbance vector must have at least one component".into()));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(Self { components })
    }

    /// Repeats one per-step law vector over `steps` steps.
    pub fn iid(per_step: &[ScalarDistribution], steps: usize) -> Result<Self> {
        let components = (0..steps).flat_map(|_| per_step.iter().copied()).collect();
        Self::new(components)
    }

    /// Point masses at `values`.
    pub fn point_mass(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&value| ScalarDistribution::Constant { value }).collect())
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[ScalarDistribution] {
        &self.components
    }

    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(ScalarDistribution::mean).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.components.iter().map(ScalarDistribution::variance).collect()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (slot, c) in out.iter_mut().zip(&self.components) {
            *slot = c.sample(rng);
        }
    }

    pub fn all_gaussian(&self) -> std::result::Result<(), usize> {
        match self
            .components
            .iter()
            .position(|c| !matches!(c, ScalarDistribution::Gaussian { .. } | ScalarDistribution::Constant { .. }))
        {
            Some(i) => Err(i),
            None => Ok(()),
        }
    }
}
