//! CDF, density and quantiles of weighted sums of independent scalar laws,
//! evaluated from the characteristic function by one-dimensional inversion.
//!
//! The CDF uses the Gil-Pelaez form
//!
//! ```text
//! F(s) = 1/2 - (1/pi) * int_0^inf Im(exp(-j b s) Psi(b)) / b db
//! ```
//!
//! and the density `f(s) = (1/pi) * int_0^inf Re(exp(-j b s) Psi(b)) db`.
//!
//! Laws built only from exponential, uniform and triangular components have
//! characteristic functions that decay algebraically, which makes plain
//! truncation hopeless near density jumps and kinks. For those laws the
//! integrand beyond a cutoff `B` is split into terms `exp(j w b) g(b)` with `g`
//! rational, and each term is integrated along a ray rotated into the half
//! plane where `exp(j w b)` decays. Laws with a Gaussian component decay fast
//! enough that truncation suffices.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::distributions::{DisturbanceVector, ScalarDistribution};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_half_line, integrate_panels, QuadratureConfig};

/// Maximum number of rational terms kept in a tail expansion.
const MAX_TAIL_TERMS: usize = 256;

/// One term `coef * b^{-power} * prod_p 1/(1 - j a_p b)` oscillating as `exp(j freq b)`.
#[derive(Debug, Clone)]
struct TailTerm {
    freq: f64,
    coef: Complex64,
    power: i32,
    poles: Vec<f64>,
}

impl TailTerm {
    fn eval(&self, beta: Complex64) -> Complex64 {
        let mut v = self.coef * beta.powi(-self.power);
        for &a in &self.poles {
            v /= Complex64::new(1.0, 0.0) - Complex64::new(0.0, a) * beta;
        }
        v
    }

    fn times(&self, other: &TailTerm) -> TailTerm {
        let mut poles = self.poles.clone();
        poles.extend_from_slice(&other.poles);
        TailTerm {
            freq: self.freq + other.freq,
            coef: self.coef * other.coef,
            power: self.power + other.power,
            poles,
        }
    }
}

#[derive(Debug, Clone)]
struct TailExpansion {
    terms: Vec<TailTerm>,
    /// Below this frequency the terms cancel heavily and the expansion is not used.
    min_cutoff: f64,
}

impl TailExpansion {
    fn build(terms: &[(f64, ScalarDistribution)]) -> Option<Self> {
        let mut acc = vec![TailTerm { freq: 0.0, coef: Complex64::new(1.0, 0.0), power: 0, poles: vec![] }];
        let mut min_cutoff: f64 = 0.0;
        for &(w, d) in terms {
            let (parts, cutoff) = component_terms(w, &d)?;
            min_cutoff = min_cutoff.max(cutoff);
            if acc.len() * parts.len() > MAX_TAIL_TERMS {
                return None;
            }
            acc = acc.iter().flat_map(|a| parts.iter().map(move |p| a.times(p))).collect();
        }
        Some(Self { terms: acc, min_cutoff })
    }
}

/// Exact split of one weighted component's CF, plus the frequency above which
/// the split is numerically safe.
fn component_terms(w: f64, d: &ScalarDistribution) -> Option<(Vec<TailTerm>, f64)> {
    let j = Complex64::new(0.0, 1.0);
    let term = |freq: f64, coef: Complex64, power: i32| TailTerm { freq, coef, power, poles: vec![] };
    match *d {
        ScalarDistribution::Gaussian { .. } | ScalarDistribution::Constant { .. } => None,
        ScalarDistribution::Exponential { scale } => {
            Some((vec![TailTerm { freq: 0.0, coef: Complex64::new(1.0, 0.0), power: 0, poles: vec![scale * w] }], 0.0))
        }
        ScalarDistribution::Uniform { lo, hi } => {
            let width = hi - lo;
            let c = (j * w * width).inv();
            Some((vec![term(w * hi, c, 1), term(w * lo, -c, 1)], 4.0 / (w.abs() * width)))
        }
        ScalarDistribution::Triangular { lo, mode, hi } => {
            let left = mode - lo;
            let right = hi - mode;
            let w2 = w * w;
            if left > 0.0 && right > 0.0 {
                let terms = vec![
                    term(w * mode, Complex64::from(2.0 / (left * right * w2)), 2),
                    term(w * lo, Complex64::from(-2.0 / (left * (left + right) * w2)), 2),
                    term(w * hi, Complex64::from(-2.0 / (right * (left + right) * w2)), 2),
                ];
                Some((terms, 4.0 / (w.abs() * left.min(right))))
            } else if right > 0.0 {
                let terms = vec![
                    term(w * mode, Complex64::from(2.0 / (right * right * w2)), 2),
                    term(w * mode, j * (2.0 / (right * w)), 1),
                    term(w * hi, Complex64::from(-2.0 / (right * right * w2)), 2),
                ];
                Some((terms, 4.0 / (w.abs() * right)))
            } else {
                let terms = vec![
                    term(w * mode, Complex64::from(2.0 / (left * left * w2)), 2),
                    term(w * mode, -j * (2.0 / (left * w)), 1),
                    term(w * lo, Complex64::from(-2.0 / (left * left * w2)), 2),
                ];
                Some((terms, 4.0 / (w.abs() * left)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    /// Im of the integral against an extra 1/b (CDF).
    Cdf,
    /// Re of the integral (density).
    Pdf,
}

/// Law of `offset + sum_k weight_k * X_k` with independent `X_k`.
#[derive(Debug, Clone)]
pub struct LinearFunctionalLaw {
    terms: Vec<(f64, ScalarDistribution)>,
    offset: f64,
    mean: f64,
    stddev: f64,
    tail: Option<TailExpansion>,
}

impl LinearFunctionalLaw {
    /// Law of `weights . W`.
    pub fn new(weights: &[f64], disturbance: &DisturbanceVector) -> Result<Self> {
        if weights.len() != disturbance.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} disturbance components",
                weights.len(),
                disturbance.len()
            )));
        }
        Self::from_terms(weights.iter().copied().zip(disturbance.components().iter().copied()))
    }

    /// Law of `x0_weights . x0 + w_weights . W` for independent `x0` and `W`.
    pub fn with_initial_state(
        x0_weights: &[f64],
        initial_state: &DisturbanceVector,
        w_weights: &[f64],
        disturbance: &DisturbanceVector,
    ) -> Result<Self> {
        if x0_weights.len() != initial_state.len() || w_weights.len() != disturbance.len() {
            return Err(Error::DimensionMismatch("weight/law length mismatch".into()));
        }
        let x0 = x0_weights.iter().copied().zip(initial_state.components().iter().copied());
        let w = w_weights.iter().copied().zip(disturbance.components().iter().copied());
        Self::from_terms(x0.chain(w))
    }

    /// Zero weights are dropped and point masses fold into a constant offset.
    pub fn from_terms(terms: impl IntoIterator<Item = (f64, ScalarDistribution)>) -> Result<Self> {
        let mut kept = Vec::new();
        let mut offset = 0.0;
        let mut mean = 0.0;
        let mut var = 0.0;
        for (w, d) in terms {
            d.validate()?;
            if !w.is_finite() {
                return Err(Error::Value(format!("non-finite weight {w}")));
            }
            if w == 0.0 {
                continue;
            }
            if let ScalarDistribution::Constant { value } = d {
                offset += w * value;
                continue;
            }
            mean += w * d.mean();
            var += w * w * d.variance();
            kept.push((w, d));
        }
        let tail = if kept.is_empty() { None } else { TailExpansion::build(&kept) };
        Ok(Self { terms: kept, offset, mean: mean + offset, stddev: var.sqrt(), tail })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn is_degenerate(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[(f64, ScalarDistribution)] {
        &self.terms
    }

    /// Characteristic function of the random part (offset excluded).
    fn core_cf(&self, beta: f64) -> Complex64 {
        self.terms.iter().fold(Complex64::new(1.0, 0.0), |acc, (w, d)| acc * d.cf(w * beta))
    }

    /// E[exp(j beta L)].
    pub fn cf(&self, beta: f64) -> Complex64 {
        Complex64::from_polar(1.0, beta * self.offset) * self.core_cf(beta)
    }

    pub fn cdf(&self, s: f64, cfg: &QuadratureConfig) -> Result<f64> {
        if self.is_degenerate() {
            return Ok(if s >= self.offset { 1.0 } else { 0.0 });
        }
        let x = s - self.offset;
        let integral = self.invert(x, Part::Cdf, cfg)?;
        Ok((0.5 - integral / PI).clamp(0.0, 1.0))
    }

    pub fn pdf(&self, s: f64, cfg: &QuadratureConfig) -> Result<f64> {
        if self.is_degenerate() {
            return Err(Error::Domain("degenerate law has no density".into()));
        }
        let x = s - self.offset;
        let integral = self.invert(x, Part::Pdf, cfg)?;
        Ok((integral / PI).max(0.0))
    }

    /// Returns `(log F(s), f(s) / F(s))`.
    pub fn log_cdf_and_grad(&self, s: f64, cfg: &QuadratureConfig) -> Result<(f64, f64)> {
        let c = self.cdf(s, cfg)?;
        if c <= cfg.abs_tol {
            return Err(Error::Domain(format!("CDF {c:e} at s = {s} is below quadrature resolution")));
        }
        let p = self.pdf(s, cfg)?;
        Ok((c.ln(), p / c))
    }

    /// Bracket expansion from the mean in stddev steps, then bisection to width `tol`.
    pub fn inverse_cdf(&self, p: f64, cfg: &QuadratureConfig, tol: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
        }
        if self.is_degenerate() {
            return Ok(self.offset);
        }
        let (mu, sd) = (self.mean, self.stddev);
        let mut k = 1.0;
        let mut lo = mu - sd;
        while self.cdf(lo, cfg)? > p {
            k *= 2.0;
            if k > 64.0 {
                return Err(Error::BracketFailure { p });
            }
            lo = mu - k * sd;
        }
        k = 1.0;
        let mut hi = mu + sd;
        while self.cdf(hi, cfg)? < p {
            k *= 2.0;
            if k > 64.0 {
                return Err(Error::BracketFailure { p });
            }
            hi = mu + k * sd;
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid, cfg)? < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn invert(&self, x: f64, part: Part, cfg: &QuadratureConfig) -> Result<f64> {
        let h = 1.0 / self.stddev;
        let integrand = |beta: f64| -> f64 {
            if part == Part::Cdf && beta * self.stddev < 1e-7 {
                // limit of Im(exp(-j b x) Psi(b)) / b as b -> 0
                return self.mean - self.offset - x;
            }
            let v = Complex64::from_polar(1.0, -beta * x) * self.core_cf(beta);
            match part {
                Part::Cdf => v.im / beta,
                Part::Pdf => v.re,
            }
        };

        match &self.tail {
            Some(tail) if tail.min_cutoff <= 1e4 * h => {
                let mut cutoff = 8.0 * h;
                while cutoff < tail.min_cutoff {
                    cutoff *= 2.0;
                }
                let main = integrate_panels(integrand, h, cutoff, cfg)?;
                let rest = tail
                    .terms
                    .iter()
                    .map(|t| rotated_tail(t, x, cutoff, part, cfg))
                    .sum::<Result<f64>>()?;
                Ok(main + rest)
            }
            _ => {
                let envelope = |b: f64| {
                    let m = self.core_cf(b).norm();
                    match part {
                        Part::Cdf => m,
                        Part::Pdf => m * b,
                    }
                };
                integrate_half_line(integrand, h, envelope, cfg)
            }
        }
    }
}

/// `int_B^inf exp(j (freq - x) b) g(b) [/ b] db`, reduced to the requested real part.
fn rotated_tail(term: &TailTerm, x: f64, cutoff: f64, part: Part, cfg: &QuadratureConfig) -> Result<f64> {
    let omega = term.freq - x;
    let g = |beta: Complex64| -> Complex64 {
        let v = term.eval(beta);
        match part {
            Part::Cdf => v / beta,
            Part::Pdf => v,
        }
    };
    let pick = |z: Complex64| match part {
        Part::Cdf => z.im,
        Part::Pdf => z.re,
    };

    if omega == 0.0 {
        // along the real axis with b = B / t
        let f = |t: f64| {
            if t <= 0.0 {
                return 0.0;
            }
            let b = cutoff / t;
            pick(g(Complex64::from(b))) * cutoff / (t * t)
        };
        return integrate_panels(f, 1.0, 1.0, cfg);
    }

    let dir = omega.signum();
    let scale = cutoff.min(1.0 / omega.abs());
    let phase = Complex64::from_polar(1.0, omega * cutoff);
    let value_at = |y: f64| -> Complex64 {
        let beta = Complex64::new(cutoff, dir * y);
        phase * (-omega.abs() * y).exp() * g(beta) * Complex64::new(0.0, dir)
    };
    let f = |y: f64| pick(value_at(y));
    let envelope = |y: f64| value_at(y).norm() * (y + cutoff).min(1.0 / omega.abs() + y);
    integrate_half_line(f, scale, envelope, cfg)
}
