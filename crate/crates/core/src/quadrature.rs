//! Panel-wise Gauss-Legendre quadrature on [0, inf) for Fourier inversion integrals.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on [-1, 1].
struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn rules() -> &'static (Rule, Rule) {
    static RULES: OnceLock<(Rule, Rule)> = OnceLock::new();
    RULES.get_or_init(|| (Rule::new(32), Rule::new(16)))
}

/// Stopping and budget controls for the half-line integrator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Budget of order-32 panel evaluations per integral.
    pub max_panels: usize,
    /// The tail is dropped once its estimate is below `tail_cut * abs_tol`.
    pub tail_cut: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-10, max_panels: 400_000, tail_cut: 0.1 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.abs_tol > 0.0
            && self.rel_tol > 0.0
            && self.max_panels >= 1
            && self.tail_cut > 0.0
            && self.tail_cut < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Value(format!("invalid quadrature configuration: {self:?}")))
        }
    }
}

struct Adaptive<'a, F> {
    f: &'a F,
    used: usize,
    budget: usize,
    rel_tol: f64,
}

impl<F: Fn(f64) -> f64> Adaptive<'_, F> {
    fn panel(&mut self, a: f64, b: f64, tol: f64, depth: u32) -> std::result::Result<f64, ()> {
        self.used += 1;
        if self.used > self.budget {
            return Err(());
        }
        let (hi_rule, lo_rule) = rules();
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut fine = 0.0;
        let mut magnitude = 0.0;
        for (x, w) in hi_rule.nodes.iter().zip(&hi_rule.weights) {
            let v = (self.f)(mid + half * x);
            fine += w * v;
            magnitude += w * v.abs();
        }
        let mut coarse = 0.0;
        for (x, w) in lo_rule.nodes.iter().zip(&lo_rule.weights) {
            coarse += w * (self.f)(mid + half * x);
        }
        fine *= half;
        coarse *= half;
        magnitude *= half;
        let accept = tol.max(self.rel_tol * fine.abs()).max(1e-15 * magnitude);
        if (fine - coarse).abs() <= accept || depth >= 48 {
            return Ok(fine);
        }
        let left = self.panel(a, mid, 0.5 * tol, depth + 1)?;
        let right = self.panel(mid, b, 0.5 * tol, depth + 1)?;
        Ok(left + right)
    }
}

/// Integrates `f` over [0, inf) using panels [0, h], [h, 2h], [2h, 4h], ...
///
/// Each panel is refined adaptively. Doubling stops when `tail(b)` (an estimate
/// of the remaining integral beyond `b`) falls below `tail_cut * abs_tol`, or
/// when two consecutive panels each contribute less than that and at least 32
/// base widths have been covered.
pub(crate) fn integrate_half_line<F, T>(f: F, h: f64, tail: T, cfg: &QuadratureConfig) -> Result<f64>
where
    F: Fn(f64) -> f64,
    T: Fn(f64) -> f64,
{
    let cut = cfg.tail_cut * cfg.abs_tol;
    let mut engine = Adaptive { f: &f, used: 0, budget: cfg.max_panels, rel_tol: cfg.rel_tol };
    let mut total = 0.0;
    let fail = |used: usize, total: f64| Error::QuadratureFailure { panels: used, estimate: total };

    total += engine.panel(0.0, h, cfg.abs_tol, 0).map_err(|_| fail(engine.used, total))?;
    let mut lo = h;
    let mut quiet = 0;
    loop {
        let hi = 2.0 * lo;
        let part = engine.panel(lo, hi, cfg.abs_tol, 0).map_err(|_| fail(engine.used, total))?;
        total += part;
        if tail(hi) < cut {
            break;
        }
        quiet = if part.abs() < cut { quiet + 1 } else { 0 };
        if quiet >= 2 && hi >= 32.0 * h {
            break;
        }
        lo = hi;
        if !lo.is_finite() {
            return Err(fail(engine.used, total));
        }
    }
    Ok(total)
}

/// Integrates `f` over [0, cutoff] with panels [0, h], [h, 2h], ... (the last panel ends at `cutoff`).
pub(crate) fn integrate_panels<F: Fn(f64) -> f64>(f: F, h: f64, cutoff: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let mut engine = Adaptive { f: &f, used: 0, budget: cfg.max_panels, rel_tol: cfg.rel_tol };
    let mut total = 0.0;
    let (mut lo, mut hi) = (0.0, h.min(cutoff));
    while lo < cutoff {
        total += engine
            .panel(lo, hi, cfg.abs_tol, 0)
            .map_err(|_| Error::QuadratureFailure { panels: engine.used, estimate: total })?;
        lo = hi;
        hi = (2.0 * hi).min(cutoff);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (r32, r16) = rules();
        for rule in [r32, r16] {
            let n = rule.nodes.len();
            let sum: f64 = rule.weights.iter().sum();
            assert!((sum - 2.0).abs() < 1e-14);
            // degree 2n-1 exactness
            let deg = 2 * n - 2;
            let got: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((got - 2.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn half_line_exponential_decay() {
        let cfg = QuadratureConfig::default();
        let v = integrate_half_line(|x: f64| (-x).exp(), 1.0, |b: f64| (-b).exp(), &cfg).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_line_oscillatory_algebraic_tail() {
        // int_0^inf cos x / (1 + x^2) dx = pi / (2e)
        let cfg = QuadratureConfig::default();
        let v = integrate_half_line(|x: f64| x.cos() / (1.0 + x * x), 1.0, |b: f64| 1.0 / (b * b), &cfg).unwrap();
        assert!((v - std::f64::consts::PI / (2.0 * std::f64::consts::E)).abs() < 1e-8, "{v}");
    }

    #[test]
    fn finite_panels_cover_cutoff() {
        let cfg = QuadratureConfig::default();
        let v = integrate_panels(|x: f64| x * x, 0.3, 5.0, &cfg).unwrap();
        assert!((v - 125.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let cfg = QuadratureConfig { max_panels: 3, ..Default::default() };
        let r = integrate_half_line(|x: f64| (50.0 * x).sin() / (1.0 + x), 1.0, |_| f64::INFINITY, &cfg);
        assert!(matches!(r, Err(Error::QuadratureFailure { .. })));
    }
}
