//! Piecewise-affine underapproximation of concave functions by the sandwich
//! algorithm: chords are split at the point where the tangent slope equals
//! the chord slope until every chord is within `eta` of the function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine piece, active on `[left, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub slope: f64,
    pub intercept: f64,
    pub left: f64,
    pub right: f64,
}

impl Piece {
    pub fn at(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// `x -> min_j (slope_j * x + intercept_j)` with `l <= f <= l + eta` on the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwaUnderapprox {
    pieces: Vec<Piece>,
    domain: (f64, f64),
    eta: f64,
}

impl PwaUnderapprox {
    /// Single-piece approximation, exact for affine functions.
    pub fn affine(slope: f64, intercept: f64, domain: (f64, f64)) -> Self {
        Self { pieces: vec![Piece { slope, intercept, left: domain.0, right: domain.1 }], domain, eta: 0.0 }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.pieces.iter().map(|p| p.at(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain.0 && x <= self.domain.1
    }

    /// Appends a piece, e.g. a flat cap extending validity past the domain.
    pub fn push_piece(&mut self, piece: Piece) {
        self.pieces.push(piece);
    }

    /// Rows `slope,intercept,left,right` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slope,intercept,left,right\n");
        for p in &self.pieces {
            out.push_str(&format!("{:.17e},{:.17e},{:.17e},{:.17e}\n", p.slope, p.intercept, p.left, p.right));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandwichOptions {
    /// Negative chord errors down to `-concavity_tol` are read as noise.
    pub concavity_tol: f64,
    /// Breakpoint bisection stops at width `breakpoint_rel_tol * (u - l)`.
    pub breakpoint_rel_tol: f64,
    /// Relative slack on the slope bracket before reporting failure.
    pub slope_tol: f64,
}

impl Default for SandwichOptions {
    fn default() -> Self {
        Self { concavity_tol: 1e-12, breakpoint_rel_tol: 1e-8, slope_tol: 1e-6 }
    }
}

/// One processed interval of the sandwich run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRecord {
    pub left: f64,
    pub right: f64,
    pub err: f64,
    /// Index of the interval this one was split from.
    pub parent: Option<usize>,
}

/// Finds `x` in `[l, u]` with `grad(x) = m` by bisection on the nonincreasing `grad`.
pub fn break_point<G>(grad: G, l: f64, u: f64, m: f64, tol: f64, slope_tol: f64) -> Result<f64>
where
    G: Fn(f64) -> Result<f64>,
{
    let gl = grad(l)?;
    let gu = grad(u)?;
    let slack = slope_tol * (1.0 + m.abs());
    if gl < m - slack || gu > m + slack {
        return Err(Error::BreakpointFailure { lo: l, hi: u, m });
    }
    if gl <= m {
        return Ok(l);
    }
    if gu >= m {
        return Ok(u);
    }
    let (mut lo, mut hi) = (l, u);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if grad(mid)? > m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Builds the underapproximation of a concave `f` on `[lo, hi]`.
///
/// `eval(x)` returns `(f(x), f'(x))`.
pub fn sandwich<F>(eval: F, lo: f64, hi: f64, eta: f64, opts: &SandwichOptions) -> Result<PwaUnderapprox>
where
    F: Fn(f64) -> Result<(f64, f64)>,
{
    sandwich_traced(eval, lo, hi, eta, opts).map(|(pwa, _)| pwa)
}

/// As [`sandwich`], also returning every processed interval in order.
pub fn sandwich_traced<F>(
    eval: F,
    lo: f64,
    hi: f64,
    eta: f64,
    opts: &SandwichOptions,
) -> Result<(PwaUnderapprox, Vec<SplitRecord>)>
where
    F: Fn(f64) -> Result<(f64, f64)>,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Value(format!("invalid sandwich domain [{lo}, {hi}]")));
    }
    if !(eta > 0.0) {
        return Err(Error::Value(format!("eta must be positive, got {eta}")));
    }
    let grad = |x: f64| eval(x).map(|(_, g)| g);
    let min_width = 1e-12 * (hi - lo).max(1.0);

    let f_lo = eval(lo)?.0;
    let f_hi = eval(hi)?.0;
    // (left, f(left), right, f(right), parent)
    let mut intervals = vec![(lo, f_lo, hi, f_hi, None::<usize>)];
    let mut pieces = Vec::new();
    let mut trace = Vec::new();

    while let Some((l, fl, u, fu, parent)) = intervals.pop() {
        let m = (fu - fl) / (u - l);
        let c = fl - m * l;
        let x_m = break_point(grad, l, u, m, opts.breakpoint_rel_tol * (u - l), opts.slope_tol)?;
        let f_m = eval(x_m)?.0;
        let mut err = f_m - (m * x_m + c);
        if err < -opts.concavity_tol {
            return Err(Error::NonConcaveInput { x: x_m, err });
        }
        err = err.max(0.0);
        let id = trace.len();
        trace.push(SplitRecord { left: l, right: u, err, parent });

        let splittable = x_m - l > min_width && u - x_m > min_width;
        if err <= eta || !splittable {
            pieces.push(Piece { slope: m, intercept: c, left: l, right: u });
        } else {
            intervals.push((x_m, f_m, u, fu, Some(id)));
            intervals.push((l, fl, x_m, f_m, Some(id)));
        }
    }

    pieces.sort_by(|a, b| a.left.total_cmp(&b.left));
    let mut merged: Vec<Piece> = Vec::with_capacity(pieces.len());
    for p in pieces {
        match merged.last_mut() {
            Some(last) if last.slope == p.slope && last.intercept == p.intercept => last.right = p.right,
            _ => merged.push(p),
        }
    }
    Ok((PwaUnderapprox { pieces: merged, domain: (lo, hi), eta }, trace))
}
