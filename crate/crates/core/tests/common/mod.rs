//! Helpers shared by integration test targets.
#![allow(dead_code)]

use ccsynth::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random strictly convex QP with one-sided rows `Ax <= u` and a feasible interior.
pub fn random_qp(seed: u64) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=10);
    let r = rng.random_range(1..=20);
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let p = m.transpose() * &m + DMatrix::identity(d, d) * 0.1;
    let q = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
    let a = DMatrix::from_fn(r, d, |_, _| rng.random_range(-1.0..1.0));
    let x_feas = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let ax = &a * &x_feas;
    let u = DVector::from_fn(r, |i, _| ax[i] + rng.random_range(0.0..1.0));
    let l = DVector::from_element(r, f64::NEG_INFINITY);
    QpProblem::new(p, q, a, l, u).unwrap()
}

/// Optimum of a strictly convex QP with rows `Ax <= u`, by enumerating active
/// sets in order of size and returning the first one meeting all KKT conditions.
pub fn active_set_oracle(qp: &QpProblem) -> (DVector<f64>, f64) {
    let d = qp.num_vars();
    let r = qp.num_rows();
    for size in 0..=d.min(r) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            if let Some(x) = kkt_point(qp, &subset) {
                return (x.clone(), qp.objective(&x));
            }
            // next combination in lexicographic order
            let mut i = size;
            let mut advanced = false;
            while i > 0 {
                i -= 1;
                if subset[i] < r - size + i {
                    subset[i] += 1;
                    for j in i + 1..size {
                        subset[j] = subset[j - 1] + 1;
                    }
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
    }
    panic!("no KKT point found");
}

fn kkt_point(qp: &QpProblem, active: &[usize]) -> Option<DVector<f64>> {
    let d = qp.num_vars();
    let k = active.len();
    let mut kkt = DMatrix::zeros(d + k, d + k);
    kkt.view_mut((0, 0), (d, d)).copy_from(&qp.p);
    let mut rhs = DVector::zeros(d + k);
    rhs.rows_mut(0, d).copy_from(&(-&qp.q));
    for (c, &i) in active.iter().enumerate() {
        for j in 0..d {
            kkt[(d + c, j)] = qp.a[(i, j)];
            kkt[(j, d + c)] = qp.a[(i, j)];
        }
        rhs[d + c] = qp.u[i];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let x = sol.rows(0, d).into_owned();
    if (0..k).any(|c| sol[d + c] < -1e-10) {
        return None;
    }
    let ax = &qp.a * &x;
    if (0..qp.num_rows()).any(|i| ax[i] > qp.u[i] + 1e-10) {
        return None;
    }
    Some(x)
}

/// Scalar system `x(1) = x0 + u + w` with `w ~ N(0, 1)`, pulled towards 5 and
/// held below `bound` with probability `1 - delta`.
pub fn scalar_gaussian_toy(bound: f64, delta: f64, eta: f64, input_box: (f64, f64)) -> String {
    let (box_lo, box_hi) = input_box;
    format!(
        r#"{{
  "system": {{ "builder": "explicit", "a": [[1.0]], "b": [[1.0]] }},
  "horizon": 1,
  "initial_state": {{ "fixed": [0.0] }},
  "disturbance": {{ "iid": [{{ "type": "gaussian", "mean": 0.0, "stddev": 1.0 }}] }},
  "state_weights": [1.0],
  "input_weights": [0.01],
  "desired": {{ "explicit": [5.0] }},
  "input_box": {{ "lo": [{box_lo}], "hi": [{box_hi}] }},
  "constraints": [{{ "per_step": {{ "coeffs": [1.0], "bound": {bound} }} }}],
  "delta": {delta},
  "eta": {eta}
}}"#
    )
}

/// Two decoupled scalar channels, each held below `bound` with inputs in `[0, 1]`.
pub fn two_channel_toy(bound: f64, delta: f64, eta: f64) -> String {
    format!(
        r#"{{
  "system": {{ "builder": "explicit", "a": [[1.0, 0.0], [0.0, 1.0]], "b": [[1.0, 0.0], [0.0, 1.0]] }},
  "horizon": 1,
  "initial_state": {{ "fixed": [0.0, 0.0] }},
  "disturbance": {{ "iid": [
    {{ "type": "gaussian", "mean": 0.0, "stddev": 1.0 }},
    {{ "type": "gaussian", "mean": 0.0, "stddev": 1.0 }}
  ] }},
  "state_weights": [1.0, 1.0],
  "input_weights": [0.01, 0.01],
  "desired": {{ "explicit": [5.0, 5.0] }},
  "input_box": {{ "lo": [0.0, 0.0], "hi": [1.0, 1.0] }},
  "constraints": [
    {{ "per_step": {{ "coeffs": [1.0, 0.0], "bound": {bound} }} }},
    {{ "per_step": {{ "coeffs": [0.0, 1.0], "bound": {bound} }} }}
  ],
  "delta": {delta},
  "eta": {eta}
}}"#
    )
}
