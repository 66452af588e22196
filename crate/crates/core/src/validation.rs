//! Monte Carlo validation of an open-loop input: sampled trajectories,
//! empirical constraint satisfaction with a 95% interval, and empirical cost.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::DisturbanceVector;
use crate::dynamics::StackedSystem;
use crate::error::{Error, Result};
use crate::problem::{InitialState, ProblemSpec};

/// Samples per independently seeded shard.
pub const SHARD_SIZE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n_samples: usize,
    pub satisfaction: f64,
    pub satisfaction_ci95: (f64, f64),
    pub empirical_cost: f64,
    pub cost_stderr: f64,
    pub seed: u64,
}

fn shard_rng(seed: u64, shard: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard as u64);
    rng
}

struct Sampler<'a> {
    ss: &'a StackedSystem,
    x0: &'a InitialState,
    w: &'a DisturbanceVector,
    /// `H U`, fixed across samples.
    hu: DVector<f64>,
}

impl Sampler<'_> {
    fn new<'a>(
        ss: &'a StackedSystem,
        x0: &'a InitialState,
        u: &DVector<f64>,
        w: &'a DisturbanceVector,
    ) -> Result<Sampler<'a>> {
        if u.len() != ss.input_len() || w.len() != ss.disturbance_len() || x0.len() != ss.n {
            return Err(Error::DimensionMismatch("simulation inputs do not match the system".into()));
        }
        Ok(Sampler { ss, x0, w, hu: &ss.h * u })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, wbuf: &mut [f64], xbuf: &mut [f64]) -> DVector<f64> {
        let x0 = match self.x0 {
            InitialState::Fixed(x) => x.clone(),
            InitialState::Random(law) => {
                law.sample_into(rng, xbuf);
                DVector::from_column_slice(xbuf)
            }
        };
        self.w.sample_into(rng, wbuf);
        &self.ss.abar * x0 + &self.hu + &self.ss.g * DVector::from_column_slice(wbuf)
    }
}

/// `n` samples of the stacked state, deterministic in `seed`.
pub fn simulate_batch(
    ss: &StackedSystem,
    x0: &InitialState,
    u: &DVector<f64>,
    w: &DisturbanceVector,
    n: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if n == 0 {
        return Err(Error::Value("sample count must be at least 1".into()));
    }
    let sampler = Sampler::new(ss, x0, u, w)?;
    let shards = n.div_ceil(SHARD_SIZE);
    let out = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = shard_rng(seed, s);
            let mut wbuf = vec![0.0; w.len()];
            let mut xbuf = vec![0.0; ss.n];
            let count = SHARD_SIZE.min(n - s * SHARD_SIZE);
            (0..count).map(|_| sampler.draw(&mut rng, &mut wbuf, &mut xbuf)).collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    Ok(out.into_iter().flatten().collect())
}

/// Normal-approximation 95% interval, widened by `0.5 / n` and clipped to [0, 1].
pub fn proportion_ci95(successes: usize, n: usize) -> (f64, f64) {
    let p = successes as f64 / n as f64;
    let half = 1.959963984540054 * (p * (1.0 - p) / n as f64).sqrt() + 0.5 / n as f64;
    ((p - half).max(0.0), (p + half).min(1.0))
}

/// Fraction of sampled trajectories satisfying every row, and the empirical cost.
pub fn estimate_satisfaction(spec: &ProblemSpec, u: &DVector<f64>, n: usize, seed: u64) -> Result<McReport> {
    if n == 0 {
        return Err(Error::Value("sample count must be at least 1".into()));
    }
    let ss = &spec.system;
    let sampler = Sampler::new(ss, &spec.initial_state, u, &spec.disturbance)?;
    let rows: Vec<(Vec<(usize, f64)>, f64)> = spec
        .rows
        .iter()
        .map(|r| {
            let nz = r.coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, c)| (i, *c)).collect();
            (nz, r.bound)
        })
        .collect();
    let effort: f64 = u.iter().zip(spec.input_weights.iter()).map(|(v, r)| r * v * v).sum();

    let shards = n.div_ceil(SHARD_SIZE);
    let parts: Vec<(usize, f64, f64)> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = shard_rng(seed, s);
            let mut wbuf = vec![0.0; spec.disturbance.len()];
            let mut xbuf = vec![0.0; ss.n];
            let count = SHARD_SIZE.min(n - s * SHARD_SIZE);
            let (mut ok, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
            for _ in 0..count {
                let x = sampler.draw(&mut rng, &mut wbuf, &mut xbuf);
                if rows.iter().all(|(nz, q)| nz.iter().map(|(i, c)| c * x[*i]).sum::<f64>() <= *q) {
                    ok += 1;
                }
                let cost: f64 = x
                    .iter()
                    .zip(spec.desired.iter())
                    .zip(spec.state_weights.iter())
                    .map(|((xi, di), w)| w * (xi - di) * (xi - di))
                    .sum::<f64>()
                    + effort;
                sum += cost;
                sum_sq += cost * cost;
            }
            (ok, sum, sum_sq)
        })
        .collect();

    let (ok, sum, sum_sq) = parts.iter().fold((0, 0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1, acc.2 + p.2));
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
    Ok(McReport {
        n_samples: n,
        satisfaction: ok as f64 / nf,
        satisfaction_ci95: proportion_ci95(ok, n),
        empirical_cost: mean,
        cost_stderr: (var / nf).sqrt(),
        seed,
    })
}
