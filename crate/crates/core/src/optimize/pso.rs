use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rank_value, OptimizerReport};
use crate::error::{Error, Result};

/// Global-best particle swarm settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub swarm: usize,
    pub iters: usize,
    pub inertia: f64,
    pub c1: f64,
    pub c2: f64,
    pub seed: u64,
    /// Stop after this many iterations without a relative improvement of
    /// `stall_tol` in the global best; 0 runs all iterations.
    pub stall_iters: usize,
    pub stall_tol: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            swarm: 40,
            iters: 300,
            inertia: 0.72,
            c1: 1.49,
            c2: 1.49,
            seed: 0,
            stall_iters: 60,
            stall_tol: 1e-9,
        }
    }
}

/// Minimizes `objective` with a swarm seeded uniformly in
/// `init_center +- init_spread`; particle 0 starts exactly at the centre and
/// velocities are clamped to `init_spread` per coordinate.
pub fn pso_minimize<F>(objective: F, init_center: &[f64], init_spread: f64, config: &PsoConfig) -> Result<OptimizerReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if config.swarm < 2 {
        return Err(Error::invalid("swarm needs at least two particles"));
    }
    if !(init_spread > 0.0 && init_spread.is_finite()) {
        return Err(Error::invalid("initial spread must be positive"));
    }
    let start = Instant::now();
    let dim = init_center.len();
    let vmax = init_spread;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut pos: Vec<Vec<f64>> = (0..config.swarm)
        .map(|k| {
            if k == 0 {
                init_center.to_vec()
            } else {
                init_center.iter().map(|&c| c + rng.gen_range(-init_spread..init_spread)).collect()
            }
        })
        .collect();
    let mut vel: Vec<Vec<f64>> = (0..config.swarm)
        .map(|_| (0..dim).map(|_| 0.5 * rng.gen_range(-vmax..vmax)).collect())
        .collect();

    let eval = |ps: &[Vec<f64>]| -> Vec<f64> { ps.par_iter().map(|p| rank_value(objective(p))).collect() };

    let mut fit = eval(&pos);
    let mut evals = config.swarm;
    let mut pbest = pos.clone();
    let mut pbest_f = fit.clone();
    let (mut g, mut gbest_f) = (0, fit[0]);
    for (k, &f) in fit.iter().enumerate() {
        if f < gbest_f {
            g = k;
            gbest_f = f;
        }
    }
    let mut gbest = pbest[g].clone();
    let mut history = vec![fit[0], gbest_f];
    let mut iterations = 0;
    let mut stall = 0;
    let mut converged = false;

    for _ in 0..config.iters {
        iterations += 1;
        for k in 0..config.swarm {
            for d in 0..dim {
                let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                let v = config.inertia * vel[k][d]
                    + config.c1 * r1 * (pbest[k][d] - pos[k][d])
                    + config.c2 * r2 * (gbest[d] - pos[k][d]);
                vel[k][d] = v.clamp(-vmax, vmax);
                pos[k][d] += vel[k][d];
            }
        }
        fit = eval(&pos);
        evals += config.swarm;

        let previous = gbest_f;
        for k in 0..config.swarm {
            if fit[k] < pbest_f[k] {
                pbest_f[k] = fit[k];
                pbest[k].clone_from(&pos[k]);
                if fit[k] < gbest_f {
                    gbest_f = fit[k];
                    gbest.clone_from(&pos[k]);
                }
            }
        }
        history.push(gbest_f);

        if gbest_f < previous - config.stall_tol * previous.abs() {
            stall = 0;
        } else {
            stall += 1;
        }
        if config.stall_iters > 0 && stall >= config.stall_iters {
            converged = true;
            break;
        }
    }

    Ok(OptimizerReport {
        best_params: gbest,
        best_loss: gbest_f,
        iterations,
        evals,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        history,
    })
}
