//! Losses, gradients and the three optimizers used by the training pipeline.

mod bfgs;
mod cmaes;
mod loss;
mod pso;

use serde::{Deserialize, Serialize};

pub use bfgs::{quasi_newton_minimize, QuasiNewtonConfig};
pub use cmaes::{cmaes_minimize, CmaesConfig};
pub use loss::{DivergencePolicy, GradientMode, LossSpec, ShootingMode};
pub use pso::{pso_minimize, PsoConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub best_params: Vec<f64>,
    pub best_loss: f64,
    pub iterations: usize,
    pub evals: usize,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
    /// Best-so-far loss after each iteration, starting with the initial point.
    pub history: Vec<f64>,
}

/// NaN and infinities rank last.
#[inline]
pub(crate) fn rank_value(f: f64) -> f64 {
    if f.is_finite() {
        f
    } else {
        f64::INFINITY
    }
}
