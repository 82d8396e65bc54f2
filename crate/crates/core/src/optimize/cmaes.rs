use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rank_value, OptimizerReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaesConfig {
    pub sigma0: f64,
    /// Defaults to `4 + floor(3 ln d)`.
    pub popsize: Option<usize>,
    pub max_evals: usize,
    pub max_iters: Option<usize>,
    pub seed: u64,
    /// Above this dimension the covariance is kept diagonal.
    pub diagonal_above: usize,
    /// Stop once the recent best values span less than this.
    pub tol_fun: f64,
    /// Same, relative to the magnitude of the best value.
    pub tol_fun_rel: f64,
    /// Stop once `sigma * max(sqrt(diag C))` falls below this.
    pub tol_x: f64,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        CmaesConfig {
            sigma0: 0.3,
            popsize: None,
            max_evals: 20_000,
            max_iters: None,
            seed: 0,
            diagonal_above: 200,
            tol_fun: 1e-12,
            tol_fun_rel: 1e-10,
            tol_x: 1e-12,
        }
    }
}

enum Covariance {
    Full {
        c: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DVector<f64>,
        inv_sqrt: DMatrix<f64>,
        stale: usize,
    },
    Diagonal {
        c: DVector<f64>,
    },
}

impl Covariance {
    fn new(n: usize, diagonal: bool) -> Self {
        if diagonal {
            Covariance::Diagonal { c: DVector::from_element(n, 1.0) }
        } else {
            Covariance::Full {
                c: DMatrix::identity(n, n),
                b: DMatrix::identity(n, n),
                d: DVector::from_element(n, 1.0),
                inv_sqrt: DMatrix::identity(n, n),
                stale: 0,
            }
        }
    }

    /// `B D z` (or `sqrt(C) z` for the diagonal form).
    fn transform(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            Covariance::Full { b, d, .. } => b * z.component_mul(d),
            Covariance::Diagonal { c } => z.component_mul(&c.map(f64::sqrt)),
        }
    }

    fn whiten(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Covariance::Full { inv_sqrt, .. } => inv_sqrt * y,
            Covariance::Diagonal { c } => y.component_div(&c.map(f64::sqrt)),
        }
    }

    fn max_std(&self) -> f64 {
        match self {
            Covariance::Full { c, .. } => c.diagonal().iter().fold(0.0f64, |m, v| m.max(v.sqrt())),
            Covariance::Diagonal { c } => c.iter().fold(0.0f64, |m, v| m.max(v.sqrt())),
        }
    }

    fn refresh(&mut self, every: usize) {
        if let Covariance::Full { c, b, d, inv_sqrt, stale } = self {
            *stale += 1;
            if *stale < every {
                return;
            }
            *stale = 0;
            let sym = (&*c + c.transpose()) * 0.5;
            *c = sym.clone();
            let eig = sym.symmetric_eigen();
            let vals = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());
            *b = eig.eigenvectors;
            *d = vals;
            let dinv = DMatrix::from_diagonal(&d.map(|v| 1.0 / v));
            *inv_sqrt = &*b * dinv * b.transpose();
        }
    }
}

/// `(mu/mu_w, lambda)`-CMA-ES with rank-one and rank-mu updates and
/// cumulative step-size adaptation, started at `x0` with step `sigma0`.
pub fn cmaes_minimize<F>(objective: F, x0: &[f64], config: &CmaesConfig) -> Result<OptimizerReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(config.sigma0 > 0.0 && config.sigma0.is_finite()) {
        return Err(Error::invalid("sigma0 must be positive"));
    }
    let n = x0.len();
    if n == 0 {
        return Err(Error::invalid("empty search space"));
    }
    let start = Instant::now();
    let nf = n as f64;
    let lambda = config.popsize.unwrap_or(4 + (3.0 * nf.ln()).floor() as usize).max(2);
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln()).collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let diagonal = n > config.diagonal_above;
    let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let cc = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let mut c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let mut cmu = (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff)).min(1.0 - c1);
    if diagonal {
        let boost = (nf + 2.0) / 3.0;
        c1 = (c1 * boost).min(0.5);
        cmu = (cmu * boost).min(1.0 - c1);
    }
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
    let eigen_every = ((1.0 / ((c1 + cmu) * nf * 10.0)).floor() as usize).max(1);
    let flat_window = 10 + (30.0 * nf / lambda as f64).ceil() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mean = DVector::from_column_slice(x0);
    let mut sigma = config.sigma0;
    let mut cov = Covariance::new(n, diagonal);
    let mut p_sigma = DVector::zeros(n);
    let mut p_c = DVector::zeros(n);

    let f0 = rank_value(objective(x0));
    let mut best = (x0.to_vec(), f0);
    let mut evals = 1;
    let mut history = vec![f0];
    let mut recent: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while evals + lambda <= config.max_evals.max(lambda + 1) && config.max_iters.is_none_or(|m| iterations < m) {
        iterations += 1;
        let zs: Vec<DVector<f64>> = (0..lambda)
            .map(|_| DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng))))
            .collect();
        let ys: Vec<DVector<f64>> = zs.iter().map(|z| cov.transform(z)).collect();
        let xs: Vec<Vec<f64>> = ys.iter().map(|y| (&mean + y * sigma).as_slice().to_vec()).collect();
        let fs: Vec<f64> = xs.par_iter().map(|x| rank_value(objective(x))).collect();
        evals += lambda;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]).then(a.cmp(&b)));
        let top = order[0];
        if fs[top] < best.1 {
            best = (xs[top].clone(), fs[top]);
        }
        history.push(best.1);

        let mut y_w = DVector::zeros(n);
        for (w, &k) in weights.iter().zip(&order) {
            y_w += &ys[k] * *w;
        }
        mean += &y_w * sigma;

        p_sigma = &p_sigma * (1.0 - c_sigma) + cov.whiten(&y_w) * (c_sigma * (2.0 - c_sigma) * mu_eff).sqrt();
        let ps_norm = p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - c_sigma).powi(2 * iterations as i32)).sqrt() / chi_n < 1.4 + 2.0 / (nf + 1.0);
        let hs = if h_sigma { 1.0 } else { 0.0 };
        p_c = &p_c * (1.0 - cc) + &y_w * (hs * (cc * (2.0 - cc) * mu_eff).sqrt());
        let old_scale = 1.0 - c1 - cmu + (1.0 - hs) * c1 * cc * (2.0 - cc);

        match &mut cov {
            Covariance::Full { c, .. } => {
                *c *= old_scale;
                c.ger(c1, &p_c, &p_c, 1.0);
                for (w, &k) in weights.iter().zip(&order) {
                    c.ger(cmu * w, &ys[k], &ys[k], 1.0);
                }
            }
            Covariance::Diagonal { c } => {
                for i in 0..n {
                    let mut rank_mu = 0.0;
                    for (w, &k) in weights.iter().zip(&order) {
                        rank_mu += w * ys[k][i] * ys[k][i];
                    }
                    c[i] = old_scale * c[i] + c1 * p_c[i] * p_c[i] + cmu * rank_mu;
                }
            }
        }
        cov.refresh(eigen_every);
        sigma *= ((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0)).exp();

        recent.push(fs[top]);
        if recent.len() > flat_window {
            recent.remove(0);
        }
        if recent.len() == flat_window {
            let (lo, hi) = recent
                .iter()
                .chain(fs.iter())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let range = hi - lo;
            if range < config.tol_fun || range < config.tol_fun_rel * best.1.abs() {
                converged = true;
                break;
            }
        }
        if sigma * cov.max_std() < config.tol_x {
            converged = true;
            break;
        }
        if !sigma.is_finite() {
            break;
        }
    }

    Ok(OptimizerReport {
        best_params: best.0,
        best_loss: best.1,
        iterations,
        evals,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        history,
    })
}
