use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::OptimizerReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuasiNewtonConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Sufficient-decrease constant of the Wolfe conditions.
    pub wolfe_c1: f64,
    /// Curvature constant of the Wolfe conditions.
    pub wolfe_c2: f64,
    pub max_line_evals: usize,
    /// Dense BFGS up to this dimension, limited-memory above.
    pub dense_up_to: usize,
    pub memory: usize,
    /// Stop after three consecutive steps whose relative decrease is below this.
    pub stagnation_tol: f64,
}

impl Default for QuasiNewtonConfig {
    fn default() -> Self {
        QuasiNewtonConfig {
            max_iters: 500,
            grad_tol: 1e-10,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.1,
            max_line_evals: 40,
            dense_up_to: 500,
            memory: 10,
            stagnation_tol: 1e-15,
        }
    }
}

#[derive(Clone)]
struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

struct Probe<'o, F> {
    objective: &'o mut F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Probe<'_, F> {
    /// `None` marks an infeasible (divergent or non-finite) point.
    fn at(&mut self, x: DVector<f64>) -> Option<Point> {
        self.evals += 1;
        match (self.objective)(x.as_slice()) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Some(Point {
                x,
                f,
                g: DVector::from_vec(g),
            }),
            _ => None,
        }
    }
}

enum Inverse {
    Dense(DMatrix<f64>),
    Limited { pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)>, gamma: f64 },
}

impl Inverse {
    fn new(n: usize, cfg: &QuasiNewtonConfig) -> Self {
        if n <= cfg.dense_up_to {
            Inverse::Dense(DMatrix::identity(n, n))
        } else {
            Inverse::Limited { pairs: VecDeque::new(), gamma: 1.0 }
        }
    }

    fn direction(&self, g: &DVector<f64>) -> DVector<f64> {
        match self {
            Inverse::Dense(h) => -(h * g),
            Inverse::Limited { pairs, gamma } => {
                let mut q = g.clone();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = rho * s.dot(&q);
                    q.axpy(-a, y, 1.0);
                    alphas.push(a);
                }
                q *= *gamma;
                for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
                    let b = rho * y.dot(&q);
                    q.axpy(a - b, s, 1.0);
                }
                -q
            }
        }
    }

    fn update(&mut self, s: DVector<f64>, y: DVector<f64>, first: bool, memory: usize) {
        let sy = s.dot(&y);
        if !(sy > 1e-300) || !(sy > 1e-12 * s.norm() * y.norm()) {
            return;
        }
        let rho = 1.0 / sy;
        match self {
            Inverse::Dense(h) => {
                if first {
                    *h *= sy / y.dot(&y);
                }
                let hy = &*h * &y;
                let yhy = y.dot(&hy);
                h.ger(-rho, &s, &hy, 1.0);
                h.ger(-rho, &hy, &s, 1.0);
                h.ger(rho * rho * yhy + rho, &s, &s, 1.0);
            }
            Inverse::Limited { pairs, gamma } => {
                *gamma = sy / y.dot(&y);
                if pairs.len() == memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, rho));
            }
        }
    }

    fn reset(&mut self) {
        match self {
            Inverse::Dense(h) => h.fill_with_identity(),
            Inverse::Limited { pairs, gamma } => {
                pairs.clear();
                *gamma = 1.0;
            }
        }
    }
}

/// Safeguarded cubic minimizer between two bracketing points; bisection when
/// the interpolant is unusable.
fn interpolate(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    let (xa, fa, ga) = a;
    let (xb, fb, gb) = b;
    let (lo, hi) = (xa.min(xb), xa.max(xb));
    let mid = 0.5 * (xa + xb);
    if !(fa.is_finite() && fb.is_finite() && ga.is_finite() && gb.is_finite()) {
        return mid;
    }
    let d1 = ga + gb - 3.0 * (fa - fb) / (xa - xb);
    let disc = d1 * d1 - ga * gb;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (xb - xa).signum() * disc.sqrt();
    let t = xb - (xb - xa) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

struct LineSearch {
    point: Option<Point>,
    wolfe: bool,
    any_feasible: bool,
}

/// Strong-Wolfe line search (bracketing followed by zoom); infeasible trial
/// points count as `+inf`.
fn line_search<F>(probe: &mut Probe<'_, F>, cur: &Point, dir: &DVector<f64>, alpha0: f64, cfg: &QuasiNewtonConfig) -> LineSearch
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let phi0 = cur.f;
    let dphi0 = cur.g.dot(dir);
    let at = |probe: &mut Probe<'_, F>, a: f64| -> Option<Point> { probe.at(&cur.x + dir * a) };
    let armijo = |a: f64, f: f64| f <= phi0 + cfg.wolfe_c1 * a * dphi0;
    let curvature = |p: &Point| p.g.dot(dir).abs() <= -cfg.wolfe_c2 * dphi0;
    let mut any_feasible = false;
    let mut used = 0;

    // (alpha, phi, dphi) of the best Armijo point so far
    let mut lo: (f64, f64, f64) = (0.0, phi0, dphi0);
    let mut lo_point: Option<Point> = None;
    let mut hi: Option<(f64, f64, f64)> = None;
    let mut alpha = alpha0;

    // bracketing
    while hi.is_none() && used < cfg.max_line_evals {
        used += 1;
        match at(probe, alpha) {
            None => hi = Some((alpha, f64::INFINITY, f64::NAN)),
            Some(p) => {
                any_feasible = true;
                let d = p.g.dot(dir);
                if !armijo(alpha, p.f) || (lo.0 > 0.0 && p.f >= lo.1) {
                    hi = Some((alpha, p.f, d));
                } else if curvature(&p) {
                    return LineSearch { point: Some(p), wolfe: true, any_feasible };
                } else if d >= 0.0 {
                    hi = Some(lo);
                    lo = (alpha, p.f, d);
                    lo_point = Some(p);
                } else {
                    lo = (alpha, p.f, d);
                    lo_point = Some(p);
                    alpha *= 2.0;
                }
            }
        }
    }

    // zoom
    while let Some(h) = hi {
        if used >= cfg.max_line_evals || (h.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(h.0.abs()) {
            break;
        }
        used += 1;
        let a = interpolate(lo, h);
        match at(probe, a) {
            None => hi = Some((a, f64::INFINITY, f64::NAN)),
            Some(p) => {
                any_feasible = true;
                let d = p.g.dot(dir);
                if !armijo(a, p.f) || p.f >= lo.1 {
                    hi = Some((a, p.f, d));
                } else {
                    if curvature(&p) {
                        return LineSearch { point: Some(p), wolfe: true, any_feasible };
                    }
                    if d * (h.0 - lo.0) >= 0.0 {
                        hi = Some(lo);
                    }
                    lo = (a, p.f, d);
                    lo_point = Some(p);
                }
            }
        }
    }
    LineSearch { point: lo_point, wolfe: false, any_feasible }
}

/// BFGS (limited-memory above `dense_up_to` dimensions) with a strong-Wolfe
/// line search. `objective` returns the value and gradient, or an error where
/// the objective is undefined.
pub fn quasi_newton_minimize<F>(mut objective: F, x0: &[f64], config: &QuasiNewtonConfig) -> Result<OptimizerReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let start = Instant::now();
    let n = x0.len();
    let mut probe = Probe { objective: &mut objective, evals: 0 };
    let mut cur = probe.at(DVector::from_column_slice(x0)).ok_or(Error::StalledAtInfeasible)?;
    let mut inv = Inverse::new(n, config);
    let mut history = vec![cur.f];
    let mut iterations = 0;
    let mut converged = cur.g.amax() < config.grad_tol;
    let mut first = true;
    let mut slow = 0;
    let mut ever_feasible_step = false;

    while !converged && iterations < config.max_iters {
        let mut dir = inv.direction(&cur.g);
        if !(cur.g.dot(&dir) < 0.0) {
            inv.reset();
            dir = -cur.g.clone();
        }
        let alpha0 = if first { (1.0 / cur.g.amax()).min(1.0) } else { 1.0 };
        let mut ls = line_search(&mut probe, &cur, &dir, alpha0, config);
        if ls.point.is_none() && !first {
            // retry along steepest descent with a fresh metric
            inv.reset();
            first = true;
            dir = -cur.g.clone();
            ls = line_search(&mut probe, &cur, &dir, (1.0 / cur.g.amax()).min(1.0), config);
        }
        let Some(next) = ls.point else {
            if !ever_feasible_step && !ls.any_feasible {
                return Err(Error::StalledAtInfeasible);
            }
            break;
        };
        ever_feasible_step = true;
        iterations += 1;
        let s = &next.x - &cur.x;
        let y = &next.g - &cur.g;
        if ls.wolfe || s.dot(&y) > 0.0 {
            inv.update(s, y, first, config.memory);
            first = false;
        }
        let decrease = cur.f - next.f;
        slow = if decrease <= config.stagnation_tol * cur.f.abs().max(next.f.abs()) { slow + 1 } else { 0 };
        cur = next;
        history.push(cur.f);
        if cur.g.amax() < config.grad_tol {
            converged = true;
        } else if slow >= 3 {
            break;
        }
    }

    Ok(OptimizerReport {
        best_params: cur.x.as_slice().to_vec(),
        best_loss: cur.f,
        iterations,
        evals: probe.evals,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(a: &DMatrix<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + '_ {
        move |x: &[f64]| {
            let v = DVector::from_column_slice(x);
            let ax = a * &v;
            Ok((v.dot(&ax), (ax * 2.0).as_slice().to_vec()))
        }
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = 100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2);
        let g = vec![-400.0 * a * (b - a * a) - 2.0 * (1.0 - a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    fn spd(n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 + if i == j { 1.0 } else { 0.0 });
        &m * m.transpose() + DMatrix::identity(n, n)
    }

    #[test]
    fn convex_quadratic_in_few_iterations() {
        let a = spd(5);
        let r = quasi_newton_minimize(quadratic(&a), &[1.0, -2.0, 0.5, 3.0, -1.0], &QuasiNewtonConfig::default()).unwrap();
        assert!(r.best_params.iter().all(|v| v.abs() < 1e-10), "{:?}", r.best_params);
        assert!(r.iterations <= 5 + 5, "{} iterations", r.iterations);
    }

    #[test]
    fn rosenbrock_classical_start() {
        let r = quasi_newton_minimize(rosenbrock, &[-1.2, 1.0], &QuasiNewtonConfig::default()).unwrap();
        assert!((r.best_params[0] - 1.0).abs() < 1e-8 && (r.best_params[1] - 1.0).abs() < 1e-8, "{:?}", r.best_params);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn limited_memory_variant() {
        let cfg = QuasiNewtonConfig { dense_up_to: 0, ..Default::default() };
        let r = quasi_newton_minimize(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!((r.best_params[0] - 1.0).abs() < 1e-8, "{:?}", r.best_params);
    }

    #[test]
    fn start_at_optimum() {
        let r = quasi_newton_minimize(rosenbrock, &[1.0, 1.0], &QuasiNewtonConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
    }

    #[test]
    fn infeasible_start() {
        let r = quasi_newton_minimize(|_| Err(Error::DivergedNoGradient), &[0.0], &QuasiNewtonConfig::default());
        assert!(matches!(r, Err(Error::StalledAtInfeasible)));
    }

    #[test]
    fn backtracks_from_divergent_region() {
        // minimum at 2, undefined beyond 2.5
        let f = |x: &[f64]| {
            if x[0] > 2.5 {
                Err(Error::DivergedNoGradient)
            } else {
                Ok(((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)]))
            }
        };
        let r = quasi_newton_minimize(f, &[-50.0], &QuasiNewtonConfig::default()).unwrap();
        assert!((r.best_params[0] - 2.0).abs() < 1e-8, "{:?}", r.best_params);
    }
}
