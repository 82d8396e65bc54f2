//! The true predator-prey system and its reference solver.

use chaosode::integrate::{solve, Ivp, Substeps, Trajectory};
use chaosode::rhs::LotkaVolterra;
use chaosode::Scalar;

use crate::error::Result;

/// Rates `alpha = 1.5, beta = 1, gamma = 1, delta = 3`.
pub const TRUE_SYSTEM: LotkaVolterra = LotkaVolterra {
    alpha: 1.5,
    beta: 1.0,
    gamma: 1.0,
    delta: 3.0,
};

/// Internal step of every reference solve.
pub const REFERENCE_MAX_STEP: f64 = 1e-4;

/// `(alpha x - beta x y, gamma x y - delta y)`.
pub fn lv_rhs<S: Scalar>(x: &[S], alpha: f64, beta: f64, gamma: f64, delta: f64) -> [S; 2] {
    LotkaVolterra {
        alpha,
        beta,
        gamma,
        delta,
    }
    .field(x)
}

/// The true field as an owned vector, for perfect-information fits.
pub fn true_field(x: &[f64]) -> Vec<f64> {
    TRUE_SYSTEM.field(x).to_vec()
}

/// Solves the true system from `(t0, x0)` and samples it at `times`.
pub fn reference_solve(x0: &[f64], t0: f64, times: &[f64]) -> Result<Trajectory> {
    let t_end = times.last().copied().unwrap_or(t0);
    let ivp = Ivp::new(&TRUE_SYSTEM, vec![], x0.to_vec(), t0, t_end)?;
    Ok(solve(&ivp, times, Substeps::MaxStep(REFERENCE_MAX_STEP))?)
}

/// Conserved quantity `gamma x - delta ln x + beta y - alpha ln y` of the
/// system on the positive quadrant.
pub fn first_integral(x: &[f64]) -> f64 {
    let s = TRUE_SYSTEM;
    s.gamma * x[0] - s.delta * x[0].ln() + s.beta * x[1] - s.alpha * x[1].ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: (f64, f64, f64, f64) = (1.5, 1.0, 1.0, 3.0);

    #[test]
    fn examples() {
        assert_eq!(lv_rhs(&[1.0, 1.0], P.0, P.1, P.2, P.3), [0.5, -2.0]);
        assert_eq!(lv_rhs(&[0.0, 0.0], P.0, P.1, P.2, P.3), [0.0, 0.0]);
        assert_eq!(lv_rhs(&[3.0, 1.5], P.0, P.1, P.2, P.3), [0.0, 0.0]);
    }

    #[test]
    fn reference_conserves_first_integral() {
        let times: Vec<f64> = (0..=140).map(|i| i as f64 * 0.1).collect();
        let traj = reference_solve(&[1.0, 1.0], 0.0, &times).unwrap();
        let v0 = first_integral(&[1.0, 1.0]);
        for s in &traj.states {
            assert!((first_integral(s) - v0).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn axes_are_invariant(x in 0.0f64..10.0) {
            let f = lv_rhs(&[x, 0.0], P.0, P.1, P.2, P.3);
            prop_assert_eq!(f[1], 0.0);
            let g = lv_rhs(&[0.0, x], P.0, P.1, P.2, P.3);
            prop_assert_eq!(g[0], 0.0);
        }
    }
}
