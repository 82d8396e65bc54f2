//! The vector-field abstraction every representation implements.

use crate::error::{Error, Result};
use crate::scalar::{Dual, Scalar};

/// A parameterized autonomous vector field `x' = f_theta(x)`.
///
/// Trainable parameters are first mapped to evaluation coefficients (the
/// identity for most fields; kernel fields solve a linear system here), then
/// the field is evaluated at states with those coefficients. Both steps are
/// generic over [`Scalar`] so derivative-carrying scalars flow through.
pub trait Rhs: Sync {
    fn state_dim(&self) -> usize;

    fn param_count(&self) -> usize;

    /// Coefficients used by [`Rhs::eval`]. Linear in `params` for every field in this crate.
    fn coefficients<S: Scalar>(&self, params: &[S]) -> Vec<S> {
        params.to_vec()
    }

    /// Pulls a cotangent on the coefficients back to the parameters.
    fn coefficients_vjp(&self, coeff_bar: &[f64]) -> Vec<f64> {
        coeff_bar.to_vec()
    }

    fn eval<S: Scalar>(&self, coeffs: &[S], x: &[S], out: &mut [S]);

    /// Vector-Jacobian product at `x`: accumulates `cot^T df/dx` into `x_bar`
    /// and `cot^T df/dcoeffs` into `coeff_bar`.
    ///
    /// The default runs batched dual-number passes; fields override it with
    /// hand-written reverse sweeps.
    fn vjp(&self, coeffs: &[f64], x: &[f64], cot: &[f64], x_bar: &mut [f64], coeff_bar: &mut [f64])
    where
        Self: Sized,
    {
        dual_vjp(self, coeffs, x, cot, x_bar, coeff_bar);
    }
}

/// Reference vector-Jacobian product built from forward-mode passes.
pub fn dual_vjp<R: Rhs>(
    rhs: &R,
    coeffs: &[f64],
    x: &[f64],
    cot: &[f64],
    x_bar: &mut [f64],
    coeff_bar: &mut [f64],
) {
    const K: usize = 8;
    let n = x.len();
    let mut out = vec![Dual::<K>::zero(); n];

    let coeffs_const: Vec<Dual<K>> = coeffs.iter().map(|&c| Dual::constant(c)).collect();
    for start in (0..n).step_by(K) {
        let xd: Vec<Dual<K>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| seed(v, i, start))
            .collect();
        rhs.eval(&coeffs_const, &xd, &mut out);
        for j in 0..K.min(n - start) {
            x_bar[start + j] += out.iter().zip(cot).map(|(o, c)| o.eps[j] * c).sum::<f64>();
        }
    }

    let x_const: Vec<Dual<K>> = x.iter().map(|&v| Dual::constant(v)).collect();
    for start in (0..coeffs.len()).step_by(K) {
        let cd: Vec<Dual<K>> = coeffs
            .iter()
            .enumerate()
            .map(|(i, &v)| seed(v, i, start))
            .collect();
        rhs.eval(&cd, &x_const, &mut out);
        for j in 0..K.min(coeffs.len() - start) {
            coeff_bar[start + j] += out.iter().zip(cot).map(|(o, c)| o.eps[j] * c).sum::<f64>();
        }
    }
}

fn seed<const K: usize>(v: f64, i: usize, start: usize) -> Dual<K> {
    if i >= start && i < start + K {
        Dual::variable(v, i - start)
    } else {
        Dual::constant(v)
    }
}

/// A field with its parameters fixed, ready for repeated evaluation.
pub struct BoundRhs<'a, R, S> {
    rhs: &'a R,
    coeffs: Vec<S>,
}

impl<'a, R: Rhs, S: Scalar> BoundRhs<'a, R, S> {
    pub fn new(rhs: &'a R, params: &[S]) -> Result<Self> {
        if params.len() != rhs.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                rhs.param_count(),
                params.len()
            )));
        }
        Ok(BoundRhs {
            rhs,
            coeffs: rhs.coefficients(params),
        })
    }

    pub fn rhs(&self) -> &'a R {
        self.rhs
    }

    pub fn dim(&self) -> usize {
        self.rhs.state_dim()
    }

    pub fn coeffs(&self) -> &[S] {
        &self.coeffs
    }

    #[inline]
    pub fn eval(&self, x: &[S], out: &mut [S]) {
        self.rhs.eval(&self.coeffs, x, out);
    }
}

/// `f(x) = 0` in `dim` dimensions; has no parameters.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField {
    pub dim: usize,
}

impl Rhs for ZeroField {
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn param_count(&self) -> usize {
        0
    }
    fn eval<S: Scalar>(&self, _coeffs: &[S], _x: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
    }
    fn vjp(&self, _: &[f64], _: &[f64], _: &[f64], _: &mut [f64], _: &mut [f64]) {}
}

/// Predator-prey field `(a x - b x y, c x y - d y)` with fixed rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LotkaVolterra {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl LotkaVolterra {
    pub fn field<S: Scalar>(&self, x: &[S]) -> [S; 2] {
        let xy = x[0] * x[1];
        [
            x[0] * self.alpha - xy * self.beta,
            xy * self.gamma - x[1] * self.delta,
        ]
    }
}

impl Rhs for LotkaVolterra {
    fn state_dim(&self) -> usize {
        2
    }
    fn param_count(&self) -> usize {
        0
    }
    fn eval<S: Scalar>(&self, _coeffs: &[S], x: &[S], out: &mut [S]) {
        let f = self.field(x);
        out[0] = f[0];
        out[1] = f[1];
    }
}
