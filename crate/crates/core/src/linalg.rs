//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ridge least squares `min ||A x - b||^2 + ridge * s_max^2 ||x||^2` for every
/// column of `b`, solved through the SVD of `A`.
pub fn ridge_least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::invalid("design and target row counts differ"));
    }
    let svd = a.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::invalid("SVD did not converge")),
    };
    let s = &svd.singular_values;
    let s_max = s.iter().cloned().fold(0.0, f64::max);
    if s_max == 0.0 {
        return Ok(DMatrix::zeros(a.ncols(), b.ncols()));
    }
    let lam = ridge * s_max * s_max;
    let cutoff = s_max * 1e-15;
    let filt = DVector::from_iterator(
        s.len(),
        s.iter().map(|&si| if si > cutoff { si / (si * si + lam) } else { 0.0 }),
    );
    let utb = u.transpose() * b;
    let scaled = DMatrix::from_fn(utb.nrows(), utb.ncols(), |i, j| utb[(i, j)] * filt[i]);
    Ok(vt.transpose() * scaled)
}

/// Cholesky factor `L` of a symmetric positive-definite matrix, reusable
/// for right-hand sides of any scalar kind.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::FactorizationFailed("matrix is not positive definite".into()))?;
        let l = chol.l();
        let dmin = (0..n).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
        let dmax = (0..n).map(|i| l[(i, i)]).fold(0.0, f64::max);
        if !(dmin > 0.0) || dmax / dmin > 1e12 {
            return Err(Error::FactorizationFailed(format!(
                "numerically singular (diagonal ratio {:.3e})",
                dmax / dmin
            )));
        }
        Ok(CholeskyFactor { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `L L^T x = b` in place.
    pub fn solve_in_place<S: Scalar>(&self, b: &mut [S]) {
        let n = self.dim();
        let l = &self.l;
        for i in 0..n {
            let mut acc = b[i];
            for k in 0..i {
                acc -= b[k] * l[(i, k)];
            }
            b[i] = acc / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for k in i + 1..n {
                acc -= b[k] * l[(k, i)];
            }
            b[i] = acc / l[(i, i)];
        }
    }
}

/// 2-norm condition number of a symmetric positive semi-definite matrix.
pub fn spd_condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
