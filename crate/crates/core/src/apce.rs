//! Data-driven orthonormal polynomial bases (arbitrary polynomial chaos).
//!
//! For every state dimension a univariate family `Phi_0 .. Phi_{N_max}` is
//! built from the raw empirical moments of that coordinate: the monic
//! polynomial of degree `d` orthogonal to all lower powers solves a Hankel
//! moment system, and is then scaled to unit Monte-Carlo norm over the
//! build sample. Multivariate functions are tensor products restricted to
//! total degree `N_max`, enumerated in graded lexicographic order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spd_condition_number;
use crate::rhs::Rhs;
use crate::scalar::Scalar;

/// Raw moments `mu_0 .. mu_K` of a sample (or of a known distribution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub moments: Vec<f64>,
    pub sample_size: usize,
}

impl MomentTable {
    /// Moments of a known distribution, e.g. exact Gaussian moments.
    pub fn exact(moments: Vec<f64>) -> Self {
        MomentTable {
            moments,
            sample_size: 0,
        }
    }

    pub fn max_order(&self) -> usize {
        self.moments.len().saturating_sub(1)
    }
}

/// `mu_k = (1/N) sum_j x_j^k` for `k = 0..=max_moment`.
pub fn empirical_moments(sample: &[f64], max_moment: usize) -> MomentTable {
    let mut sums = vec![0.0; max_moment + 1];
    for &x in sample {
        let mut p = 1.0;
        for s in sums.iter_mut() {
            *s += p;
            p *= x;
        }
    }
    let n = sample.len() as f64;
    MomentTable {
        moments: sums.into_iter().map(|s| s / n).collect(),
        sample_size: sample.len(),
    }
}

/// Polynomial in monomial form, coefficients in ascending degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnivariatePoly {
    pub coeffs: Vec<f64>,
}

impl UnivariatePoly {
    pub fn monomial(degree: usize) -> Self {
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[degree] = 1.0;
        UnivariatePoly { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    #[inline]
    pub fn eval<S: Scalar>(&self, x: S) -> S {
        let mut it = self.coeffs.iter().rev();
        let mut acc = S::from_f64(*it.next().expect("polynomial has coefficients"));
        for &c in it {
            acc = acc * x + c;
        }
        acc
    }

    #[inline]
    pub fn eval_derivative(&self, x: f64) -> f64 {
        let d = self.degree();
        if d == 0 {
            return 0.0;
        }
        let mut acc = self.coeffs[d] * d as f64;
        for i in (1..d).rev() {
            acc = acc * x + self.coeffs[i] * i as f64;
        }
        acc
    }
}

/// Where the normalization constant of a univariate polynomial comes from.
#[derive(Debug, Clone, Copy)]
pub enum NormSource<'a> {
    /// Monte-Carlo norm over the build sample.
    Sample(&'a [f64]),
    /// `sum_ij c_i c_j mu_{i+j}`; needs moments up to order `2d`.
    Moments,
}

/// Monic polynomial of degree `d` orthogonal to `1, x, .., x^{d-1}` under
/// the moments, scaled to unit norm.
pub fn apce_univariate(moments: &MomentTable, degree: usize, norm: NormSource<'_>) -> Result<UnivariatePoly> {
    let singular = Error::SingularMoments { dim: 0, degree };
    let mu = &moments.moments;
    if degree > 0 && mu.len() < 2 * degree {
        return Err(Error::invalid(format!(
            "degree {degree} needs moments up to order {}",
            2 * degree - 1
        )));
    }

    let size = degree + 1;
    let mut a = DMatrix::<f64>::zeros(size, size);
    for k in 0..degree {
        for i in 0..size {
            a[(k, i)] = mu[k + i];
        }
    }
    a[(degree, degree)] = 1.0;
    let mut rhs = DVector::<f64>::zeros(size);
    rhs[degree] = 1.0;
    let coeffs = a.lu().solve(&rhs).ok_or(singular.clone())?;
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(singular);
    }
    let mut poly = UnivariatePoly {
        coeffs: coeffs.iter().copied().collect(),
    };

    let (norm2, scale) = match norm {
        NormSource::Sample(xs) => {
            let mut sq = 0.0;
            let mut mag = 0.0;
            for &x in xs {
                let v = poly.eval(x);
                sq += v * v;
                let m: f64 = poly
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c.abs() * x.abs().powi(i as i32))
                    .sum();
                mag += m * m;
            }
            let n = xs.len() as f64;
            (sq / n, mag / n)
        }
        NormSource::Moments => {
            if mu.len() < 2 * degree + 1 {
                return Err(Error::invalid(format!(
                    "moment normalization of degree {degree} needs order {}",
                    2 * degree
                )));
            }
            let c = &poly.coeffs;
            let mut sq = 0.0;
            for i in 0..size {
                for j in 0..size {
                    sq += c[i] * c[j] * mu[i + j];
                }
            }
            (sq, 1.0)
        }
    };
    // a polynomial vanishing on the whole sample cannot be normalized
    if !(norm2 > 1e-24 * scale) || !norm2.is_finite() {
        return Err(Error::SingularMoments { dim: 0, degree });
    }
    let inv = 1.0 / norm2.sqrt();
    poly.coeffs.iter_mut().for_each(|c| *c *= inv);
    Ok(poly)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisVariant {
    /// Data-driven orthonormal (aPC) families.
    #[default]
    Orthonormal,
    /// Raw monomials `x^d`, no normalization.
    Monomial,
}

/// All multi-indices of `n` components with total degree at most `n_max`,
/// grouped by total degree, first component descending within a group.
pub fn graded_multi_indices(n: usize, n_max: usize) -> Vec<Vec<usize>> {
    fn with_total(total: usize, n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![total]];
        }
        let mut out = Vec::new();
        for first in (0..=total).rev() {
            for mut rest in with_total(total - first, n - 1) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }
    (0..=n_max).flat_map(|t| with_total(t, n)).collect()
}

/// `C(n + n_max, n)`.
pub fn basis_size(n: usize, n_max: usize) -> usize {
    let mut acc: u128 = 1;
    for k in 1..=n as u128 {
        acc = acc * (n_max as u128 + k) / k;
    }
    acc as usize
}

/// Tensor-product polynomial basis of total degree `n_max` in `n` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApceBasis {
    pub n: usize,
    pub n_max: usize,
    pub variant: BasisVariant,
    pub multi_indices: Vec<Vec<usize>>,
    /// `per_dim_coeffs[i][d]` is the degree-`d` polynomial of dimension `i`.
    pub per_dim_coeffs: Vec<Vec<UnivariatePoly>>,
}

impl ApceBasis {
    /// Builds per-dimension aPC families from the columns of `states`.
    pub fn build(states: &[Vec<f64>], n_max: usize) -> Result<Self> {
        let n = states.first().map(|r| r.len()).unwrap_or(0);
        if n == 0 {
            return Err(Error::invalid("empty build sample"));
        }
        let mut per_dim = Vec::with_capacity(n);
        for dim in 0..n {
            let column: Vec<f64> = states.iter().map(|r| r[dim]).collect();
            let moments = empirical_moments(&column, (2 * n_max).max(1));
            let mut family = Vec::with_capacity(n_max + 1);
            for d in 0..=n_max {
                let poly = apce_univariate(&moments, d, NormSource::Sample(&column)).map_err(|e| match e {
                    Error::SingularMoments { degree, .. } => Error::SingularMoments { dim, degree },
                    other => other,
                })?;
                family.push(poly);
            }
            per_dim.push(family);
        }
        Ok(ApceBasis {
            n,
            n_max,
            variant: BasisVariant::Orthonormal,
            multi_indices: graded_multi_indices(n, n_max),
            per_dim_coeffs: per_dim,
        })
    }

    /// Same index set over raw monomials.
    pub fn monomial(n: usize, n_max: usize) -> Self {
        ApceBasis {
            n,
            n_max,
            variant: BasisVariant::Monomial,
            multi_indices: graded_multi_indices(n, n_max),
            per_dim_coeffs: vec![(0..=n_max).map(UnivariatePoly::monomial).collect(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.multi_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multi_indices.is_empty()
    }

    fn univariate_values<S: Scalar>(&self, x: &[S], table: &mut Vec<S>) {
        let w = self.n_max + 1;
        table.clear();
        table.resize(self.n * w, S::zero());
        for (i, family) in self.per_dim_coeffs.iter().enumerate() {
            for (d, p) in family.iter().enumerate() {
                table[i * w + d] = p.eval(x[i]);
            }
        }
    }

    /// `(Phi_alpha(x))_alpha` in index order.
    pub fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut table = Vec::new();
        let mut out = vec![S::zero(); self.len()];
        self.eval_into(x, &mut table, &mut out);
        out
    }

    pub(crate) fn eval_into<S: Scalar>(&self, x: &[S], table: &mut Vec<S>, out: &mut [S]) {
        self.univariate_values(x, table);
        let w = self.n_max + 1;
        for (o, alpha) in out.iter_mut().zip(&self.multi_indices) {
            let mut v = table[alpha[0]];
            for (i, &a) in alpha.iter().enumerate().skip(1) {
                v *= table[i * w + a];
            }
            *o = v;
        }
    }

    /// Basis values and their partial derivatives, `grad[alpha * n + i]`.
    pub fn eval_with_gradient(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w = self.n_max + 1;
        let mut vals = Vec::new();
        self.univariate_values(x, &mut vals);
        let mut dvals = vec![0.0; self.n * w];
        for (i, family) in self.per_dim_coeffs.iter().enumerate() {
            for (d, p) in family.iter().enumerate() {
                dvals[i * w + d] = p.eval_derivative(x[i]);
            }
        }
        let m = self.len();
        let mut phi = vec![0.0; m];
        let mut grad = vec![0.0; m * self.n];
        for (a, alpha) in self.multi_indices.iter().enumerate() {
            let mut v = 1.0;
            for (i, &ai) in alpha.iter().enumerate() {
                v *= vals[i * w + ai];
            }
            phi[a] = v;
            for k in 0..self.n {
                let mut g = dvals[k * w + alpha[k]];
                for (i, &ai) in alpha.iter().enumerate() {
                    if i != k {
                        g *= vals[i * w + ai];
                    }
                }
                grad[a * self.n + k] = g;
            }
        }
        (phi, grad)
    }

    /// Design matrix with one row of basis values per sample point.
    pub fn design_matrix(&self, sample: &[Vec<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(sample.len(), self.len());
        for (j, x) in sample.iter().enumerate() {
            for (a, v) in self.eval(x).into_iter().enumerate() {
                m[(j, a)] = v;
            }
        }
        m
    }

    /// `(1/N) sum_j Phi_p(x_j) Phi_q(x_j)` over a joint sample of states.
    pub fn gram_matrix(&self, sample: &[Vec<f64>]) -> DMatrix<f64> {
        let v = self.design_matrix(sample);
        (v.transpose() * v) / sample.len() as f64
    }

    /// Gram matrix under the product of the per-dimension empirical
    /// marginals of `sample`, the measure the tensor basis is built for.
    pub fn product_measure_gram(&self, sample: &[Vec<f64>]) -> DMatrix<f64> {
        let w = self.n_max + 1;
        let nsamp = sample.len() as f64;
        let per_dim: Vec<DMatrix<f64>> = (0..self.n)
            .map(|i| {
                let mut g = DMatrix::zeros(w, w);
                for x in sample {
                    let vals: Vec<f64> = self.per_dim_coeffs[i].iter().map(|p| p.eval(x[i])).collect();
                    for p in 0..w {
                        for q in 0..w {
                            g[(p, q)] += vals[p] * vals[q];
                        }
                    }
                }
                g / nsamp
            })
            .collect();
        let m = self.len();
        DMatrix::from_fn(m, m, |p, q| {
            let (a, b) = (&self.multi_indices[p], &self.multi_indices[q]);
            (0..self.n).map(|i| per_dim[i][(a[i], b[i])]).product()
        })
    }

    pub fn gram_condition_number(&self, sample: &[Vec<f64>]) -> f64 {
        spd_condition_number(&self.gram_matrix(sample))
    }
}

/// Maximum absolute deviation of a square matrix from the identity.
pub fn identity_deviation(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((m[(i, j)] - target).abs());
        }
    }
    worst
}

/// Polynomial-expansion field: output `k` is `Phi(x) . theta_k`, with the
/// `n x M` coefficient matrix flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosRhs {
    pub basis: ApceBasis,
}

impl ChaosRhs {
    pub fn new(basis: ApceBasis) -> Self {
        ChaosRhs { basis }
    }
}

impl Rhs for ChaosRhs {
    fn state_dim(&self) -> usize {
        self.basis.n
    }

    fn param_count(&self) -> usize {
        self.basis.n * self.basis.len()
    }

    fn eval<S: Scalar>(&self, coeffs: &[S], x: &[S], out: &mut [S]) {
        let m = self.basis.len();
        let mut table = Vec::with_capacity(self.basis.n * (self.basis.n_max + 1));
        let mut phi = vec![S::zero(); m];
        self.basis.eval_into(x, &mut table, &mut phi);
        for (k, o) in out.iter_mut().enumerate() {
            let row = &coeffs[k * m..(k + 1) * m];
            let mut acc = S::zero();
            for (p, c) in phi.iter().zip(row) {
                acc += *p * *c;
            }
            *o = acc;
        }
    }

    fn vjp(&self, coeffs: &[f64], x: &[f64], cot: &[f64], x_bar: &mut [f64], coeff_bar: &mut [f64]) {
        let n = self.basis.n;
        let m = self.basis.len();
        let (phi, grad) = self.basis.eval_with_gradient(x);
        let mut weight = vec![0.0; m];
        for k in 0..n {
            let row = &coeffs[k * m..(k + 1) * m];
            for a in 0..m {
                coeff_bar[k * m + a] += cot[k] * phi[a];
                weight[a] += cot[k] * row[a];
            }
        }
        for a in 0..m {
            for i in 0..n {
                x_bar[i] += weight[a] * grad[a * n + i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rhs::LotkaVolterra;
    use crate::scalar::Dual;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal, Uniform};

    fn gaussian_moments(k: usize) -> MomentTable {
        // E[x^k] = (k-1)!! for even k
        MomentTable::exact(
            (0..=k)
                .map(|i| {
                    if i % 2 == 1 {
                        0.0
                    } else {
                        (1..i).step_by(2).map(|v| v as f64).product()
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn moment_examples() {
        assert_eq!(empirical_moments(&[1.0, 1.0, 1.0], 2).moments, vec![1.0, 1.0, 1.0]);
        assert_eq!(empirical_moments(&[-1.0, 1.0], 3).moments, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn gaussian_sample_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..1_000_000).map(|_| normal.sample(&mut rng)).collect();
        let mu = empirical_moments(&xs, 4).moments;
        for (got, want) in mu.iter().zip([1.0, 0.0, 1.0, 0.0, 3.0]) {
            assert!((got - want).abs() < 0.02, "{mu:?}");
        }
    }

    #[test]
    fn degree_zero_is_constant_one() {
        let sample = [0.3, 2.0, -1.0];
        let m = empirical_moments(&sample, 1);
        let p = apce_univariate(&m, 0, NormSource::Sample(&sample)).unwrap();
        assert_eq!(p.coeffs, vec![1.0]);
    }

    #[test]
    fn gaussian_degree_one_and_two() {
        let p1 = apce_univariate(&MomentTable::exact(vec![1.0, 0.0, 1.0]), 1, NormSource::Moments).unwrap();
        assert!((p1.coeffs[0]).abs() < 1e-15 && (p1.coeffs[1] - 1.0).abs() < 1e-15);
        let p2 = apce_univariate(&gaussian_moments(4), 2, NormSource::Moments).unwrap();
        let s = 2f64.sqrt();
        assert!((p2.coeffs[0] + 1.0 / s).abs() < 1e-14);
        assert!(p2.coeffs[1].abs() < 1e-14);
        assert!((p2.coeffs[2] - 1.0 / s).abs() < 1e-14);
    }

    #[test]
    fn uniform_degree_one_is_scaled_legendre() {
        let m = MomentTable::exact(vec![1.0, 0.0, 1.0 / 3.0]);
        let p = apce_univariate(&m, 1, NormSource::Moments).unwrap();
        assert!((p.coeffs[1] - 3f64.sqrt()).abs() < 1e-14 && p.coeffs[0].abs() < 1e-15);
    }

    #[test]
    fn degenerate_sample_is_singular() {
        let sample = [1.0, 2.0, 1.0, 2.0];
        let m = empirical_moments(&sample, 6);
        assert!(apce_univariate(&m, 1, NormSource::Sample(&sample)).is_ok());
        assert!(matches!(
            apce_univariate(&m, 2, NormSource::Sample(&sample)),
            Err(Error::SingularMoments { degree: 2, .. })
        ));
        let states: Vec<Vec<f64>> = sample.iter().map(|&v| vec![0.5 * v, v]).collect();
        assert!(matches!(
            ApceBasis::build(&states, 3),
            Err(Error::SingularMoments { dim: 0, degree: 2 })
        ));
    }

    #[test]
    fn multi_index_order_and_count() {
        let idx = graded_multi_indices(2, 2);
        assert_eq!(
            idx,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        assert_eq!(graded_multi_indices(2, 3).len(), 10);
        assert_eq!(graded_multi_indices(1, 0), vec![vec![0]]);
        for n in 1..=4 {
            for n_max in 0..=5 {
                assert_eq!(graded_multi_indices(n, n_max).len(), basis_size(n, n_max));
            }
        }
        assert_eq!(basis_size(2, 2), 6);
    }

    #[test]
    fn monomial_basis_values() {
        let b = ApceBasis::monomial(2, 2);
        assert_eq!(b.eval(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(b.eval(&[0.0, 0.0]), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    fn tensor_grid(lo: f64, hi: f64, per_dim: usize) -> Vec<Vec<f64>> {
        let axis: Vec<f64> = (0..per_dim)
            .map(|i| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64)
            .collect();
        let mut pts = Vec::new();
        for &a in &axis {
            for &b in &axis {
                pts.push(vec![a, b]);
            }
        }
        pts
    }

    #[test]
    fn orthonormal_on_tensor_grid() {
        let grid = tensor_grid(0.25, 7.0, 40);
        for n_max in 1..=4 {
            let b = ApceBasis::build(&grid, n_max).unwrap();
            let dev = identity_deviation(&b.gram_matrix(&grid));
            assert!(dev < 1e-8, "n_max {n_max}: {dev:e}");
        }
        let b5 = ApceBasis::build(&grid, 5).unwrap();
        assert!(identity_deviation(&b5.gram_matrix(&grid)) < 1e-6);
    }

    #[test]
    fn product_measure_gram_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let u = Uniform::new(0.5, 4.0);
        let sample: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let a: f64 = u.sample(&mut rng);
                vec![a, a * a * 0.3 + u.sample(&mut rng)]
            })
            .collect();
        let b = ApceBasis::build(&sample, 3).unwrap();
        assert!(identity_deviation(&b.product_measure_gram(&sample)) < 1e-8);
    }

    #[test]
    fn exact_polynomial_reproduction() {
        let grid = tensor_grid(-1.0, 3.0, 15);
        let b = ApceBasis::build(&grid, 3).unwrap();
        let target: Vec<f64> = grid
            .iter()
            .map(|x| 0.5 - x[0] + 2.0 * x[0] * x[1] - 0.25 * x[1].powi(3))
            .collect();
        let a = b.design_matrix(&grid);
        let y = DMatrix::from_column_slice(grid.len(), 1, &target);
        let theta = crate::linalg::ridge_least_squares(&a, &y, 0.0).unwrap();
        let resid = (&a * &theta - &y).norm() / y.norm();
        assert!(resid < 1e-8, "{resid:e}");
    }

    #[test]
    fn lv_is_exactly_representable_with_degree_two() {
        let lv = LotkaVolterra {
            alpha: 1.5,
            beta: 1.0,
            gamma: 1.0,
            delta: 3.0,
        };
        let grid = tensor_grid(0.5, 5.0, 12);
        let rhs = ChaosRhs::new(ApceBasis::build(&grid, 2).unwrap());
        let a = rhs.basis.design_matrix(&grid);
        let y = DMatrix::from_fn(grid.len(), 2, |j, k| lv.field(&grid[j])[k]);
        let theta = crate::linalg::ridge_least_squares(&a, &y, 0.0).unwrap();
        let params: Vec<f64> = (0..2).flat_map(|k| theta.column(k).iter().copied().collect::<Vec<_>>()).collect();
        let mut out = [0.0; 2];
        for x in &grid {
            rhs.eval(&params, x, &mut out);
            let f = lv.field(x);
            assert!((out[0] - f[0]).abs() < 1e-8 && (out[1] - f[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_params_give_zero_field() {
        let rhs = ChaosRhs::new(ApceBasis::monomial(2, 3));
        let mut out = [1.0; 2];
        rhs.eval(&vec![0.0; rhs.param_count()], &[1.3, -2.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn identity_expansion_on_standardized_sample() {
        // symmetric sample with unit variance: Phi_1(x) = x
        let sample: Vec<Vec<f64>> = vec![vec![-1.0], vec![1.0], vec![-1.0], vec![1.0]];
        let rhs = ChaosRhs::new(ApceBasis::build(&sample, 1).unwrap());
        let mut out = [0.0];
        rhs.eval(&[0.0, 1.0], &[0.37], &mut out);
        assert!((out[0] - 0.37).abs() < 1e-15);
    }

    #[test]
    fn handwritten_vjp_matches_dual_reference() {
        let grid = tensor_grid(0.5, 5.0, 8);
        let rhs = ChaosRhs::new(ApceBasis::build(&grid, 3).unwrap());
        let params: Vec<f64> = (0..rhs.param_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = [1.7, 2.2];
        let cot = [0.4, -1.1];
        let (mut xa, mut ca) = (vec![0.0; 2], vec![0.0; params.len()]);
        let (mut xb, mut cb) = (vec![0.0; 2], vec![0.0; params.len()]);
        rhs.vjp(&params, &x, &cot, &mut xa, &mut ca);
        crate::rhs::dual_vjp(&rhs, &params, &x, &cot, &mut xb, &mut cb);
        for (a, b) in xa.iter().zip(&xb).chain(ca.iter().zip(&cb)) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let grid = tensor_grid(0.3, 6.0, 9);
        let b = ApceBasis::build(&grid, 3).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        let back: ApceBasis = serde_json::from_str(&json).unwrap();
        assert_eq!(b, back);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["n", "n_max", "multi_indices", "per_dim_coeffs"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    proptest! {
        #[test]
        fn dual_basis_values_match_plain(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let grid = tensor_grid(-2.0, 2.5, 10);
            let basis = ApceBasis::build(&grid, 4).unwrap();
            let plain = basis.eval(&[a, b]);
            let dual = basis.eval(&[Dual::<2>::constant(a), Dual::<2>::constant(b)]);
            for (p, d) in plain.iter().zip(&dual) {
                prop_assert_eq!(*p, d.re);
            }
        }
    }
}
