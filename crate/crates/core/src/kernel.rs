//! Kernel collocation fields and kernel-in-time regression surrogates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;
use crate::rhs::Rhs;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    GaussianRbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub lengthscale: f64,
    /// Ridge added to the kernel matrix diagonal.
    pub lambda: f64,
}

impl KernelSpec {
    pub fn gaussian(lengthscale: f64, lambda: f64) -> Result<Self> {
        let spec = KernelSpec {
            kind: KernelKind::GaussianRbf,
            lengthscale,
            lambda,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::invalid("lengthscale must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("regularization must be non-negative"));
        }
        Ok(())
    }

    #[inline]
    fn gamma(&self) -> f64 {
        -0.5 / (self.lengthscale * self.lengthscale)
    }

    /// `exp(-|a - b|^2 / (2 l^2))`.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (sq * self.gamma()).exp()
    }

    #[inline]
    fn eval_generic<S: Scalar>(&self, x: &[S], center: &[f64]) -> S {
        let mut sq = S::zero();
        for (xi, &ci) in x.iter().zip(center) {
            let d = *xi - ci;
            sq += d * d;
        }
        (sq * self.gamma()).exp()
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let p = points.len();
        DMatrix::from_fn(p, p, |i, j| {
            self.eval(&points[i], &points[j]) + if i == j { self.lambda } else { 0.0 }
        })
    }
}

/// How a kernel lengthscale is chosen from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthscalePolicy {
    Fixed(f64),
    /// Median pairwise distance of the point set.
    MedianPairwise,
    /// Multiple of the median distance between consecutive 1-D points.
    SpacingMultiple(f64),
}

impl LengthscalePolicy {
    pub fn resolve(&self, points: &[Vec<f64>]) -> f64 {
        match *self {
            LengthscalePolicy::Fixed(l) => l,
            LengthscalePolicy::MedianPairwise => median_pairwise_distance(points),
            LengthscalePolicy::SpacingMultiple(k) => {
                let mut gaps: Vec<f64> = points
                    .windows(2)
                    .map(|w| euclidean(&w[0], &w[1]))
                    .collect();
                k * median(&mut gaps)
            }
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(points.len() * points.len() / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(euclidean(&points[i], &points[j]));
        }
    }
    median(&mut d)
}

/// Pilot point locations in state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CollocationSet {
    pub points: Vec<Vec<f64>>,
}

impl CollocationSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("no pilot points"));
        }
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if euclidean(&points[i], &points[j]) == 0.0 {
                    return Err(Error::invalid(format!("pilot points {i} and {j} coincide")));
                }
            }
        }
        Ok(CollocationSet { points })
    }

    /// Uniform `per_dim^n` grid over a box, each side widened by `inflate`
    /// times its width.
    pub fn grid(bbox: &[(f64, f64)], per_dim: usize, inflate: f64) -> Result<Self> {
        if per_dim < 2 {
            return Err(Error::invalid("grid needs at least two points per dimension"));
        }
        let axes: Vec<Vec<f64>> = bbox
            .iter()
            .map(|&(lo, hi)| {
                let width = hi - lo;
                let pad = if width > 0.0 {
                    inflate * width
                } else {
                    0.1 * lo.abs().max(1.0)
                };
                let (a, b) = (lo - pad, hi + pad);
                (0..per_dim)
                    .map(|i| a + (b - a) * i as f64 / (per_dim - 1) as f64)
                    .collect()
            })
            .collect();
        let mut points = vec![Vec::new()];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        CollocationSet::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct KernelRhsSchema {
    spec: KernelSpec,
    pilot_points: CollocationSet,
}

/// Per-dimension kernel expansions `f_d(x) = sum_i c_i^d k(x, x_i)` whose
/// coefficients follow from trainable pilot values by `c = (K + lambda I)^-1 theta`.
///
/// Parameters are the pilot values, laid out pilot-major (`theta[i * n + d]`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "KernelRhsSchema", into = "KernelRhsSchema")]
pub struct KernelRhs {
    spec: KernelSpec,
    colloc: CollocationSet,
    factor: CholeskyFactor,
}

impl PartialEq for KernelRhs {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.colloc == other.colloc
    }
}

impl TryFrom<KernelRhsSchema> for KernelRhs {
    type Error = Error;
    fn try_from(s: KernelRhsSchema) -> Result<Self> {
        KernelRhs::new(s.spec, s.pilot_points)
    }
}

impl From<KernelRhs> for KernelRhsSchema {
    fn from(k: KernelRhs) -> Self {
        KernelRhsSchema {
            spec: k.spec,
            pilot_points: k.colloc,
        }
    }
}

impl KernelRhs {
    pub fn new(spec: KernelSpec, colloc: CollocationSet) -> Result<Self> {
        spec.validate()?;
        let n = colloc.points[0].len();
        if colloc.points.iter().any(|p| p.len() != n) {
            return Err(Error::invalid("pilot points differ in dimension"));
        }
        let factor = CholeskyFactor::new(spec.gram(&colloc.points))?;
        Ok(KernelRhs { spec, colloc, factor })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn pilots(&self) -> &CollocationSet {
        &self.colloc
    }

    /// `c_d = (K + lambda I)^-1 theta_d` for every output dimension; rows are pilots.
    pub fn fit_coefficients(&self, pilot_values: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let flat: Vec<f64> = pilot_values.iter().flatten().copied().collect();
        let c = self.coefficients(&flat);
        c.chunks(self.state_dim()).map(|r| r.to_vec()).collect()
    }

    fn solve_columns<S: Scalar>(&self, values: &[S]) -> Vec<S> {
        let n = self.state_dim();
        let p = self.colloc.len();
        let mut out = values.to_vec();
        let mut col = vec![S::zero(); p];
        for d in 0..n {
            for i in 0..p {
                col[i] = values[i * n + d];
            }
            self.factor.solve_in_place(&mut col);
            for i in 0..p {
                out[i * n + d] = col[i];
            }
        }
        out
    }

    /// Kernel features `k(x, x_i)` for each pilot.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.colloc.points.iter().map(|p| self.spec.eval(x, p)).collect()
    }
}

impl Rhs for KernelRhs {
    fn state_dim(&self) -> usize {
        self.colloc.points[0].len()
    }

    fn param_count(&self) -> usize {
        self.colloc.len() * self.state_dim()
    }

    fn coefficients<S: Scalar>(&self, params: &[S]) -> Vec<S> {
        self.solve_columns(params)
    }

    fn coefficients_vjp(&self, coeff_bar: &[f64]) -> Vec<f64> {
        // K + lambda I is symmetric, so the transpose solve is the same solve
        self.solve_columns(coeff_bar)
    }

    fn eval<S: Scalar>(&self, coeffs: &[S], x: &[S], out: &mut [S]) {
        let n = out.len();
        out.iter_mut().for_each(|o| *o = S::zero());
        for (i, p) in self.colloc.points.iter().enumerate() {
            let k = self.spec.eval_generic(x, p);
            for d in 0..n {
                out[d] += coeffs[i * n + d] * k;
            }
        }
    }

    fn vjp(&self, coeffs: &[f64], x: &[f64], cot: &[f64], x_bar: &mut [f64], coeff_bar: &mut [f64]) {
        let n = x.len();
        let inv_l2 = 1.0 / (self.spec.lengthscale * self.spec.lengthscale);
        for (i, p) in self.colloc.points.iter().enumerate() {
            let k = self.spec.eval(x, p);
            let mut w = 0.0;
            for d in 0..n {
                coeff_bar[i * n + d] += cot[d] * k;
                w += cot[d] * coeffs[i * n + d];
            }
            let s = -w * k * inv_l2;
            for j in 0..n {
                x_bar[j] += s * (x[j] - p[j]);
            }
        }
    }
}

/// Kernel ridge regression of each (mean-centred) state coordinate against time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSurrogate {
    pub spec: KernelSpec,
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    /// `weights[d][i]`: regression weight of centre `i` for dimension `d`.
    pub weights: Vec<Vec<f64>>,
}

pub fn fit_time_surrogate(data: &ObservationSet, spec: KernelSpec) -> Result<TimeSurrogate> {
    spec.validate()?;
    if data.len() < 2 {
        return Err(Error::invalid("time surrogate needs at least two observations"));
    }
    let centres: Vec<Vec<f64>> = data.times.iter().map(|&t| vec![t]).collect();
    let factor = CholeskyFactor::new(spec.gram(&centres))?;
    let mut means = Vec::with_capacity(data.dim());
    let weights = (0..data.dim())
        .map(|d| {
            let mut col = data.column(d);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.iter_mut().for_each(|v| *v -= mean);
            means.push(mean);
            factor.solve_in_place(&mut col);
            col
        })
        .collect();
    Ok(TimeSurrogate {
        spec,
        times: data.times.clone(),
        means,
        weights,
    })
}

impl TimeSurrogate {
    pub fn value(&self, t: f64) -> Vec<f64> {
        let k: Vec<f64> = self.times.iter().map(|&ti| self.spec.eval(&[t], &[ti])).collect();
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| m + w.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Analytic time derivative `sum_i a_i dk(t, t_i)/dt`.
    pub fn derivative(&self, t: f64) -> Vec<f64> {
        let inv_l2 = 1.0 / (self.spec.lengthscale * self.spec.lengthscale);
        let dk: Vec<f64> = self
            .times
            .iter()
            .map(|&ti| -(t - ti) * inv_l2 * self.spec.eval(&[t], &[ti]))
            .collect();
        self.weights
            .iter()
            .map(|w| w.iter().zip(&dk).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Derivative of the surrogate at `t`.
pub fn surrogate_derivative(s: &TimeSurrogate, t: f64) -> Vec<f64> {
    s.derivative(t)
}
