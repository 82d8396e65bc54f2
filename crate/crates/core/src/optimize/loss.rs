//! Trajectory-matching losses and their exact discrete gradients.

use serde::{Deserialize, Serialize};

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::integrate::{integrate_bound, rk4_step_into, segment_grid, Rk4Scratch, SegmentPlan, Substeps};
use crate::rhs::{BoundRhs, Rhs};
use crate::scalar::{Dual8, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShootingMode {
    Single,
    Multiple { plan: SegmentPlan, continuity_weight: f64 },
}

/// Finite loss reported for parameters whose solve diverges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergencePolicy {
    pub penalty_loss: f64,
}

impl Default for DivergencePolicy {
    fn default() -> Self {
        DivergencePolicy { penalty_loss: 1e12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Reverse sweep through the stored RK4 steps.
    #[default]
    Adjoint,
    /// Batched dual-number tangents through the unrolled solve.
    Forward,
}

pub struct LossSpec<'a, R> {
    pub mode: ShootingMode,
    pub data: &'a ObservationSet,
    pub rhs: &'a R,
    pub substeps: Substeps,
    pub divergence: DivergencePolicy,
}

/// One integrated stretch with the observations it is scored against.
struct Piece<'a> {
    start: &'a [f64],
    t0: f64,
    times: &'a [f64],
    targets: &'a [Vec<f64>],
    /// Index into `targets` whose mismatch also enters the continuity term.
    boundary: Option<usize>,
}

impl<'a, R: Rhs> LossSpec<'a, R> {
    pub fn single(rhs: &'a R, data: &'a ObservationSet) -> Self {
        LossSpec {
            mode: ShootingMode::Single,
            data,
            rhs,
            substeps: Substeps::default(),
            divergence: DivergencePolicy::default(),
        }
    }

    pub fn multiple(rhs: &'a R, data: &'a ObservationSet, points_per_segment: usize, continuity_weight: f64) -> Self {
        LossSpec {
            mode: ShootingMode::Multiple {
                plan: segment_grid(data.len(), points_per_segment),
                continuity_weight,
            },
            data,
            rhs,
            substeps: Substeps::default(),
            divergence: DivergencePolicy::default(),
        }
    }

    pub fn with_substeps(mut self, substeps: Substeps) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.substeps.validate()?;
        if self.data.dim() != self.rhs.state_dim() {
            return Err(Error::invalid("data and field dimensions differ"));
        }
        if let ShootingMode::Multiple { plan, continuity_weight } = &self.mode {
            if !(*continuity_weight >= 0.0) {
                return Err(Error::invalid("continuity weight must be non-negative"));
            }
            if !plan.is_valid_for(self.data.len()) {
                return Err(Error::invalid("segment plan does not match the data"));
            }
        }
        Ok(())
    }

    fn pieces(&self) -> Vec<Piece<'_>> {
        let d = self.data;
        match &self.mode {
            ShootingMode::Single => vec![Piece {
                start: &d.x0,
                t0: d.t0,
                times: &d.times,
                targets: &d.states,
                boundary: None,
            }],
            ShootingMode::Multiple { plan, .. } => {
                let last = plan.segment_bounds.len().saturating_sub(1);
                plan.segment_bounds
                    .iter()
                    .enumerate()
                    .map(|(k, &(s, e))| Piece {
                        start: &d.states[s],
                        t0: d.times[s],
                        times: &d.times[s + 1..=e],
                        targets: &d.states[s + 1..=e],
                        boundary: (k < last).then_some(e - s - 1),
                    })
                    .collect()
            }
        }
    }

    fn continuity_weight(&self) -> f64 {
        match self.mode {
            ShootingMode::Single => 0.0,
            ShootingMode::Multiple { continuity_weight, .. } => continuity_weight,
        }
    }

    fn entry_count(&self) -> usize {
        self.pieces().iter().map(|p| p.targets.len()).sum::<usize>() * self.data.dim()
    }

    /// Loss over any scalar kind; `Err` when the solve diverges.
    pub fn try_loss<S: Scalar>(&self, params: &[S]) -> Result<S> {
        let field = BoundRhs::new(self.rhs, params)?;
        let mut data_sum = S::zero();
        let mut cont_sum = S::zero();
        for piece in self.pieces() {
            let x0: Vec<S> = piece.start.iter().map(|&v| S::from_f64(v)).collect();
            let traj = integrate_bound(&field, &x0, piece.t0, piece.times, self.substeps)?;
            for (j, (x, y)) in traj.states.iter().zip(piece.targets).enumerate() {
                let mut sq = S::zero();
                for (a, &b) in x.iter().zip(y) {
                    let r = *a - b;
                    sq += r * r;
                }
                data_sum += sq;
                if piece.boundary == Some(j) {
                    cont_sum += sq;
                }
            }
        }
        let total = data_sum / self.entry_count() as f64 + cont_sum * self.continuity_weight();
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::NonFinite)
        }
    }

    /// Loss with divergence mapped to the penalty value.
    pub fn loss(&self, params: &[f64]) -> f64 {
        self.try_loss(params).unwrap_or(self.divergence.penalty_loss)
    }

    pub fn value_and_gradient(&self, params: &[f64], mode: GradientMode) -> Result<(f64, Vec<f64>)> {
        match mode {
            GradientMode::Adjoint => self.adjoint(params),
            GradientMode::Forward => self.forward(params),
        }
    }

    pub fn gradient(&self, params: &[f64], mode: GradientMode) -> Result<Vec<f64>> {
        self.value_and_gradient(params, mode).map(|(_, g)| g)
    }

    fn forward(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        const K: usize = 8;
        let p = params.len();
        let mut grad = vec![0.0; p];
        let mut value = self.try_loss(params).map_err(|_| Error::DivergedNoGradient)?;
        for start in (0..p).step_by(K) {
            let seeded: Vec<Dual8> = params
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if i >= start && i < start + K {
                        Dual8::variable(v, i - start)
                    } else {
                        Dual8::constant(v)
                    }
                })
                .collect();
            let l = self.try_loss(&seeded).map_err(|_| Error::DivergedNoGradient)?;
            value = l.re;
            let k = K.min(p - start);
            grad[start..start + k].copy_from_slice(&l.eps[..k]);
        }
        Ok((value, grad))
    }

    fn adjoint(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let field = BoundRhs::new(self.rhs, params)?;
        let coeffs = field.coeffs();
        let n = self.data.dim();
        let inv_count = 1.0 / self.entry_count() as f64;
        let w = self.continuity_weight();
        let mut coeff_bar = vec![0.0; coeffs.len()];
        let mut scratch = Rk4Scratch::new(n);
        let mut back = AdjointScratch::new(n);
        let (mut data_sum, mut cont_sum) = (0.0, 0.0);

        for piece in self.pieces() {
            // forward: record every step start and the step index of each output
            let mut x = piece.start.to_vec();
            let mut next = vec![0.0; n];
            let mut starts: Vec<Vec<f64>> = Vec::new();
            let mut hs: Vec<f64> = Vec::new();
            let mut marks = Vec::with_capacity(piece.times.len());
            let mut outputs = Vec::with_capacity(piece.times.len());
            let mut t = piece.t0;
            for &target in piece.times {
                let steps = self.substeps.steps_for(target - t);
                if steps > 0 {
                    let h = (target - t) / steps as f64;
                    for _ in 0..steps {
                        rk4_step_into(&field, &x, h, &mut scratch, &mut next).map_err(|_| Error::DivergedNoGradient)?;
                        starts.push(std::mem::replace(&mut x, next.clone()));
                        hs.push(h);
                    }
                }
                t = target;
                marks.push(hs.len());
                outputs.push(x.clone());
            }

            for (j, (x, y)) in outputs.iter().zip(piece.targets).enumerate() {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                data_sum += sq;
                if piece.boundary == Some(j) {
                    cont_sum += sq;
                }
            }

            // reverse
            let mut x_bar = vec![0.0; n];
            let mut step = hs.len();
            for j in (0..outputs.len()).rev() {
                let weight = inv_count + if piece.boundary == Some(j) { w } else { 0.0 };
                for d in 0..n {
                    x_bar[d] += 2.0 * weight * (outputs[j][d] - piece.targets[j][d]);
                }
                let stop = if j == 0 { 0 } else { marks[j - 1] };
                while step > stop {
                    step -= 1;
                    rk4_step_vjp(&field, &starts[step], hs[step], &mut x_bar, &mut coeff_bar, &mut back);
                }
            }
        }

        let value = data_sum / self.entry_count() as f64 + cont_sum * w;
        if !value.is_finite() || coeff_bar.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedNoGradient);
        }
        Ok((value, self.rhs.coefficients_vjp(&coeff_bar)))
    }
}

struct AdjointScratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    z2: Vec<f64>,
    z3: Vec<f64>,
    z4: Vec<f64>,
    kb: Vec<f64>,
    zb: Vec<f64>,
}

impl AdjointScratch {
    fn new(n: usize) -> Self {
        let v = || vec![0.0; n];
        AdjointScratch {
            k1: v(),
            k2: v(),
            k3: v(),
            z2: v(),
            z3: v(),
            z4: v(),
            kb: v(),
            zb: v(),
        }
    }
}

/// Pulls the cotangent of one RK4 step's output back to its input (in place)
/// and accumulates the coefficient cotangent.
fn rk4_step_vjp<R: Rhs>(
    field: &BoundRhs<'_, R, f64>,
    x: &[f64],
    h: f64,
    x_bar: &mut [f64],
    coeff_bar: &mut [f64],
    s: &mut AdjointScratch,
) {
    let rhs = field.rhs();
    let c = field.coeffs();
    let n = x.len();
    let half = h * 0.5;
    field.eval(x, &mut s.k1);
    for i in 0..n {
        s.z2[i] = x[i] + s.k1[i] * half;
    }
    field.eval(&s.z2, &mut s.k2);
    for i in 0..n {
        s.z3[i] = x[i] + s.k2[i] * half;
    }
    field.eval(&s.z3, &mut s.k3);
    for i in 0..n {
        s.z4[i] = x[i] + s.k3[i] * h;
    }

    let sixth = h / 6.0;
    let third = h / 3.0;
    // stage 4
    for i in 0..n {
        s.kb[i] = x_bar[i] * sixth;
    }
    s.zb.iter_mut().for_each(|v| *v = 0.0);
    rhs.vjp(c, &s.z4, &s.kb, &mut s.zb, coeff_bar);
    let out_bar = x_bar.to_vec();
    for i in 0..n {
        x_bar[i] += s.zb[i];
        s.kb[i] = out_bar[i] * third + s.zb[i] * h;
    }
    // stage 3
    s.zb.iter_mut().for_each(|v| *v = 0.0);
    rhs.vjp(c, &s.z3, &s.kb, &mut s.zb, coeff_bar);
    for i in 0..n {
        x_bar[i] += s.zb[i];
        s.kb[i] = out_bar[i] * third + s.zb[i] * half;
    }
    // stage 2
    s.zb.iter_mut().for_each(|v| *v = 0.0);
    rhs.vjp(c, &s.z2, &s.kb, &mut s.zb, coeff_bar);
    for i in 0..n {
        x_bar[i] += s.zb[i];
        s.kb[i] = out_bar[i] * sixth + s.zb[i] * half;
    }
    // stage 1
    s.zb.iter_mut().for_each(|v| *v = 0.0);
    rhs.vjp(c, x, &s.kb, &mut s.zb, coeff_bar);
    for i in 0..n {
        x_bar[i] += s.zb[i];
    }
}
