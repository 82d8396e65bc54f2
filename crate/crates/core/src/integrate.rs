//! Fixed-step RK4 initial-value solving aligned to observation times.
//!
//! Steps never straddle an output time: each interval between consecutive
//! output times (and from `t0` to the first one) is split into equal
//! sub-steps. Any non-finite intermediate aborts the whole solve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rhs::{BoundRhs, Rhs};
use crate::scalar::Scalar;

/// Default upper bound on the internal step between observations.
pub const DEFAULT_MAX_STEP: f64 = 0.01;

/// How many RK4 steps to take per output interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substeps {
    /// Exactly this many equal steps per interval.
    Fixed(usize),
    /// The fewest equal steps keeping the step at or below this size.
    MaxStep(f64),
}

impl Default for Substeps {
    fn default() -> Self {
        Substeps::MaxStep(DEFAULT_MAX_STEP)
    }
}

impl Substeps {
    /// Number of steps used to cross an interval of length `dt`.
    pub fn steps_for(&self, dt: f64) -> usize {
        if dt <= 0.0 {
            return 0;
        }
        match *self {
            Substeps::Fixed(n) => n.max(1),
            Substeps::MaxStep(h) => ((dt / h) - 1e-9).ceil().max(1.0) as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Substeps::Fixed(0) => Err(Error::invalid("substeps must be positive")),
            Substeps::MaxStep(h) if !(h > 0.0 && h.is_finite()) => {
                Err(Error::invalid("max step must be positive and finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Initial-value problem for a parameterized field.
#[derive(Debug, Clone)]
pub struct Ivp<'a, R, S> {
    pub rhs: &'a R,
    pub params: Vec<S>,
    pub x0: Vec<S>,
    pub t0: f64,
    pub t_end: f64,
}

impl<'a, R: Rhs, S: Scalar> Ivp<'a, R, S> {
    pub fn new(rhs: &'a R, params: Vec<S>, x0: Vec<S>, t0: f64, t_end: f64) -> Result<Self> {
        if !(t_end > t0) {
            return Err(Error::invalid("t_end must exceed t0"));
        }
        if x0.len() != rhs.state_dim() {
            return Err(Error::invalid(format!(
                "x0 has dimension {}, field has {}",
                x0.len(),
                rhs.state_dim()
            )));
        }
        Ok(Ivp {
            rhs,
            params,
            x0,
            t0,
            t_end,
        })
    }
}

/// States of a solve at the requested output times; every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S = f64> {
    pub times: Vec<f64>,
    pub states: Vec<Vec<S>>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn values(&self) -> Trajectory<f64> {
        Trajectory {
            times: self.times.clone(),
            states: self
                .states
                .iter()
                .map(|row| row.iter().map(|v| v.value()).collect())
                .collect(),
        }
    }
}

/// Multiple-shooting segmentation of an observation grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    /// Inclusive `(start, end)` index pairs; consecutive segments share an index.
    pub segment_bounds: Vec<(usize, usize)>,
}

impl SegmentPlan {
    pub fn len(&self) -> usize {
        self.segment_bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_bounds.is_empty()
    }

    /// Checks coverage of `0..m`, shared boundaries and minimum segment size.
    pub fn is_valid_for(&self, m: usize) -> bool {
        let b = &self.segment_bounds;
        if b.is_empty() || b[0].0 != 0 || b[b.len() - 1].1 != m - 1 {
            return false;
        }
        b.iter().all(|&(s, e)| e > s) && b.windows(2).all(|w| w[0].1 == w[1].0)
    }
}

/// Greedy left-to-right chunks of `target` indices sharing boundary indices.
pub fn segment_grid(m: usize, target_points_per_segment: usize) -> SegmentPlan {
    assert!(m >= 2, "need at least two observation times");
    let target = target_points_per_segment.max(2);
    let mut bounds = Vec::new();
    let mut start = 0;
    loop {
        // the chunk after `end` shares its first index, so it always has >= 2
        let end = (start + target - 1).min(m - 1);
        bounds.push((start, end));
        if end == m - 1 {
            break;
        }
        start = end;
    }
    SegmentPlan {
        segment_bounds: bounds,
    }
}

/// Scratch buffers for allocation-free stepping.
pub(crate) struct Rk4Scratch<S> {
    pub k1: Vec<S>,
    pub k2: Vec<S>,
    pub k3: Vec<S>,
    pub k4: Vec<S>,
    pub z: Vec<S>,
}

impl<S: Scalar> Rk4Scratch<S> {
    pub fn new(n: usize) -> Self {
        let z = vec![S::zero(); n];
        Rk4Scratch {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            z,
        }
    }
}

fn all_finite<S: Scalar>(v: &[S]) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn rk4_step_into<R: Rhs, S: Scalar>(
    field: &BoundRhs<'_, R, S>,
    x: &[S],
    h: f64,
    s: &mut Rk4Scratch<S>,
    out: &mut [S],
) -> Result<()> {
    let half = h * 0.5;
    field.eval(x, &mut s.k1);
    for ((z, &xi), &k) in s.z.iter_mut().zip(x).zip(&s.k1) {
        *z = xi + k * half;
    }
    field.eval(&s.z, &mut s.k2);
    for ((z, &xi), &k) in s.z.iter_mut().zip(x).zip(&s.k2) {
        *z = xi + k * half;
    }
    field.eval(&s.z, &mut s.k3);
    for ((z, &xi), &k) in s.z.iter_mut().zip(x).zip(&s.k3) {
        *z = xi + k * h;
    }
    field.eval(&s.z, &mut s.k4);
    let sixth = h / 6.0;
    for i in 0..x.len() {
        out[i] = x[i] + (s.k1[i] + s.k2[i] * 2.0 + s.k3[i] * 2.0 + s.k4[i]) * sixth;
    }
    if all_finite(&s.k1) && all_finite(&s.k2) && all_finite(&s.k3) && all_finite(&s.k4) && all_finite(out) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// One classical RK4 step `x + h/6 (k1 + 2 k2 + 2 k3 + k4)`.
pub fn rk4_step<R: Rhs, S: Scalar>(field: &BoundRhs<'_, R, S>, x: &[S], h: f64) -> Result<Vec<S>> {
    if !(h > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    if !all_finite(x) {
        return Err(Error::NonFinite);
    }
    let mut scratch = Rk4Scratch::new(x.len());
    let mut out = vec![S::zero(); x.len()];
    rk4_step_into(field, x, h, &mut scratch, &mut out)?;
    Ok(out)
}

/// Solves the IVP and returns states at exactly `output_times`.
pub fn solve<R: Rhs, S: Scalar>(
    ivp: &Ivp<'_, R, S>,
    output_times: &[f64],
    substeps: Substeps,
) -> Result<Trajectory<S>> {
    let field = BoundRhs::new(ivp.rhs, &ivp.params)?;
    if let (Some(&first), Some(&last)) = (output_times.first(), output_times.last()) {
        if first < ivp.t0 || last > ivp.t_end {
            return Err(Error::invalid("output times must lie within [t0, t_end]"));
        }
    }
    integrate_bound(&field, &ivp.x0, ivp.t0, output_times, substeps)
}

/// Marches a bound field from `(t0, x0)` through ascending `times`.
pub fn integrate_bound<R: Rhs, S: Scalar>(
    field: &BoundRhs<'_, R, S>,
    x0: &[S],
    t0: f64,
    times: &[f64],
    substeps: Substeps,
) -> Result<Trajectory<S>> {
    substeps.validate()?;
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("output times must be strictly ascending"));
    }
    if !all_finite(x0) {
        return Err(Error::Diverged { at_time: t0 });
    }
    let n = x0.len();
    let mut scratch = Rk4Scratch::new(n);
    let mut x = x0.to_vec();
    let mut next = vec![S::zero(); n];
    let mut states = Vec::with_capacity(times.len());
    let mut t = t0;
    for &target in times {
        let steps = substeps.steps_for(target - t);
        if steps > 0 {
            let h = (target - t) / steps as f64;
            for k in 0..steps {
                if rk4_step_into(field, &x, h, &mut scratch, &mut next).is_err() {
                    return Err(Error::Diverged {
                        at_time: t + h * (k + 1) as f64,
                    });
                }
                std::mem::swap(&mut x, &mut next);
            }
        }
        t = target;
        states.push(x.clone());
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
    })
}
