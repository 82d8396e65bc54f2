use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-stamped, possibly noisy state observations of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    /// One row per time, `dim` columns.
    pub states: Vec<Vec<f64>>,
    /// Standard deviation of the additive noise (0 for clean data).
    pub sigma: f64,
    pub seed: u64,
    /// Known initial state at `t0`.
    pub x0: Vec<f64>,
    pub t0: f64,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, x0: Vec<f64>, t0: f64) -> Result<Self> {
        let set = ObservationSet {
            times,
            states,
            sigma: 0.0,
            seed: 0,
            x0,
            t0,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.states.len() {
            return Err(Error::invalid("times and states differ in length"));
        }
        if self.times.len() < 2 {
            return Err(Error::invalid("need at least two observations"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("observation times must be strictly ascending"));
        }
        if self.times[0] < self.t0 {
            return Err(Error::invalid("observations precede t0"));
        }
        let n = self.x0.len();
        if n == 0 || self.states.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("state rows must match the dimension of x0"));
        }
        if self.states.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.states.iter().map(|r| r[d]).collect()
    }

    /// Per-dimension `(min, max)` over the observed states.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|d| {
                self.states.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[d]), hi.max(r[d]))
                })
            })
            .collect()
    }
}
