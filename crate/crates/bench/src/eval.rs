//! The three evaluation setups and the trajectory MSE.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use chaosode::integrate::Substeps;
use chaosode::pipeline::TrainedModel;
use serde::{Deserialize, Serialize};

use crate::data::linspace;
use crate::error::{BenchError, Result};
use crate::lv::{reference_solve, REFERENCE_MAX_STEP};

/// Number of equidistant evaluation points per setup.
pub const DEFAULT_EVAL_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupName {
    /// Training span and initial condition.
    ExIt,
    /// Doubled span, training initial condition.
    ExOot,
    /// Doubled span, unseen initial condition.
    ExOod,
}

impl SetupName {
    pub const ALL: [SetupName; 3] = [SetupName::ExIt, SetupName::ExOot, SetupName::ExOod];

    pub fn as_str(&self) -> &'static str {
        match self {
            SetupName::ExIt => "ex_it",
            SetupName::ExOot => "ex_oot",
            SetupName::ExOod => "ex_ood",
        }
    }
}

impl fmt::Display for SetupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SetupName {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "ex_it" => Ok(SetupName::ExIt),
            "ex_oot" => Ok(SetupName::ExOot),
            "ex_ood" => Ok(SetupName::ExOod),
            _ => Err(BenchError::Invalid(format!("unknown setup {s:?} (expected ex_it, ex_oot or ex_ood)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSetup {
    pub name: SetupName,
    pub span: (f64, f64),
    pub x0: Vec<f64>,
}

impl EvalSetup {
    pub fn ex_it() -> Self {
        EvalSetup {
            name: SetupName::ExIt,
            span: (0.0, 7.0),
            x0: vec![1.0, 1.0],
        }
    }

    pub fn ex_oot() -> Self {
        EvalSetup {
            name: SetupName::ExOot,
            span: (0.0, 14.0),
            x0: vec![1.0, 1.0],
        }
    }

    pub fn ex_ood() -> Self {
        EvalSetup {
            name: SetupName::ExOod,
            span: (0.0, 14.0),
            x0: vec![0.5, 0.5],
        }
    }

    pub fn named(name: SetupName) -> Self {
        match name {
            SetupName::ExIt => Self::ex_it(),
            SetupName::ExOot => Self::ex_oot(),
            SetupName::ExOod => Self::ex_ood(),
        }
    }

    pub fn all() -> [EvalSetup; 3] {
        [Self::ex_it(), Self::ex_oot(), Self::ex_ood()]
    }

    pub fn times(&self, n_eval: usize) -> Vec<f64> {
        linspace(self.span.0, self.span.1, n_eval)
    }
}

type CacheKey = (u64, u64, Vec<u64>, usize);
type ReferenceCache = Mutex<HashMap<CacheKey, Arc<Vec<Vec<f64>>>>>;

fn reference_cache() -> &'static ReferenceCache {
    static CACHE: OnceLock<ReferenceCache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// True-system states on the setup's evaluation grid, computed once per
/// `(span, x0, n_eval)`.
pub fn reference_states(setup: &EvalSetup, n_eval: usize) -> Result<Arc<Vec<Vec<f64>>>> {
    let key = (
        setup.span.0.to_bits(),
        setup.span.1.to_bits(),
        setup.x0.iter().map(|v| v.to_bits()).collect(),
        n_eval,
    );
    if let Some(hit) = reference_cache().lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let states = Arc::new(reference_solve(&setup.x0, setup.span.0, &setup.times(n_eval))?.states);
    reference_cache().lock().unwrap().insert(key, states.clone());
    Ok(states)
}

/// Mean squared error over all entries; `+inf` if any entry is not finite
/// or the shapes differ.
pub fn trajectory_mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.len() != b.len() || a.is_empty() {
        return f64::INFINITY;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (ra, rb) in a.iter().zip(b) {
        if ra.len() != rb.len() {
            return f64::INFINITY;
        }
        for (u, v) in ra.iter().zip(rb) {
            sum += (u - v) * (u - v);
            count += 1;
        }
    }
    let mse = sum / count as f64;
    if mse.is_finite() {
        mse
    } else {
        f64::INFINITY
    }
}

/// MSE between the learned and the true trajectory of `setup`, both solved
/// with the reference step. A diverged learned solve scores `+inf`.
pub fn evaluate(model: &TrainedModel, setup: &EvalSetup, n_eval: usize) -> f64 {
    let Ok(reference) = reference_states(setup, n_eval) else {
        return f64::INFINITY;
    };
    match model.solve(&setup.x0, setup.span.0, &setup.times(n_eval), Substeps::MaxStep(REFERENCE_MAX_STEP)) {
        Ok(traj) => trajectory_mse(&traj.states, &reference),
        Err(_) => f64::INFINITY,
    }
}

/// `[ex_it, ex_oot, ex_ood]` errors.
pub fn evaluate_all(model: &TrainedModel, n_eval: usize) -> [f64; 3] {
    EvalSetup::all().map(|s| evaluate(model, &s, n_eval))
}
