//! Noisy observations of the true system and their on-disk form.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chaosode::ObservationSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::lv::reference_solve;

/// Everything needed to regenerate one training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub span: (f64, f64),
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            n: 35,
            sigma: 0.0,
            seed: 0,
            x0: vec![1.0, 1.0],
            span: (0.0, 7.0),
        }
    }
}

impl DataSpec {
    pub fn generate(&self) -> Result<ObservationSet> {
        generate_data(self.n, self.sigma, self.seed, &self.x0, self.span)
    }
}

/// `n` equidistant points from `a` to `b`, both included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Reference trajectory from `x0` sampled at `n` equidistant times of `span`
/// (endpoints included), plus i.i.d. `N(0, sigma^2)` noise on every entry.
///
/// The noise stream depends only on `seed`; `sigma = 0` draws nothing.
pub fn generate_data(n: usize, sigma: f64, seed: u64, x0: &[f64], span: (f64, f64)) -> Result<ObservationSet> {
    if n < 2 {
        return Err(BenchError::Invalid("need at least two observations".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(BenchError::Invalid(format!("noise level {sigma} must be finite and non-negative")));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(span.1 > span.0) {
        return Err(BenchError::Invalid("empty time span".into()));
    }
    let times = linspace(span.0, span.1, n);
    let mut states = reference_solve(x0, span.0, &times)?.states;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| BenchError::Invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for row in &mut states {
            for v in row.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    let mut set = ObservationSet::new(times, states, x0.to_vec(), span.0)?;
    set.sigma = sigma;
    set.seed = seed;
    Ok(set)
}

/// Metadata stored next to a data CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSidecar {
    pub sigma: f64,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub t0: f64,
}

/// Sidecar path for a data file: `data.csv` -> `data.json`.
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `t,x1,..,xn` rows and the JSON sidecar.
pub fn write_data(path: &Path, data: &ObservationSet) -> Result<()> {
    let mut out = String::from("t");
    for d in 0..data.dim() {
        out.push_str(&format!(",x{}", d + 1));
    }
    out.push('\n');
    for (t, row) in data.times.iter().zip(&data.states) {
        out.push_str(&fmt(*t));
        for v in row {
            out.push(',');
            out.push_str(&fmt(*v));
        }
        out.push('\n');
    }
    File::create(path)?.write_all(out.as_bytes())?;
    let side = DataSidecar {
        sigma: data.sigma,
        seed: data.seed,
        x0: data.x0.clone(),
        t0: data.t0,
    };
    File::create(sidecar_path(path))?.write_all(serde_json::to_string_pretty(&side)?.as_bytes())?;
    Ok(())
}

/// Reads a data CSV and its sidecar. Without a sidecar the first row is
/// taken as the known initial state.
pub fn read_data(path: &Path) -> Result<ObservationSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| BenchError::Invalid("empty data file".into()))??;
    let cols = header.split(',').count();
    if cols < 2 || !header.starts_with('t') {
        return Err(BenchError::Invalid(format!("bad data header {header:?}")));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| BenchError::Invalid(format!("row {}: {e}", i + 2)))?;
        if vals.len() != cols {
            return Err(BenchError::Invalid(format!("row {} has {} columns, expected {cols}", i + 2, vals.len())));
        }
        times.push(vals[0]);
        states.push(vals[1..].to_vec());
    }
    let side_path = sidecar_path(path);
    let side = if side_path.exists() {
        serde_json::from_reader(BufReader::new(File::open(side_path)?))?
    } else {
        let first = states.first().ok_or_else(|| BenchError::Invalid("no data rows".into()))?;
        DataSidecar {
            sigma: 0.0,
            seed: 0,
            x0: first.clone(),
            t0: times[0],
        }
    };
    let mut set = ObservationSet::new(times, states, side.x0, side.t0)?;
    set.sigma = side.sigma;
    set.seed = side.seed;
    Ok(set)
}
