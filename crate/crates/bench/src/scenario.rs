//! The four benchmark scenarios as sweeps over independent cells.

use std::collections::{HashMap, HashSet};
use std::sync::mpsc;
use std::time::Instant;

use chaosode::apce::BasisVariant;
use chaosode::pipeline::{
    pretrain_perfect_information, region_grid, train, train_from, PipelineConfig, RhsConfig, RhsModel,
};
use serde::{Deserialize, Serialize};

use crate::data::DataSpec;
use crate::error::{BenchError, Result};
use crate::eval::{evaluate_all, DEFAULT_EVAL_POINTS};
use crate::lv::true_field;
use crate::record::{canonical_order, CellKey, Scenario, ScenarioRecord, VariantLabel};

/// Noise levels of the reference grid; other levels are flagged as interpolated.
pub const REFERENCE_SIGMAS: [f64; 4] = [0.0, 0.001, 0.01, 1.0];

/// Sweep axes and per-cell settings shared by all scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Seeds per cell for S2, S3 and S4.
    pub seeds: usize,
    /// Seeds per method for S1.
    pub s1_seeds: usize,
    pub s1_n_train: usize,
    /// Box on which the true field is sampled for S1 pretraining.
    pub s1_region: Vec<(f64, f64)>,
    pub s1_grid_per_dim: usize,
    pub s2_n_grid: Vec<usize>,
    pub s3_sigma_grid: Vec<f64>,
    pub s3_n_grid: Vec<usize>,
    pub s4_sigma_grid: Vec<f64>,
    pub s4_n_grid: Vec<usize>,
    /// One entry per method; S4 uses the chaos entry with both basis variants.
    pub methods: Vec<RhsConfig>,
    /// Stage settings; `rhs` and `seed` are replaced per cell.
    pub pipeline: PipelineConfig,
    /// Training trajectory start and span.
    pub x0: Vec<f64>,
    pub span: (f64, f64),
    pub eval_points: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seeds: 10,
            s1_seeds: 1,
            s1_n_train: 144,
            s1_region: vec![(0.25, 7.0), (0.25, 7.0)],
            s1_grid_per_dim: 50,
            s2_n_grid: vec![10, 18, 35, 70, 100, 250, 500],
            s3_sigma_grid: vec![0.0, 0.001, 0.01, 0.1, 1.0],
            s3_n_grid: vec![10, 35, 100, 500],
            s4_sigma_grid: vec![0.0, 0.001, 0.01, 0.1, 1.0],
            s4_n_grid: vec![10, 35, 100, 500],
            methods: vec![
                RhsConfig::chaos(3, BasisVariant::Orthonormal),
                RhsConfig::kernel(),
                RhsConfig::neural(vec![2, 32, 32, 2]),
            ],
            pipeline: PipelineConfig::default(),
            x0: vec![1.0, 1.0],
            span: (0.0, 7.0),
            eval_points: DEFAULT_EVAL_POINTS,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(BenchError::Invalid("no methods configured".into()));
        }
        if self.eval_points < 2 {
            return Err(BenchError::Invalid("need at least two evaluation points".into()));
        }
        let sigmas = self.s3_sigma_grid.iter().chain(&self.s4_sigma_grid);
        if let Some(s) = sigmas.into_iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(BenchError::Invalid(format!("invalid noise level {s}")));
        }
        self.pipeline.validate()?;
        Ok(())
    }

    fn chaos_method(&self) -> RhsConfig {
        self.methods
            .iter()
            .find(|m| matches!(m, RhsConfig::Chaos { .. }))
            .cloned()
            .unwrap_or_else(|| RhsConfig::chaos(3, BasisVariant::Orthonormal))
    }
}

/// One training run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scenario: Scenario,
    pub rhs: RhsConfig,
    pub n_train: usize,
    pub sigma: f64,
    pub seed: u64,
}

fn variant_label(rhs: &RhsConfig) -> VariantLabel {
    match rhs {
        RhsConfig::Chaos { variant, .. } => (*variant).into(),
        _ => VariantLabel::NotApplicable,
    }
}

/// Cells of different scenarios with equal keys train identically.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct TrainKey {
    pretrained: bool,
    rhs: String,
    n_train: usize,
    sigma_bits: u64,
    seed: u64,
}

impl Cell {
    pub fn key(&self) -> CellKey {
        CellKey {
            scenario: self.scenario,
            method: self.rhs.kind(),
            basis_variant: variant_label(&self.rhs),
            n_train: self.n_train,
            sigma_bits: self.sigma.to_bits(),
            seed: self.seed,
        }
    }

    fn train_key(&self) -> TrainKey {
        TrainKey {
            pretrained: self.scenario == Scenario::S1,
            rhs: serde_json::to_string(&self.rhs).unwrap_or_default(),
            n_train: self.n_train,
            sigma_bits: self.sigma.to_bits(),
            seed: self.seed,
        }
    }

    pub fn data_spec(&self, cfg: &ScenarioConfig) -> DataSpec {
        DataSpec {
            n: self.n_train,
            sigma: self.sigma,
            seed: self.seed,
            x0: cfg.x0.clone(),
            span: cfg.span,
        }
    }

    pub fn pipeline_config(&self, cfg: &ScenarioConfig) -> PipelineConfig {
        PipelineConfig {
            rhs: self.rhs.clone(),
            seed: self.seed,
            ..cfg.pipeline.clone()
        }
    }
}

/// All cells of a scenario in a fixed order.
pub fn cells(scenario: Scenario, cfg: &ScenarioConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    let mut push = |rhs: &RhsConfig, n_train: usize, sigma: f64, seed: u64| {
        out.push(Cell {
            scenario,
            rhs: rhs.clone(),
            n_train,
            sigma,
            seed,
        })
    };
    match scenario {
        Scenario::S1 => {
            for seed in 0..cfg.s1_seeds as u64 {
                for m in &cfg.methods {
                    push(m, cfg.s1_n_train, 0.0, seed);
                }
            }
        }
        Scenario::S2 => {
            for &n in &cfg.s2_n_grid {
                for seed in 0..cfg.seeds as u64 {
                    for m in &cfg.methods {
                        push(m, n, 0.0, seed);
                    }
                }
            }
        }
        Scenario::S3 => {
            for &sigma in &cfg.s3_sigma_grid {
                for &n in &cfg.s3_n_grid {
                    for seed in 0..cfg.seeds as u64 {
                        for m in &cfg.methods {
                            push(m, n, sigma, seed);
                        }
                    }
                }
            }
        }
        Scenario::S4 => {
            let RhsConfig::Chaos { n_max, .. } = cfg.chaos_method() else {
                unreachable!()
            };
            for &sigma in &cfg.s4_sigma_grid {
                for &n in &cfg.s4_n_grid {
                    for seed in 0..cfg.seeds as u64 {
                        for variant in [BasisVariant::Orthonormal, BasisVariant::Monomial] {
                            push(&RhsConfig::chaos(n_max, variant), n, sigma, seed);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gram condition number of the polynomial basis built on `states`.
pub fn gram_condition(rhs: &RhsConfig, states: &[Vec<f64>]) -> Option<f64> {
    match RhsModel::build(rhs, states) {
        Ok(RhsModel::Chaos(c)) => Some(c.basis.gram_condition_number(states)),
        _ => None,
    }
}

/// Trains and evaluates one cell. Failures are recorded, never raised.
pub fn run_cell(cell: &Cell, cfg: &ScenarioConfig) -> ScenarioRecord {
    let start = Instant::now();
    let data_spec = cell.data_spec(cfg);
    let config = cell.pipeline_config(cfg);
    let mut gram = None;
    let outcome = (|| -> Result<[f64; 3]> {
        let data = data_spec.generate()?;
        let model = if cell.scenario == Scenario::S1 {
            let grid = region_grid(&cfg.s1_region, cfg.s1_grid_per_dim)?;
            gram = gram_condition(&cell.rhs, &grid);
            let model = RhsModel::build(&config.rhs, &grid)?;
            let init = pretrain_perfect_information(&model, true_field, &cfg.s1_region, cfg.s1_grid_per_dim, &config)?;
            train_from(model, init, &data, &config)?
        } else {
            gram = gram_condition(&cell.rhs, &data.states);
            train(&data, &config)?
        };
        Ok(evaluate_all(&model, cfg.eval_points))
    })();
    let (mse, failure) = match outcome {
        Ok(m) => (m, None),
        Err(e) => ([f64::INFINITY; 3], Some(e.to_string())),
    };
    ScenarioRecord {
        scenario: cell.scenario,
        method: cell.rhs.kind(),
        basis_variant: variant_label(&cell.rhs),
        n_train: cell.n_train,
        sigma: cell.sigma,
        seed: cell.seed,
        mse_ex_it: mse[0],
        mse_ex_oot: mse[1],
        mse_ex_ood: mse[2],
        success: ScenarioRecord::flags_for(mse),
        wall_time: start.elapsed().as_secs_f64(),
        gram_condition: gram,
        interpolated_sigma: !REFERENCE_SIGMAS.contains(&cell.sigma),
        failure,
        data: data_spec,
        config,
    }
}

/// Runs cells on a bounded worker pool, reusing runs whose training inputs
/// were already seen by this runner.
pub struct SweepRunner {
    workers: usize,
    cache: HashMap<TrainKey, ScenarioRecord>,
}

impl SweepRunner {
    pub fn new(workers: usize) -> Self {
        SweepRunner {
            workers: workers.max(1),
            cache: HashMap::new(),
        }
    }

    /// Runs every cell whose key is not in `skip`, calling `on_record` on the
    /// calling thread as each finishes. Returns the new records in cell-key
    /// order.
    pub fn run(
        &mut self,
        cells: &[Cell],
        cfg: &ScenarioConfig,
        skip: &HashSet<CellKey>,
        mut on_record: impl FnMut(&ScenarioRecord) -> Result<()>,
    ) -> Result<Vec<ScenarioRecord>> {
        cfg.validate()?;
        let mut done = Vec::new();
        let mut pending = Vec::new();
        for cell in cells.iter().filter(|c| !skip.contains(&c.key())) {
            match self.cache.get(&cell.train_key()) {
                Some(hit) => {
                    let mut r = hit.clone();
                    r.scenario = cell.scenario;
                    on_record(&r)?;
                    done.push(r);
                }
                None => pending.push(cell.clone()),
            }
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| BenchError::Invalid(e.to_string()))?;
        let (tx, rx) = mpsc::channel::<(TrainKey, ScenarioRecord)>();
        let mut callback_error = None;
        std::thread::scope(|s| {
            let pending = &pending;
            s.spawn(move || {
                pool.scope(|ps| {
                    for cell in pending {
                        let tx = tx.clone();
                        ps.spawn(move |_| {
                            let _ = tx.send((cell.train_key(), run_cell(cell, cfg)));
                        });
                    }
                });
            });
            for (key, record) in rx {
                if callback_error.is_none() {
                    if let Err(e) = on_record(&record) {
                        callback_error = Some(e);
                    }
                }
                self.cache.insert(key, record.clone());
                done.push(record);
            }
        });
        if let Some(e) = callback_error {
            return Err(e);
        }
        Ok(canonical_order(done))
    }
}

/// Runs a whole scenario with `workers` threads.
pub fn run_scenario(scenario: Scenario, cfg: &ScenarioConfig, workers: usize) -> Result<Vec<ScenarioRecord>> {
    SweepRunner::new(workers).run(&cells(scenario, cfg), cfg, &HashSet::new(), |_| Ok(()))
}

pub fn run_scenario_s1(cfg: &ScenarioConfig, workers: usize) -> Result<Vec<ScenarioRecord>> {
    run_scenario(Scenario::S1, cfg, workers)
}

pub fn run_scenario_s2(cfg: &ScenarioConfig, workers: usize) -> Result<Vec<ScenarioRecord>> {
    run_scenario(Scenario::S2, cfg, workers)
}

pub fn run_scenario_s3(cfg: &ScenarioConfig, workers: usize) -> Result<Vec<ScenarioRecord>> {
    run_scenario(Scenario::S3, cfg, workers)
}

pub fn run_scenario_s4(cfg: &ScenarioConfig, workers: usize) -> Result<Vec<ScenarioRecord>> {
    run_scenario(Scenario::S4, cfg, workers)
}
