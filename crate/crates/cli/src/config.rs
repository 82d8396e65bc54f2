//! The TOML run configuration.
//!
//! One document with the sections `[data]`, `[model]`, `[pipeline]`,
//! `[scenario]` and `[output]`. Every key is optional; omitted keys take the
//! defaults below and unknown keys are rejected. [`RunConfig::to_toml`]
//! writes the fully resolved document.

use std::path::{Path, PathBuf};

use chaosode::integrate::Substeps;
use chaosode::optimize::GradientMode;
use chaosode::pipeline::{
    CmaesStage, PipelineConfig, PsoStage, QuasiNewtonStage, RegressionConfig, RhsConfig, SurrogateConfig,
};
use chaosode_bench::data::DataSpec;
use chaosode_bench::scenario::ScenarioConfig;
use chaosode_bench::Scenario;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSpec,
    pub model: RhsConfig,
    pub pipeline: PipelineSection,
    pub scenario: ScenarioSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSpec::default(),
            model: RhsConfig::chaos(3, Default::default()),
            pipeline: PipelineSection::default(),
            scenario: ScenarioSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Stage settings shared by `train` and every scenario cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub seed: u64,
    pub segment_size: usize,
    pub continuity_weight: f64,
    pub substeps: Substeps,
    pub penalty_loss: f64,
    pub gradient: GradientMode,
    pub surrogate: SurrogateConfig,
    pub regression: RegressionConfig,
    pub pso: PsoStage,
    pub cmaes: CmaesStage,
    pub qn_multiple: QuasiNewtonStage,
    pub qn_single: QuasiNewtonStage,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        PipelineSection {
            seed: p.seed,
            segment_size: p.segment_size,
            continuity_weight: p.continuity_weight,
            substeps: p.substeps,
            penalty_loss: p.penalty_loss,
            gradient: p.gradient,
            surrogate: p.surrogate,
            regression: p.regression,
            pso: p.pso,
            cmaes: p.cmaes,
            qn_multiple: p.qn_multiple,
            qn_single: p.qn_single,
        }
    }
}

impl PipelineSection {
    pub fn resolve(&self, rhs: RhsConfig) -> PipelineConfig {
        PipelineConfig {
            rhs,
            seed: self.seed,
            segment_size: self.segment_size,
            continuity_weight: self.continuity_weight,
            substeps: self.substeps,
            penalty_loss: self.penalty_loss,
            gradient: self.gradient,
            surrogate: self.surrogate.clone(),
            regression: self.regression.clone(),
            pso: self.pso.clone(),
            cmaes: self.cmaes.clone(),
            qn_multiple: self.qn_multiple.clone(),
            qn_single: self.qn_single.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Scenario run when `--id` is not given.
    pub id: Scenario,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub seeds: usize,
    pub s1_seeds: usize,
    pub s1_n_train: usize,
    pub s1_region: Vec<(f64, f64)>,
    pub s1_grid_per_dim: usize,
    pub s2_n_grid: Vec<usize>,
    pub s3_sigma_grid: Vec<f64>,
    pub s3_n_grid: Vec<usize>,
    pub s4_sigma_grid: Vec<f64>,
    pub s4_n_grid: Vec<usize>,
    pub methods: Vec<RhsConfig>,
    pub eval_points: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        ScenarioSection {
            id: Scenario::S1,
            workers: 0,
            seeds: s.seeds,
            s1_seeds: s.s1_seeds,
            s1_n_train: s.s1_n_train,
            s1_region: s.s1_region,
            s1_grid_per_dim: s.s1_grid_per_dim,
            s2_n_grid: s.s2_n_grid,
            s3_sigma_grid: s.s3_sigma_grid,
            s3_n_grid: s.s3_n_grid,
            s4_sigma_grid: s.s4_sigma_grid,
            s4_n_grid: s.s4_n_grid,
            methods: s.methods,
            eval_points: s.eval_points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// `results.csv` and per-figure plot tables next to `results.jsonl`.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv],
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::runtime(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.pipeline_config().validate()?;
        self.scenario_config().validate()?;
        Ok(())
    }

    /// Applies a `--seed` override to data and pipeline.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.data.seed = s;
            self.pipeline.seed = s;
        }
        self
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        self.pipeline.resolve(self.model.clone())
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let s = &self.scenario;
        ScenarioConfig {
            seeds: s.seeds,
            s1_seeds: s.s1_seeds,
            s1_n_train: s.s1_n_train,
            s1_region: s.s1_region.clone(),
            s1_grid_per_dim: s.s1_grid_per_dim,
            s2_n_grid: s.s2_n_grid.clone(),
            s3_sigma_grid: s.s3_sigma_grid.clone(),
            s3_n_grid: s.s3_n_grid.clone(),
            s4_sigma_grid: s.s4_sigma_grid.clone(),
            s4_n_grid: s.s4_n_grid.clone(),
            methods: s.methods.clone(),
            pipeline: self.pipeline_config(),
            x0: self.data.x0.clone(),
            span: self.data.span,
            eval_points: s.eval_points,
        }
    }
}
