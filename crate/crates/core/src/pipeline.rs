//! Surrogate-based initialization followed by the four optimization stages.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::apce::{ApceBasis, BasisVariant, ChaosRhs};
use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::integrate::{integrate_bound, Substeps, Trajectory};
use crate::kernel::{fit_time_surrogate, CollocationSet, KernelRhs, KernelSpec, LengthscalePolicy};
use crate::linalg::ridge_least_squares;
use crate::neural::{mlp_init, MlpRhs, MlpSpec};
use crate::optimize::{
    cmaes_minimize, pso_minimize, quasi_newton_minimize, CmaesConfig, DivergencePolicy, GradientMode, LossSpec,
    OptimizerReport, PsoConfig, QuasiNewtonConfig,
};
use crate::rhs::{BoundRhs, Rhs};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsKind {
    Chaos,
    Kernel,
    Neural,
}

impl RhsKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RhsKind::Chaos => "chaos",
            RhsKind::Kernel => "kernel",
            RhsKind::Neural => "neural",
        }
    }
}

/// Representation-specific options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhsConfig {
    Chaos {
        #[serde(default = "default_n_max")]
        n_max: usize,
        #[serde(default)]
        variant: BasisVariant,
    },
    Kernel {
        #[serde(default = "default_pilots")]
        pilots_per_dim: usize,
        /// Fraction of the data bounding box added on each side.
        #[serde(default = "default_inflate")]
        inflate: f64,
        #[serde(default = "default_pilot_lengthscale")]
        lengthscale: LengthscalePolicy,
        #[serde(default = "default_pilot_lambda")]
        lambda: f64,
    },
    Neural {
        #[serde(default = "default_widths")]
        widths: Vec<usize>,
    },
}

fn default_n_max() -> usize {
    3
}
fn default_pilots() -> usize {
    5
}
fn default_inflate() -> f64 {
    0.1
}
fn default_pilot_lengthscale() -> LengthscalePolicy {
    LengthscalePolicy::MedianPairwise
}
fn default_pilot_lambda() -> f64 {
    1e-8
}
fn default_widths() -> Vec<usize> {
    vec![2, 32, 32, 2]
}

impl RhsConfig {
    pub fn chaos(n_max: usize, variant: BasisVariant) -> Self {
        RhsConfig::Chaos { n_max, variant }
    }

    pub fn kernel() -> Self {
        RhsConfig::Kernel {
            pilots_per_dim: default_pilots(),
            inflate: default_inflate(),
            lengthscale: default_pilot_lengthscale(),
            lambda: default_pilot_lambda(),
        }
    }

    pub fn neural(widths: Vec<usize>) -> Self {
        RhsConfig::Neural { widths }
    }

    pub fn kind(&self) -> RhsKind {
        match self {
            RhsConfig::Chaos { .. } => RhsKind::Chaos,
            RhsConfig::Kernel { .. } => RhsKind::Kernel,
            RhsConfig::Neural { .. } => RhsKind::Neural,
        }
    }
}

/// One of the three learnable fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RhsModel {
    Chaos(ChaosRhs),
    Kernel(KernelRhs),
    Neural(MlpRhs),
}

impl RhsModel {
    /// Builds the field; the chaos basis and kernel pilots are derived from `states`.
    pub fn build(config: &RhsConfig, states: &[Vec<f64>]) -> Result<Self> {
        let n = states.first().map(|s| s.len()).ok_or_else(|| Error::invalid("no states"))?;
        match config {
            RhsConfig::Chaos { n_max, variant } => {
                let basis = match variant {
                    BasisVariant::Orthonormal => ApceBasis::build(states, *n_max)?,
                    BasisVariant::Monomial => ApceBasis::monomial(n, *n_max),
                };
                Ok(RhsModel::Chaos(ChaosRhs::new(basis)))
            }
            RhsConfig::Kernel {
                pilots_per_dim,
                inflate,
                lengthscale,
                lambda,
            } => {
                let colloc = CollocationSet::grid(&bounding_box(states), *pilots_per_dim, *inflate)?;
                let l = lengthscale.resolve(&colloc.points);
                Ok(RhsModel::Kernel(KernelRhs::new(KernelSpec::gaussian(l, *lambda)?, colloc)?))
            }
            RhsConfig::Neural { widths } => {
                let spec = MlpSpec::new(widths.clone())?;
                if spec.state_dim() != n {
                    return Err(Error::invalid("network width does not match the state dimension"));
                }
                Ok(RhsModel::Neural(MlpRhs::new(spec)?))
            }
        }
    }

    pub fn kind(&self) -> RhsKind {
        match self {
            RhsModel::Chaos(_) => RhsKind::Chaos,
            RhsModel::Kernel(_) => RhsKind::Kernel,
            RhsModel::Neural(_) => RhsKind::Neural,
        }
    }

    /// Integrates the field with `params` from `(t0, x0)` to each output time.
    pub fn solve(&self, params: &[f64], x0: &[f64], t0: f64, times: &[f64], substeps: Substeps) -> Result<Trajectory> {
        let field = BoundRhs::new(self, params)?;
        integrate_bound(&field, x0, t0, times, substeps)
    }
}

fn bounding_box(states: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let n = states[0].len();
    (0..n)
        .map(|d| {
            states
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[d]), hi.max(s[d])))
        })
        .collect()
}

impl Rhs for RhsModel {
    fn state_dim(&self) -> usize {
        match self {
            RhsModel::Chaos(r) => r.state_dim(),
            RhsModel::Kernel(r) => r.state_dim(),
            RhsModel::Neural(r) => r.state_dim(),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            RhsModel::Chaos(r) => r.param_count(),
            RhsModel::Kernel(r) => r.param_count(),
            RhsModel::Neural(r) => r.param_count(),
        }
    }

    fn coefficients<S: Scalar>(&self, params: &[S]) -> Vec<S> {
        match self {
            RhsModel::Chaos(r) => r.coefficients(params),
            RhsModel::Kernel(r) => r.coefficients(params),
            RhsModel::Neural(r) => r.coefficients(params),
        }
    }

    fn coefficients_vjp(&self, coeff_bar: &[f64]) -> Vec<f64> {
        match self {
            RhsModel::Chaos(r) => r.coefficients_vjp(coeff_bar),
            RhsModel::Kernel(r) => r.coefficients_vjp(coeff_bar),
            RhsModel::Neural(r) => r.coefficients_vjp(coeff_bar),
        }
    }

    #[inline]
    fn eval<S: Scalar>(&self, coeffs: &[S], x: &[S], out: &mut [S]) {
        match self {
            RhsModel::Chaos(r) => r.eval(coeffs, x, out),
            RhsModel::Kernel(r) => r.eval(coeffs, x, out),
            RhsModel::Neural(r) => r.eval(coeffs, x, out),
        }
    }

    fn vjp(&self, coeffs: &[f64], x: &[f64], cot: &[f64], x_bar: &mut [f64], coeff_bar: &mut [f64]) {
        match self {
            RhsModel::Chaos(r) => r.vjp(coeffs, x, cot, x_bar, coeff_bar),
            RhsModel::Kernel(r) => r.vjp(coeffs, x, cot, x_bar, coeff_bar),
            RhsModel::Neural(r) => r.vjp(coeffs, x, cot, x_bar, coeff_bar),
        }
    }
}

/// Kernel-in-time regression used to estimate derivatives from observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub lengthscale: LengthscalePolicy,
    pub lambda: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            lengthscale: LengthscalePolicy::SpacingMultiple(3.0),
            lambda: 1e-6,
        }
    }
}

/// Regression of the field onto (state, derivative) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    /// Ridge weight relative to the largest squared singular value of the design.
    pub ridge: f64,
    pub neural_steps: usize,
    pub neural_learning_rate: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            ridge: 1e-12,
            neural_steps: 500,
            neural_learning_rate: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoStage {
    pub enabled: bool,
    pub config: PsoConfig,
}

impl Default for PsoStage {
    fn default() -> Self {
        PsoStage {
            enabled: true,
            config: PsoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaesStage {
    pub enabled: bool,
    pub config: CmaesConfig,
}

impl Default for CmaesStage {
    fn default() -> Self {
        CmaesStage {
            enabled: true,
            config: CmaesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuasiNewtonStage {
    pub enabled: bool,
    pub config: QuasiNewtonConfig,
}

impl Default for QuasiNewtonStage {
    fn default() -> Self {
        QuasiNewtonStage {
            enabled: true,
            config: QuasiNewtonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub rhs: RhsConfig,
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

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rhs: RhsConfig::chaos(default_n_max(), BasisVariant::Orthonormal),
            seed: 0,
            segment_size: 8,
            continuity_weight: 1.0,
            substeps: Substeps::default(),
            penalty_loss: DivergencePolicy::default().penalty_loss,
            gradient: GradientMode::default(),
            surrogate: SurrogateConfig::default(),
            regression: RegressionConfig::default(),
            pso: PsoStage::default(),
            cmaes: CmaesStage::default(),
            qn_multiple: QuasiNewtonStage::default(),
            qn_single: QuasiNewtonStage::default(),
        }
    }
}

impl PipelineConfig {
    pub fn for_rhs(rhs: RhsConfig) -> Self {
        PipelineConfig {
            rhs,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.substeps.validate()?;
        if self.segment_size < 2 {
            return Err(Error::invalid("segments need at least two observations"));
        }
        if !(self.continuity_weight >= 0.0) {
            return Err(Error::invalid("continuity weight must be non-negative"));
        }
        if !(self.penalty_loss > 0.0 && self.penalty_loss.is_finite()) {
            return Err(Error::invalid("penalty loss must be positive and finite"));
        }
        if self.pso.enabled && self.pso.config.swarm < 2 {
            return Err(Error::invalid("swarm needs at least two particles"));
        }
        if self.cmaes.enabled && !(self.cmaes.config.sigma0 > 0.0) {
            return Err(Error::invalid("sigma0 must be positive"));
        }
        Ok(())
    }

    fn stage_seed(&self, stage: u64) -> u64 {
        // splitmix64 finalizer
        let mut z = self.seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InitialEstimate,
    Pso,
    Cmaes,
    QuasiNewtonMultiple,
    QuasiNewtonSingle,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::InitialEstimate => "initial_estimate",
            Stage::Pso => "pso",
            Stage::Cmaes => "cmaes",
            Stage::QuasiNewtonMultiple => "qn_multiple",
            Stage::QuasiNewtonSingle => "qn_single",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Disabled,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub status: StageStatus,
    /// Loss of the stage's own objective at its starting point.
    pub start_loss: f64,
    /// Loss of the stage's own objective at its output.
    pub end_loss: f64,
    /// Single-shooting loss at the stage output.
    pub single_shooting_loss: f64,
    pub iterations: usize,
    pub evals: usize,
    pub converged: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub rhs_kind: RhsKind,
    pub model: RhsModel,
    pub final_params: Vec<f64>,
    pub stages: Vec<StageReport>,
    pub final_loss: f64,
    pub substeps: Substeps,
    pub wall_time: f64,
}

impl TrainedModel {
    pub fn solve(&self, x0: &[f64], t0: f64, times: &[f64], substeps: Substeps) -> Result<Trajectory> {
        self.model.solve(&self.final_params, x0, t0, times, substeps)
    }

    /// Field value at `x`.
    pub fn field(&self, x: &[f64]) -> Result<Vec<f64>> {
        let bound = BoundRhs::new(&self.model, &self.final_params)?;
        let mut out = vec![0.0; x.len()];
        bound.eval(x, &mut out);
        Ok(out)
    }

    /// Copy with every wall-clock measurement zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> TrainedModel {
        let mut m = self.clone();
        m.wall_time = 0.0;
        m.stages.iter_mut().for_each(|s| s.wall_time = 0.0);
        m
    }
}

/// Fits the field to `(state, derivative)` pairs: ridge least squares for
/// the linear-in-parameter kinds, full-batch gradient descent for networks.
pub fn fit_regression(
    model: &RhsModel,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    config: &RegressionConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid("regression needs matching, non-empty inputs"));
    }
    let n = model.state_dim();
    let targets = DMatrix::from_fn(ys.len(), n, |i, d| ys[i][d]);
    match model {
        RhsModel::Chaos(rhs) => {
            let m = rhs.basis.len();
            let c = ridge_least_squares(&rhs.basis.design_matrix(xs), &targets, config.ridge)?;
            Ok((0..n).flat_map(|d| (0..m).map(move |k| (d, k))).map(|(d, k)| c[(k, d)]).collect())
        }
        RhsModel::Kernel(rhs) => {
            let p = rhs.pilots().len();
            let design = DMatrix::from_fn(xs.len(), p, |i, j| rhs.spec().eval(&xs[i], &rhs.pilots().points[j]));
            let c = ridge_least_squares(&design, &targets, config.ridge)?;
            // theta = (K + lambda I) c
            let gram = rhs.spec().gram(&rhs.pilots().points);
            let theta = gram * c;
            Ok((0..p).flat_map(|i| (0..n).map(move |d| (i, d))).map(|(i, d)| theta[(i, d)]).collect())
        }
        RhsModel::Neural(rhs) => Ok(descend(rhs, xs, ys, config, seed)),
    }
}

/// Mean squared regression error of a field over `(x, y)` pairs.
pub fn regression_mse<R: Rhs>(rhs: &R, params: &[f64], xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let Ok(field) = BoundRhs::new(rhs, params) else {
        return f64::INFINITY;
    };
    let n = rhs.state_dim();
    let mut out = vec![0.0; n];
    let mut sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        field.eval(x, &mut out);
        sum += out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    sum / (xs.len() * n) as f64
}

fn descend(rhs: &MlpRhs, xs: &[Vec<f64>], ys: &[Vec<f64>], config: &RegressionConfig, seed: u64) -> Vec<f64> {
    let n = rhs.state_dim();
    let scale = 2.0 / (xs.len() * n) as f64;
    let mut params = mlp_init(&rhs.spec, seed);
    let mut loss = regression_mse(rhs, &params, xs, ys);
    let mut lr = config.neural_learning_rate;
    let mut out = vec![0.0; n];
    let mut cot = vec![0.0; n];
    let mut x_bar = vec![0.0; n];
    for _ in 0..config.neural_steps {
        let mut grad = vec![0.0; params.len()];
        for (x, y) in xs.iter().zip(ys) {
            rhs.eval(&params, x, &mut out);
            for d in 0..n {
                cot[d] = scale * (out[d] - y[d]);
            }
            rhs.vjp(&params, x, &cot, &mut x_bar, &mut grad);
        }
        let trial: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
        let trial_loss = regression_mse(rhs, &trial, xs, ys);
        if trial_loss <= loss {
            params = trial;
            loss = trial_loss;
        } else {
            lr *= 0.5;
        }
    }
    params
}

/// Initial parameters from a kernel-in-time surrogate of the observations:
/// the field is regressed onto smoothed states and their time derivatives.
pub fn estimate_initial_params(data: &ObservationSet, model: &RhsModel, config: &PipelineConfig) -> Result<Vec<f64>> {
    if data.len() < 4 {
        return Err(Error::invalid("at least four observations are required"));
    }
    let times: Vec<Vec<f64>> = data.times.iter().map(|&t| vec![t]).collect();
    let l = config.surrogate.lengthscale.resolve(&times);
    let surrogate = fit_time_surrogate(data, KernelSpec::gaussian(l, config.surrogate.lambda)?)?;
    let xs: Vec<Vec<f64>> = data.times.iter().map(|&t| surrogate.value(t)).collect();
    let ys: Vec<Vec<f64>> = data.times.iter().map(|&t| surrogate.derivative(t)).collect();
    fit_regression(model, &xs, &ys, &config.regression, config.stage_seed(0))
}

/// Uniform `grid_per_dim^n` grid over an axis-aligned box.
pub fn region_grid(region: &[(f64, f64)], grid_per_dim: usize) -> Result<Vec<Vec<f64>>> {
    if grid_per_dim < 2 || region.iter().any(|&(lo, hi)| !(hi > lo)) {
        return Err(Error::invalid("region must be non-degenerate with at least two points per side"));
    }
    let mut points = vec![Vec::new()];
    for &(lo, hi) in region {
        points = points
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                (0..grid_per_dim).map(move |i| {
                    let mut q = p.clone();
                    q.push(lo + (hi - lo) * i as f64 / (grid_per_dim - 1) as f64);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// Regression onto the true field sampled on a uniform grid over `region`.
pub fn pretrain_perfect_information(
    model: &RhsModel,
    true_field: impl Fn(&[f64]) -> Vec<f64>,
    region: &[(f64, f64)],
    grid_per_dim: usize,
    config: &PipelineConfig,
) -> Result<Vec<f64>> {
    let xs = region_grid(region, grid_per_dim)?;
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| true_field(x)).collect();
    fit_regression(model, &xs, &ys, &config.regression, config.stage_seed(0))
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }
}

/// Builds the field from the data, estimates initial parameters and runs all stages.
pub fn train(data: &ObservationSet, config: &PipelineConfig) -> Result<TrainedModel> {
    train_with(data, config, |_| {})
}

/// [`train`] that reports each stage to `on_stage` as soon as it ends.
pub fn train_with(
    data: &ObservationSet,
    config: &PipelineConfig,
    mut on_stage: impl FnMut(&StageReport),
) -> Result<TrainedModel> {
    let start = Instant::now();
    config.validate()?;
    data.validate()?;
    if data.len() < 4 {
        return Err(Error::invalid("at least four observations are required"));
    }
    let model = RhsModel::build(&config.rhs, &data.states)?;
    let init = estimate_initial_params(data, &model, config)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut trained = train_from_with(model, init, data, config, |s| {
        if s.stage == Stage::InitialEstimate {
            on_stage(&StageReport {
                wall_time: s.wall_time + elapsed,
                ..s.clone()
            });
        } else {
            on_stage(s);
        }
    })?;
    if let Some(first) = trained.stages.first_mut() {
        first.wall_time += elapsed;
    }
    trained.wall_time += elapsed;
    Ok(trained)
}

/// Runs the optimization stages from given initial parameters.
pub fn train_from(model: RhsModel, init: Vec<f64>, data: &ObservationSet, config: &PipelineConfig) -> Result<TrainedModel> {
    train_from_with(model, init, data, config, |_| {})
}

/// [`train_from`] that reports each stage to `on_stage` as soon as it ends.
pub fn train_from_with(
    model: RhsModel,
    init: Vec<f64>,
    data: &ObservationSet,
    config: &PipelineConfig,
    mut on_stage: impl FnMut(&StageReport),
) -> Result<TrainedModel> {
    let start = Instant::now();
    config.validate()?;
    if init.len() != model.param_count() {
        return Err(Error::invalid("initial parameters do not match the model"));
    }
    let policy = DivergencePolicy {
        penalty_loss: config.penalty_loss,
    };
    let single = LossSpec {
        divergence: policy,
        ..LossSpec::single(&model, data).with_substeps(config.substeps)
    };
    let multiple = LossSpec {
        divergence: policy,
        ..LossSpec::multiple(&model, data, config.segment_size, config.continuity_weight).with_substeps(config.substeps)
    };
    single.validate()?;
    multiple.validate()?;
    let feasible = |l: f64| l.is_finite() && l < config.penalty_loss;

    let init_single = single.loss(&init);
    let mut stages = vec![StageReport {
        stage: Stage::InitialEstimate,
        status: StageStatus::Completed,
        start_loss: init_single,
        end_loss: init_single,
        single_shooting_loss: init_single,
        iterations: 0,
        evals: 1,
        converged: true,
        wall_time: 0.0,
    }];
    on_stage(&stages[0]);
    let mut current = init;
    // most recent output with a finite single-shooting loss
    let mut fallback = feasible(init_single).then(|| (current.clone(), init_single));

    for stage in [Stage::Pso, Stage::Cmaes, Stage::QuasiNewtonMultiple, Stage::QuasiNewtonSingle] {
        let stage_start = Instant::now();
        let (enabled, spec) = match stage {
            Stage::Pso => (config.pso.enabled, &single),
            Stage::Cmaes => (config.cmaes.enabled, &multiple),
            Stage::QuasiNewtonMultiple => (config.qn_multiple.enabled, &multiple),
            Stage::QuasiNewtonSingle => (config.qn_single.enabled, &single),
            Stage::InitialEstimate => unreachable!(),
        };
        let start_loss = spec.loss(&current);
        let mut report = StageReport {
            stage,
            status: StageStatus::Disabled,
            start_loss,
            end_loss: start_loss,
            single_shooting_loss: f64::NAN,
            iterations: 0,
            evals: 0,
            converged: false,
            wall_time: 0.0,
        };
        if enabled {
            let outcome: Result<OptimizerReport> = match stage {
                Stage::Pso => {
                    let cfg = PsoConfig {
                        seed: config.stage_seed(1),
                        ..config.pso.config.clone()
                    };
                    pso_minimize(|p| spec.loss(p), &current, 0.5 * rms(&current) + 0.1, &cfg)
                }
                Stage::Cmaes => {
                    let cfg = CmaesConfig {
                        seed: config.stage_seed(2),
                        sigma0: config.cmaes.config.sigma0 * rms(&current).max(0.1),
                        ..config.cmaes.config.clone()
                    };
                    cmaes_minimize(|p| spec.loss(p), &current, &cfg)
                }
                _ => {
                    let cfg = if stage == Stage::QuasiNewtonMultiple {
                        &config.qn_multiple.config
                    } else {
                        &config.qn_single.config
                    };
                    quasi_newton_minimize(|p| spec.value_and_gradient(p, config.gradient), &current, cfg)
                }
            };
            match outcome {
                Ok(r) => {
                    report.status = StageStatus::Completed;
                    report.end_loss = r.best_loss;
                    report.iterations = r.iterations;
                    report.evals = r.evals;
                    report.converged = r.converged;
                    current = r.best_params;
                }
                Err(e) => report.status = StageStatus::Failed(e.to_string()),
            }
        }
        report.single_shooting_loss = single.loss(&current);
        if feasible(report.single_shooting_loss) {
            fallback = Some((current.clone(), report.single_shooting_loss));
        }
        report.wall_time = stage_start.elapsed().as_secs_f64();
        on_stage(&report);
        stages.push(report);
    }

    let (final_params, final_loss) = fallback.ok_or(Error::AllStagesFailed)?;
    Ok(TrainedModel {
        rhs_kind: model.kind(),
        model,
        final_params,
        stages,
        final_loss,
        substeps: config.substeps,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
