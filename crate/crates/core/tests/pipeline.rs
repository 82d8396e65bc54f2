mod common;

use chaosode::apce::BasisVariant;
use chaosode::integrate::{solve, Ivp, Substeps};
use chaosode::pipeline::*;
use chaosode::rhs::Rhs;
use chaosode::{Error, ObservationSet};
use common::*;

fn lv_field(x: &[f64]) -> Vec<f64> {
    LV.field(x).to_vec()
}

/// Ex-it style error: learned vs true trajectory from (1, 1) on 200 points of (0, 7).
fn in_training_mse(model: &TrainedModel) -> f64 {
    let times = linspace(0.0, 7.0, 200);
    let ivp = Ivp::new(&LV, vec![], vec![1.0, 1.0], 0.0, 7.0).unwrap();
    let truth = solve(&ivp, &times, Substeps::MaxStep(1e-4)).unwrap();
    let Ok(learned) = model.solve(&[1.0, 1.0], 0.0, &times, Substeps::MaxStep(1e-4)) else {
        return f64::INFINITY;
    };
    let sum: f64 = truth
        .states
        .iter()
        .zip(&learned.states)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)))
        .sum();
    sum / 400.0
}

fn dense_orbit() -> Vec<Vec<f64>> {
    lv_data(1000, 7.0).states
}

fn constant_data(n: usize) -> ObservationSet {
    let times = linspace(0.0, 5.0, n);
    ObservationSet::new(times, vec![vec![1.0, 2.0]; n], vec![1.0, 2.0], 0.0).unwrap()
}

#[test]
fn chaos_initial_estimate_close_to_true_field() {
    let data = lv_data(144, 7.0);
    let config = PipelineConfig::default();
    let model = RhsModel::build(&config.rhs, &data.states).unwrap();
    let params = estimate_initial_params(&data, &model, &config).unwrap();
    let field = chaosode::BoundRhs::new(&model, &params).unwrap();
    let mut out = [0.0; 2];
    let mut worst: f64 = 0.0;
    for x in dense_orbit() {
        field.eval(&x, &mut out);
        let t = LV.field(&x);
        worst = worst.max((out[0] - t[0]).abs()).max((out[1] - t[1]).abs());
    }
    assert!(worst < 0.1, "max field error {worst}");
}

#[test]
fn constant_data_gives_near_zero_field() {
    let data = constant_data(20);
    for rhs in [RhsConfig::chaos(2, BasisVariant::Monomial), RhsConfig::kernel()] {
        let config = PipelineConfig::for_rhs(rhs);
        let model = RhsModel::build(&config.rhs, &data.states).unwrap();
        let params = estimate_initial_params(&data, &model, &config).unwrap();
        let norm = params.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(norm < 1e-6, "{:?}: {norm:e}", config.rhs.kind());
    }
}

#[test]
fn neural_warm_start_reduces_regression_error() {
    let data = lv_data(144, 7.0);
    let config = PipelineConfig::for_rhs(RhsConfig::neural(vec![2, 32, 32, 2]));
    let model = RhsModel::build(&config.rhs, &data.states).unwrap();
    let RhsModel::Neural(ref mlp) = model else { unreachable!() };
    let xs = data.states.clone();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| lv_field(x)).collect();
    let before = regression_mse(mlp, &chaosode::neural::mlp_init(&mlp.spec, 7), &xs, &ys);
    let params = fit_regression(&model, &xs, &ys, &config.regression, 7).unwrap();
    let after = regression_mse(mlp, &params, &xs, &ys);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn perfect_information_chaos_is_exact() {
    let region = [(0.25, 7.0), (0.25, 7.0)];
    let grid = region_grid(&region, 50).unwrap();
    let config = PipelineConfig::default();
    for (variant, tol) in [(BasisVariant::Orthonormal, 1e-10), (BasisVariant::Monomial, 1e-6)] {
        let model = RhsModel::build(&RhsConfig::chaos(2, variant), &grid).unwrap();
        let params = pretrain_perfect_information(&model, lv_field, &region, 50, &config).unwrap();
        let RhsModel::Chaos(ref chaos) = model else { unreachable!() };
        let xs = grid.clone();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| lv_field(x)).collect();
        let residual = regression_mse(chaos, &params, &xs, &ys).sqrt();
        assert!(residual < tol, "{variant:?}: residual {residual:e}");
        if variant == BasisVariant::Monomial {
            // graded order: 1, x, y, x^2, xy, y^2
            let expect = [0.0, 1.5, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -3.0, 0.0, 1.0, 0.0];
            for (p, e) in params.iter().zip(expect) {
                assert!((p - e).abs() < 1e-7, "{params:?}");
            }
        }
    }
}

#[test]
fn perfect_information_zero_field() {
    let region = [(0.0, 1.0), (0.0, 1.0)];
    let grid = region_grid(&region, 10).unwrap();
    let config = PipelineConfig::default();
    for rhs in [RhsConfig::chaos(2, BasisVariant::Orthonormal), RhsConfig::kernel()] {
        let model = RhsModel::build(&rhs, &grid).unwrap();
        let params = pretrain_perfect_information(&model, |_| vec![0.0, 0.0], &region, 10, &config).unwrap();
        assert!(params.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn chaos_training_reproduces_trajectory() {
    let data = lv_data(144, 7.0);
    let model = train(&data, &PipelineConfig::default()).unwrap();
    for s in &model.stages {
        println!(
            "{:>18} {:?} start {:.3e} end {:.3e} single {:.3e} evals {} {:.2}s",
            s.stage.as_str(),
            s.status,
            s.start_loss,
            s.end_loss,
            s.single_shooting_loss,
            s.evals,
            s.wall_time
        );
        assert!(s.end_loss <= s.start_loss, "{:?}", s.stage);
    }
    let mse = in_training_mse(&model);
    println!("ex-it {mse:e}");
    assert!(mse <= 1e-4, "{mse:e}");
    assert_eq!(model.stages.len(), 5);
}

#[test]
fn zero_field_data_is_learned_as_rest() {
    let data = constant_data(12);
    let fields = [
        RhsConfig::chaos(2, BasisVariant::Monomial),
        RhsConfig::kernel(),
        RhsConfig::neural(vec![2, 8, 8, 2]),
    ];
    for rhs in fields {
        let kind = rhs.kind();
        let model = train(&data, &PipelineConfig::for_rhs(rhs)).unwrap();
        assert!(model.final_loss < 1e-10, "{kind:?}: {:e}", model.final_loss);
        let f = model.field(&[1.0, 2.0]).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-4), "{kind:?}: {f:?}");
    }
}

#[test]
fn serialized_model_reproduces_final_loss_and_is_deterministic() {
    let data = lv_data(35, 7.0);
    let mut config = PipelineConfig { seed: 17, ..Default::default() };
    config.cmaes.config.max_evals = 2000;
    let a = train(&data, &config).unwrap();
    let b = train(&data, &config).unwrap();
    let ja = serde_json::to_string(&a.without_timings()).unwrap();
    let jb = serde_json::to_string(&b.without_timings()).unwrap();
    assert_eq!(ja, jb);

    let back: TrainedModel = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(back.final_params, a.final_params);
    let spec = chaosode::optimize::LossSpec::single(&back.model, &data).with_substeps(back.substeps);
    let recomputed = spec.loss(&back.final_params);
    assert!((recomputed - a.final_loss).abs() <= 1e-12 * a.final_loss.abs());

    // hand-off from multiple to single shooting does not lose single-shooting accuracy
    let qn_m = &a.stages[3];
    let qn_s = &a.stages[4];
    assert!(qn_s.single_shooting_loss <= qn_m.single_shooting_loss);
}

#[test]
fn all_stages_failed_when_nothing_is_feasible() {
    let data = lv_data(20, 7.0);
    let mut config = PipelineConfig::for_rhs(RhsConfig::chaos(2, BasisVariant::Monomial));
    config.pso.enabled = false;
    config.cmaes.enabled = false;
    config.qn_multiple.enabled = false;
    config.qn_single.enabled = false;
    let model = RhsModel::build(&config.rhs, &data.states).unwrap();
    let mut init = vec![0.0; model.param_count()];
    init[3] = 50.0;
    assert!(matches!(train_from(model, init, &data, &config), Err(Error::AllStagesFailed)));
}

#[test]
fn config_rejects_unknown_keys() {
    let good = r#"{"rhs": {"kind": "kernel", "pilots_per_dim": 4}, "seed": 3}"#;
    let cfg: PipelineConfig = serde_json::from_str(good).unwrap();
    assert_eq!(cfg.seed, 3);
    assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 3}"#).is_err());
    assert!(serde_json::from_str::<PipelineConfig>(r#"{"rhs": {"kind": "chaos", "nmax": 3}}"#).is_err());
    assert!(serde_json::from_str::<PipelineConfig>(r#"{"pso": {"config": {"swarms": 3}}}"#).is_err());
}
