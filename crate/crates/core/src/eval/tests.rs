use super::*;
use crate::dynamics::{generate_dataset, GenConfig};
use crate::embedding::{edmd_fit, FitMode};
use crate::training::{FeatureArch, TestArch, TrainConfig};
use crate::control::{solve_dare, Controller, DARE_MAX_ITER, DARE_TOL};
use crate::numerics::{Activation, AdamConfig};
use crate::{DynSystem, FeatureMap, InputSchedule, Matrix};

fn lti() -> (DynSystem, EmbeddingModel) {
    let a = Matrix::from_row_slice(2, 2, &[1.1, 0.2, 0.0, 0.9]);
    let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let sys = DynSystem::LinearDiscrete { a: a.clone(), b: b.clone() };
    (sys, EmbeddingModel::new(FeatureMap::monomial(2, 1).unwrap(), a, b).unwrap())
}

fn sine_model() -> EmbeddingModel {
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = Matrix::from_row_slice(2, 1, &[1.0, 0.0]);
    EmbeddingModel::new(FeatureMap::SineAugmented { state_dim: 1 }, a, b).unwrap()
}

fn duffing_edmd(n_traj: usize) -> EmbeddingModel {
    let cfg = GenConfig {
        n_traj,
        traj_len: 50,
        init_box: vec![[-3.0, 3.0]; 2],
        schedule: InputSchedule::default(),
        dt: 0.05,
        h: 0.01,
        seed: 3,
    };
    let data = generate_dataset(&DynSystem::Duffing, &cfg).unwrap();
    let g = FeatureMap::monomial(2, 3).unwrap();
    let fit = edmd_fit(&data.samples(None), &g, FitMode::default()).unwrap();
    EmbeddingModel::from_fit(g, fit).unwrap()
}

#[test]
fn exact_model_has_zero_contour() {
    let (sys, model) = lti();
    let grid = GridSpec::square(-2.0, 2.0, 7);
    for metric in [ErrorMetric::StatePrediction, ErrorMetric::Modeling] {
        let c = error_contour(&model, &sys, &grid, &[0.3], metric, 0.05, 0.01).unwrap();
        assert_eq!(c.points.len(), 49);
        assert!(c.max() < 1e-8);
    }
}

#[test]
fn sine_model_error_is_abs_sin_u() {
    let model = sine_model();
    for &(u, want) in &[(0.0, 0.0), (0.5, 0.479), (1.0, 0.841), (1.5, 0.997), (2.0, 0.909), (2.5, 0.598), (std::f64::consts::PI, 0.0)] {
        let y = crate::dynamics::sample_map(&DynSystem::SineMap, &[0.0], &[u], 0.05, 0.01).unwrap();
        let e = model.modeling_error(&[0.0], &[u], &y);
        assert!((e - want).abs() < 1e-3, "u={u}: {e}");
    }
}

#[test]
fn one_point_grid_is_a_single_error_call() {
    let model = duffing_edmd(10);
    let grid = GridSpec { x: Axis { index: 0, lo: 0.3, hi: 0.3, n: 1 }, y: Axis { index: 1, lo: -0.2, hi: -0.2, n: 1 }, base: vec![] };
    let c = error_contour(&model, &DynSystem::Duffing, &grid, &[0.0], ErrorMetric::StatePrediction, 0.05, 0.01).unwrap();
    let y = crate::dynamics::sample_map(&DynSystem::Duffing, &[0.3, -0.2], &[0.0], 0.05, 0.01).unwrap();
    assert_eq!(c.points, vec![(0.3, -0.2, model.state_prediction_error(&[0.3, -0.2], &[0.0], &y))]);
}

#[test]
fn contour_is_pointwise() {
    let model = duffing_edmd(10);
    let g1 = GridSpec::square(-1.0, 1.0, 4);
    let g2 = GridSpec { x: g1.y, y: g1.x, base: vec![] };
    let g2 = GridSpec { x: Axis { index: 0, ..g2.y }, y: Axis { index: 1, ..g2.x }, ..g2 };
    let c1 = error_contour(&model, &DynSystem::Duffing, &g1, &[0.0], ErrorMetric::Modeling, 0.05, 0.01).unwrap();
    let c2 = error_contour(&model, &DynSystem::Duffing, &g2, &[0.0], ErrorMetric::Modeling, 0.05, 0.01).unwrap();
    assert_eq!(c1.points, c2.points);
    let mut buf = Vec::new();
    c1.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x,y,err\n-1,-1,"));
    assert_eq!(text.lines().count(), 17);
}

#[test]
fn grid_validation_and_base_values() {
    let g = GridSpec { x: Axis { index: 0, lo: -1.0, hi: 1.0, n: 3 }, y: Axis { index: 2, lo: 0.0, hi: 1.0, n: 2 }, base: vec![0.0, 0.5, 0.0, -0.5] };
    g.validate(4).unwrap();
    let pts = g.points(4);
    assert_eq!(pts.len(), 6);
    assert_eq!(pts[5], vec![1.0, 0.5, 1.0, -0.5]);
    assert!(g.validate(2).is_err());
    assert!(GridSpec::square(1.0, -1.0, 3).validate(2).is_err());
}

#[test]
fn lqr_on_exact_plant_converges_everywhere() {
    let (sys, model) = lti();
    let q = Matrix::from_diagonal(&crate::Vector::from_vec(vec![100.0, 1.0]));
    let sol = solve_dare(&model.a, &model.b, &q, &Matrix::identity(1, 1), DARE_TOL, DARE_MAX_ITER).unwrap();
    let inits = GridSpec::square(-2.0, 2.0, 5).points(2);
    let recs = basin_estimate(&sys, &model, &Controller::lqr(&sol), &inits, 100, 0.1, 0.05, 0.01).unwrap();
    assert_eq!(recs.len(), 25);
    assert!(recs.iter().all(|r| r.outcome == BasinOutcome::Converged));
    let mut buf = Vec::new();
    write_basin_csv(&recs, 2, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("x0_1,x0_2,outcome\n-2,-2,converged\n"));
}

#[test]
fn uncontrolled_duffing_settles_away_from_the_origin() {
    let model = EmbeddingModel::new(FeatureMap::monomial(2, 1).unwrap(), Matrix::identity(2, 2), Matrix::zeros(2, 1)).unwrap();
    let recs = basin_estimate(&DynSystem::Duffing, &model, &Controller::Zero, &[vec![2.0, 0.0]], 800, 0.1, 0.05, 0.01).unwrap();
    assert_eq!(recs[0].outcome, BasinOutcome::SteadyError);
    let last = recs[0].trajectory.last().unwrap();
    assert!((last[0].abs() - 0.5).abs() < 0.05);
    assert!(basin_estimate(&DynSystem::Duffing, &model, &Controller::Zero, &[], 10, 0.1, 0.05, 0.01).unwrap().is_empty());
}

#[test]
fn forecast_equals_rollout_for_exact_linear_model() {
    let (_, model) = lti();
    let inputs: Vec<crate::Vector> = (0..30).map(|k| crate::Vector::from_element(1, (k as f64 * 0.3).sin())).collect();
    let f = forecast_pure(&model, &[0.2, -0.1], &inputs, 30).unwrap();
    let r = model.rollout(&[0.2, -0.1], &inputs, 30).unwrap();
    for (a, b) in f.states(2).iter().zip(&r.states) {
        assert!((a - b).amax() < 1e-12);
    }
    let f0 = forecast_pure(&model, &[0.2, -0.1], &[], 0).unwrap();
    assert_eq!(f0.embedded, vec![model.embed(&[0.2, -0.1])]);
}

#[test]
fn forecast_departs_from_rollout_on_duffing_edmd() {
    let model = duffing_edmd(20);
    let inputs = vec![crate::Vector::zeros(1); 60];
    let x0 = [0.8, 0.3];
    let f = forecast_pure(&model, &x0, &inputs, 60).unwrap();
    let r = model.rollout(&x0, &inputs, 60).unwrap();
    let fs = f.states(2);
    assert!((&fs[1] - &r.states[1]).amax() < 1e-12);
    let gap = fs.iter().zip(&r.states).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    assert!(gap > 0.0);
}

#[test]
fn task_suite_runs_on_exact_model() {
    let (sys, model) = lti();
    let mut suite = TaskSuite::for_system(&sys);
    suite.predict.x0 = vec![0.1, 0.0];
    suite.predict.horizon = 20;
    for task in Task::ALL {
        let rec = run_task(task, &sys, &model, &suite).unwrap();
        assert!(rec.error.is_none(), "{task:?}: {:?}", rec.error);
        match task {
            Task::Predict => assert!(rec.metric < 1e-10),
            Task::Lqr | Task::Servo => assert!(rec.succeeded(), "{task:?} {}", rec.metric),
            Task::Mpc => assert!(!rec.diverged),
        }
    }
}

#[test]
fn synthesis_failure_is_recorded_not_raised() {
    let a = Matrix::identity(2, 2) * 1.5;
    let b = Matrix::zeros(2, 1);
    let sys = DynSystem::LinearDiscrete { a: a.clone(), b: b.clone() };
    let model = EmbeddingModel::new(FeatureMap::monomial(2, 1).unwrap(), a, b).unwrap();
    let rec = run_task(Task::Lqr, &sys, &model, &TaskSuite::for_system(&sys)).unwrap();
    assert!(rec.error.is_some());
    assert!(!rec.succeeded());
    let json = serde_json::to_string(&rec).unwrap();
    let back: TaskRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back.metric, f64::INFINITY);
}

fn sweep_cfg(trials: usize) -> SweepConfig {
    let sys = DynSystem::Duffing;
    let mut tasks = TaskSuite::for_system(&sys);
    tasks.lqr.steps = 100;
    tasks.servo.steps = 100;
    tasks.mpc.steps = 40;
    tasks.mpc.spec.horizon = 5;
    SweepConfig {
        system: sys,
        generation: GenConfig {
            n_traj: 12,
            traj_len: 20,
            init_box: vec![[-3.0, 3.0]; 2],
            schedule: InputSchedule::default(),
            dt: 0.05,
            h: 0.01,
            seed: 0,
        },
        edmd_degree: 3,
        train: TrainConfig {
            stage1_epochs: 5,
            stage2_epochs: 5,
            adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
            features: FeatureArch { count: 2, hidden: vec![5], activation: Activation::Swish },
            tests: TestArch::TiedCopy { hidden: vec![5] },
            ..TrainConfig::default()
        },
        tasks,
        trials,
        base_seed: 100,
    }
}

#[test]
fn sweep_emits_every_record_and_is_reproducible() {
    let cfg = sweep_cfg(3);
    let a = sensitivity_sweep(&cfg).unwrap();
    assert_eq!(a.records.len(), 3 * 3 * 4);
    assert_eq!(a.aggregates.len(), 12);
    assert!(a.aggregates.iter().all(|g| g.runs == 3));
    let b = sensitivity_sweep(&cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn single_trial_sweep_matches_a_direct_pipeline_run() {
    let cfg = sweep_cfg(1);
    let s = sensitivity_sweep(&cfg).unwrap();
    let data = generate_dataset(&cfg.system, &GenConfig { seed: 100, ..cfg.generation.clone() }).unwrap();
    let g = FeatureMap::monomial(2, 3).unwrap();
    let fit = edmd_fit(&data.samples(None), &g, FitMode::default()).unwrap();
    let model = EmbeddingModel::from_fit(g, fit).unwrap();
    let direct = run_task(Task::Predict, &cfg.system, &model, &cfg.tasks).unwrap();
    let rec = s.records.iter().find(|r| r.method == Method::Edmd && r.record.task == Task::Predict).unwrap();
    assert_eq!(rec.record, direct);
}
