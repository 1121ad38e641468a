use crate::control::{design_servo, simulate_closed_loop, solve_dare, state_weight, ClosedLoop, Controller, MpcSpec, Reference, ServoWeights, DARE_MAX_ITER, DARE_TOL};
use crate::dynamics::sample_map;
use crate::eval::BasinOutcome;
use crate::{DynSystem, EmbeddingModel, Error, Matrix, Result, Vector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Predict,
    Lqr,
    Servo,
    Mpc,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Predict, Task::Lqr, Task::Servo, Task::Mpc];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Predict => "predict",
            Task::Lqr => "lqr",
            Task::Servo => "servo",
            Task::Mpc => "mpc",
        }
    }
}

/// Multi-step state prediction with zero input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictTask {
    pub x0: Vec<f64>,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrTask {
    pub x0: Vec<f64>,
    /// Diagonal of `Q_state`; the feature block of `Q_w` is zero.
    pub q_state: Vec<f64>,
    pub r: f64,
    pub steps: usize,
    pub success_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoTask {
    pub x0: Vec<f64>,
    /// Tracked state component (zero-based), i.e. `C = e_output`.
    pub output: usize,
    pub reference: f64,
    pub steps: usize,
    #[serde(default)]
    pub weights: ServoWeights,
    pub success_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcTask {
    pub x0: Vec<f64>,
    pub spec: MpcSpec,
    pub steps: usize,
    pub success_radius: f64,
}

/// Settings for the four downstream tasks on one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSuite {
    pub dt: f64,
    pub h: f64,
    pub predict: PredictTask,
    pub lqr: LqrTask,
    pub servo: ServoTask,
    pub mpc: MpcTask,
}

impl TaskSuite {
    /// Defaults: LQR `Q_state = diag(100, 1)` (`diag(100, 1, 100, 1)` for RTAC),
    /// `R_w = 1`; servo and MPC track component 1 (component 3 for RTAC) with
    /// `r = 1`; the MPC reference steps from −1 to 1 at `t = 10`.
    pub fn for_system(sys: &DynSystem) -> Self {
        let dt: f64 = 0.05;
        let n = sys.state_dim();
        let (q_state, tracked) = match sys {
            DynSystem::Rtac { .. } => (vec![100.0, 1.0, 100.0, 1.0], 2),
            _ => {
                let mut q = vec![1.0; n];
                q[0] = 100.0;
                (q, 0)
            }
        };
        let mut x0 = vec![0.0; n];
        x0[0] = 0.4;
        let switch_step = (10.0 / dt).round() as usize;
        TaskSuite {
            dt,
            h: 0.01,
            predict: PredictTask { x0: x0.clone(), horizon: 100 },
            lqr: LqrTask { x0: x0.clone(), q_state, r: 1.0, steps: 400, success_radius: 0.1 },
            servo: ServoTask {
                x0: vec![0.0; n],
                output: tracked,
                reference: 1.0,
                steps: 400,
                weights: ServoWeights::default(),
                success_radius: 0.1,
            },
            mpc: MpcTask {
                x0: vec![0.0; n],
                spec: MpcSpec {
                    horizon: 20,
                    tracked,
                    tracking_weight: 1.0,
                    rate_weight: 1.0,
                    input_weight: 0.0,
                    reference: Reference::Step { before: -1.0, after: 1.0, switch_step },
                    input_box: None,
                },
                steps: 2 * switch_step,
                success_radius: 0.1,
            },
        }
    }

    pub fn lqr_weights(&self, model: &EmbeddingModel) -> Result<(Matrix, Matrix)> {
        let q = Matrix::from_diagonal(&Vector::from_vec(self.lqr.q_state.clone()));
        let qw = state_weight(&q, model.embed_dim)?;
        Ok((qw, Matrix::from_element(model.input_dim, model.input_dim, self.lqr.r)))
    }
}

/// One task run for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: Task,
    pub outcome: Option<BasinOutcome>,
    pub diverged: bool,
    /// predict: RMS state error; lqr: final ‖χ‖; servo: final |y − r|;
    /// mpc: RMS tracking error. Infinite (`null` in JSON) when the run failed.
    #[serde(with = "lossy_float")]
    pub metric: f64,
    pub trajectory: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Reference value per step, for tracking tasks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference: Vec<f64>,
    /// Model prediction for the predict task.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predicted: Vec<Vec<f64>>,
    pub error: Option<String>,
}

impl TaskRecord {
    fn failed(task: Task, e: &Error) -> Self {
        TaskRecord {
            task,
            outcome: None,
            diverged: matches!(e, Error::Divergence { .. }),
            metric: f64::INFINITY,
            trajectory: Vec::new(),
            inputs: Vec::new(),
            reference: Vec::new(),
            predicted: Vec::new(),
            error: Some(e.to_string()),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none() && !self.diverged && self.outcome != Some(BasinOutcome::SteadyError)
    }
}

fn to_rows(v: &[Vector]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.iter().cloned().collect()).collect()
}

fn from_loop(task: Task, run: &ClosedLoop, metric: f64, radius: f64) -> TaskRecord {
    TaskRecord {
        task,
        outcome: Some(BasinOutcome::classify(run.diverged, metric, radius)),
        diverged: run.diverged,
        metric: if run.diverged { f64::INFINITY } else { metric },
        trajectory: to_rows(&run.states),
        inputs: to_rows(&run.inputs),
        reference: Vec::new(),
        predicted: Vec::new(),
        error: None,
    }
}

/// True zero-input trajectory of `sys` from `x0`; stops early on divergence.
pub fn predict_true(sys: &DynSystem, x0: &[f64], horizon: usize, dt: f64, h: f64) -> Result<Vec<Vector>> {
    let u = vec![0.0; sys.input_dim()];
    let mut out = vec![Vector::from_column_slice(x0)];
    for _ in 0..horizon {
        match sample_map(sys, out.last().unwrap().as_slice(), &u, dt, h) {
            Ok(next) => out.push(Vector::from_vec(next)),
            Err(Error::Divergence { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn run_task_inner(task: Task, sys: &DynSystem, model: &EmbeddingModel, suite: &TaskSuite) -> Result<TaskRecord> {
    let (dt, h) = (suite.dt, suite.h);
    match task {
        Task::Predict => {
            let p = &suite.predict;
            let truth = predict_true(sys, &p.x0, p.horizon, dt, h)?;
            let inputs = vec![Vector::zeros(model.input_dim); p.horizon];
            let pred = model.rollout(&p.x0, &inputs, p.horizon)?;
            let k = truth.len().min(pred.states.len());
            let sq: f64 = (0..k).map(|i| (&truth[i] - &pred.states[i]).norm_squared()).sum();
            let diverged = pred.diverged || truth.len() < p.horizon + 1;
            Ok(TaskRecord {
                task,
                outcome: None,
                diverged,
                metric: if diverged { f64::INFINITY } else { (sq / k as f64).sqrt() },
                trajectory: to_rows(&truth),
                inputs: to_rows(&inputs),
                reference: Vec::new(),
                predicted: to_rows(&pred.states),
                error: None,
            })
        }
        Task::Lqr => {
            let l = &suite.lqr;
            let (qw, rw) = suite.lqr_weights(model)?;
            let sol = solve_dare(&model.a, &model.b, &qw, &rw, DARE_TOL, DARE_MAX_ITER)?;
            let run = simulate_closed_loop(sys, model, &Controller::lqr(&sol), &l.x0, l.steps, dt, h)?;
            Ok(from_loop(task, &run, run.final_state().norm(), l.success_radius))
        }
        Task::Servo => {
            let s = &suite.servo;
            if s.output >= model.state_dim {
                return Err(Error::usage("servo output index out of range"));
            }
            let (qw, rw) = suite.lqr_weights(model)?;
            let mut c = Matrix::zeros(1, model.embed_dim);
            c[(0, s.output)] = 1.0;
            let gains = design_servo(&model.a, &model.b, &c, &qw, &rw, s.weights)?;
            let ctrl = Controller::Servo { gains, reference: Vector::from_element(1, s.reference) };
            let run = simulate_closed_loop(sys, model, &ctrl, &s.x0, s.steps, dt, h)?;
            let err = (run.final_state()[s.output] - s.reference).abs();
            let mut rec = from_loop(task, &run, err, s.success_radius);
            rec.reference = vec![s.reference; run.states.len()];
            Ok(rec)
        }
        Task::Mpc => {
            let m = &suite.mpc;
            if m.spec.tracked >= model.state_dim {
                return Err(Error::usage("MPC tracked component must be a state coordinate"));
            }
            let run = simulate_closed_loop(sys, model, &Controller::mpc(m.spec.clone(), model), &m.x0, m.steps, dt, h)?;
            let reference: Vec<f64> = (0..run.states.len()).map(|k| m.spec.reference.value(k)).collect();
            let c = m.spec.tracked;
            let sq: f64 = run.states.iter().zip(&reference).map(|(x, r)| (x[c] - r).powi(2)).sum();
            let rms = (sq / run.states.len() as f64).sqrt();
            let final_err = (run.final_state()[c] - reference.last().unwrap()).abs();
            let mut rec = from_loop(task, &run, final_err, m.success_radius);
            if !run.diverged {
                rec.metric = rms;
            }
            rec.reference = reference;
            Ok(rec)
        }
    }
}

/// Run one task. Synthesis and numerical failures become failed records.
pub fn run_task(task: Task, sys: &DynSystem, model: &EmbeddingModel, suite: &TaskSuite) -> Result<TaskRecord> {
    match run_task_inner(task, sys, model, suite) {
        Ok(r) => Ok(r),
        Err(e @ (Error::Synthesis(_) | Error::Numerical(_) | Error::Divergence { .. })) => Ok(TaskRecord::failed(task, &e)),
        Err(e) => Err(e),
    }
}

mod lossy_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
