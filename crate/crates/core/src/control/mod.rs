//! Controllers designed on the embedded linear model and closed-loop
//! simulation against the true dynamics.

mod lqr;
mod mpc;

pub use lqr::{
    dare_residual, design_servo, solve_dare, state_weight, LqrSolution, ServoGains, ServoWeights, DARE_MAX_ITER,
    DARE_TOL,
};
pub use mpc::{condense, mpc_step, MpcSpec, MpcStep, Reference};

use crate::dynamics::sample_map;
use crate::{DynSystem, EmbeddingModel, Error, Matrix, Result, Vector};
use std::io::Write;

/// States beyond this sup-norm count as a divergent closed loop.
pub const CLOSED_LOOP_LIMIT: f64 = 1e3;

/// Feedback law acting on the embedded state.
#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    Zero,
    /// `u = gain · ξ`.
    Lqr { gain: Matrix },
    Servo { gains: ServoGains, reference: Vector },
    /// MPC on the model's `(A, B)`.
    Mpc { spec: MpcSpec, a: Matrix, b: Matrix },
}

impl Controller {
    pub fn lqr(solution: &LqrSolution) -> Self {
        Controller::Lqr { gain: solution.gain.clone() }
    }

    pub fn mpc(spec: MpcSpec, model: &EmbeddingModel) -> Self {
        Controller::Mpc { spec, a: model.a.clone(), b: model.b.clone() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Controller::Zero => "zero",
            Controller::Lqr { .. } => "lqr",
            Controller::Servo { .. } => "servo",
            Controller::Mpc { .. } => "mpc",
        }
    }
}

/// Mutable part of a controller: the servo integrator and the last input.
#[derive(Debug, Clone)]
struct ControllerState {
    nu: Option<Vector>,
    u_prev: Vector,
}

fn control_input(c: &Controller, st: &mut ControllerState, xi: &Vector, k: usize, p: usize) -> Result<(Vector, bool)> {
    let out = match c {
        Controller::Zero => (Vector::zeros(p), false),
        Controller::Lqr { gain } => (gain * xi, false),
        Controller::Servo { gains, reference } => {
            let nu = st.nu.get_or_insert_with(|| Vector::zeros(reference.len()));
            *nu += reference - &gains.c * xi;
            (-&gains.q_s * xi + &gains.q_i * &*nu, false)
        }
        Controller::Mpc { spec, a, b } => {
            let step = mpc_step(spec, a, b, xi, &st.u_prev, k)?;
            (step.u0, step.regularized)
        }
    };
    st.u_prev = out.0.clone();
    Ok(out)
}

/// Closed-loop record. `states` has one more row than `inputs` unless the run
/// diverged, in which case it stops at the first offending state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub dt: f64,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    /// `embed(χ_k)` as seen by the controller.
    pub embedded: Vec<Vector>,
    pub diverged: bool,
    /// Steps at which the MPC Hessian needed regularization.
    pub regularized_steps: Vec<usize>,
}

impl ClosedLoop {
    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("at least the initial state")
    }

    /// `k,t,chi_1..chi_n,u_1..u_p,flag`. The last row has empty inputs;
    /// `flag` is 1 on the row where the run diverged and 2 where the MPC
    /// Hessian was regularized.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.states[0].len();
        let p = self.inputs.first().map_or(0, |u| u.len());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["k".to_string(), "t".to_string()];
        header.extend((1..=n).map(|i| format!("chi_{i}")));
        header.extend((1..=p).map(|i| format!("u_{i}")));
        header.push("flag".into());
        out.write_record(&header)?;
        let last = self.states.len() - 1;
        for (k, x) in self.states.iter().enumerate() {
            let mut rec = vec![k.to_string(), (k as f64 * self.dt).to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            match self.inputs.get(k) {
                Some(u) => rec.extend(u.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), p)),
            }
            let flag = if self.diverged && k == last {
                1
            } else if self.regularized_steps.contains(&k) {
                2
            } else {
                0
            };
            rec.push(flag.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Run `controller` on the true system for `steps` sampling periods.
///
/// The controller sees `ξ_k = embed(χ_k)` of the true state at every step.
pub fn simulate_closed_loop(
    sys: &DynSystem,
    model: &EmbeddingModel,
    controller: &Controller,
    x0: &[f64],
    steps: usize,
    dt: f64,
    h: f64,
) -> Result<ClosedLoop> {
    let n = sys.state_dim();
    let p = sys.input_dim();
    if x0.len() != n || model.state_dim != n || model.input_dim != p {
        return Err(Error::usage(format!(
            "closed loop needs state dim {n} and input dim {p} throughout, got x0 {} and model {}/{}",
            x0.len(),
            model.state_dim,
            model.input_dim
        )));
    }
    let nx = model.embed_dim;
    let ok_shape = match controller {
        Controller::Zero => true,
        Controller::Lqr { gain } => gain.shape() == (p, nx),
        Controller::Servo { gains, reference } => {
            gains.q_s.shape() == (p, nx) && gains.c.ncols() == nx && gains.q_i.shape() == (p, reference.len())
        }
        Controller::Mpc { a, b, .. } => a.shape() == (nx, nx) && b.shape() == (nx, p),
    };
    if !ok_shape {
        return Err(Error::usage(format!("{} controller does not match the model dimensions", controller.kind())));
    }

    let mut st = ControllerState { nu: None, u_prev: Vector::zeros(p) };
    let mut run = ClosedLoop {
        dt,
        states: vec![Vector::from_column_slice(x0)],
        inputs: Vec::with_capacity(steps),
        embedded: Vec::with_capacity(steps),
        diverged: false,
        regularized_steps: Vec::new(),
    };
    for k in 0..steps {
        let x = run.states[k].clone();
        let xi = model.embed(x.as_slice());
        let (u, regularized) = control_input(controller, &mut st, &xi, k, p)?;
        if regularized {
            run.regularized_steps.push(k);
        }
        run.embedded.push(xi);
        let next = match sample_map(sys, x.as_slice(), u.as_slice(), dt, h) {
            Ok(v) => Vector::from_vec(v),
            Err(Error::Divergence { state }) => {
                run.inputs.push(u);
                run.states.push(Vector::from_vec(state));
                run.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        run.inputs.push(u);
        let blown = next.iter().any(|v| !v.is_finite() || v.abs() > CLOSED_LOOP_LIMIT);
        run.states.push(next);
        if blown {
            run.diverged = true;
            break;
        }
    }
    Ok(run)
}
