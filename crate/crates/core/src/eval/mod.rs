//! Evaluation tasks producing tabular artifacts: error contours, basin
//! estimates, pure-evolution forecasts, the four-task suite and the
//! sensitivity sweep.

mod grid;
mod sweep;
mod tasks;

pub use grid::{basin_estimate, error_contour, write_basin_csv, Axis, BasinOutcome, BasinRecord, Contour, ErrorMetric, GridSpec};
pub use sweep::{sensitivity_sweep, Aggregate, Method, SweepConfig, SweepSummary};
pub use tasks::{
    predict_true, run_task, LqrTask, MpcTask, PredictTask, ServoTask, Task, TaskRecord, TaskSuite,
};

use crate::dynamics::DIVERGENCE_LIMIT;
use crate::{EmbeddingModel, Error, Result, Vector};

/// Embedded trajectory of a model evolved without re-embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub embedded: Vec<Vector>,
    pub diverged: bool,
}

impl Forecast {
    /// First `n` coordinates of every step.
    pub fn states(&self, n: usize) -> Vec<Vector> {
        self.embedded.iter().map(|g| g.rows(0, n).into_owned()).collect()
    }
}

/// `g⁺_0 = g(χ₀)`, `g⁺_{k+1} = A g⁺_k + B u_k`. The features are evaluated
/// only once, at the initial state.
pub fn forecast_pure(model: &EmbeddingModel, x0: &[f64], inputs: &[Vector], horizon: usize) -> Result<Forecast> {
    if inputs.len() < horizon {
        return Err(Error::usage(format!("forecast needs {horizon} inputs, got {}", inputs.len())));
    }
    if x0.len() != model.state_dim {
        return Err(Error::usage(format!("x0 has {} entries, model expects {}", x0.len(), model.state_dim)));
    }
    let mut embedded = vec![model.embed(x0)];
    for u in &inputs[..horizon] {
        let next = model.step_embedded(embedded.last().unwrap(), u.as_slice());
        if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Ok(Forecast { embedded, diverged: true });
        }
        embedded.push(next);
    }
    Ok(Forecast { embedded, diverged: false })
}

#[cfg(test)]
mod tests;
