use crate::control::{simulate_closed_loop, Controller};
use crate::dynamics::sample_map;
use crate::{DynSystem, EmbeddingModel, Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// One plotted coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Zero-based state component.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n).map(|i| if i == self.n - 1 { self.hi } else { self.lo + step * i as f64 }).collect()
    }
}

/// Two-dimensional slice of the state space. Components not on an axis
/// take their value from `base` (zero when `base` is empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x: Axis,
    pub y: Axis,
    #[serde(default)]
    pub base: Vec<f64>,
}

impl GridSpec {
    /// Square grid on components 0 and 1.
    pub fn square(lo: f64, hi: f64, n: usize) -> Self {
        GridSpec { x: Axis { index: 0, lo, hi, n }, y: Axis { index: 1, lo, hi, n }, base: Vec::new() }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        for a in [&self.x, &self.y] {
            if a.index >= state_dim {
                return Err(Error::usage(format!("grid axis index {} out of range for state dim {state_dim}", a.index)));
            }
            if !(a.lo.is_finite() && a.hi.is_finite()) || a.lo > a.hi {
                return Err(Error::usage("grid axis range must be finite with lo <= hi"));
            }
        }
        if self.x.index == self.y.index {
            return Err(Error::usage("grid axes must be different components"));
        }
        if !self.base.is_empty() && self.base.len() != state_dim {
            return Err(Error::usage(format!("grid base must have {state_dim} entries")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.n * self.y.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid states, `x` varying fastest.
    pub fn points(&self, state_dim: usize) -> Vec<Vec<f64>> {
        let base = if self.base.is_empty() { vec![0.0; state_dim] } else { self.base.clone() };
        let xs = self.x.values();
        let ys = self.y.values();
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &yv in &ys {
            for &xv in &xs {
                let mut p = base.clone();
                p[self.x.index] = xv;
                p[self.y.index] = yv;
                out.push(p);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    /// `‖y − [I 0](A g(x) + B u)‖`.
    StatePrediction,
    /// `‖g(y) − (A g(x) + B u)‖`.
    Modeling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub grid: GridSpec,
    pub metric: ErrorMetric,
    /// `(x, y, err)` in grid order.
    pub points: Vec<(f64, f64, f64)>,
}

impl Contour {
    pub fn mean(&self) -> f64 {
        self.points.iter().map(|p| p.2).sum::<f64>() / self.points.len().max(1) as f64
    }

    pub fn max(&self) -> f64 {
        self.points.iter().map(|p| p.2).fold(0.0, f64::max)
    }

    /// `x,y,err`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "err"])?;
        for (x, y, e) in &self.points {
            out.write_record([x.to_string(), y.to_string(), e.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One-step error of `model` against the true system at every grid point,
/// with the input held at `u`. Points whose true successor cannot be
/// computed get an infinite error.
pub fn error_contour(
    model: &EmbeddingModel,
    sys: &DynSystem,
    grid: &GridSpec,
    u: &[f64],
    metric: ErrorMetric,
    dt: f64,
    h: f64,
) -> Result<Contour> {
    let n = sys.state_dim();
    grid.validate(n)?;
    if model.state_dim != n || u.len() != model.input_dim {
        return Err(Error::usage("model, system and input dimensions disagree"));
    }
    let points = grid.points(n);
    let errors: Vec<f64> = points
        .par_iter()
        .map(|x| match sample_map(sys, x, u, dt, h) {
            Ok(y) => match metric {
                ErrorMetric::StatePrediction => model.state_prediction_error(x, u, &y),
                ErrorMetric::Modeling => model.modeling_error(x, u, &y),
            },
            Err(_) => f64::INFINITY,
        })
        .collect();
    let points = points
        .iter()
        .zip(errors)
        .map(|(p, e)| (p[grid.x.index], p[grid.y.index], e))
        .collect();
    Ok(Contour { grid: grid.clone(), metric, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasinOutcome {
    Converged,
    SteadyError,
    Diverged,
}

impl BasinOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            BasinOutcome::Converged => "converged",
            BasinOutcome::SteadyError => "steady_error",
            BasinOutcome::Diverged => "diverged",
        }
    }

    pub fn classify(diverged: bool, final_norm: f64, radius: f64) -> Self {
        if diverged {
            BasinOutcome::Diverged
        } else if final_norm < radius {
            BasinOutcome::Converged
        } else {
            BasinOutcome::SteadyError
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinRecord {
    pub x0: Vec<f64>,
    pub outcome: BasinOutcome,
    pub final_norm: f64,
    pub trajectory: Vec<Vec<f64>>,
}

/// Closed-loop runs from every initial state, classified by the final
/// distance to the origin.
#[allow(clippy::too_many_arguments)]
pub fn basin_estimate(
    sys: &DynSystem,
    model: &EmbeddingModel,
    controller: &Controller,
    inits: &[Vec<f64>],
    steps: usize,
    success_radius: f64,
    dt: f64,
    h: f64,
) -> Result<Vec<BasinRecord>> {
    inits
        .par_iter()
        .map(|x0| {
            let run = simulate_closed_loop(sys, model, controller, x0, steps, dt, h)?;
            let final_norm = run.final_state().norm();
            Ok(BasinRecord {
                x0: x0.clone(),
                outcome: BasinOutcome::classify(run.diverged, final_norm, success_radius),
                final_norm,
                trajectory: run.states.iter().map(|s| s.iter().cloned().collect()).collect(),
            })
        })
        .collect()
}

/// `x0_1..x0_n,outcome`.
pub fn write_basin_csv<W: Write>(records: &[BasinRecord], n: usize, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=n).map(|i| format!("x0_{i}")).collect();
    header.push("outcome".into());
    out.write_record(&header)?;
    for r in records {
        let mut rec: Vec<String> = r.x0.iter().map(|v| v.to_string()).collect();
        rec.push(r.outcome.as_str().into());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
