//! Benchmark systems and the sampled discrete-time map they induce.

mod dataset;
mod integrate;

pub use dataset::{generate_dataset, split_dataset, Dataset, DatasetMeta, GenConfig, Samples, Split};
pub use integrate::{rk4_step, sample_map, substeps, DIVERGENCE_LIMIT};

use crate::numerics::serde_matrix;
use crate::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A controlled system `ẋ = f(x, u)` or `x⁺ = F(x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynSystem {
    /// `z̈ = -0.5 ż + z - 4 z³ + u`
    Duffing,
    /// `z̈ = -sin z + u`
    Pendulum,
    /// Rotational/translational actuator with coupling `0 < ε < 1`.
    Rtac { epsilon: f64 },
    /// Discrete map `x⁺ = [[0.5, a], [b, 0.2]] x + (cos x - 1) + [0.5, 0]ᵀ u`.
    NonNormal { a: f64, b: f64 },
    /// Discrete scalar map `x⁺ = sin x + u`.
    SineMap,
    /// Discrete `x⁺ = A x + B u`.
    LinearDiscrete {
        #[serde(with = "serde_matrix")]
        a: Matrix,
        #[serde(with = "serde_matrix")]
        b: Matrix,
    },
    /// Continuous `ẋ = A x + B u`.
    LinearContinuous {
        #[serde(with = "serde_matrix")]
        a: Matrix,
        #[serde(with = "serde_matrix")]
        b: Matrix,
    },
}

/// Default RTAC coupling.
pub const RTAC_DEFAULT_EPSILON: f64 = 0.2;

impl DynSystem {
    pub fn name(&self) -> &'static str {
        match self {
            DynSystem::Duffing => "duffing",
            DynSystem::Pendulum => "pendulum",
            DynSystem::Rtac { .. } => "rtac",
            DynSystem::NonNormal { .. } => "non_normal",
            DynSystem::SineMap => "sine_map",
            DynSystem::LinearDiscrete { .. } => "linear_discrete",
            DynSystem::LinearContinuous { .. } => "linear_continuous",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            DynSystem::Duffing | DynSystem::Pendulum | DynSystem::NonNormal { .. } => 2,
            DynSystem::Rtac { .. } => 4,
            DynSystem::SineMap => 1,
            DynSystem::LinearDiscrete { a, .. } | DynSystem::LinearContinuous { a, .. } => a.nrows(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            DynSystem::LinearDiscrete { b, .. } | DynSystem::LinearContinuous { b, .. } => b.ncols(),
            _ => 1,
        }
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(
            self,
            DynSystem::NonNormal { .. } | DynSystem::SineMap | DynSystem::LinearDiscrete { .. }
        )
    }

    pub fn parameters(&self) -> Vec<(&'static str, f64)> {
        match *self {
            DynSystem::Rtac { epsilon } => vec![("epsilon", epsilon)],
            DynSystem::NonNormal { a, b } => vec![("a", a), ("b", b)],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DynSystem::Rtac { epsilon } if !(*epsilon > 0.0 && *epsilon < 1.0) => {
                Err(Error::usage(format!("RTAC epsilon must lie in (0, 1), got {epsilon}")))
            }
            DynSystem::NonNormal { a, b } if !(a.is_finite() && b.is_finite()) => {
                Err(Error::usage("non-normal system parameters must be finite"))
            }
            DynSystem::LinearDiscrete { a, b } | DynSystem::LinearContinuous { a, b } => {
                if a.nrows() == 0 || a.nrows() != a.ncols() || b.nrows() != a.nrows() || b.ncols() == 0 {
                    return Err(Error::usage(format!(
                        "linear system needs square A and matching B, got {:?} and {:?}",
                        a.shape(),
                        b.shape()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Equilibria under `u = 0` (a representative subset for families).
    pub fn fixed_points(&self) -> Vec<Vec<f64>> {
        match self {
            DynSystem::Duffing => vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![-0.5, 0.0]],
            DynSystem::Pendulum => vec![vec![0.0, 0.0], vec![PI, 0.0], vec![-PI, 0.0]],
            DynSystem::Rtac { .. } => vec![vec![0.0; 4], vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, -2.0, 0.0]],
            DynSystem::NonNormal { .. } => vec![vec![0.0, 0.0]],
            DynSystem::SineMap => vec![vec![0.0]],
            DynSystem::LinearDiscrete { a, .. } | DynSystem::LinearContinuous { a, .. } => {
                vec![vec![0.0; a.nrows()]]
            }
        }
    }

    /// Right-hand side of a continuous system, written into `dz`.
    pub fn drift(&self, z: &[f64], u: &[f64], dz: &mut [f64]) {
        match *self {
            DynSystem::Duffing => {
                dz[0] = z[1];
                dz[1] = -0.5 * z[1] + z[0] - 4.0 * z[0].powi(3) + u[0];
            }
            DynSystem::Pendulum => {
                dz[0] = z[1];
                dz[1] = -z[0].sin() + u[0];
            }
            DynSystem::Rtac { epsilon: e } => {
                let (s3, c3) = z[2].sin_cos();
                let den = 1.0 - e * e * c3 * c3;
                let coupling = e * z[3] * z[3] * s3;
                dz[0] = z[1];
                dz[1] = (-z[0] + coupling) / den - e * c3 / den * u[0];
                dz[2] = z[3];
                dz[3] = (z[0] - coupling) / den + u[0] / den;
            }
            DynSystem::LinearContinuous { ref a, ref b } => linear(a, b, z, u, dz),
            _ => panic!("{} is a discrete-time system and has no drift", self.name()),
        }
    }

    /// One application of a discrete-time map.
    pub fn map(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        match *self {
            DynSystem::SineMap => vec![z[0].sin() + u[0]],
            DynSystem::NonNormal { a, b } => vec![
                0.5 * z[0] + a * z[1] + z[0].cos() - 1.0 + 0.5 * u[0],
                b * z[0] + 0.2 * z[1] + z[1].cos() - 1.0,
            ],
            DynSystem::LinearDiscrete { ref a, ref b } => {
                let mut out = vec![0.0; a.nrows()];
                linear(a, b, z, u, &mut out);
                out
            }
            _ => panic!("{} is a continuous-time system; use sample_map", self.name()),
        }
    }
}

fn linear(a: &Matrix, b: &Matrix, z: &[f64], u: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, zj) in z.iter().enumerate() {
            acc += a[(i, j)] * zj;
        }
        for (j, uj) in u.iter().enumerate() {
            acc += b[(i, j)] * uj;
        }
        *o = acc;
    }
}

/// Input signal used while generating trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSchedule {
    /// Trajectory `t` uses `u_k = cos(omega_step · i · k · Δt)` with `i = t mod signals`.
    Cosine { omega_step: f64, signals: usize },
    Zero,
}

impl Default for InputSchedule {
    fn default() -> Self {
        InputSchedule::Cosine { omega_step: 20.0, signals: 6 }
    }
}

impl InputSchedule {
    pub fn value(&self, trajectory: usize, k: usize, dt: f64) -> f64 {
        match *self {
            InputSchedule::Cosine { omega_step, signals } => {
                let i = (trajectory % signals.max(1)) as f64;
                (omega_step * i * k as f64 * dt).cos()
            }
            InputSchedule::Zero => 0.0,
        }
    }
}
