//! Linear embedding models for nonlinear controlled dynamics.
//!
//! The crate fits models of the form `g(x⁺) ≈ A g(x) + B u`, where the first
//! `n` coordinates of the embedding `g` are the state itself. The operator
//! `[A B]` comes from an oblique-projection variant of EDMD whose test
//! functions can be learned jointly with neural feature maps. Ordinary EDMD is
//! the special case where the test functions coincide with the features.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: dense linear algebra helpers, a reverse-mode tape, MLPs, Adam
//! - [`dynamics`]: benchmark systems, RK4 sampling, dataset generation
//! - [`embedding`]: feature maps, test functions, operator fitting, error metrics
//! - [`training`]: the two-stage learning pipeline
//! - [`control`]: LQR, integral servo and condensed MPC on the embedded model
//! - [`eval`]: prediction, contour, basin, forecasting and sensitivity tasks

pub mod control;
pub mod dynamics;
pub mod embedding;
mod error;
pub mod eval;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};


pub use control::{Controller, LqrSolution, MpcSpec, ServoGains};
pub use training::{TrainConfig, TrainReport};
pub use dynamics::{Dataset, DynSystem, InputSchedule, Split};
pub use embedding::{EmbeddingModel, FeatureMap, FitMode, OperatorFit, TestFunctionSet};

