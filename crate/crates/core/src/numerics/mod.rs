//! Dense numerics shared by every other module.

mod adam;
mod linalg;
mod mlp;
pub mod serde_matrix;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use linalg::{
    ensure_finite, pinv, pinv_with_condition, singular_values, solve_tikhonov, spectral_radius, DEFAULT_RCOND,
};
pub use mlp::{Activation, Mlp};
pub use tape::{Tape, Var};

/// Dense real matrix. Batches are stored one sample per row.
pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
