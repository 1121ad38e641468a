//! Feature maps, test functions and the oblique-EDMD operator.

mod features;
mod fit;
mod model;

pub use features::{monomial_exponents, FeatureMap, TestFunctionSet};
pub use fit::{edmd_fit, fit_operator, oblique_edmd_fit, stacked_features, FitMode, OperatorFit};
pub use model::{EmbeddingModel, ModelProvenance, Rollout};

use crate::Matrix;

/// Convenience for `embed_batch`.
pub fn embed_batch(features: &FeatureMap, x: &Matrix) -> Matrix {
    features.embed_batch(x)
}

/// Convenience for `evaluate_batch`.
pub fn eval_tests_batch(tests: &TestFunctionSet, features: &FeatureMap, x: &Matrix, u: &Matrix) -> Matrix {
    tests.evaluate_batch(features, x, u)
}
