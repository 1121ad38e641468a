use super::{FeatureMap, TestFunctionSet};
use crate::dynamics::Samples;
use crate::numerics::{ensure_finite, pinv_with_condition, solve_tikhonov, DEFAULT_RCOND};
use crate::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FitMode {
    /// Exact SVD pseudo-inverse with relative cutoff `rcond`.
    Pinv { rcond: f64 },
    /// Ridge-regularized inverse, smooth in the features.
    Tikhonov { lambda: f64 },
}

impl Default for FitMode {
    fn default() -> Self {
        FitMode::Pinv { rcond: DEFAULT_RCOND }
    }
}

/// `[A B]` with the condition number of the matrix that was inverted.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorFit {
    pub a: Matrix,
    pub b: Matrix,
    pub condition: f64,
}

/// Core oblique-EDMD solve on stacked data, one sample per row.
///
/// With `gx = [g(x) u]` (M × (N_x+p)), `gy = g(y)` (M × N_x) and `phi`
/// (M × N̂) this returns `[A B] = (gyᵀ φ)(gxᵀ φ)†`. The empirical-measure
/// `1/M` factors cancel and are left out.
pub fn fit_operator(gx: &Matrix, gy: &Matrix, phi: &Matrix, mode: FitMode) -> Result<OperatorFit> {
    let m = gx.nrows();
    if m == 0 {
        return Err(Error::usage("operator fit needs at least one sample"));
    }
    if gy.nrows() != m || phi.nrows() != m || gy.ncols() > gx.ncols() {
        return Err(Error::usage(format!(
            "inconsistent fit blocks: gx {:?}, gy {:?}, phi {:?}",
            gx.shape(),
            gy.shape(),
            phi.shape()
        )));
    }
    let nx = gy.ncols();
    let k = gx.transpose() * phi;
    let h = gy.transpose() * phi;
    let (ab, condition) = match mode {
        FitMode::Pinv { rcond } => {
            let (kp, cond) = pinv_with_condition(&k, rcond)?;
            (&h * kp, cond)
        }
        FitMode::Tikhonov { lambda } => {
            let ab = solve_tikhonov(&k, &h, lambda)?;
            (ab, condition_number(&k))
        }
    };
    Ok(OperatorFit {
        a: ab.columns(0, nx).into_owned(),
        b: ab.columns(nx, gx.ncols() - nx).into_owned(),
        condition,
    })
}

fn condition_number(k: &Matrix) -> f64 {
    let s = crate::numerics::singular_values(k).unwrap_or_default();
    let s_max = s.iter().cloned().fold(0.0, f64::max);
    let s_min = s.iter().cloned().filter(|&v| v > DEFAULT_RCOND * s_max).fold(f64::INFINITY, f64::min);
    if s_min.is_finite() {
        s_max / s_min
    } else {
        1.0
    }
}

fn finite_rows(m: &Matrix, what: &str) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{what} is non-finite at sample {i}")));
        }
    }
    Ok(())
}

/// Evaluate features and test functions on `samples` and solve for `[A B]`.
pub fn oblique_edmd_fit(
    samples: &Samples,
    features: &FeatureMap,
    tests: &TestFunctionSet,
    mode: FitMode,
) -> Result<OperatorFit> {
    if samples.is_empty() {
        return Err(Error::usage("oblique EDMD fit on an empty sample set"));
    }
    if samples.state_dim() != features.state_dim() {
        return Err(Error::usage(format!(
            "samples have state dim {} but the feature map expects {}",
            samples.state_dim(),
            features.state_dim()
        )));
    }
    tests.check(features, samples.input_dim())?;
    ensure_finite(&samples.x, "states")?;
    let (gx, gy) = stacked_features(samples, features);
    finite_rows(&gx, "embedded state")?;
    finite_rows(&gy, "embedded successor")?;
    let phi = tests.evaluate_batch(features, &samples.x, &samples.u);
    finite_rows(&phi, "test function")?;
    fit_operator(&gx, &gy, &phi, mode)
}

/// Plain EDMD: the oblique fit with tied test functions.
pub fn edmd_fit(samples: &Samples, features: &FeatureMap, mode: FitMode) -> Result<OperatorFit> {
    oblique_edmd_fit(samples, features, &TestFunctionSet::Tied, mode)
}

/// `([g(x) u], g(y))`.
pub fn stacked_features(samples: &Samples, features: &FeatureMap) -> (Matrix, Matrix) {
    let gx0 = features.embed_batch(&samples.x);
    let nx = gx0.ncols();
    let p = samples.input_dim();
    let mut gx = Matrix::zeros(samples.len(), nx + p);
    gx.columns_mut(0, nx).copy_from(&gx0);
    gx.columns_mut(nx, p).copy_from(&samples.u);
    (gx, features.embed_batch(&samples.y))
}
