use super::{FeatureMap, OperatorFit, TestFunctionSet};
use crate::dynamics::DIVERGENCE_LIMIT;
use crate::numerics::{ensure_finite, serde_matrix};
use crate::{Error, Matrix, Result, Vector};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Where a model came from. Hashes are filled in by the caller.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelProvenance {
    pub method: String,
    pub dataset_hash: Option<String>,
    pub config_hash: Option<String>,
    pub condition: Option<f64>,
}

/// `g(x⁺) ≈ A g(x) + B u` with decoder `[Iₙ 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingModel {
    pub state_dim: usize,
    pub embed_dim: usize,
    pub input_dim: usize,
    pub features: FeatureMap,
    #[serde(with = "serde_matrix")]
    pub a: Matrix,
    #[serde(with = "serde_matrix")]
    pub b: Matrix,
    /// Test functions the operator was fitted with, kept for provenance.
    #[serde(default)]
    pub test_functions: Option<TestFunctionSet>,
    #[serde(default)]
    pub provenance: ModelProvenance,
}

/// Model-predicted states; stops early if the prediction diverges.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<Vector>,
    pub diverged: bool,
}

impl EmbeddingModel {
    pub fn new(features: FeatureMap, a: Matrix, b: Matrix) -> Result<Self> {
        let nx = features.dim();
        if a.shape() != (nx, nx) || b.nrows() != nx || b.ncols() == 0 {
            return Err(Error::usage(format!(
                "model matrices do not match embedding dimension {nx}: A {:?}, B {:?}",
                a.shape(),
                b.shape()
            )));
        }
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        Ok(Self {
            state_dim: features.state_dim(),
            embed_dim: nx,
            input_dim: b.ncols(),
            features,
            a,
            b,
            test_functions: None,
            provenance: ModelProvenance::default(),
        })
    }

    pub fn from_fit(features: FeatureMap, fit: OperatorFit) -> Result<Self> {
        let mut model = Self::new(features, fit.a, fit.b)?;
        model.provenance.condition = Some(fit.condition);
        Ok(model)
    }

    pub fn with_tests(mut self, tests: TestFunctionSet) -> Self {
        self.test_functions = Some(tests);
        self
    }

    pub fn with_method(mut self, method: &str) -> Self {
        self.provenance.method = method.to_string();
        self
    }

    pub fn embed(&self, x: &[f64]) -> Vector {
        self.features.embed(x)
    }

    /// `A ξ + B u`.
    pub fn step_embedded(&self, xi: &Vector, u: &[f64]) -> Vector {
        &self.a * xi + &self.b * Vector::from_column_slice(u)
    }

    /// `[Iₙ 0](A g(x) + B u)`.
    pub fn predict_state(&self, x: &[f64], u: &[f64]) -> Vector {
        self.step_embedded(&self.embed(x), u).rows(0, self.state_dim).into_owned()
    }

    /// `‖g(y) − (A g(x) + B u)‖₂`.
    pub fn modeling_error(&self, x: &[f64], u: &[f64], y: &[f64]) -> f64 {
        (self.embed(y) - self.step_embedded(&self.embed(x), u)).norm()
    }

    /// `‖y − [Iₙ 0](A g(x) + B u)‖₂`.
    pub fn state_prediction_error(&self, x: &[f64], u: &[f64], y: &[f64]) -> f64 {
        (Vector::from_column_slice(y) - self.predict_state(x, u)).norm()
    }

    /// Multi-step prediction that re-embeds the decoded state every step.
    /// `inputs` must hold at least `horizon` entries.
    pub fn rollout(&self, x0: &[f64], inputs: &[Vector], horizon: usize) -> Result<Rollout> {
        if inputs.len() < horizon {
            return Err(Error::usage(format!("rollout needs {horizon} inputs, got {}", inputs.len())));
        }
        let mut states = vec![Vector::from_column_slice(x0)];
        for u in &inputs[..horizon] {
            let next = self.predict_state(states.last().unwrap().as_slice(), u.as_slice());
            if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
                return Ok(Rollout { states, diverged: true });
            }
            states.push(next);
        }
        Ok(Rollout { states, diverged: false })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        let checked = Self::new(model.features.clone(), model.a.clone(), model.b.clone())?;
        if checked.state_dim != model.state_dim || checked.input_dim != model.input_dim {
            return Err(Error::Format("model dimensions disagree with its matrices".into()));
        }
        if let FeatureMap::Mlp { net } = &model.features {
            net.check()?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, Mlp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// The sine-map model with features `[x, sin x]` and `A = [[0, 1], [0, 0]]`.
    fn sine_model() -> EmbeddingModel {
        let g = FeatureMap::SineAugmented { state_dim: 1 };
        EmbeddingModel::new(g, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), Matrix::from_row_slice(2, 1, &[1.0, 0.0]))
            .unwrap()
    }

    #[test]
    fn sine_model_errors_match_closed_form() {
        let m = sine_model();
        for u in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, std::f64::consts::PI] {
            let y = [u];
            assert!((m.modeling_error(&[0.0], &[u], &y) - u.sin().abs()).abs() < 1e-12);
        }
        for (x, u) in [(0.3, 0.1), (-1.2, 2.0)] {
            let y = [f64::sin(x) + u];
            assert!(m.state_prediction_error(&[x], &[u], &y) < 1e-15);
        }
    }

    #[test]
    fn shape_and_finiteness_are_checked() {
        let g = FeatureMap::monomial(2, 1).unwrap();
        assert!(EmbeddingModel::new(g.clone(), Matrix::zeros(3, 3), Matrix::zeros(3, 1)).is_err());
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = f64::INFINITY;
        assert!(EmbeddingModel::new(g, a, Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn state_error_never_exceeds_modeling_error() {
        let m = sine_model();
        for (x, u) in [(0.3, 0.1), (-1.0, 2.0), (2.5, -0.4)] {
            let y = [f64::sin(x) + u];
            assert!(m.state_prediction_error(&[x], &[u], &y) <= m.modeling_error(&[x], &[u], &y) + 1e-15);
        }
    }

    #[test]
    fn rollout_horizon_zero_and_input_check() {
        let m = sine_model();
        let r = m.rollout(&[0.4], &[], 0).unwrap();
        assert_eq!(r.states, vec![Vector::from_element(1, 0.4)]);
        assert!(m.rollout(&[0.4], &[], 2).is_err());
    }

    #[test]
    fn rollout_flags_divergence() {
        let g = FeatureMap::monomial(1, 1).unwrap();
        let m = EmbeddingModel::new(g, Matrix::from_element(1, 1, 100.0), Matrix::zeros(1, 1)).unwrap();
        let inputs = vec![Vector::zeros(1); 10];
        let r = m.rollout(&[1.0], &inputs, 10).unwrap();
        assert!(r.diverged);
        assert_eq!(r.states.len(), 4);
    }

    #[test]
    fn json_round_trip_with_mlp_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = FeatureMap::mlp(Mlp::new(&[2, 3, 2], Activation::Swish, &mut rng).unwrap());
        let m = EmbeddingModel::new(g, Matrix::identity(4, 4) * 0.5, Matrix::from_element(4, 1, 0.1))
            .unwrap()
            .with_method("normal_nn");
        let json = m.to_json().unwrap();
        assert!(json.contains("\"a\": [\n"));
        assert_eq!(EmbeddingModel::from_json(&json).unwrap(), m);
    }
}
