use crate::dynamics::Samples;
use crate::embedding::{FeatureMap, TestFunctionSet};
use crate::numerics::{Tape, Var};
use crate::{Error, Matrix, Result};

/// Weights of the two error terms and the ridge weight of the differentiable fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_reg: f64,
}

/// Loss value with its parts and gradients.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    /// Summed squared modeling error.
    pub modeling: f64,
    /// Summed squared state-prediction error.
    pub state: f64,
    pub feature_grads: Vec<Matrix>,
    pub test_grads: Vec<Matrix>,
}

struct Recorded {
    tape: Tape,
    loss: Var,
    modeling: Var,
    state: Var,
    feature_params: Vec<Var>,
    test_params: Vec<Var>,
}

fn record(features: &FeatureMap, tests: &TestFunctionSet, samples: &Samples, w: &LossWeights) -> Result<Recorded> {
    if samples.is_empty() {
        return Err(Error::usage("loss over an empty sample set"));
    }
    if w.lambda1 < 0.0 || w.lambda2 < 0.0 || w.lambda1 + w.lambda2 == 0.0 {
        return Err(Error::usage("loss weights must be >= 0 and not both zero"));
    }
    tests.check(features, samples.input_dim())?;
    let n = samples.state_dim();

    let mut tape = Tape::new();
    let x = tape.leaf(samples.x.clone());
    let u = tape.leaf(samples.u.clone());
    let y = tape.leaf(samples.y.clone());
    let feature_params: Vec<Var> = features.params().into_iter().map(|p| tape.leaf(p)).collect();
    let test_params: Vec<Var> = tests.params().into_iter().map(|p| tape.leaf(p)).collect();

    let gx0 = features.embed_on_tape(&mut tape, x, &feature_params);
    let gy = features.embed_on_tape(&mut tape, y, &feature_params);
    let gx = tape.hcat(&[gx0, u]);
    let phi = tests.evaluate_on_tape(&mut tape, gx0, x, u, &test_params);

    let gx_t = tape.transpose(gx);
    let gy_t = tape.transpose(gy);
    // Per-sample averages keep λ_reg meaningful independently of M.
    let inv_m = 1.0 / samples.len() as f64;
    let k = tape.matmul(gx_t, phi);
    let k = tape.scale(k, inv_m);
    let h = tape.matmul(gy_t, phi);
    let h = tape.scale(h, inv_m);
    let ab = tape.tikhonov(k, h, w.lambda_reg)?;
    let ab_t = tape.transpose(ab);
    let pred = tape.matmul(gx, ab_t);
    let resid = tape.sub(gy, pred);
    let resid_state = tape.columns(resid, 0, n);
    let modeling = tape.sum_squares(resid);
    let state = tape.sum_squares(resid_state);
    let t1 = tape.scale(modeling, w.lambda1);
    let t2 = tape.scale(state, w.lambda2);
    let loss = tape.add(t1, t2);
    Ok(Recorded { tape, loss, modeling, state, feature_params, test_params })
}

fn evaluate(features: &FeatureMap, tests: &TestFunctionSet, samples: &Samples, w: &LossWeights) -> Result<LossEval> {
    let r = record(features, tests, samples, w)?;
    let value = r.tape.scalar(r.loss);
    let mut wrt = r.feature_params.clone();
    wrt.extend(&r.test_params);
    let mut grads = r.tape.grad(r.loss, &wrt)?;
    let test_grads = grads.split_off(r.feature_params.len());
    Ok(LossEval {
        value,
        modeling: r.tape.scalar(r.modeling),
        state: r.tape.scalar(r.state),
        feature_grads: grads,
        test_grads,
    })
}

/// `Σ λ1 ℰ² + λ2 ℰ²_state` with `[A B]` from the orthogonal projection
/// (test functions tied to the features), differentiable in the features.
pub fn loss_j(features: &FeatureMap, samples: &Samples, w: &LossWeights) -> Result<LossEval> {
    evaluate(features, &TestFunctionSet::Tied, samples, w)
}

/// As [`loss_j`] but with `[A B]` from the oblique projection defined by `tests`.
pub fn loss_j_oblique(
    features: &FeatureMap,
    tests: &TestFunctionSet,
    samples: &Samples,
    w: &LossWeights,
) -> Result<LossEval> {
    evaluate(features, tests, samples, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, Mlp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights() -> LossWeights {
        LossWeights { lambda1: 1.0, lambda2: 1.0, lambda_reg: 1e-8 }
    }

    fn toy(m: usize, seed: u64) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(m, 2, |_, _| rng.random_range(-1.0..1.0));
        let u = Matrix::from_fn(m, 1, |_, _| rng.random_range(-1.0..1.0));
        let y = Matrix::from_fn(m, 2, |i, j| {
            if j == 0 {
                0.9 * x[(i, 0)] + 0.1 * x[(i, 1)] + 0.5 * u[(i, 0)]
            } else {
                0.8 * x[(i, 1)] - 0.2 * x[(i, 0)].powi(2)
            }
        });
        Samples::new(x, u, y).unwrap()
    }

    #[test]
    fn exact_linear_data_gives_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(20, 2, |_, _| rng.random_range(-1.0..1.0));
        let u = Matrix::from_fn(20, 1, |_, _| rng.random_range(-1.0..1.0));
        let a = Matrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.7]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let y = &x * a.transpose() + &u * b.transpose();
        let s = Samples::new(x, u, y).unwrap();
        let g = FeatureMap::monomial(2, 1).unwrap();
        let scale = s.y.norm_squared();
        let l = loss_j(&g, &s, &weights()).unwrap();
        assert!(l.value < 1e-12 * scale, "{}", l.value);
        let l = loss_j_oblique(&g, &TestFunctionSet::Tied, &s, &weights()).unwrap();
        assert!(l.value < 1e-12 * scale);
    }

    #[test]
    fn loss_is_a_sum_over_samples() {
        let s = toy(15, 1);
        let doubled = Samples::new(
            Matrix::from_fn(30, 2, |i, j| s.x[(i % 15, j)]),
            Matrix::from_fn(30, 1, |i, j| s.u[(i % 15, j)]),
            Matrix::from_fn(30, 2, |i, j| s.y[(i % 15, j)]),
        )
        .unwrap();
        let g = FeatureMap::monomial(2, 2).unwrap();
        let w = LossWeights { lambda_reg: 1e-12, ..weights() };
        let one = loss_j(&g, &s, &w).unwrap().value;
        let two = loss_j(&g, &doubled, &w).unwrap().value;
        assert!((two - 2.0 * one).abs() < 1e-9 * one.max(1e-12), "{one} {two}");
    }

    #[test]
    fn tied_copy_starts_at_loss_j() {
        let s = toy(25, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = FeatureMap::mlp(Mlp::new(&[2, 6, 2], Activation::Swish, &mut rng).unwrap());
        let phi = TestFunctionSet::tied_copy(&g, Mlp::new(&[3, 6, 5], Activation::Swish, &mut rng).unwrap(), 1).unwrap();
        let a = loss_j(&g, &s, &weights()).unwrap();
        let b = loss_j_oblique(&g, &phi, &s, &weights()).unwrap();
        assert!((a.value - b.value).abs() <= 1e-9 * a.value.max(1.0));
    }

    #[test]
    fn weights_select_terms() {
        let s = toy(10, 3);
        let g = FeatureMap::monomial(2, 2).unwrap();
        let l = loss_j(&g, &s, &LossWeights { lambda1: 1.0, lambda2: 0.0, lambda_reg: 1e-8 }).unwrap();
        assert_eq!(l.value, l.modeling);
        assert!(l.state <= l.modeling);
        assert!(loss_j(&g, &s, &LossWeights { lambda1: 0.0, lambda2: 0.0, lambda_reg: 1e-8 }).is_err());
    }
}
