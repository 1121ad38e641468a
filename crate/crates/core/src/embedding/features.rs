use crate::numerics::{Mlp, Tape, Var};
use crate::{Error, Matrix, Result, Vector};
use serde::{Deserialize, Serialize};

/// Embedding `g: ℝⁿ → ℝ^{N_x}` whose first `n` outputs are the state itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureMap {
    /// All monomials of total degree `1..=degree`.
    Monomial { state_dim: usize, degree: u32 },
    /// `[x, net(x)]`.
    Mlp { net: Mlp },
    /// `[x, sin x]` componentwise.
    SineAugmented { state_dim: usize },
}

/// Monomial exponents, degree by degree. Within a degree the pure powers
/// come first in variable order, then mixed terms in descending
/// lexicographic order of the exponent tuple. For `n = 2, degree = 3` this
/// is `x1, x2, x1², x2², x1x2, x1³, x2³, x1²x2, x1x2²`.
pub fn monomial_exponents(n: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for d in 1..=degree {
        for i in 0..n {
            let mut e = vec![0; n];
            e[i] = d;
            out.push(e);
        }
        let mut all = Vec::new();
        compositions(n, d, &mut vec![0; n], 0, &mut all);
        out.extend(all.into_iter().filter(|e| e.iter().filter(|&&k| k > 0).count() > 1));
    }
    out
}

// Exponent tuples summing to `left`, in descending lexicographic order.
fn compositions(n: usize, left: u32, cur: &mut Vec<u32>, at: usize, out: &mut Vec<Vec<u32>>) {
    if at == n - 1 {
        cur[at] = left;
        out.push(cur.clone());
        return;
    }
    for k in (0..=left).rev() {
        cur[at] = k;
        compositions(n, left - k, cur, at + 1, out);
    }
}

impl FeatureMap {
    pub fn monomial(state_dim: usize, degree: u32) -> Result<Self> {
        if state_dim == 0 || degree == 0 {
            return Err(Error::usage("monomial dictionary needs state_dim >= 1 and degree >= 1"));
        }
        Ok(FeatureMap::Monomial { state_dim, degree })
    }

    pub fn mlp(net: Mlp) -> Self {
        FeatureMap::Mlp { net }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FeatureMap::Monomial { .. } => "monomial",
            FeatureMap::Mlp { .. } => "mlp",
            FeatureMap::SineAugmented { .. } => "sine_augmented",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            FeatureMap::Monomial { state_dim, .. } | FeatureMap::SineAugmented { state_dim } => *state_dim,
            FeatureMap::Mlp { net } => net.input_dim(),
        }
    }

    /// `N_x`.
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Monomial { state_dim, degree } => monomial_exponents(*state_dim, *degree).len(),
            FeatureMap::Mlp { net } => net.input_dim() + net.output_dim(),
            FeatureMap::SineAugmented { state_dim } => 2 * state_dim,
        }
    }

    pub fn net(&self) -> Option<&Mlp> {
        match self {
            FeatureMap::Mlp { net } => Some(net),
            _ => None,
        }
    }

    pub fn params(&self) -> Vec<Matrix> {
        self.net().map(Mlp::params).unwrap_or_default()
    }

    pub fn set_params(&mut self, params: &[Matrix]) -> Result<()> {
        match self {
            FeatureMap::Mlp { net } => net.set_params(params),
            _ if params.is_empty() => Ok(()),
            _ => Err(Error::usage("fixed dictionaries have no parameters")),
        }
    }

    pub fn embed(&self, x: &[f64]) -> Vector {
        let row = Matrix::from_row_slice(1, x.len(), x);
        let out = self.embed_batch(&row);
        Vector::from_iterator(out.ncols(), out.row(0).iter().copied())
    }

    /// Row-wise embedding of a batch of states.
    pub fn embed_batch(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.ncols(), self.state_dim(), "feature map input width");
        match self {
            FeatureMap::Monomial { state_dim, degree } => {
                let exps = monomial_exponents(*state_dim, *degree);
                Matrix::from_fn(x.nrows(), exps.len(), |i, k| {
                    exps[k].iter().enumerate().map(|(j, &e)| x[(i, j)].powi(e as i32)).product()
                })
            }
            FeatureMap::Mlp { net } => {
                let extra = net.forward(x);
                let mut out = Matrix::zeros(x.nrows(), x.ncols() + extra.ncols());
                out.columns_mut(0, x.ncols()).copy_from(x);
                out.columns_mut(x.ncols(), extra.ncols()).copy_from(&extra);
                out
            }
            FeatureMap::SineAugmented { state_dim } => {
                let n = *state_dim;
                Matrix::from_fn(x.nrows(), 2 * n, |i, k| if k < n { x[(i, k)] } else { x[(i, k - n)].sin() })
            }
        }
    }

    /// Record the embedding of the batch held in `x`; `params` are leaves in
    /// [`FeatureMap::params`] order (empty for monomials).
    pub fn embed_on_tape(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Var {
        match self {
            FeatureMap::Monomial { .. } | FeatureMap::SineAugmented { .. } => {
                let v = self.embed_batch(tape.value(x));
                tape.leaf(v)
            }
            FeatureMap::Mlp { net } => {
                let extra = net.forward_on_tape(tape, x, params);
                tape.hcat(&[x, extra])
            }
        }
    }
}

/// Test functions `φ(x, u)` defining the oblique projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctionSet {
    /// `φ = [g(x), u]`: the orthogonal projection, i.e. plain EDMD.
    Tied,
    /// `φ = net([x, u])`, plus `[x, anchor(x), u]` when an anchor is present.
    ///
    /// The anchor is a separately trainable copy of the feature network, so a
    /// set built with [`TestFunctionSet::tied_copy`] starts out exactly equal
    /// to the tied functions.
    Free { net: Mlp, anchor: Option<Mlp> },
    /// `φ = [x, u, head(x)]`; only `head` is learnable.
    Structured { head: Mlp },
}

impl TestFunctionSet {
    /// Free test functions initialized to coincide with `[g(x), u]`:
    /// the anchor copies the feature network and `residual`'s output layer is zeroed.
    pub fn tied_copy(features: &FeatureMap, mut residual: Mlp, input_dim: usize) -> Result<Self> {
        let net = features
            .net()
            .ok_or_else(|| Error::usage("tied-copy test functions need an MLP feature map"))?;
        if residual.input_dim() != features.state_dim() + input_dim
            || residual.output_dim() != features.dim() + input_dim
        {
            return Err(Error::usage(format!(
                "residual network must map {} -> {}, got {} -> {}",
                features.state_dim() + input_dim,
                features.dim() + input_dim,
                residual.input_dim(),
                residual.output_dim()
            )));
        }
        residual.zero_output_layer();
        Ok(TestFunctionSet::Free { net: residual, anchor: Some(net.clone()) })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TestFunctionSet::Tied => "tied",
            TestFunctionSet::Free { .. } => "free",
            TestFunctionSet::Structured { .. } => "structured",
        }
    }

    /// `N̂`.
    pub fn dim(&self, features: &FeatureMap, input_dim: usize) -> usize {
        match self {
            TestFunctionSet::Tied => features.dim() + input_dim,
            TestFunctionSet::Free { net, .. } => net.output_dim(),
            TestFunctionSet::Structured { head } => features.state_dim() + input_dim + head.output_dim(),
        }
    }

    pub fn check(&self, features: &FeatureMap, input_dim: usize) -> Result<()> {
        let n = features.state_dim();
        match self {
            TestFunctionSet::Tied => Ok(()),
            TestFunctionSet::Free { net, anchor } => {
                if net.input_dim() != n + input_dim {
                    return Err(Error::usage(format!("test network must take {} inputs", n + input_dim)));
                }
                if let Some(anchor) = anchor {
                    if anchor.input_dim() != n || n + anchor.output_dim() + input_dim != net.output_dim() {
                        return Err(Error::usage("anchor network does not match the test network width"));
                    }
                }
                Ok(())
            }
            TestFunctionSet::Structured { head } => {
                if head.input_dim() != n {
                    return Err(Error::usage(format!("structured head must take {n} inputs")));
                }
                Ok(())
            }
        }
    }

    pub fn params(&self) -> Vec<Matrix> {
        match self {
            TestFunctionSet::Tied => Vec::new(),
            TestFunctionSet::Free { net, anchor } => {
                let mut p = net.params();
                if let Some(a) = anchor {
                    p.extend(a.params());
                }
                p
            }
            TestFunctionSet::Structured { head } => head.params(),
        }
    }

    pub fn set_params(&mut self, params: &[Matrix]) -> Result<()> {
        match self {
            TestFunctionSet::Tied if params.is_empty() => Ok(()),
            TestFunctionSet::Tied => Err(Error::usage("tied test functions have no parameters")),
            TestFunctionSet::Free { net, anchor } => {
                let k = net.param_count();
                if params.len() < k {
                    return Err(Error::usage("too few test-function parameter blocks"));
                }
                net.set_params(&params[..k])?;
                match anchor {
                    Some(a) => a.set_params(&params[k..]),
                    None if params.len() == k => Ok(()),
                    None => Err(Error::usage("too many test-function parameter blocks")),
                }
            }
            TestFunctionSet::Structured { head } => head.set_params(params),
        }
    }

    /// Row-wise `φ(x_i, u_i)`.
    pub fn evaluate_batch(&self, features: &FeatureMap, x: &Matrix, u: &Matrix) -> Matrix {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let uv = tape.leaf(u.clone());
        let fp: Vec<Var> = features.params().into_iter().map(|p| tape.leaf(p)).collect();
        let gx = features.embed_on_tape(&mut tape, xv, &fp);
        let tp: Vec<Var> = self.params().into_iter().map(|p| tape.leaf(p)).collect();
        let out = self.evaluate_on_tape(&mut tape, gx, xv, uv, &tp);
        tape.value(out).clone()
    }

    /// Record `φ` on the tape. `gx` is the recorded embedding of `x`.
    pub fn evaluate_on_tape(&self, tape: &mut Tape, gx: Var, x: Var, u: Var, params: &[Var]) -> Var {
        match self {
            TestFunctionSet::Tied => tape.hcat(&[gx, u]),
            TestFunctionSet::Free { net, anchor } => {
                let k = net.param_count();
                let xu = tape.hcat(&[x, u]);
                let out = net.forward_on_tape(tape, xu, &params[..k]);
                match anchor {
                    None => out,
                    Some(a) => {
                        let extra = a.forward_on_tape(tape, x, &params[k..]);
                        let base = tape.hcat(&[x, extra, u]);
                        tape.add(base, out)
                    }
                }
            }
            TestFunctionSet::Structured { head } => {
                let extra = head.forward_on_tape(tape, x, params);
                tape.hcat(&[x, u, extra])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn monomial_order_for_two_states() {
        let g = FeatureMap::monomial(2, 3).unwrap();
        assert_eq!(g.dim(), 9);
        let v = g.embed(&[2.0, 3.0]);
        assert_eq!(v.as_slice(), &[2.0, 3.0, 4.0, 9.0, 6.0, 8.0, 27.0, 12.0, 18.0]);
    }

    #[test]
    fn quadratic_dictionary_for_four_states() {
        let exps = monomial_exponents(4, 2);
        assert_eq!(exps.len(), 14);
        assert_eq!(exps[4], vec![2, 0, 0, 0]);
        assert_eq!(exps[7], vec![0, 0, 0, 2]);
        assert_eq!(exps[8], vec![1, 1, 0, 0]);
        assert_eq!(exps[13], vec![0, 0, 1, 1]);
    }

    #[test]
    fn embedding_starts_with_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = FeatureMap::mlp(Mlp::new(&[2, 10, 2], Activation::Swish, &mut rng).unwrap());
        let x = Matrix::from_fn(6, 2, |i, j| i as f64 * 0.4 - j as f64);
        let gx = g.embed_batch(&x);
        assert_eq!(gx.ncols(), 4);
        assert_eq!(gx.columns(0, 2), x);
        let single = g.embed(&[x[(3, 0)], x[(3, 1)]]);
        assert_eq!(single.transpose(), gx.row(3));
    }

    #[test]
    fn tied_copy_starts_tied() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = FeatureMap::mlp(Mlp::new(&[2, 10, 2], Activation::Swish, &mut rng).unwrap());
        let residual = Mlp::new(&[3, 10, 5], Activation::Swish, &mut rng).unwrap();
        let phi = TestFunctionSet::tied_copy(&g, residual, 1).unwrap();
        phi.check(&g, 1).unwrap();
        let x = Matrix::from_fn(5, 2, |i, j| (i + j) as f64 * 0.3 - 0.5);
        let u = Matrix::from_fn(5, 1, |i, _| i as f64 * 0.2);
        let tied = TestFunctionSet::Tied.evaluate_batch(&g, &x, &u);
        assert_eq!(phi.evaluate_batch(&g, &x, &u), tied);
        assert_eq!(phi.dim(&g, 1), 5);
    }

    #[test]
    fn structured_head_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = FeatureMap::monomial(4, 2).unwrap();
        let phi = TestFunctionSet::Structured { head: Mlp::new(&[4, 10, 1], Activation::Swish, &mut rng).unwrap() };
        let x = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        let u = Matrix::from_fn(3, 1, |i, _| -(i as f64));
        let out = phi.evaluate_batch(&g, &x, &u);
        assert_eq!(phi.dim(&g, 1), 6);
        assert_eq!(out.columns(0, 4), x);
        assert_eq!(out.column(4), u.column(0));
    }

    #[test]
    fn parameter_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = FeatureMap::mlp(Mlp::new(&[2, 4, 2], Activation::Swish, &mut rng).unwrap());
        let mut phi = TestFunctionSet::tied_copy(&g, Mlp::new(&[3, 4, 5], Activation::Swish, &mut rng).unwrap(), 1).unwrap();
        let mut p = phi.params();
        assert_eq!(p.len(), 8);
        p[0].fill(0.25);
        phi.set_params(&p).unwrap();
        assert_eq!(phi.params(), p);
        assert!(phi.set_params(&p[..3]).is_err());
    }
}
