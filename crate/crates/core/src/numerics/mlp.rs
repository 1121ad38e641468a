use super::tape::{Tape, Var};
use crate::{Error, Matrix, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `x·σ(x)`
    Swish,
    Relu,
    Identity,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Swish => x * sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected feed-forward network acting on row batches.
///
/// Hidden layers apply `activation`; the output layer is affine. Layer `k`
/// computes `H_{k+1} = act(H_k W_k + b_k)` with `W_k` of shape `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    #[serde(with = "super::serde_matrix::many")]
    weights: Vec<Matrix>,
    #[serde(with = "super::serde_matrix::many")]
    biases: Vec<Matrix>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::usage(format!("invalid layer sizes {sizes:?}")));
        }
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            // Row-major draw order so the stream does not depend on storage order.
            let mut vals = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in * fan_out {
                vals.push(rng.random_range(-limit..=limit));
            }
            weights.push(Matrix::from_row_slice(fan_in, fan_out, &vals));
            biases.push(Matrix::zeros(1, fan_out));
        }
        Ok(Self { sizes: sizes.to_vec(), activation, weights, biases })
    }

    pub fn from_parts(activation: Activation, weights: Vec<Matrix>, biases: Vec<Matrix>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::usage("weights and biases must be non-empty and equal in count"));
        }
        let mut sizes = vec![weights[0].nrows()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != *sizes.last().unwrap() || b.shape() != (1, w.ncols()) {
                return Err(Error::usage(format!("layer {k} dimensions are inconsistent")));
            }
            sizes.push(w.ncols());
        }
        Ok(Self { sizes, activation, weights, biases })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn check(&self) -> Result<()> {
        Self::from_parts(self.activation, self.weights.clone(), self.biases.clone()).map(|_| ())
    }

    /// Flattened parameter list: `[W_0, b_0, W_1, b_1, ...]`.
    pub fn params(&self) -> Vec<Matrix> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.clone(), b.clone()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() * 2
    }

    pub fn set_params(&mut self, params: &[Matrix]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::usage(format!(
                "expected {} parameter blocks, got {}",
                self.param_count(),
                params.len()
            )));
        }
        for (k, pair) in params.chunks(2).enumerate() {
            if pair[0].shape() != self.weights[k].shape() || pair[1].shape() != self.biases[k].shape() {
                return Err(Error::usage(format!("parameter shape mismatch in layer {k}")));
            }
            self.weights[k].copy_from(&pair[0]);
            self.biases[k].copy_from(&pair[1]);
        }
        Ok(())
    }

    /// Zero the output layer so the network initially outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        if let (Some(w), Some(b)) = (self.weights.last_mut(), self.biases.last_mut()) {
            w.fill(0.0);
            b.fill(0.0);
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.ncols(), self.input_dim(), "mlp input width");
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = &h * w;
            for mut row in h.row_iter_mut() {
                row += b;
            }
            if k < last {
                h.apply(|v| *v = self.activation.apply(*v));
            }
        }
        h
    }

    /// Record the forward pass; `params` are tape leaves in [`Mlp::params`] order.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Var {
        assert_eq!(params.len(), self.param_count(), "mlp parameter handles");
        let last = self.weights.len() - 1;
        let mut h = x;
        for (k, pair) in params.chunks(2).enumerate() {
            h = tape.matmul(h, pair[0]);
            h = tape.add_row(h, pair[1]);
            if k < last {
                h = tape.activate(h, self.activation);
            }
        }
        h
    }
}
