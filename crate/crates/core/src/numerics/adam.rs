use crate::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are allocated on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::usage(format!(
                "adam: {} parameter blocks but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if let Some(k) = params.iter().zip(grads).position(|(p, g)| p.shape() != g.shape()) {
            return Err(Error::usage(format!("adam: gradient shape mismatch in block {k}")));
        }
        if self.t == 0 {
            self.m = params.iter().map(|p| Matrix::zeros(p.nrows(), p.ncols())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::usage("adam: parameter layout changed between steps"));
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        let mut p = vec![scalar(0.0)];
        adam.step(&mut p, &[scalar(1.0)]).unwrap();
        assert!((p[0][(0, 0)] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![Matrix::from_element(2, 3, 0.4)];
        for _ in 0..5 {
            adam.step(&mut p, &[Matrix::zeros(2, 3)]).unwrap();
        }
        assert_eq!(p[0], Matrix::from_element(2, 3, 0.4));
    }

    #[test]
    fn identical_state_gives_identical_updates() {
        let mut a = Adam::new(AdamConfig::default());
        let mut pa = vec![scalar(1.0)];
        a.step(&mut pa, &[scalar(0.3)]).unwrap();
        let mut b = a.clone();
        let mut pb = pa.clone();
        a.step(&mut pa, &[scalar(-0.7)]).unwrap();
        b.step(&mut pb, &[scalar(-0.7)]).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn shape_mismatch_is_a_usage_error() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![scalar(0.0)];
        assert!(matches!(adam.step(&mut p, &[Matrix::zeros(2, 1)]), Err(Error::Usage(_))));
        assert!(matches!(adam.step(&mut p, &[]), Err(Error::Usage(_))));
    }
}
