use crate::{Error, Matrix, Result, Vector};
use serde::{Deserialize, Serialize};

/// Time-varying reference for the tracked component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    Constant { value: f64 },
    /// `before` for `k <= switch_step`, `after` afterwards.
    Step { before: f64, after: f64, switch_step: usize },
}

impl Reference {
    pub fn value(&self, k: usize) -> f64 {
        match *self {
            Reference::Constant { value } => value,
            Reference::Step { before, after, switch_step } => {
                if k <= switch_step {
                    before
                } else {
                    after
                }
            }
        }
    }
}

/// Condensed linear MPC.
///
/// Minimizes over `u_0 … u_{N−1}`
///
/// `Σ_{k=1}^{N} q (ξ_{k,(c)} − r(k_now + k))² + Σ_{k=0}^{N−1} [(u_k − u_{k−1})ᵀ R (u_k − u_{k−1}) + ρ ‖u_k‖²]`
///
/// subject to `ξ_{k+1} = A ξ_k + B u_k`, with `u_{−1}` the previously applied input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSpec {
    pub horizon: usize,
    /// Zero-based index of the tracked embedded coordinate.
    #[serde(default)]
    pub tracked: usize,
    #[serde(default = "one")]
    pub tracking_weight: f64,
    /// Input-rate weight `R`.
    #[serde(default = "one")]
    pub rate_weight: f64,
    /// Input magnitude weight `ρ`.
    #[serde(default)]
    pub input_weight: f64,
    pub reference: Reference,
    #[serde(default)]
    pub input_box: Option<[f64; 2]>,
}

fn one() -> f64 {
    1.0
}

impl MpcSpec {
    pub fn validate(&self, nx: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::usage("MPC horizon must be >= 1"));
        }
        if self.tracked >= nx {
            return Err(Error::usage(format!("tracked component {} out of range for N_x = {nx}", self.tracked)));
        }
        if !(self.tracking_weight >= 0.0 && self.rate_weight >= 0.0 && self.input_weight >= 0.0) {
            return Err(Error::usage("MPC weights must be >= 0"));
        }
        if let Some([lo, hi]) = self.input_box {
            if !(lo <= hi) {
                return Err(Error::usage("input box needs lo <= hi"));
            }
        }
        Ok(())
    }
}

/// First input of the optimal plan.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcStep {
    pub u0: Vector,
    /// The Hessian was singular and `1e-10·I` was added.
    pub regularized: bool,
    pub iterations: usize,
}

const HESSIAN_REG: f64 = 1e-10;
const KKT_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 500;

/// Hessian `H` and linear term `f` of `½UᵀHU + fᵀU` (constant dropped).
pub fn condense(spec: &MpcSpec, a: &Matrix, b: &Matrix, xi: &Vector, u_prev: &Vector, k_now: usize) -> (Matrix, Vector) {
    let nh = spec.horizon;
    let nx = a.nrows();
    let p = b.ncols();
    let c = spec.tracked;
    // rows of S A^k and S A^k B for k = 0..nh
    let mut sa = Vec::with_capacity(nh + 1);
    let mut row = Matrix::zeros(1, nx);
    row[(0, c)] = 1.0;
    for _ in 0..=nh {
        sa.push(row.clone());
        row = &row * a;
    }
    let sab: Vec<Matrix> = sa.iter().map(|r| r * b).collect();

    let dim = nh * p;
    let mut gamma = Matrix::zeros(nh, dim);
    let mut free = Vector::zeros(nh);
    for k in 1..=nh {
        free[k - 1] = (&sa[k] * xi)[0] - spec.reference.value(k_now + k);
        for j in 0..k {
            gamma.view_mut((k - 1, j * p), (1, p)).copy_from(&sab[k - 1 - j]);
        }
    }
    let mut h = gamma.transpose() * &gamma * (2.0 * spec.tracking_weight);
    let mut f = gamma.transpose() * &free * (2.0 * spec.tracking_weight);
    // rate term: Σ R‖u_k − u_{k−1}‖²
    let r = spec.rate_weight;
    for k in 0..nh {
        for i in 0..p {
            let d = k * p + i;
            h[(d, d)] += 2.0 * r;
            if k > 0 {
                let e = (k - 1) * p + i;
                h[(e, e)] += 2.0 * r;
                h[(d, e)] -= 2.0 * r;
                h[(e, d)] -= 2.0 * r;
            } else {
                f[d] -= 2.0 * r * u_prev[i];
            }
        }
    }
    for d in 0..dim {
        h[(d, d)] += 2.0 * spec.input_weight;
    }
    (h, f)
}

fn objective(h: &Matrix, f: &Vector, u: &Vector) -> f64 {
    0.5 * u.dot(&(h * u)) + f.dot(u)
}

fn project(u: &mut Vector, lo: f64, hi: f64) {
    u.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
}

/// One receding-horizon step: solve the condensed QP and return `u_0`.
pub fn mpc_step(spec: &MpcSpec, a: &Matrix, b: &Matrix, xi: &Vector, u_prev: &Vector, k_now: usize) -> Result<MpcStep> {
    spec.validate(a.nrows())?;
    let p = b.ncols();
    if xi.len() != a.nrows() || u_prev.len() != p || b.nrows() != a.nrows() {
        return Err(Error::usage("MPC dimensions are inconsistent"));
    }
    let (mut h, f) = condense(spec, a, b, xi, u_prev, k_now);
    let dim = h.nrows();
    let mut regularized = false;
    let chol = match h.clone().cholesky() {
        Some(c) => c,
        None => {
            regularized = true;
            for d in 0..dim {
                h[(d, d)] += HESSIAN_REG;
            }
            h.clone()
                .cholesky()
                .ok_or_else(|| Error::numerical("MPC Hessian is not positive semidefinite"))?
        }
    };
    let mut u = chol.solve(&(-&f));
    let mut iterations = 1;
    if let Some([lo, hi]) = spec.input_box {
        project(&mut u, lo, hi);
        iterations = 0;
        loop {
            let g = &h * &u + &f;
            let mut stepped = u.clone() - &g;
            project(&mut stepped, lo, hi);
            let kkt = (&u - &stepped).amax();
            if kkt < KKT_TOL {
                break;
            }
            if iterations >= MAX_NEWTON {
                return Err(Error::numerical(format!("projected Newton stalled, KKT residual {kkt:e}")));
            }
            iterations += 1;
            let eps = kkt.min(1e-6);
            let free: Vec<usize> = (0..dim)
                .filter(|&i| !((u[i] <= lo + eps && g[i] > 0.0) || (u[i] >= hi - eps && g[i] < 0.0)))
                .collect();
            let mut dir = -g.clone();
            if !free.is_empty() {
                let hf = Matrix::from_fn(free.len(), free.len(), |i, j| h[(free[i], free[j])]);
                let gf = Vector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
                if let Some(c) = hf.cholesky() {
                    let df = c.solve(&(-gf));
                    dir.fill(0.0);
                    for (k, &i) in free.iter().enumerate() {
                        dir[i] = df[k];
                    }
                }
            }
            let f0 = objective(&h, &f, &u);
            let mut alpha = 1.0;
            loop {
                let mut trial = &u + &dir * alpha;
                project(&mut trial, lo, hi);
                let decrease = g.dot(&(&trial - &u));
                if objective(&h, &f, &trial) <= f0 + 1e-4 * decrease || alpha < 1e-12 {
                    u = trial;
                    break;
                }
                alpha *= 0.5;
            }
        }
    }
    Ok(MpcStep { u0: u.rows(0, p).into_owned(), regularized, iterations })
}
