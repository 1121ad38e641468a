use crate::numerics::spectral_radius;
use crate::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};

/// Defaults for [`solve_dare`].
pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 100_000;

/// Stabilizing DARE solution. `gain` follows the `u = gain · ξ` convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrSolution {
    #[serde(with = "crate::numerics::serde_matrix")]
    pub p: Matrix,
    #[serde(with = "crate::numerics::serde_matrix")]
    pub gain: Matrix,
    pub closed_loop_radius: f64,
    pub iterations: usize,
}

fn check_square(m: &Matrix, n: usize, what: &str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::usage(format!("{what} must be {n}x{n}, got {:?}", m.shape())));
    }
    Ok(())
}

fn is_symmetric(m: &Matrix) -> bool {
    let scale = 1.0 + m.amax();
    (m - m.transpose()).amax() <= 1e-12 * scale
}

/// `‖P − AᵀPA + AᵀPB(R + BᵀPB)⁻¹BᵀPA − Q‖∞`.
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> f64 {
    let bp = b.transpose() * p;
    let s = r + &bp * b;
    let Some(s_inv) = s.try_inverse() else { return f64::INFINITY };
    let atp = a.transpose() * p;
    let res = p - &atp * a + &atp * b * s_inv * &bp * a - q;
    res.amax()
}

/// Solve the discrete algebraic Riccati equation by fixed-point iteration
/// from `P = Q`, stopping when `‖ΔP‖∞ < tol · max(1, ‖P‖∞)`.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, tol: f64, max_iter: usize) -> Result<LqrSolution> {
    let n = a.nrows();
    check_square(a, n, "A")?;
    check_square(q, n, "Q_w")?;
    if b.nrows() != n {
        return Err(Error::usage(format!("B must have {n} rows, got {}", b.nrows())));
    }
    let m = b.ncols();
    check_square(r, m, "R_w")?;
    if !is_symmetric(q) || !is_symmetric(r) {
        return Err(Error::usage("LQR weights must be symmetric"));
    }
    if r.clone().cholesky().is_none() {
        return Err(Error::usage("R_w must be positive definite"));
    }
    for (mat, name) in [(a, "A"), (b, "B"), (q, "Q_w")] {
        crate::numerics::ensure_finite(mat, name)?;
    }

    let mut p = q.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let bp = b.transpose() * &p;
        let s = r + &bp * b;
        let k = s
            .cholesky()
            .ok_or_else(|| Error::Synthesis("R + BᵀPB lost positive definiteness".into()))?
            .solve(&(&bp * a));
        let next = q + a.transpose() * &p * a - (&bp * a).transpose() * &k;
        let next = (&next + next.transpose()) * 0.5;
        let step = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Synthesis("Riccati iteration diverged".into()));
        }
        if step < tol * p.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Synthesis(format!("Riccati iteration did not converge in {max_iter} iterations")));
    }
    let bp = b.transpose() * &p;
    let k = (r + &bp * b).cholesky().expect("checked above").solve(&(&bp * a));
    let gain = -k;
    let radius = spectral_radius(&(a + b * &gain));
    if !(radius < 1.0) {
        return Err(Error::Synthesis(format!("LQR closed loop is not stable (spectral radius {radius})")));
    }
    Ok(LqrSolution { p, gain, closed_loop_radius: radius, iterations })
}

/// Block-diagonal `Q_w = diag(Q_state, 0)` for an embedding of dimension `nx`.
pub fn state_weight(q_state: &Matrix, nx: usize) -> Result<Matrix> {
    let n = q_state.nrows();
    if q_state.ncols() != n || n > nx {
        return Err(Error::usage(format!("Q_state must be square with at most {nx} rows")));
    }
    let mut q = Matrix::zeros(nx, nx);
    q.view_mut((0, 0), (n, n)).copy_from(q_state);
    Ok(q)
}

/// Integral servo gains: `u_k = −Q_s ξ_k + Q_I ν_k`, `ν_k = ν_{k−1} + r − C ξ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoGains {
    #[serde(with = "crate::numerics::serde_matrix")]
    pub c: Matrix,
    #[serde(with = "crate::numerics::serde_matrix")]
    pub q_s: Matrix,
    #[serde(with = "crate::numerics::serde_matrix")]
    pub q_i: Matrix,
    pub closed_loop_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoWeights {
    /// Weight on the integrator state.
    pub w_nu: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ServoWeights {
    fn default() -> Self {
        Self { w_nu: 100.0, tol: DARE_TOL, max_iter: DARE_MAX_ITER }
    }
}

/// Integrator-augmented LQR design.
///
/// The augmented plant is `[ξ; ν]⁺ = [[A, 0], [−CA, I]] [ξ; ν] + [[B], [−CB]] u`
/// with weights `diag(Q_w, w_ν I)` and `R_w`. The augmented gain
/// `K = [Q_s, −Q_I]` gives `u = −K [ξ; ν]`.
pub fn design_servo(a: &Matrix, b: &Matrix, c: &Matrix, q_w: &Matrix, r_w: &Matrix, w: ServoWeights) -> Result<ServoGains> {
    let nx = a.nrows();
    let p = b.ncols();
    let q = c.nrows();
    if c.ncols() != nx || q == 0 {
        return Err(Error::usage(format!("C must have {nx} columns")));
    }
    if !(w.w_nu > 0.0) {
        return Err(Error::usage("w_nu must be positive"));
    }
    let mut aa = Matrix::zeros(nx + q, nx + q);
    aa.view_mut((0, 0), (nx, nx)).copy_from(a);
    aa.view_mut((nx, 0), (q, nx)).copy_from(&(-(c * a)));
    aa.view_mut((nx, nx), (q, q)).fill_with_identity();
    let mut bb = Matrix::zeros(nx + q, p);
    bb.view_mut((0, 0), (nx, p)).copy_from(b);
    bb.view_mut((nx, 0), (q, p)).copy_from(&(-(c * b)));
    let mut qq = Matrix::zeros(nx + q, nx + q);
    qq.view_mut((0, 0), (nx, nx)).copy_from(q_w);
    for i in 0..q {
        qq[(nx + i, nx + i)] = w.w_nu;
    }
    let sol = solve_dare(&aa, &bb, &qq, r_w, w.tol, w.max_iter)?;
    let k = -&sol.gain;
    Ok(ServoGains {
        c: c.clone(),
        q_s: k.columns(0, nx).into_owned(),
        q_i: -k.columns(nx, q).into_owned(),
        closed_loop_radius: sol.closed_loop_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_dare_is_golden_ratio() {
        let s = solve_dare(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0), DARE_TOL, DARE_MAX_ITER).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((s.p[(0, 0)] - phi).abs() < 1e-7);
        assert!((s.gain[(0, 0)].abs() - (phi - 1.0)).abs() < 1e-7);
        assert!(s.gain[(0, 0)] < 0.0);
    }

    #[test]
    fn no_input_reduces_to_lyapunov() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.3]);
        let b = Matrix::zeros(2, 1);
        let q = Matrix::identity(2, 2);
        let s = solve_dare(&a, &b, &q, &scalar(1.0), DARE_TOL, DARE_MAX_ITER).unwrap();
        assert_eq!(s.gain.amax(), 0.0);
        let lyap = &s.p - a.transpose() * &s.p * &a - &q;
        assert!(lyap.amax() < 1e-8);
    }

    #[test]
    fn random_controllable_systems_are_stabilized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let b = Matrix::from_fn(4, 1, |_, _| rng.random_range(-1.0..1.0));
            let q = Matrix::identity(4, 4);
            let s = solve_dare(&a, &b, &q, &scalar(1.0), DARE_TOL, DARE_MAX_ITER).unwrap();
            assert!(s.closed_loop_radius < 1.0);
            assert!(dare_residual(&a, &b, &q, &scalar(1.0), &s.p) < 1e-6);
        }
    }

    #[test]
    fn unstabilizable_pair_fails() {
        let a = scalar(1.5);
        let b = scalar(0.0);
        let r = solve_dare(&a, &b, &scalar(1.0), &scalar(1.0), DARE_TOL, 1000);
        assert!(matches!(r, Err(Error::Synthesis(_))));
    }

    #[test]
    fn weights_are_validated() {
        let i = Matrix::identity(1, 1);
        assert!(solve_dare(&i, &i, &i, &scalar(0.0), DARE_TOL, 10).is_err());
        let ns = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(solve_dare(&Matrix::identity(2, 2), &Matrix::identity(2, 1), &ns, &i, DARE_TOL, 10).is_err());
    }

    #[test]
    fn state_weight_pads_with_zeros() {
        let q = state_weight(&Matrix::from_diagonal(&crate::Vector::from_vec(vec![100.0, 1.0])), 4).unwrap();
        assert_eq!(q[(0, 0)], 100.0);
        assert_eq!(q[(1, 1)], 1.0);
        assert_eq!(q.rows(2, 2).amax(), 0.0);
    }

    #[test]
    fn servo_tracks_a_step_on_the_model() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.05, -0.05, 0.97]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 0.05]);
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let g = design_servo(&a, &b, &c, &Matrix::identity(2, 2), &scalar(1.0), ServoWeights::default()).unwrap();
        assert!(g.closed_loop_radius < 1.0);
        let mut xi = crate::Vector::zeros(2);
        let mut nu = crate::Vector::zeros(1);
        for _ in 0..2000 {
            nu += crate::Vector::from_element(1, 1.0) - &c * &xi;
            let u = -&g.q_s * &xi + &g.q_i * &nu;
            xi = &a * &xi + &b * u;
        }
        assert!(((&c * &xi)[0] - 1.0).abs() < 1e-6);
    }
}
