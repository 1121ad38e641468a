use crate::{Error, Matrix, Result};

/// Singular values at or below `DEFAULT_RCOND * σ_max` are treated as zero.
pub const DEFAULT_RCOND: f64 = 1e-12;

struct ThinSvd {
    u: Matrix,
    sigma: Vec<f64>,
    v: Matrix,
}

// nalgebra's bidiagonal SVD occasionally returns factors that do not
// reconstruct rank-deficient inputs, so the decomposition goes through faer.
fn thin_svd(m: &Matrix) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    let f = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = f
        .thin_svd()
        .map_err(|e| Error::numerical(format!("SVD did not converge for a {rows}x{cols} matrix: {e:?}")))?;
    let k = rows.min(cols);
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Ok(ThinSvd {
        u: Matrix::from_fn(rows, k, |i, j| u[(i, j)]),
        sigma: (0..k).map(|i| s[i]).collect(),
        v: Matrix::from_fn(cols, k, |i, j| v[(i, j)]),
    })
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    Ok(thin_svd(m)?.sigma)
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    match m.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Data(format!(
            "{what} has a non-finite entry at row {}, col {}",
            i % m.nrows(),
            i / m.nrows()
        ))),
    }
}

/// Moore–Penrose pseudo-inverse by SVD.
pub fn pinv(m: &Matrix, rcond: f64) -> Result<Matrix> {
    pinv_with_condition(m, rcond).map(|(p, _)| p)
}

/// Pseudo-inverse together with the condition number `σ_max / σ_min` over
/// the singular values that survived truncation (1 for an all-zero input).
pub fn pinv_with_condition(m: &Matrix, rcond: f64) -> Result<(Matrix, f64)> {
    if rcond < 0.0 || !rcond.is_finite() {
        return Err(Error::usage(format!("rcond must be finite and >= 0, got {rcond}")));
    }
    ensure_finite(m, "pinv input")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok((Matrix::zeros(cols, rows), 1.0));
    }
    let svd = thin_svd(m)?;
    let s_max = svd.sigma.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rcond * s_max;

    let mut out = Matrix::zeros(cols, rows);
    let mut s_min_kept = f64::INFINITY;
    for (k, &s) in svd.sigma.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        s_min_kept = s_min_kept.min(s);
        // out += v_k (1/s) u_kᵀ
        out.ger(1.0 / s, &svd.v.column(k), &svd.u.column(k), 1.0);
    }
    let cond = if s_min_kept.is_finite() { s_max / s_min_kept } else { 1.0 };
    Ok((out, cond))
}

/// `H Gᵀ (G Gᵀ + λ I)⁻¹`, the ridge-regularized version of `H G†`.
/// Inverts whichever of `G Gᵀ`, `GᵀG` is smaller.
pub fn solve_tikhonov(g: &Matrix, h: &Matrix, lambda: f64) -> Result<Matrix> {
    if !(lambda > 0.0) {
        return Err(Error::usage(format!("Tikhonov weight must be > 0, got {lambda}")));
    }
    if g.ncols() != h.ncols() {
        return Err(Error::usage(format!(
            "solve_tikhonov: G is {}x{} but H is {}x{}",
            g.nrows(),
            g.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    let wide = g.ncols() < g.nrows();
    let mut gram = if wide { g.transpose() * g } else { g * g.transpose() };
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = if wide { h.clone() } else { h * g.transpose() };
    // X gram = rhs  <=>  gramᵀ Xᵀ = rhsᵀ
    let lu = gram.transpose().lu();
    let xt = lu.solve(&rhs.transpose()).ok_or_else(|| {
        Error::numerical(format!(
            "regularized Gram matrix ({}x{}) is numerically singular",
            gram.nrows(),
            gram.ncols()
        ))
    })?;
    let x = xt.transpose();
    Ok(if wide { x * g.transpose() } else { x })
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}
