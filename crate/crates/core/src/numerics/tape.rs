//! Matrix-valued reverse-mode automatic differentiation.
//!
//! Every node holds a whole matrix, so a full-batch network forward pass is a
//! handful of nodes rather than one node per scalar. Nodes are appended in
//! evaluation order, which makes the node index a valid topological order; the
//! reverse sweep simply walks the indices backwards.

use super::mlp::Activation;
use crate::{Error, Matrix, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Transpose(usize),
    /// `a + 1·b` with `b` a single row broadcast over the rows of `a`.
    AddRow(usize, usize),
    Act(usize, Activation),
    HCat(Vec<usize>),
    Columns { src: usize, start: usize, len: usize },
    AddDiagonal(usize, f64),
    /// `a · m⁻¹`
    SolveRight(usize, usize),
    SumSquares(usize),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "node {} is not scalar", v.0);
        m[(0, 0)]
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.evaluate(&op, |i| &self.nodes[i].value)?;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, op: Op) -> Var {
        self.record(op).expect("infallible tape op")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        assert_eq!(ac, br, "matmul {ar}x{ac} by {br}x{bc}");
        self.push(Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape mismatch");
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub shape mismatch");
        self.push(Op::Sub(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale(a.0, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.push(Op::Transpose(a.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "broadcast operand must be a single row");
        assert_eq!(r.ncols(), self.value(a).ncols(), "broadcast width mismatch");
        self.push(Op::AddRow(a.0, row.0))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        self.push(Op::Act(a.0, act))
    }

    /// Concatenate column blocks that share a row count.
    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "hcat of nothing");
        let rows = self.value(parts[0]).nrows();
        assert!(
            parts.iter().all(|p| self.value(*p).nrows() == rows),
            "hcat row mismatch"
        );
        if parts.len() == 1 {
            return parts[0];
        }
        self.push(Op::HCat(parts.iter().map(|p| p.0).collect()))
    }

    pub fn columns(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.value(a).ncols(), "column range out of bounds");
        self.push(Op::Columns { src: a.0, start, len })
    }

    pub fn add_diagonal(&mut self, a: Var, c: f64) -> Var {
        let (r, k) = self.value(a).shape();
        assert_eq!(r, k, "add_diagonal needs a square matrix");
        self.push(Op::AddDiagonal(a.0, c))
    }

    /// `a · m⁻¹`; fails if `m` is numerically singular.
    pub fn solve_right(&mut self, a: Var, m: Var) -> Result<Var> {
        let (mr, mc) = self.value(m).shape();
        if mr != mc || self.value(a).ncols() != mr {
            return Err(Error::usage(format!(
                "solve_right: {}x{} times inverse of {mr}x{mc}",
                self.value(a).nrows(),
                self.value(a).ncols()
            )));
        }
        self.record(Op::SolveRight(a.0, m.0))
    }

    /// Sum of squared entries, as a 1×1 node.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        self.push(Op::SumSquares(a.0))
    }

    /// Differentiable `H Gᵀ (G Gᵀ + λ I)⁻¹`. For wide-short `G` the
    /// equivalent `H (GᵀG + λ I)⁻¹ Gᵀ` is used so the inverted Gram matrix
    /// is the smaller one.
    pub fn tikhonov(&mut self, g: Var, h: Var, lambda: f64) -> Result<Var> {
        if !(lambda > 0.0) {
            return Err(Error::usage(format!("Tikhonov weight must be > 0, got {lambda}")));
        }
        let (rows, cols) = self.value(g).shape();
        let gt = self.transpose(g);
        if cols < rows {
            let gram = self.matmul(gt, g);
            let reg = self.add_diagonal(gram, lambda);
            let hinv = self.solve_right(h, reg)?;
            Ok(self.matmul(hinv, gt))
        } else {
            let gram = self.matmul(g, gt);
            let reg = self.add_diagonal(gram, lambda);
            let rhs = self.matmul(h, gt);
            self.solve_right(rhs, reg)
        }
    }

    fn evaluate<'a>(&'a self, op: &Op, val: impl Fn(usize) -> &'a Matrix) -> Result<Matrix> {
        Ok(match *op {
            Op::Leaf => unreachable!("leaves are not re-evaluated"),
            Op::MatMul(a, b) => val(a) * val(b),
            Op::Add(a, b) => val(a) + val(b),
            Op::Sub(a, b) => val(a) - val(b),
            Op::Scale(a, c) => val(a) * c,
            Op::Transpose(a) => val(a).transpose(),
            Op::AddRow(a, r) => {
                let mut out = val(a).clone();
                let row = val(r);
                for mut out_row in out.row_iter_mut() {
                    out_row += row;
                }
                out
            }
            Op::Act(a, act) => val(a).map(|x| act.apply(x)),
            Op::HCat(ref parts) => {
                let rows = val(parts[0]).nrows();
                let cols = parts.iter().map(|&p| val(p).ncols()).sum();
                let mut out = Matrix::zeros(rows, cols);
                let mut at = 0;
                for &p in parts {
                    let m = val(p);
                    out.columns_mut(at, m.ncols()).copy_from(m);
                    at += m.ncols();
                }
                out
            }
            Op::Columns { src, start, len } => val(src).columns(start, len).into_owned(),
            Op::AddDiagonal(a, c) => {
                let mut out = val(a).clone();
                for i in 0..out.nrows() {
                    out[(i, i)] += c;
                }
                out
            }
            Op::SolveRight(a, m) => {
                let lu = val(m).transpose().lu();
                lu.solve(&val(a).transpose())
                    .ok_or_else(|| {
                        Error::numerical(format!(
                            "singular {}x{} system on tape",
                            val(m).nrows(),
                            val(m).ncols()
                        ))
                    })?
                    .transpose()
            }
            Op::SumSquares(a) => Matrix::from_element(1, 1, val(a).norm_squared()),
        })
    }

    /// Recompute every non-leaf value from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => {
                    let prior = &values;
                    self.evaluate(op, |i| &prior[i])?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Result<Vec<Matrix>> {
        let adj = self.backward(output)?;
        Ok(wrt
            .iter()
            .map(|v| {
                adj[v.0].clone().unwrap_or_else(|| {
                    let (r, c) = self.value(*v).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect())
    }

    fn backward(&self, output: Var) -> Result<Vec<Option<Matrix>>> {
        let shape = self.value(output).shape();
        if shape != (1, 1) {
            return Err(Error::usage(format!(
                "gradient requested of a {}x{} node; output must be scalar",
                shape.0, shape.1
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Matrix::from_element(1, 1, 1.0));

        fn acc(adj: &mut [Option<Matrix>], i: usize, g: Matrix) {
            match &mut adj[i] {
                Some(a) => *a += g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = &g * self.nodes[b].value.transpose();
                    let gb = self.nodes[a].value.transpose() * &g;
                    acc(&mut adj, a, ga);
                    acc(&mut adj, b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, a, g.clone());
                    acc(&mut adj, b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, a, g.clone());
                    acc(&mut adj, b, -g);
                }
                Op::Scale(a, c) => acc(&mut adj, a, g * c),
                Op::Transpose(a) => acc(&mut adj, a, g.transpose()),
                Op::AddRow(a, r) => {
                    let row_sum = g.row_sum();
                    acc(&mut adj, r, Matrix::from_row_slice(1, row_sum.len(), row_sum.as_slice()));
                    acc(&mut adj, a, g);
                }
                Op::Act(a, act) => {
                    let x = &self.nodes[a].value;
                    let ga = g.zip_map(x, |gi, xi| gi * act.derivative(xi));
                    acc(&mut adj, a, ga);
                }
                Op::HCat(ref parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        acc(&mut adj, p, g.columns(at, w).into_owned());
                        at += w;
                    }
                }
                Op::Columns { src, start, len } => {
                    let (r, c) = self.nodes[src].value.shape();
                    let mut full = Matrix::zeros(r, c);
                    full.columns_mut(start, len).copy_from(&g);
                    acc(&mut adj, src, full);
                }
                Op::AddDiagonal(a, _) => acc(&mut adj, a, g),
                Op::SolveRight(a, m) => {
                    // Y = A M⁻¹:  Ā = Ȳ M⁻ᵀ,  M̄ = -Yᵀ Ā
                    let mv = &self.nodes[m].value;
                    let ga = mv
                        .clone()
                        .lu()
                        .solve(&g.transpose())
                        .ok_or_else(|| Error::numerical("singular system in reverse sweep"))?
                        .transpose();
                    let gm = -(node.value.transpose() * &ga);
                    acc(&mut adj, a, ga);
                    acc(&mut adj, m, gm);
                }
                Op::SumSquares(a) => {
                    let s = g[(0, 0)];
                    acc(&mut adj, a, &self.nodes[a].value * (2.0 * s));
                }
            }
        }
        Ok(adj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Central differences of `f` at `x`, entry by entry.
    fn numeric_grad(x: &Matrix, step: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let mut g = Matrix::zeros(x.nrows(), x.ncols());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            g[i] = (f(&xp) - f(&xm)) / (2.0 * step);
        }
        g
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / (1e-12 + a.norm().max(b.norm()))
    }

    #[test]
    fn tikhonov_gradient_in_both_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (r, c) in [(5, 3), (3, 5)] {
            let g0 = random(r, c, &mut rng);
            let h0 = random(2, c, &mut rng);
            let loss = |g: &Matrix| {
                let mut t = Tape::new();
                let gv = t.leaf(g.clone());
                let hv = t.leaf(h0.clone());
                let x = t.tikhonov(gv, hv, 0.05).unwrap();
                let s = t.sum_squares(x);
                t.scalar(s)
            };
            let mut t = Tape::new();
            let gv = t.leaf(g0.clone());
            let hv = t.leaf(h0.clone());
            let x = t.tikhonov(gv, hv, 0.05).unwrap();
            let s = t.sum_squares(x);
            let an = t.grad(s, &[gv]).unwrap().remove(0);
            assert!(rel_err(&an, &numeric_grad(&g0, 1e-6, loss)) < 1e-6);
        }
    }

    #[test]
    fn square_of_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_element(1, 1, 3.0));
        let y = t.matmul(x, x);
        let g = t.grad(y, &[x]).unwrap();
        assert_eq!(g[0][(0, 0)], 6.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::identity(2, 2));
        assert!(matches!(t.grad(x, &[x]), Err(Error::Usage(_))));
    }

    #[test]
    fn norm_of_matrix_vector_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(3, 4, &mut rng);
        let v = random(4, 1, &mut rng);
        let mut t = Tape::new();
        let wv = t.leaf(w.clone());
        let vv = t.leaf(v.clone());
        let p = t.matmul(wv, vv);
        let out = t.sum_squares(p);
        let g = t.grad(out, &[wv]).unwrap();
        let fd = numeric_grad(&w, 1e-6, |w| (w * &v).norm_squared());
        assert!(rel_err(&g[0], &fd) < 1e-5);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a0 = random(5, 3, &mut rng);
        let b0 = random(1, 3, &mut rng);
        let c0 = random(3, 3, &mut rng);

        let build = |a: &Matrix, b: &Matrix, c: &Matrix| {
            let mut t = Tape::new();
            let a = t.leaf(a.clone());
            let b = t.leaf(b.clone());
            let c = t.leaf(c.clone());
            let h = t.add_row(a, b);
            let h = t.activate(h, Activation::Swish);
            let hc = t.matmul(h, c);
            let s = t.scale(hc, 0.7);
            let cat = t.hcat(&[s, a]);
            let part = t.columns(cat, 1, 4);
            let pt = t.transpose(part);
            let gram = t.matmul(pt, part);
            let reg = t.add_diagonal(gram, 0.5);
            let y = t.solve_right(part, reg).unwrap();
            let tk = t.tikhonov(h, a, 1e-3).unwrap();
            let r = t.sum_squares(y);
            let r2 = t.sum_squares(tk);
            let out = t.add(r, r2);
            (t, out, [a, b, c])
        };

        let (t, out, vars) = build(&a0, &b0, &c0);
        let grads = t.grad(out, &vars).unwrap();
        let eval = |a: &Matrix, b: &Matrix, c: &Matrix| {
            let (t, out, _) = build(a, b, c);
            t.scalar(out)
        };
        let fa = numeric_grad(&a0, 1e-6, |a| eval(a, &b0, &c0));
        let fb = numeric_grad(&b0, 1e-6, |b| eval(&a0, b, &c0));
        let fc = numeric_grad(&c0, 1e-6, |c| eval(&a0, &b0, c));
        assert!(rel_err(&grads[0], &fa) < 1e-5, "{}", rel_err(&grads[0], &fa));
        assert!(rel_err(&grads[1], &fb) < 1e-5);
        assert!(rel_err(&grads[2], &fc) < 1e-5);
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let x0 = Matrix::from_row_slice(1, 4, &[-1.5, -0.3, 0.4, 2.0]);
        let mut t = Tape::new();
        let x = t.leaf(x0.clone());
        let y = t.activate(x, Activation::Relu);
        let out = t.sum_squares(y);
        let g = t.grad(out, &[x]).unwrap();
        let fd = numeric_grad(&x0, 1e-6, |x| x.map(|v| v.max(0.0)).norm_squared());
        assert!(rel_err(&g[0], &fd) < 1e-6);
    }

    #[test]
    fn replay_reproduces_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let a = t.leaf(random(4, 4, &mut rng));
        let b = t.leaf(random(4, 4, &mut rng));
        let ab = t.matmul(a, b);
        let s = t.activate(ab, Activation::Swish);
        let reg = t.add_diagonal(b, 3.0);
        let y = t.solve_right(s, reg).unwrap();
        let _ = t.sum_squares(y);
        let replayed = t.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, t.value(Var(i)), "node {i}");
        }
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_element(1, 1, 2.0));
        let unused = t.leaf(Matrix::zeros(2, 3));
        let y = t.sum_squares(x);
        let g = t.grad(y, &[unused]).unwrap();
        assert_eq!(g[0], Matrix::zeros(2, 3));
    }
}
