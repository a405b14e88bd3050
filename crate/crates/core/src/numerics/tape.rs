//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! output value. [`Tape::backward`] then walks the nodes in reverse order and
//! propagates adjoints to every ancestor of the loss. Leaves are either
//! constant inputs or copies of [`Parameter`](super::Parameter) values; after
//! the backward pass, [`Gradients::accumulate_into`] adds parameter adjoints to
//! the store.
//!
//! Every op checks shapes up front and rejects non-finite outputs, naming the
//! op that produced them.

use super::matrix::dot;
use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Floor applied inside clamped logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Softplus(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Exp(Var),
    Log(Var, f64),
    Sqrt(Var),
    Square(Var),
    Recip(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    ConcatCols(Var, Var),
    SelectRows(Var, Vec<usize>),
    NormalizeRows(Var),
    MaskedSoftmax(Var),
    OuterAdd(Var, Var),
    /// Gradients w.r.t. both inputs for a unit upstream, found in the
    /// forward pass.
    Manifold(Var, Var, Box<(Matrix, Matrix)>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if `var` influenced it.
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.grads[var.0].as_ref()
    }

    /// Adds every parameter adjoint into the matching parameter gradient.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).gradient_mut().axpy(1.0, g)?;
            }
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Divergence { op: name.into() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant leaf. Gradients flow to it but are never stored anywhere.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding the current value of a parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.value(a).expect_same_shape(op, self.value(b))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(name, value, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        self.push("matmul_nt", value, Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push("transpose", value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b))
    }

    fn broadcast_row(&mut self, name: &'static str, a: Var, row: Var, f: fn(f64, f64) -> f64) -> Result<Matrix> {
        let (n, m) = self.shape(a);
        if self.shape(row) != (1, m) {
            return Err(Error::shape(
                name,
                format!("row operand {:?} against {n}x{m}", self.shape(row)),
            ));
        }
        let r = self.value(row).as_slice();
        let av = self.value(a);
        Ok(Matrix::from_fn(n, m, |i, j| f(av[(i, j)], r[j])))
    }

    /// Adds a `1 x m` row to every row of `a` (bias broadcast).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.broadcast_row("add_row", a, row, |x, y| x + y)?;
        self.push("add_row", value, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 x m` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.broadcast_row("mul_row", a, row, |x, y| x * y)?;
        self.push("mul_row", value, Op::MulRow(a, row))
    }

    /// Scales row `i` of `a` by entry `i` of the `n x 1` column `col`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(col) != (n, 1) {
            return Err(Error::shape(
                "mul_col",
                format!("column operand {:?} against {n}x{m}", self.shape(col)),
            ));
        }
        let c = self.value(col).as_slice();
        let av = self.value(a);
        let value = Matrix::from_fn(n, m, |i, j| av[(i, j)] * c[i]);
        self.push("mul_col", value, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// Numerically stable `ln(1 + eˣ)`.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(
            "leaky_relu",
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    /// Natural log of `max(a, floor)`; zero gradient where the floor binds.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.unary("log", a, |x| x.max(floor).ln(), Op::Log(a, floor))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary("recip", a, |x| 1.0 / x, Op::Recip(a))
    }

    /// Clamp into `[lo, hi]`; zero gradient outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::shape("mean", "empty operand"));
        }
        let s = m.mean();
        self.push("mean", Matrix::scalar(s), Op::Mean(a))
    }

    /// Column sums as a `1 x m` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut out = Matrix::zeros(1, m.cols());
        for i in 0..m.rows() {
            for (o, v) in out.as_mut_slice().iter_mut().zip(m.row(i)) {
                *o += v;
            }
        }
        self.push("sum_rows", out, Op::SumRows(a))
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hconcat(self.value(b))?;
        self.push("concat_cols", value, Op::ConcatCols(a, b))
    }

    /// Gathers rows by index; indices may repeat.
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let n = self.value(a).rows();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::shape("select_rows", format!("row {bad} of {n}")));
        }
        let value = self.value(a).select_rows(indices);
        self.push("select_rows", value, Op::SelectRows(a, indices.to_vec()))
    }

    /// Row-wise L2 normalization; zero rows map to zero rows.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).normalize_rows();
        self.push("normalize_rows", value, Op::NormalizeRows(a))
    }

    /// Row-wise softmax restricted to entries where `mask` is nonzero.
    /// Entries outside the mask are exactly zero; a row with an empty mask is
    /// all zeros.
    pub fn masked_softmax(&mut self, a: Var, mask: &Matrix) -> Result<Var> {
        self.value(a).expect_same_shape("masked_softmax", mask)?;
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let (xr, mr) = (x.row(i), mask.row(i));
            let max = xr
                .iter()
                .zip(mr)
                .filter(|(_, &m)| m != 0.0)
                .fold(f64::NEG_INFINITY, |acc, (&v, _)| acc.max(v));
            if max == f64::NEG_INFINITY {
                continue;
            }
            let or = out.row_mut(i);
            let mut total = 0.0;
            for j in 0..xr.len() {
                if mr[j] != 0.0 {
                    or[j] = (xr[j] - max).exp();
                    total += or[j];
                }
            }
            or.iter_mut().for_each(|v| *v /= total);
        }
        self.push("masked_softmax", out, Op::MaskedSoftmax(a))
    }

    /// `out[i, j] = a[i] + b[j]` for column vectors `a` (`n x 1`) and
    /// `b` (`m x 1`).
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca) = self.shape(a);
        let (m, cb) = self.shape(b);
        if ca != 1 || cb != 1 {
            return Err(Error::shape("outer_add", "operands must be column vectors"));
        }
        let (av, bv) = (self.value(a).as_slice(), self.value(b).as_slice());
        let value = Matrix::from_fn(n, m, |i, j| av[i] + bv[j]);
        self.push("outer_add", value, Op::OuterAdd(a, b))
    }

    /// Pairwise manifold-consistency cross-entropy between feature rows `z`
    /// and prediction rows `p` (both expected L2-normalized):
    ///
    /// `S = (1 + z zᵀ)/2`, `T = clamp(p pᵀ, 0, 1)`,
    /// `L = -1/(N(N-1)) Σ_{i≠j} [T log S + (1-T) log(1-S)]`
    ///
    /// with both logs clamped to `[1e-12, 1]`. Evaluated pairwise without
    /// materializing the `N x N` matrices. Returns 0 for `N < 2`.
    pub fn manifold_loss(&mut self, z: Var, p: Var) -> Result<Var> {
        let (n, _) = self.shape(z);
        if self.shape(p).0 != n {
            return Err(Error::shape(
                "manifold_loss",
                format!("{:?} features vs {:?} predictions", self.shape(z), self.shape(p)),
            ));
        }
        let (zv, pv) = (self.value(z), self.value(p));
        let (value, gz, gp) = manifold_pairs(zv, pv);
        self.push("manifold_loss", Matrix::scalar(value), Op::Manifold(z, p, Box::new((gz, gp))))
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", "loss must be 1x1"));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let op = &self.nodes[idx].op;
            if let Op::Param(id) = op {
                params.push((idx, *id));
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads).map_err(|e| match e {
                Error::Divergence { .. } => Error::Divergence {
                    op: format!("backward of {}", op_name(op)),
                },
                other => other,
            })?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Input => {}
            Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_nt(self.value(*b))?;
                let gb = self.value(*a).matmul_tn(&g)?;
                add_grad(grads, *a, ga)?;
                add_grad(grads, *b, gb)?;
            }
            Op::MatMulNt(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                let ga = g.matmul(self.value(*b))?;
                let gb = g.matmul_tn(self.value(*a))?;
                add_grad(grads, *a, ga)?;
                add_grad(grads, *b, gb)?;
            }
            Op::Transpose(a) => add_grad(grads, *a, g.transpose())?,
            Op::Add(a, b) => {
                add_grad(grads, *a, g.clone())?;
                add_grad(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                add_grad(grads, *b, g.scale(-1.0))?;
                add_grad(grads, *a, g.clone())?;
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                add_grad(grads, *a, ga)?;
                add_grad(grads, *b, gb)?;
            }
            Op::AddRow(a, row) => {
                add_grad(grads, *row, column_sums(g))?;
                add_grad(grads, *a, g.clone())?;
            }
            Op::MulRow(a, row) => {
                let r = self.value(*row).as_slice();
                let av = self.value(*a);
                let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * r[j]);
                let mut gr = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        gr.as_mut_slice()[j] += g[(i, j)] * av[(i, j)];
                    }
                }
                add_grad(grads, *a, ga)?;
                add_grad(grads, *row, gr)?;
            }
            Op::MulCol(a, col) => {
                let c = self.value(*col).as_slice();
                let av = self.value(*a);
                let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * c[i]);
                let gc = Matrix::from_fn(g.rows(), 1, |i, _| dot(g.row(i), av.row(i)));
                add_grad(grads, *a, ga)?;
                add_grad(grads, *col, gc)?;
            }
            Op::Scale(a, f) => add_grad(grads, *a, g.scale(*f))?,
            Op::AddScalar(a) => add_grad(grads, *a, g.clone())?,
            Op::Sigmoid(a) => {
                let ga = g.zip_map(out, |g, s| g * s * (1.0 - s))?;
                add_grad(grads, *a, ga)?;
            }
            Op::Softplus(a) => {
                let ga = g.zip_map(self.value(*a), |g, x| g * sigmoid(x))?;
                add_grad(grads, *a, ga)?;
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let ga = g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { s * g })?;
                add_grad(grads, *a, ga)?;
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })?;
                add_grad(grads, *a, ga)?;
            }
            Op::Exp(a) => {
                let ga = g.zip_map(out, |g, e| g * e)?;
                add_grad(grads, *a, ga)?;
            }
            Op::Log(a, floor) => {
                let f = *floor;
                let ga = g.zip_map(self.value(*a), |g, x| if x >= f { g / x } else { 0.0 })?;
                add_grad(grads, *a, ga)?;
            }
            Op::Sqrt(a) => {
                let ga = g.zip_map(out, |g, r| g * 0.5 / r)?;
                add_grad(grads, *a, ga)?;
            }
            Op::Square(a) => {
                let ga = g.zip_map(self.value(*a), |g, x| 2.0 * g * x)?;
                add_grad(grads, *a, ga)?;
            }
            Op::Recip(a) => {
                let ga = g.zip_map(out, |g, r| -g * r * r)?;
                add_grad(grads, *a, ga)?;
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let ga = g.zip_map(self.value(*a), |g, x| {
                    if (lo..=hi).contains(&x) {
                        g
                    } else {
                        0.0
                    }
                })?;
                add_grad(grads, *a, ga)?;
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                add_grad(grads, *a, Matrix::filled(r, c, g.item()))?;
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                add_grad(grads, *a, Matrix::filled(r, c, g.item() / (r * c) as f64))?;
            }
            Op::SumRows(a) => {
                let (r, c) = self.shape(*a);
                let ga = Matrix::from_fn(r, c, |_, j| g.as_slice()[j]);
                add_grad(grads, *a, ga)?;
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                let cb = self.shape(*b).1;
                let ga = Matrix::from_fn(g.rows(), ca, |i, j| g[(i, j)]);
                let gb = Matrix::from_fn(g.rows(), cb, |i, j| g[(i, ca + j)]);
                add_grad(grads, *a, ga)?;
                add_grad(grads, *b, gb)?;
            }
            Op::SelectRows(a, indices) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (dst, src) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *dst += src;
                    }
                }
                add_grad(grads, *a, ga)?;
            }
            Op::NormalizeRows(a) => {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let norm = dot(x.row(i), x.row(i)).sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    // d(x/|x|) = (g - y (y·g)) / |x|
                    let y = out.row(i);
                    let gi = g.row(i);
                    let proj = dot(y, gi);
                    for (k, dst) in ga.row_mut(i).iter_mut().enumerate() {
                        *dst = (gi[k] - y[k] * proj) / norm;
                    }
                }
                add_grad(grads, *a, ga)?;
            }
            Op::MaskedSoftmax(a) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let s = out.row(i);
                    let gi = g.row(i);
                    let inner = dot(s, gi);
                    for (k, dst) in ga.row_mut(i).iter_mut().enumerate() {
                        *dst = s[k] * (gi[k] - inner);
                    }
                }
                add_grad(grads, *a, ga)?;
            }
            Op::OuterAdd(a, b) => {
                let ga = Matrix::from_fn(g.rows(), 1, |i, _| g.row(i).iter().sum());
                add_grad(grads, *a, ga)?;
                add_grad(grads, *b, column_sums(g).transpose())?;
            }
            Op::Manifold(z, p, unit) => {
                let upstream = g.item();
                add_grad(grads, *z, unit.0.scale(upstream))?;
                add_grad(grads, *p, unit.1.scale(upstream))?;
            }
        }
        Ok(())
    }
}

const MANIFOLD_TILE: usize = 4;

/// Loss and unit-upstream gradients of [`Tape::manifold_loss`]. Rows are
/// taken in tiles of four so each partner row is read once per tile.
fn manifold_pairs(zv: &Matrix, pv: &Matrix) -> (f64, Matrix, Matrix) {
    let n = zv.rows();
    let (dz, dp) = (zv.cols(), pv.cols());
    let mut gz = Matrix::zeros(n, dz);
    let mut gp = Matrix::zeros(n, dp);
    if n < 2 {
        return (0.0, gz, gp);
    }
    // each unordered pair stands for both orders
    let scale = 2.0 / (n * (n - 1)) as f64;
    let mut total = 0.0;
    let mut acc_z = vec![0.0; MANIFOLD_TILE * dz];
    let mut acc_p = vec![0.0; MANIFOLD_TILE * dp];
    for i0 in (0..n).step_by(MANIFOLD_TILE) {
        let i1 = (i0 + MANIFOLD_TILE).min(n);
        let tile = i1 - i0;
        acc_z.fill(0.0);
        acc_p.fill(0.0);
        for j in i0 + 1..n {
            let (zj, pj) = (zv.row(j), pv.row(j));
            let mut cz = [0.0; MANIFOLD_TILE];
            let mut cp = [0.0; MANIFOLD_TILE];
            for r in 0..tile.min(j - i0) {
                let i = i0 + r;
                let pair = ManifoldPair::new(dot(zv.row(i), zj), dot(pv.row(i), pj));
                total += pair.loss();
                let (d_inner_z, d_inner_p) = pair.grads();
                cz[r] = scale * d_inner_z;
                cp[r] = scale * d_inner_p;
            }
            scatter_tile(&mut acc_z, gz.row_mut(j), zv, i0, tile, &cz, zj);
            scatter_tile(&mut acc_p, gp.row_mut(j), pv, i0, tile, &cp, pj);
        }
        for r in 0..tile {
            add_into(gz.row_mut(i0 + r), &acc_z[r * dz..(r + 1) * dz]);
            add_into(gp.row_mut(i0 + r), &acc_p[r * dp..(r + 1) * dp]);
        }
    }
    (scale * total, gz, gp)
}

/// `g_j += Σ_r c_r x_{i0+r}` and `acc_r += c_r x_j` for the rows of a tile.
fn scatter_tile(acc: &mut [f64], gj: &mut [f64], x: &Matrix, i0: usize, tile: usize, c: &[f64; MANIFOLD_TILE], xj: &[f64]) {
    let d = xj.len();
    for r in 0..tile {
        if c[r] == 0.0 {
            continue;
        }
        let xi = x.row(i0 + r);
        for (g, v) in gj.iter_mut().zip(xi) {
            *g += c[r] * v;
        }
        for (a, v) in acc[r * d..(r + 1) * d].iter_mut().zip(xj) {
            *a += c[r] * v;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// One unordered pair of the manifold loss, from the raw inner products.
struct ManifoldPair {
    s: f64,
    t: f64,
    t_active: bool,
}

fn clamped_ln(x: f64) -> f64 {
    x.clamp(LOG_FLOOR, 1.0).ln()
}

fn clamped_ln_grad(x: f64) -> f64 {
    if (LOG_FLOOR..=1.0).contains(&x) {
        1.0 / x
    } else {
        0.0
    }
}

impl ManifoldPair {
    fn new(z_inner: f64, p_inner: f64) -> Self {
        ManifoldPair {
            s: 0.5 * (1.0 + z_inner),
            t: p_inner.clamp(0.0, 1.0),
            t_active: (0.0..=1.0).contains(&p_inner),
        }
    }

    fn loss(&self) -> f64 {
        -(self.t * clamped_ln(self.s) + (1.0 - self.t) * clamped_ln(1.0 - self.s))
    }

    /// Derivatives of the pair loss w.r.t. the two raw inner products.
    fn grads(&self) -> (f64, f64) {
        let d_s = -(self.t * clamped_ln_grad(self.s) - (1.0 - self.t) * clamped_ln_grad(1.0 - self.s));
        let d_t = if self.t_active {
            -(clamped_ln(self.s) - clamped_ln(1.0 - self.s))
        } else {
            0.0
        };
        (0.5 * d_s, d_t)
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

fn add_grad(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::Divergence {
            op: "backward".into(),
        });
    }
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::MatMulNt(..) => "matmul_nt",
        Op::Transpose(_) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::MulRow(..) => "mul_row",
        Op::MulCol(..) => "mul_col",
        Op::Scale(..) => "scale",
        Op::AddScalar(_) => "add_scalar",
        Op::Sigmoid(_) => "sigmoid",
        Op::Softplus(_) => "softplus",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Relu(_) => "relu",
        Op::Exp(_) => "exp",
        Op::Log(..) => "log",
        Op::Sqrt(_) => "sqrt",
        Op::Square(_) => "square",
        Op::Recip(_) => "recip",
        Op::Clamp(..) => "clamp",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::SumRows(_) => "sum_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::SelectRows(..) => "select_rows",
        Op::NormalizeRows(_) => "normalize_rows",
        Op::MaskedSoftmax(_) => "masked_softmax",
        Op::OuterAdd(..) => "outer_add",
        Op::Manifold(..) => "manifold_loss",
    }
}

/// Builds a fresh tape with `build`, runs the reverse pass, and accumulates
/// parameter gradients into `store`. Returns the loss value.
pub fn forward_backward<F>(store: &mut ParamStore, build: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    grads.accumulate_into(store)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::identity(2));
        let loss = forward_backward(&mut store, |t, s| {
            let wv = t.param(s, w);
            let x = t.input(Matrix::from_rows(&[[1.0], [2.0]]));
            let y = t.matmul(wv, x)?;
            t.sum(y)
        })
        .unwrap();
        assert_eq!(loss, 3.0);
        assert_eq!(
            store.get(w).gradient(),
            Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]])
        );
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.input(Matrix::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.scalar(y), 0.5);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 0.25);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut t = Tape::new();
        let a = t.input(Matrix::zeros(2, 3));
        let b = t.input(Matrix::zeros(3, 2));
        let err = t.add(a, b).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "add", .. }));
    }

    #[test]
    fn non_finite_forward_names_the_op() {
        let mut t = Tape::new();
        let a = t.input(Matrix::scalar(1000.0));
        let err = t.exp(a).unwrap_err();
        assert!(err.is_divergence());
        assert!(err.to_string().contains("exp"));
    }

    #[test]
    fn masked_softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.input(Matrix::from_rows(&[[1.0, 50.0, -3.0], [0.0, 0.0, 0.0]]));
        let mask = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 0.0, 0.0]]);
        let y = t.masked_softmax(x, &mask).unwrap();
        let v = t.value(y);
        assert_eq!(v[(0, 1)], 0.0);
        assert!((v.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(v.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn log_clamp_stops_gradient() {
        let mut t = Tape::new();
        let x = t.input(Matrix::from_rows(&[[0.0, 2.0]]));
        let y = t.log_clamped(x, LOG_FLOOR).unwrap();
        let s = t.sum(y).unwrap();
        assert!((t.value(y)[(0, 0)] - LOG_FLOOR.ln()).abs() < 1e-12);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().as_slice(), &[0.0, 0.5]);
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        let mut t = Tape::new();
        let x = t.input(Matrix::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let z = t.add(y, x).unwrap();
        let g = t.backward(z).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 7.0);
    }
}
