//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is built fresh for every training step (define-by-run).
//! Each operation evaluates eagerly, stores its value on the tape, and
//! remembers its operands so [`Graph::backward`] can replay the tape in
//! reverse. Operands always precede their consumers, so a single reverse
//! sweep visits every node once.
//!
//! Only first-order gradients are supported: a tape may be differentiated
//! once, and a second call to `backward` is a contract error.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, Tensor};

/// Denominator guard for [`Graph::cosine_rows`].
pub const COSINE_EPS: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulColumn(Var, Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    Softplus(Var),
    Sum(Var),
    RowSum(Var),
    CosineRows(Var, Var),
    LogSumExpRows(Var),
    RowSoftmax(Var, Option<Vec<bool>>),
    SegmentSoftmax(Var, Arc<[usize]>),
    Map(Var, fn(f64) -> f64),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    differentiated: bool,
}

/// Gradients of a scalar with respect to the leaves of a [`Graph`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` is not on any path to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shapes checked by caller")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn record(&mut self, name: &str, value: Tensor, op: Op, operands: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let needs = self.needs(operands);
        Ok(self.push(value, op, needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.record("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.record("transpose", value, Op::Transpose(a), &[a])
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.len() != rows * cols {
            return Err(Error::shape("reshape", t.shape(), (rows, cols)));
        }
        let value = Tensor::from_vec(rows, cols, t.data().to_vec())?;
        self.record("reshape", value, Op::Reshape(a), &[a])
    }

    /// Sparse-dense product. The sparse operand is treated as constant.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, d: Var) -> Result<Var> {
        let value = s.spmm(self.value(d))?;
        self.record("spmm", value, Op::SpMM(Arc::clone(s), d), &[d])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = zip_with(self.value(a), self.value(b), |x, y| x + y);
        self.record("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = zip_with(self.value(a), self.value(b), |x, y| x - y);
        self.record("sub", value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = zip_with(self.value(a), self.value(b), |x, y| x * y);
        self.record("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| c * x);
        self.record("scale", value, Op::Scale(a, c), &[a])
    }

    /// Multiplies row `i` of `a` (n×m) by `col[i]` (n×1).
    pub fn mul_column(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(Error::shape("mul_column", ta.shape(), tc.shape()));
        }
        let mut value = ta.clone();
        for r in 0..ta.rows() {
            let s = tc.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        self.record("mul_column", value, Op::MulColumn(a, col), &[a, col])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of nothing".into()));
        };
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape("concat_cols", self.shape(first), t.shape()));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        self.record("concat_cols", value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// `out[r] = a[idx[r]]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Contract(format!(
                "gather_rows index {bad} out of {} rows",
                t.rows()
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::from_vec(idx.len(), t.cols(), data)?;
        self.record("gather_rows", value, Op::GatherRows(a, idx.into()), &[a])
    }

    /// `out[idx[r]] += a[r]` into a zero tensor with `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let t = self.value(a);
        if idx.len() != t.rows() {
            return Err(Error::shape("scatter_add_rows", t.shape(), (idx.len(), 1)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "scatter_add_rows index {bad} out of {rows} rows"
            )));
        }
        let mut value = Tensor::zeros(rows, t.cols());
        for (r, &i) in idx.iter().enumerate() {
            for (o, &v) in value.row_mut(i).iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        self.record(
            "scatter_add_rows",
            value,
            Op::ScatterAddRows(a, idx.into()),
            &[a],
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.record("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        self.record("log", value, Op::Log(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.record("exp", value, Op::Exp(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x * x);
        self.record("square", value, Op::Square(a), &[a])
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(softplus);
        self.record("softplus", value, Op::Softplus(a), &[a])
    }

    /// Applies `f` elementwise with user-supplied derivative `df`.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).map(f);
        self.record("map", value, Op::Map(a, df), &[a])
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.record("sum", value, Op::Sum(a), &[a])
    }

    /// Per-row sums as an `n×1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::column((0..t.rows()).map(|r| t.row(r).iter().sum()).collect());
        self.record("row_sum", value, Op::RowSum(a), &[a])
    }

    /// Per-row dot products of two equally shaped tensors.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.row_sum(p)
    }

    /// Per-row cosine similarity as an `n×1` column. The denominator is
    /// clamped below at [`COSINE_EPS`].
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_rows", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let value = Tensor::column(
            (0..ta.rows())
                .map(|r| cosine_parts(ta.row(r), tb.row(r)).0)
                .collect(),
        );
        self.record("cosine_rows", value, Op::CosineRows(a, b), &[a, b])
    }

    /// Per-row `log Σ exp`, stabilized by the row maximum.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.cols() == 0 {
            return Err(Error::Contract("logsumexp over an empty row".into()));
        }
        let value = Tensor::column((0..t.rows()).map(|r| logsumexp(t.row(r))).collect());
        self.record("logsumexp_rows", value, Op::LogSumExpRows(a), &[a])
    }

    /// Softmax over each row. With a mask, row `r` is normalized over
    /// `allowed[r]` only and every other entry is exactly zero.
    pub fn row_softmax(&mut self, a: Var, allowed: Option<&[Vec<usize>]>) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.shape();
        let mask = match allowed {
            None => None,
            Some(sets) => {
                if sets.len() != rows {
                    return Err(Error::shape("row_softmax mask", t.shape(), (sets.len(), 1)));
                }
                let mut m = vec![false; rows * cols];
                for (r, set) in sets.iter().enumerate() {
                    for &c in set {
                        if c >= cols {
                            return Err(Error::Contract(format!(
                                "row_softmax mask column {c} out of {cols}"
                            )));
                        }
                        m[r * cols + c] = true;
                    }
                }
                Some(m)
            }
        };
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = t.row(r);
            let keep = |c: usize| mask.as_ref().is_none_or(|m| m[r * cols + c]);
            let max = (0..cols)
                .filter(|&c| keep(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateRow { row: r });
            }
            let mut total = 0.0;
            for c in (0..cols).filter(|&c| keep(c)) {
                let e = (row[c] - max).exp();
                value.set(r, c, e);
                total += e;
            }
            value.row_mut(r).iter_mut().for_each(|v| *v /= total);
        }
        self.record("row_softmax", value, Op::RowSoftmax(a, mask), &[a])
    }

    /// Softmax of an `E×1` column within contiguous segments
    /// `offsets[s]..offsets[s+1]`. Empty segments are allowed.
    ///
    /// This is the sparse form of a masked [`Graph::row_softmax`] where the
    /// allowed positions of each row are stored contiguously.
    pub fn segment_softmax(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.cols() != 1 || offsets.last().copied() != Some(t.rows()) || offsets[0] != 0 {
            return Err(Error::shape(
                "segment_softmax",
                t.shape(),
                (offsets.last().copied().unwrap_or(0), 1),
            ));
        }
        let x = t.data();
        let mut out = vec![0.0; x.len()];
        for w in offsets.windows(2) {
            let seg = w[0]..w[1];
            if seg.is_empty() {
                continue;
            }
            let max = x[seg.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in seg.clone() {
                out[i] = (x[i] - max).exp();
                total += out[i];
            }
            out[seg].iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::column(out);
        self.record(
            "segment_softmax",
            value,
            Op::SegmentSoftmax(a, offsets.into()),
            &[a],
        )
    }

    /// Differentiates the scalar `loss` with respect to every leaf created
    /// with [`Graph::param`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.differentiated {
            return Err(Error::Contract(
                "backward already ran on this tape; higher-order gradients are not supported"
                    .into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.differentiated = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, g, &mut grads, &mut leaf_grads[i]);
        }

        Ok(Gradients {
            grads: leaf_grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(
        &self,
        node: &Node,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        leaf: &mut Option<Tensor>,
    ) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let y = &node.value;
        match &node.op {
            Op::Leaf => *leaf = Some(g),
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let bt = val(*b).transpose();
                    accumulate(grads, *a, g.matmul(&bt).expect("matmul grad"));
                }
                if wants(*b) {
                    let at = val(*a).transpose();
                    accumulate(grads, *b, at.matmul(&g).expect("matmul grad"));
                }
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Reshape(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Tensor::from_vec(r, c, g.into_vec()).expect("reshape"));
            }
            Op::SpMM(s, d) => accumulate(grads, *d, s.transpose_spmm(&g).expect("spmm grad")),
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, zip_with(&g, val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    accumulate(grads, *b, zip_with(&g, val(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| c * x)),
            Op::MulColumn(a, col) => {
                let (ta, tc) = (val(*a), val(*col));
                if wants(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let s = tc.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(grads, *a, ga);
                }
                if wants(*col) {
                    let gc = (0..ta.rows())
                        .map(|r| g.row(r).iter().zip(ta.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    accumulate(grads, *col, Tensor::column(gc));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = val(p).shape();
                    if wants(p) {
                        let mut gp = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r)
                                .copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        accumulate(grads, p, gp);
                    }
                    offset += cols;
                }
            }
            Op::GatherRows(a, idx) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::ScatterAddRows(a, idx) => {
                let cols = g.cols();
                let mut data = Vec::with_capacity(idx.len() * cols);
                for &i in idx.iter() {
                    data.extend_from_slice(g.row(i));
                }
                accumulate(
                    grads,
                    *a,
                    Tensor::from_vec(idx.len(), cols, data).expect("scatter grad"),
                );
            }
            Op::Sigmoid(a) => accumulate(grads, *a, zip_with(&g, y, |g, s| g * s * (1.0 - s))),
            Op::Log(a) => accumulate(grads, *a, zip_with(&g, val(*a), |g, x| g / x)),
            Op::Exp(a) => accumulate(grads, *a, zip_with(&g, y, |g, e| g * e)),
            Op::Square(a) => accumulate(grads, *a, zip_with(&g, val(*a), |g, x| 2.0 * g * x)),
            Op::Softplus(a) => {
                accumulate(grads, *a, zip_with(&g, val(*a), |g, x| g * sigmoid(x)))
            }
            Op::Map(a, df) => accumulate(grads, *a, zip_with(&g, val(*a), |g, x| g * df(x))),
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::RowSum(a) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    let s = g.get(i, 0);
                    ga.row_mut(i).iter_mut().for_each(|v| *v = s);
                }
                accumulate(grads, *a, ga);
            }
            Op::CosineRows(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (rows, cols) = ta.shape();
                let mut ga = Tensor::zeros(rows, cols);
                let mut gb = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let (ra, rb) = (ta.row(r), tb.row(r));
                    let (c, na, nb) = cosine_parts(ra, rb);
                    let gr = g.get(r, 0);
                    let den = na * nb;
                    if den > COSINE_EPS {
                        for k in 0..cols {
                            ga.row_mut(r)[k] = gr * (rb[k] / den - c * ra[k] / (na * na));
                            gb.row_mut(r)[k] = gr * (ra[k] / den - c * rb[k] / (nb * nb));
                        }
                    } else {
                        for k in 0..cols {
                            ga.row_mut(r)[k] = gr * rb[k] / COSINE_EPS;
                            gb.row_mut(r)[k] = gr * ra[k] / COSINE_EPS;
                        }
                    }
                }
                if wants(*a) {
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    accumulate(grads, *b, gb);
                }
            }
            Op::LogSumExpRows(a) => {
                let ta = val(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..ta.rows() {
                    let lse = y.get(r, 0);
                    let gr = g.get(r, 0);
                    for (o, &x) in ga.row_mut(r).iter_mut().zip(ta.row(r)) {
                        *o = gr * (x - lse).exp();
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::RowSoftmax(a, mask) => {
                let (rows, cols) = y.shape();
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..cols {
                        if mask.as_ref().is_none_or(|m| m[r * cols + c]) {
                            ga.set(r, c, yr[c] * (gr[c] - dot));
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SegmentSoftmax(a, offsets) => {
                let (yv, gv) = (y.data(), g.data());
                let mut out = vec![0.0; yv.len()];
                for w in offsets.windows(2) {
                    let seg = w[0]..w[1];
                    let dot: f64 = seg.clone().map(|i| yv[i] * gv[i]).sum();
                    for i in seg {
                        out[i] = yv[i] * (gv[i] - dot);
                    }
                }
                accumulate(grads, *a, Tensor::column(out));
            }
        }
    }
}

fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `(cos, |a|, |b|)` with the clamped denominator.
fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb).max(COSINE_EPS), na, nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_zero() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(2));
        let m = g.constant(Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]));
        let p = g.matmul(i, m).unwrap();
        assert_eq!(g.value(p), g.value(m));

        let a = g.constant(Tensor::from_rows(&[[1.0, 2.0]]));
        let z = g.constant(Tensor::zeros(2, 1));
        let p = g.matmul(a, z).unwrap();
        assert_eq!(g.value(p).data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn spmm_selector_and_empty() {
        let mut g = Graph::new();
        let s = Arc::new(SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0)]).unwrap());
        let d = g.constant(Tensor::from_rows(&[[0.0, 0.0], [7.0, 8.0]]));
        let p = g.spmm(&s, d).unwrap();
        assert_eq!(g.value(p).row(0), &[7.0, 8.0]);

        let empty = Arc::new(SparseMatrix::empty(3, 2));
        let p = g.spmm(&empty, d).unwrap();
        assert_eq!(g.value(p), &Tensor::zeros(3, 2));

        let bad = Arc::new(SparseMatrix::empty(3, 5));
        assert!(g.spmm(&bad, d).is_err());
    }

    #[test]
    fn row_softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[2.5, 2.5], [1.0, 0.0]]));
        let y = g.row_softmax(x, None).unwrap();
        let y = g.value(y);
        assert!((y.get(0, 0) - 0.5).abs() < 1e-15);
        // e / (e + 1) computed by hand.
        assert!((y.get(1, 0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((y.get(1, 1) - 0.268_941_421_369_995_1).abs() < 1e-12);

        let mask = vec![vec![1], vec![0, 1]];
        let y = g.row_softmax(x, Some(&mask)).unwrap();
        assert_eq!(g.value(y).row(0), &[0.0, 1.0]);
    }

    #[test]
    fn row_softmax_degenerate_row() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(2, 2));
        let mask = vec![vec![0], vec![]];
        assert!(matches!(
            g.row_softmax(x, Some(&mask)),
            Err(Error::DegenerateRow { row: 1 })
        ));
    }

    #[test]
    fn pointwise_examples() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s).item(), 0.5);

        let v = g.constant(Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.1, 0.2, 0.3]]));
        let c = g.cosine_rows(v, v).unwrap();
        for r in 0..2 {
            assert!((g.value(c).get(r, 0) - 1.0).abs() < 1e-15);
        }

        let m = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let r = g.gather_rows(m, &[1, 1]).unwrap();
        assert_eq!(g.value(r), &Tensor::from_rows(&[[3.0, 4.0], [3.0, 4.0]]));
    }

    #[test]
    fn cosine_of_zero_vector_is_guarded() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(1, 3));
        let b = g.param(Tensor::from_rows(&[[1.0, 0.0, 0.0]]));
        let c = g.cosine_rows(a, b).unwrap();
        assert_eq!(g.value(c).item(), 0.0);
        let l = g.sum(c).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(a).is_finite());
    }

    #[test]
    fn log_of_zero_is_reported() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::scalar(0.0));
        assert!(matches!(g.log(z), Err(Error::NonFinite(_))));
    }

    #[test]
    fn backward_sum_is_all_ones() {
        let mut g = Graph::new();
        let w = g.param(Tensor::from_rows(&[[1.0, -2.0, 3.0], [4.0, 5.0, 6.0]]));
        let l = g.sum(w).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(w), Tensor::filled(2, 3, 1.0));
    }

    #[test]
    fn backward_quadratic() {
        let mut g = Graph::new();
        let w = g.param(Tensor::scalar(3.0));
        let sq = g.mul(w, w).unwrap();
        let l = g.sum(sq).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(w).item(), 6.0);
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::scalar(3.0));
        let unused = g.param(Tensor::zeros(2, 2));
        let l = g.sum(w).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(unused), Tensor::zeros(2, 2));
    }

    #[test]
    fn backward_rejects_non_scalar_and_second_call() {
        let mut g = Graph::new();
        let w = g.param(Tensor::zeros(2, 2));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
        let l = g.sum(w).unwrap();
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::Contract(_))));
    }
}
