use std::collections::BTreeMap;

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Identifier of a trainable parameter (a user index in the dynamics loop).
pub type ParamId = usize;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    /// Mean of several parameters whose values were captured when the node was built.
    ParamMean(Vec<ParamId>),
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    ScaleBy(Var, Var),
    DivBy(Var, Var),
    Dot(Var, Var),
    MatVec(Var, Var),
    Abs(Var),
    Exp(Var),
    Ln(Var),
    Gain(Var),
    Relu(Var),
    Sigmoid(Var),
    Norm(Var),
    Sum(Var),
    SoftmaxRows(Var),
    NormalizeRows(Var),
    NormalizeCols(Var),
    RowSums(Var),
    Outer(Vec<f64>, Var),
    OuterDiff(Var),
    Rows(Var, usize, usize),
    Concat(Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::ParamMean(_) => "param_mean",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::ScaleBy(..) => "scale_by",
            Op::DivBy(..) => "div_by",
            Op::Dot(..) => "dot",
            Op::MatVec(..) => "matvec",
            Op::Abs(_) => "abs",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "log",
            Op::Gain(_) => "gain",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Norm(_) => "norm",
            Op::Sum(_) => "sum",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::NormalizeRows(_) => "normalize_rows",
            Op::NormalizeCols(_) => "normalize_cols",
            Op::RowSums(_) => "row_sums",
            Op::Outer(..) => "outer",
            Op::OuterDiff(_) => "outer_diff",
            Op::Rows(..) => "rows",
            Op::Concat(_) => "concat",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Gradients of a scalar root, keyed by parameter id in ascending order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub by_param: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    /// Accumulates `other * weight` into `self`.
    pub fn merge_scaled(&mut self, other: &Gradients, weight: f64) {
        for (id, g) in &other.by_param {
            let acc = self
                .by_param
                .entry(*id)
                .or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in acc.iter_mut().zip(g) {
                *a += weight * b;
            }
        }
    }
}

/// Reverse-mode tape over dense matrices. Values are computed eagerly as
/// nodes are pushed; [`Tape::backward`] replays the recorded ops in reverse.
///
/// Kinks (`abs` at 0, `relu` at 0) take subgradient 0.
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

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1, "scalar() on non-scalar node");
        m.data[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let m = self.val(a);
        let value = Matrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|&x| f(x)).collect(),
        };
        let ng = self.ng(a);
        self.push(op, value, ng)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ma, mb) = (self.val(a), self.val(b));
        assert_eq!(
            (ma.rows, ma.cols),
            (mb.rows, mb.cols),
            "shape mismatch in {}",
            op.name()
        );
        let value = Matrix {
            rows: ma.rows,
            cols: ma.cols,
            data: ma.data.iter().zip(&mb.data).map(|(&x, &y)| f(x, y)).collect(),
        };
        let ng = self.ng(a) || self.ng(b);
        self.push(op, value, ng)
    }

    // ---- leaves ----

    pub fn param(&mut self, id: ParamId, value: &[f64]) -> Var {
        self.push(Op::Param(id), Matrix::column(value.to_vec()), true)
    }

    /// Mean of the given parameter vectors. The gradient is split equally
    /// among `ids`; pass the values in the same order.
    pub fn param_mean(&mut self, ids: &[ParamId], values: &[&[f64]]) -> Var {
        assert_eq!(ids.len(), values.len());
        assert!(!ids.is_empty(), "param_mean of no parameters");
        let d = values[0].len();
        let mut mean = vec![0.0; d];
        for v in values {
            for (m, x) in mean.iter_mut().zip(v.iter()) {
                *m += x;
            }
        }
        let n = ids.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        self.push(Op::ParamMean(ids.to_vec()), Matrix::column(mean), true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Const, value, false)
    }

    pub fn const_vec(&mut self, v: &[f64]) -> Var {
        self.constant(Matrix::column(v.to_vec()))
    }

    pub fn const_scalar(&mut self, x: f64) -> Var {
        self.constant(Matrix::scalar(x))
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Offset(a), |x| x + s)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), f64::abs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), f64::ln)
    }

    /// Graded-relevance gain `2^x - 1`.
    pub fn gain(&mut self, a: Var) -> Var {
        self.map(a, Op::Gain(a), |x| x.exp2() - 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    // ---- scalar broadcasting ----

    /// `a * s` where `s` is a scalar node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let m = self.val(a);
        let value = Matrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|x| x * k).collect(),
        };
        let ng = self.ng(a) || self.ng(s);
        self.push(Op::ScaleBy(a, s), value, ng)
    }

    /// `a / s` where `s` is a scalar node.
    pub fn div_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let m = self.val(a);
        let value = Matrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|x| x / k).collect(),
        };
        let ng = self.ng(a) || self.ng(s);
        self.push(Op::DivBy(a, s), value, ng)
    }

    // ---- reductions and linear algebra ----

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.val(a), self.val(b));
        assert_eq!(ma.len(), mb.len(), "shape mismatch in dot");
        let v = crate::linalg::dot(&ma.data, &mb.data);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Dot(a, b), Matrix::scalar(v), ng)
    }

    /// `m · v` for an `r × c` matrix and a length-`c` vector.
    pub fn matvec(&mut self, m: Var, v: Var) -> Var {
        let (mm, mv) = (self.val(m), self.val(v));
        assert_eq!(mm.cols, mv.len(), "shape mismatch in matvec");
        let out = mm.mul_vec(&mv.data);
        let ng = self.ng(m) || self.ng(v);
        self.push(Op::MatVec(m, v), Matrix::column(out), ng)
    }

    pub fn norm(&mut self, a: Var) -> Var {
        let v = crate::linalg::norm(&self.val(a).data);
        let ng = self.ng(a);
        self.push(Op::Norm(a), Matrix::scalar(v), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.val(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Op::Sum(a), Matrix::scalar(v), ng)
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let v = self.val(a).row_sums();
        let ng = self.ng(a);
        self.push(Op::RowSums(a), Matrix::column(v), ng)
    }

    /// Row-wise softmax, computed with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let m = self.val(a);
        let mut out = Matrix::zeros(m.rows, m.cols);
        for r in 0..m.rows {
            let row = m.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (q, &x) in row.iter().enumerate() {
                let e = (x - mx).exp();
                out.set(r, q, e);
                total += e;
            }
            for q in 0..m.cols {
                out.set(r, q, out.get(r, q) / total);
            }
        }
        let ng = self.ng(a);
        self.push(Op::SoftmaxRows(a), out, ng)
    }

    /// Divides each row by its sum.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let m = self.val(a);
        let sums = m.row_sums();
        let mut out = m.clone();
        for (r, s) in sums.iter().enumerate() {
            let s = safe_denominator(*s);
            for q in 0..m.cols {
                out.set(r, q, m.get(r, q) / s);
            }
        }
        let ng = self.ng(a);
        self.push(Op::NormalizeRows(a), out, ng)
    }

    /// Divides each column by its sum.
    pub fn normalize_cols(&mut self, a: Var) -> Var {
        let m = self.val(a);
        let sums = m.col_sums();
        let mut out = m.clone();
        for r in 0..m.rows {
            for (q, s) in sums.iter().enumerate() {
                out.set(r, q, m.get(r, q) / safe_denominator(*s));
            }
        }
        let ng = self.ng(a);
        self.push(Op::NormalizeCols(a), out, ng)
    }

    /// `out[p, q] = coef[p] * v[q]`.
    pub fn outer(&mut self, coef: Vec<f64>, v: Var) -> Var {
        let mv = self.val(v);
        let mut out = Matrix::zeros(coef.len(), mv.len());
        for (p, c) in coef.iter().enumerate() {
            for (q, x) in mv.data.iter().enumerate() {
                out.set(p, q, c * x);
            }
        }
        let ng = self.ng(v);
        self.push(Op::Outer(coef, v), out, ng)
    }

    /// `out[p, q] = v[p] - v[q]`.
    pub fn outer_diff(&mut self, v: Var) -> Var {
        let mv = self.val(v);
        let n = mv.len();
        let mut out = Matrix::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                out.set(p, q, mv.data[p] - mv.data[q]);
            }
        }
        let ng = self.ng(v);
        self.push(Op::OuterDiff(v), out, ng)
    }

    /// Rows `start..start + len` of `a`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.val(a);
        assert!(start + len <= m.rows, "row slice out of range");
        let value = Matrix {
            rows: len,
            cols: m.cols,
            data: m.data[start * m.cols..(start + len) * m.cols].to_vec(),
        };
        let ng = self.ng(a);
        self.push(Op::Rows(a, start, len), value, ng)
    }

    /// Stacks equally-shaped row blocks vertically. Concatenating `d × 1`
    /// vectors gives a column; use [`Tape::stack_rows`] for a `n × d` matrix.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        self.concat_shaped(parts, None)
    }

    /// Stacks `n` vectors of length `d` into an `n × d` matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let d = parts.first().map_or(0, |p| self.val(*p).len());
        self.concat_shaped(parts, Some(d))
    }

    fn concat_shaped(&mut self, parts: &[Var], cols: Option<usize>) -> Var {
        let mut data = Vec::new();
        let mut ng = false;
        for p in parts {
            let m = self.val(*p);
            if let Some(d) = cols {
                assert_eq!(m.len(), d, "stack_rows expects equal lengths");
            }
            data.extend_from_slice(&m.data);
            ng |= self.ng(*p);
        }
        let value = match cols {
            Some(d) => Matrix {
                rows: parts.len(),
                cols: d,
                data,
            },
            None => Matrix::column(data),
        };
        self.push(Op::Concat(parts.to_vec()), value, ng)
    }

    // ---- reverse pass ----

    /// Reverse-mode gradients of the scalar `root` with respect to every
    /// parameter leaf reachable from it.
    ///
    /// Accumulation order is fixed by tape order, so repeated calls return
    /// bit-identical results.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.check_finite(root)?;
        let adj = self.adjoints(root);
        let mut grads = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            let Some(g) = &adj[i] else { continue };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    op: node.op.name(),
                });
            }
            match &node.op {
                Op::Param(id) => accumulate(&mut grads, *id, g, 1.0),
                Op::ParamMean(ids) => {
                    let w = 1.0 / ids.len() as f64;
                    for id in ids {
                        accumulate(&mut grads, *id, g, w);
                    }
                }
                _ => {}
            }
        }
        Ok(grads)
    }

    fn check_finite(&self, root: Var) -> Result<()> {
        assert_eq!(self.val(root).len(), 1, "backward() needs a scalar root");
        if let Some(node) = self.nodes[..=root.0]
            .iter()
            .find(|n| !n.value.is_finite())
        {
            return Err(Error::NonFiniteGradient {
                op: node.op.name(),
            });
        }
        Ok(())
    }

    fn adjoints(&self, root: Var) -> Vec<Option<Vec<f64>>> {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut adj);
            adj[i] = Some(g);
        }
        adj
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Param(_) | Op::ParamMean(_) | Op::Const => {}
            Op::Add(a, b) => {
                self.acc(adj, *a, |out| add_into(out, g, 1.0));
                self.acc(adj, *b, |out| add_into(out, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.acc(adj, *a, |out| add_into(out, g, 1.0));
                self.acc(adj, *b, |out| add_into(out, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.val(*a).data, &self.val(*b).data);
                self.acc(adj, *a, |out| {
                    for ((o, gi), bi) in out.iter_mut().zip(g).zip(vb) {
                        *o += gi * bi;
                    }
                });
                self.acc(adj, *b, |out| {
                    for ((o, gi), ai) in out.iter_mut().zip(g).zip(va) {
                        *o += gi * ai;
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (&self.val(*a).data, &self.val(*b).data);
                self.acc(adj, *a, |out| {
                    for ((o, gi), bi) in out.iter_mut().zip(g).zip(vb) {
                        *o += gi / bi;
                    }
                });
                self.acc(adj, *b, |out| {
                    for (((o, gi), ai), bi) in out.iter_mut().zip(g).zip(va).zip(vb) {
                        *o -= gi * ai / (bi * bi);
                    }
                });
            }
            Op::Scale(a, s) => self.acc(adj, *a, |out| add_into(out, g, *s)),
            Op::Offset(a) => self.acc(adj, *a, |out| add_into(out, g, 1.0)),
            Op::ScaleBy(a, s) => {
                let k = self.scalar(*s);
                let va = &self.val(*a).data;
                self.acc(adj, *a, |out| add_into(out, g, k));
                self.acc(adj, *s, |out| out[0] += crate::linalg::dot(g, va));
            }
            Op::DivBy(a, s) => {
                let k = self.scalar(*s);
                let va = &self.val(*a).data;
                self.acc(adj, *a, |out| add_into(out, g, 1.0 / k));
                self.acc(adj, *s, |out| out[0] -= crate::linalg::dot(g, va) / (k * k));
            }
            Op::Dot(a, b) => {
                let (va, vb) = (&self.val(*a).data, &self.val(*b).data);
                self.acc(adj, *a, |out| add_into(out, vb, g[0]));
                self.acc(adj, *b, |out| add_into(out, va, g[0]));
            }
            Op::MatVec(m, v) => {
                let (mm, vv) = (self.val(*m), &self.val(*v).data);
                self.acc(adj, *m, |out| {
                    for r in 0..mm.rows {
                        for c in 0..mm.cols {
                            out[r * mm.cols + c] += g[r] * vv[c];
                        }
                    }
                });
                self.acc(adj, *v, |out| {
                    for r in 0..mm.rows {
                        let row = mm.row(r);
                        for c in 0..mm.cols {
                            out[c] += row[c] * g[r];
                        }
                    }
                });
            }
            Op::Abs(a) => {
                let va = &self.val(*a).data;
                self.acc(adj, *a, |out| {
                    for ((o, gi), x) in out.iter_mut().zip(g).zip(va) {
                        *o += gi * sign0(*x);
                    }
                });
            }
            Op::Exp(a) => self.acc(adj, *a, |out| {
                for ((o, gi), yi) in out.iter_mut().zip(g).zip(&y.data) {
                    *o += gi * yi;
                }
            }),
            Op::Ln(a) => {
                let va = &self.val(*a).data;
                self.acc(adj, *a, |out| {
                    for ((o, gi), x) in out.iter_mut().zip(g).zip(va) {
                        *o += gi / x;
                    }
                });
            }
            Op::Gain(a) => self.acc(adj, *a, |out| {
                for ((o, gi), yi) in out.iter_mut().zip(g).zip(&y.data) {
                    *o += gi * std::f64::consts::LN_2 * (yi + 1.0);
                }
            }),
            Op::Relu(a) => {
                let va = &self.val(*a).data;
                self.acc(adj, *a, |out| {
                    for ((o, gi), x) in out.iter_mut().zip(g).zip(va) {
                        if *x > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => self.acc(adj, *a, |out| {
                for ((o, gi), yi) in out.iter_mut().zip(g).zip(&y.data) {
                    *o += gi * yi * (1.0 - yi);
                }
            }),
            Op::Norm(a) => {
                let n = y.data[0];
                let va = &self.val(*a).data;
                if n > 0.0 {
                    self.acc(adj, *a, |out| add_into(out, va, g[0] / n));
                }
            }
            Op::Sum(a) => self.acc(adj, *a, |out| out.iter_mut().for_each(|o| *o += g[0])),
            Op::RowSums(a) => {
                let cols = self.val(*a).cols;
                self.acc(adj, *a, |out| {
                    for (r, gr) in g.iter().enumerate() {
                        for o in &mut out[r * cols..(r + 1) * cols] {
                            *o += gr;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => self.acc(adj, *a, |out| {
                for r in 0..y.rows {
                    let yr = y.row(r);
                    let gr = &g[r * y.cols..(r + 1) * y.cols];
                    let inner = crate::linalg::dot(gr, yr);
                    for q in 0..y.cols {
                        out[r * y.cols + q] += yr[q] * (gr[q] - inner);
                    }
                }
            }),
            Op::NormalizeRows(a) => {
                let sums = self.val(*a).row_sums();
                self.acc(adj, *a, |out| {
                    for (r, s) in sums.iter().enumerate() {
                        let s = safe_denominator(*s);
                        let yr = y.row(r);
                        let gr = &g[r * y.cols..(r + 1) * y.cols];
                        let inner = crate::linalg::dot(gr, yr);
                        for q in 0..y.cols {
                            out[r * y.cols + q] += (gr[q] - inner) / s;
                        }
                    }
                });
            }
            Op::NormalizeCols(a) => {
                let sums = self.val(*a).col_sums();
                self.acc(adj, *a, |out| {
                    let mut inner = vec![0.0; y.cols];
                    for r in 0..y.rows {
                        for q in 0..y.cols {
                            inner[q] += g[r * y.cols + q] * y.get(r, q);
                        }
                    }
                    for r in 0..y.rows {
                        for q in 0..y.cols {
                            out[r * y.cols + q] +=
                                (g[r * y.cols + q] - inner[q]) / safe_denominator(sums[q]);
                        }
                    }
                });
            }
            Op::Outer(coef, v) => self.acc(adj, *v, |out| {
                let n = out.len();
                for (p, c) in coef.iter().enumerate() {
                    for q in 0..n {
                        out[q] += c * g[p * n + q];
                    }
                }
            }),
            Op::OuterDiff(v) => self.acc(adj, *v, |out| {
                let n = out.len();
                for p in 0..n {
                    for q in 0..n {
                        let gpq = g[p * n + q];
                        out[p] += gpq;
                        out[q] -= gpq;
                    }
                }
            }),
            Op::Rows(a, start, len) => {
                let cols = self.val(*a).cols;
                self.acc(adj, *a, |out| {
                    add_into(&mut out[start * cols..(start + len) * cols], g, 1.0)
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.val(*p).len();
                    let slice = &g[offset..offset + n];
                    self.acc(adj, *p, |out| add_into(out, slice, 1.0));
                    offset += n;
                }
            }
        }
    }

    fn acc(&self, adj: &mut [Option<Vec<f64>>], target: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(target) {
            return;
        }
        let slot = adj[target.0].get_or_insert_with(|| vec![0.0; self.val(target).len()]);
        f(slot);
    }
}

fn accumulate(grads: &mut Gradients, id: ParamId, g: &[f64], w: f64) {
    let acc = grads
        .by_param
        .entry(id)
        .or_insert_with(|| vec![0.0; g.len()]);
    add_into(acc, g, w);
}

fn add_into(out: &mut [f64], g: &[f64], w: f64) {
    for (o, x) in out.iter_mut().zip(g) {
        *o += w * x;
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn safe_denominator(s: f64) -> f64 {
    if s == 0.0 {
        f64::MIN_POSITIVE
    } else {
        s
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
