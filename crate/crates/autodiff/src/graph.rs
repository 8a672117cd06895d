//! Reverse-mode tape.
//!
//! A [`Graph`] records every op applied during one forward pass. Values are
//! immutable once recorded; [`Graph::backward`] walks the tape in reverse and
//! returns the accumulated gradients for every node that requires one.

use std::collections::BTreeMap;

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    L1(Var, Var),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: vec![a.rows(), a.cols()],
        right: vec![b.rows(), b.cols()],
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
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Indices and values of the non-zero entries of `row`, if the row is sparse
/// enough for a gather loop to beat a dense dot product.
fn sparse_row(row: &[f64], buf: &mut Vec<(usize, f64)>) -> bool {
    buf.clear();
    for (k, &a) in row.iter().enumerate() {
        if a != 0.0 {
            buf.push((k, a));
        }
    }
    buf.len() * 2 < row.len()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A named leaf; its gradient is reported by [`Graph::param_grads`].
    pub fn param(&mut self, name: &str, value: Tensor, trainable: bool) -> Var {
        let v = self.push(value, Op::Leaf, trainable);
        self.params.push((name.to_string(), v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for kk in 0..k {
                let a = ad[i * k + kk];
                if a != 0.0 {
                    axpy(a, &bd[kk * n..(kk + 1) * n], orow);
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    /// `x · wᵀ` with `w` laid out as `out x in`. Rows of `x` that are mostly
    /// zero take a gather path.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.cols() != tw.cols() {
            return Err(mismatch("linear", tx, tw));
        }
        let (m, k, n) = (tx.rows(), tx.cols(), tw.rows());
        let (xd, wd) = (tx.data(), tw.data());
        let mut out = vec![0.0; m * n];
        let mut nz = Vec::new();
        for i in 0..m {
            let xrow = &xd[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            if sparse_row(xrow, &mut nz) {
                for (j, o) in orow.iter_mut().enumerate() {
                    let wrow = &wd[j * k..(j + 1) * k];
                    *o = nz.iter().map(|&(kk, a)| a * wrow[kk]).sum();
                }
            } else {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = dot(xrow, &wd[j * k..(j + 1) * k]);
                }
            }
        }
        let rg = self.rg(&[x, w]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::Linear(x, w), rg))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::matrix(ta.rows(), ta.cols(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x n` bias to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(mismatch("add_row", ta, tb));
        }
        let n = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let value = Tensor::matrix(ta.rows(), n, data);
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    /// Scales row `i` of `a` by `c[i]`, with `c` an `m x 1` column.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(c));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(mismatch("mul_col", ta, tc));
        }
        let n = ta.cols();
        let mut data = ta.data().to_vec();
        for (row, &s) in data.chunks_mut(n).zip(tc.data()) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        let value = Tensor::matrix(ta.rows(), n, data);
        let rg = self.rg(&[a, c]);
        Ok(self.push(value, Op::MulCol(a, c), rg))
    }

    /// Multiplies every element of `a` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.len() != 1 {
            return Err(mismatch("mul_scalar", ta, ts));
        }
        let k = ts.item();
        let value = Tensor::matrix(ta.rows(), ta.cols(), ta.data().iter().map(|x| x * k).collect());
        let rg = self.rg(&[a, s]);
        Ok(self.push(value, Op::MulScalar(a, s), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let ta = self.value(a);
        let value = Tensor::matrix(ta.rows(), ta.cols(), ta.data().iter().map(|x| x * k).collect());
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let ta = self.value(a);
        let value = Tensor::matrix(ta.rows(), ta.cols(), ta.data().iter().map(|x| x + k).collect());
        let rg = self.rg(&[a]);
        self.push(value, Op::AddConst(a), rg)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(AutodiffError::ShapeMismatch {
            op: "concat",
            left: vec![],
            right: vec![],
        })?;
        let m = self.value(*first).rows();
        for p in parts {
            let t = self.value(*p);
            if t.rows() != m {
                return Err(mismatch("concat", self.value(*first), t));
            }
        }
        let n: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::matrix(m, n, data), Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start >= end || end > ta.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                left: vec![ta.rows(), ta.cols()],
                right: vec![start, end],
            });
        }
        let data = (0..ta.rows())
            .flat_map(|i| ta.row(i)[start..end].iter().copied())
            .collect();
        let value = Tensor::matrix(ta.rows(), end - start, data);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Slice(a, start), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let value = Tensor::matrix(ta.rows(), ta.cols(), ta.data().iter().map(|&x| f(x)).collect());
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { alpha * x }, Op::LeakyRelu(a, alpha))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        let value = Tensor::matrix(ta.rows(), n, data);
        let rg = self.rg(&[a]);
        self.push(value, Op::Softmax(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean absolute error over every element.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if !tp.same_shape(tt) {
            return Err(mismatch("l1_loss", tp, tt));
        }
        let n = tp.len() as f64;
        let s = tp.data().iter().zip(tt.data()).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(s), Op::L1(pred, target), rg))
    }

    /// Mean over rows of `-log softmax(logits)[class]`.
    pub fn cross_entropy(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.rows() != classes.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                left: vec![tl.rows(), tl.cols()],
                right: vec![classes.len()],
            });
        }
        let c = tl.cols();
        let mut total = 0.0;
        for (i, &class) in classes.iter().enumerate() {
            if class >= c {
                return Err(AutodiffError::BadClass { class, classes: c });
            }
            let row = tl.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[class];
        }
        let value = Tensor::scalar(total / classes.len() as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(value, Op::CrossEntropy(logits, classes.to_vec()), rg))
    }

    /// Gradients of the sum of `loss`'s elements with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Gradients { grads };
        }
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);
        let mut nz = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backprop_node(node, &g, &mut grads, &mut nz);
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        nz: &mut Vec<(usize, f64)>,
    ) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.requires_grad(*a) {
                    let ga = self.slot(grads, *a);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            ga[i * k + kk] += dot(grow, &tb.data()[kk * n..(kk + 1) * n]);
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let gb = self.slot(grads, *b);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let a = ta.data()[i * k + kk];
                            if a != 0.0 {
                                axpy(a, grow, &mut gb[kk * n..(kk + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::Linear(x, w) => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (m, k, n) = (tx.rows(), tx.cols(), tw.rows());
                if self.requires_grad(*x) {
                    let gx = self.slot(grads, *x);
                    for i in 0..m {
                        let gxrow = &mut gx[i * k..(i + 1) * k];
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij != 0.0 {
                                axpy(gij, tw.row(j), gxrow);
                            }
                        }
                    }
                }
                if self.requires_grad(*w) {
                    let gw = self.slot(grads, *w);
                    for i in 0..m {
                        let xrow = tx.row(i);
                        let grow = &g[i * n..(i + 1) * n];
                        if sparse_row(xrow, nz) {
                            for &(kk, a) in nz.iter() {
                                for (j, gij) in grow.iter().enumerate() {
                                    gw[j * k + kk] += gij * a;
                                }
                            }
                        } else {
                            for (j, &gij) in grow.iter().enumerate() {
                                if gij != 0.0 {
                                    axpy(gij, xrow, &mut gw[j * k..(j + 1) * k]);
                                }
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| axpy(1.0, g, ga));
                self.accumulate(grads, *b, |gb| axpy(1.0, g, gb));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| axpy(1.0, g, ga));
                self.accumulate(grads, *b, |gb| axpy(-1.0, g, gb));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o += gi * bi;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *o += gi * ai;
                    }
                });
            }
            Op::AddRow(a, bias) => {
                let n = y.cols();
                self.accumulate(grads, *a, |ga| axpy(1.0, g, ga));
                self.accumulate(grads, *bias, |gb| {
                    for row in g.chunks(n) {
                        axpy(1.0, row, gb);
                    }
                });
            }
            Op::MulCol(a, c) => {
                let (ta, tc) = (self.value(*a), self.value(*c));
                let n = ta.cols();
                self.accumulate(grads, *a, |ga| {
                    for ((garow, grow), &s) in ga.chunks_mut(n).zip(g.chunks(n)).zip(tc.data()) {
                        axpy(s, grow, garow);
                    }
                });
                self.accumulate(grads, *c, |gc| {
                    for (i, o) in gc.iter_mut().enumerate() {
                        *o += dot(&g[i * n..(i + 1) * n], ta.row(i));
                    }
                });
            }
            Op::MulScalar(a, s) => {
                let (ta, ts) = (self.value(*a), self.value(*s));
                let k = ts.item();
                self.accumulate(grads, *a, |ga| axpy(k, g, ga));
                self.accumulate(grads, *s, |gs| gs[0] += dot(g, ta.data()));
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, |ga| axpy(*k, g, ga)),
            Op::AddConst(a) => self.accumulate(grads, *a, |ga| axpy(1.0, g, ga)),
            Op::Concat(parts) => {
                let n = y.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    self.accumulate(grads, *p, |gp| {
                        for (i, row) in gp.chunks_mut(w).enumerate() {
                            axpy(1.0, &g[i * n + offset..i * n + offset + w], row);
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice(a, start) => {
                let n = y.cols();
                let k = self.value(*a).cols();
                self.accumulate(grads, *a, |ga| {
                    for (i, grow) in g.chunks(n).enumerate() {
                        axpy(1.0, grow, &mut ga[i * k + start..i * k + start + n]);
                    }
                });
            }
            Op::Relu(a) => self.accumulate(grads, *a, |ga| {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                    if *yi > 0.0 {
                        *o += gi;
                    }
                }
            }),
            Op::LeakyRelu(a, alpha) => {
                let ta = self.value(*a);
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(ta.data()) {
                        *o += if *xi > 0.0 { *gi } else { alpha * gi };
                    }
                })
            }
            Op::Tanh(a) => self.accumulate(grads, *a, |ga| {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                    *o += gi * (1.0 - yi * yi);
                }
            }),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |ga| {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                    *o += gi * yi * (1.0 - yi);
                }
            }),
            Op::Softplus(a) => {
                let ta = self.value(*a);
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(ta.data()) {
                        *o += gi * sigmoid(*xi);
                    }
                })
            }
            Op::Exp(a) => self.accumulate(grads, *a, |ga| {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                    *o += gi * yi;
                }
            }),
            Op::Softmax(a) => {
                let n = y.cols();
                self.accumulate(grads, *a, |ga| {
                    for ((garow, grow), yrow) in
                        ga.chunks_mut(n).zip(g.chunks(n)).zip(y.data().chunks(n))
                    {
                        let s = dot(grow, yrow);
                        for ((o, gi), yi) in garow.iter_mut().zip(grow).zip(yrow) {
                            *o += yi * (gi - s);
                        }
                    }
                })
            }
            Op::Sum(a) => self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g[0] / n))
            }
            Op::L1(p, t) => {
                let (tp, tt) = (self.value(*p), self.value(*t));
                let n = tp.len() as f64;
                let sign = |d: f64| {
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                self.accumulate(grads, *p, |gp| {
                    for ((o, pi), ti) in gp.iter_mut().zip(tp.data()).zip(tt.data()) {
                        *o += g[0] * sign(pi - ti) / n;
                    }
                });
                self.accumulate(grads, *t, |gt| {
                    for ((o, pi), ti) in gt.iter_mut().zip(tp.data()).zip(tt.data()) {
                        *o -= g[0] * sign(pi - ti) / n;
                    }
                });
            }
            Op::CrossEntropy(logits, classes) => {
                let tl = self.value(*logits);
                let c = tl.cols();
                let m = classes.len() as f64;
                self.accumulate(grads, *logits, |gl| {
                    for (i, &class) in classes.iter().enumerate() {
                        let row = tl.row(i);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - max).exp() / z;
                            let target = if j == class { 1.0 } else { 0.0 };
                            gl[i * c + j] += g[0] * (p - target) / m;
                        }
                    }
                })
            }
        }
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut Vec<f64> {
        let len = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if self.requires_grad(v) {
            f(self.slot(grads, v));
        }
    }

    /// Gradients of every named parameter, summed over repeated bindings of
    /// the same name. Parameters that did not influence the loss get zeros.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, v) in &self.params {
            if !self.requires_grad(*v) {
                continue;
            }
            let value = self.value(*v);
            let entry = out
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            if let Some(g) = grads.raw(*v) {
                axpy(1.0, g, entry.data_mut());
            }
        }
        out
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` shaped like its value, or `None` if the loss does not
    /// depend on it.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Option<Tensor> {
        self.raw(v).map(|g| {
            let shape = graph.value(v).shape().to_vec();
            Tensor::new(shape, g.to_vec()).expect("gradient matches value shape")
        })
    }
}
