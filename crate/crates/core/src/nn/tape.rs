//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so every parent has a smaller
//! index than its children and a single reverse sweep is a valid reverse
//! topological order.

use std::collections::HashMap;
use std::sync::Arc;

use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::Tensor;
use crate::{Error, Result};

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
    Leaf,
    Param,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulColumn { col: Var, x: Var },
    Scale(Var, f64),
    Swish(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    Square(Var),
    SmoothL1(Var, f64),
    RowNorm(Var),
    Gather { src: Var, index: Arc<[usize]> },
    ScatterAdd { src: Var, index: Arc<[usize]> },
    ConcatCols(Vec<Var>),
    SumAll(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulColumn { .. } => "mul_column",
            Op::Scale(..) => "scale",
            Op::Swish(_) => "swish",
            Op::Sigmoid(_) => "sigmoid",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Abs(_) => "abs",
            Op::Square(_) => "square",
            Op::SmoothL1(..) => "smooth_l1",
            Op::RowNorm(_) => "row_norm",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::ConcatCols(_) => "concat_cols",
            Op::SumAll(_) => "sum_all",
        }
    }
}

struct Node {
    value: Tensor,
    /// Sigmoid of the input, kept by swish nodes for the backward pass.
    aux: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// `c ← a·b + beta·c` for row-major `c: [m, n]`, with `a: [m, k]` and
/// `b: [k, n]` given as `(data, row_stride, col_stride)`.
fn gemm(
    [m, k, n]: [usize; 3],
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    debug_assert!(a.0.len() >= m * k && b.0.len() >= k * n && c.len() == m * n);
    // SAFETY: the slices cover every element addressed by the given shapes
    // and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardStats {
    /// Nodes visited by the reverse sweep.
    pub visited: usize,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
    nonfinite: Option<(usize, &'static str)>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param => true,
            _ => self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        if self.nonfinite.is_none() && !value.all_finite() {
            self.nonfinite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node {
            value,
            aux: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Param => vec![],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MulColumn { col, x } => vec![*col, *x],
            Op::Scale(a, _)
            | Op::Swish(a)
            | Op::Sigmoid(a)
            | Op::LeakyRelu(a, _)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::SmoothL1(a, _)
            | Op::RowNorm(a)
            | Op::SumAll(a) => vec![*a],
            Op::Gather { src, .. } | Op::ScatterAdd { src, .. } => vec![*src],
            Op::ConcatCols(v) => v.clone(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Error if any node produced a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite {
            None => Ok(()),
            Some((idx, op)) => Err(Error::NonFinite(format!(
                "node {idx} ({op}) produced a non-finite value"
            ))),
        }
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Input leaf that receives a gradient (read it with [`Tape::grad`]).
    pub fn input(&mut self, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId, values: &[Tensor]) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(values[id.0].clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    fn check_same(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// `x · Wᵀ + b` for `x: [n, in]`, `W: [out, in]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs[1] != ws[1] {
            return Err(Error::Shape(format!("linear: x {xs:?} vs W {ws:?}")));
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [1, ws[0]] {
                return Err(Error::Shape(format!("linear: W {ws:?} vs b {bs:?}")));
            }
        }
        let (n, fan_in, out) = (xs[0], xs[1], ws[0]);
        let mut y = match b {
            Some(b) => {
                let mut y = Tensor::zeros(n, out);
                let bv = self.value(b).data();
                for r in 0..n {
                    y.row_mut(r).copy_from_slice(bv);
                }
                y
            }
            None => Tensor::zeros(n, out),
        };
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        // y = x · Wᵀ
        gemm(
            [n, fan_in, out],
            (self.value(x).data(), fan_in as isize, 1),
            (self.value(w).data(), 1, fan_in as isize),
            beta,
            y.data_mut(),
        );
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let mut v = self.value(a).clone();
        for (x, y) in v.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *x -= y;
        }
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let mut v = self.value(a).clone();
        for (x, y) in v.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *x *= y;
        }
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Row-wise scaling: `col: [n, 1]` times `x: [n, c]`.
    pub fn mul_column(&mut self, col: Var, x: Var) -> Result<Var> {
        let (cs, xs) = (self.shape(col), self.shape(x));
        if cs != [xs[0], 1] {
            return Err(Error::Shape(format!("mul_column: {cs:?} vs {xs:?}")));
        }
        let mut v = self.value(x).clone();
        for r in 0..xs[0] {
            let s = self.nodes[col.0].value.data()[r];
            v.row_mut(r).iter_mut().for_each(|e| *e *= s);
        }
        Ok(self.push(v, Op::MulColumn { col, x }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn swish(&mut self, a: Var) -> Var {
        let s = self.value(a).map(sigmoid);
        let mut v = self.value(a).clone();
        for (x, s) in v.data_mut().iter_mut().zip(s.data()) {
            *x *= s;
        }
        let out = self.push(v, Op::Swish(a));
        self.nodes[out.0].aux = Some(s);
        out
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Huber-style smooth L1 with transition width `beta`.
    pub fn smooth_l1(&mut self, a: Var, beta: f64) -> Var {
        let v = self.value(a).map(|x| {
            if x.abs() < beta {
                0.5 * x * x / beta
            } else {
                x.abs() - 0.5 * beta
            }
        });
        self.push(v, Op::SmoothL1(a, beta))
    }

    /// Euclidean norm of each row, `[n, c] -> [n, 1]`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows())
            .map(|r| t.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let v = Tensor::from_vec(t.rows(), 1, data).expect("shape");
        self.push(v, Op::RowNorm(a))
    }

    /// `out[k] = src[index[k]]` over rows.
    pub fn gather(&mut self, src: Var, index: Arc<[usize]>) -> Result<Var> {
        let s = self.value(src);
        if let Some(bad) = index.iter().find(|&&i| i >= s.rows()) {
            return Err(Error::Shape(format!(
                "gather: row {bad} out of range for {:?}",
                s.shape()
            )));
        }
        let mut v = Tensor::zeros(index.len(), s.cols());
        for (k, &i) in index.iter().enumerate() {
            v.row_mut(k).copy_from_slice(s.row(i));
        }
        Ok(self.push(v, Op::Gather { src, index }))
    }

    /// `out[index[k]] += src[k]` into `n_out` rows.
    pub fn scatter_add(&mut self, src: Var, index: Arc<[usize]>, n_out: usize) -> Result<Var> {
        let s = self.value(src);
        if index.len() != s.rows() {
            return Err(Error::Shape(format!(
                "scatter_add: {} indices for {:?}",
                index.len(),
                s.shape()
            )));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= n_out) {
            return Err(Error::Shape(format!("scatter_add: row {bad} >= {n_out}")));
        }
        let mut v = Tensor::zeros(n_out, s.cols());
        for (k, &i) in index.iter().enumerate() {
            for (o, x) in v.row_mut(i).iter_mut().zip(s.row(k)) {
                *o += x;
            }
        }
        Ok(self.push(v, Op::ScatterAdd { src, index }))
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.shape(*p)[0]);
        if parts.iter().any(|p| self.shape(*p)[0] != rows) {
            let shapes: Vec<_> = parts.iter().map(|p| self.shape(*p)).collect();
            return Err(Error::Shape(format!("concat_cols: {shapes:?}")));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut v = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.nodes[p.0].value.row(r);
                v.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Gradient of a leaf created with [`Tape::input`] after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Clears gradients so the tape may be differentiated again.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are returned
    /// indexed like `store`.
    pub fn backward(&mut self, loss: Var, store: &ParameterStore) -> Result<(Gradients, BackwardStats)> {
        let stats = self.backward_inner(loss)?;
        let mut grads = Gradients::zeros_like(store);
        for (&id, &v) in &self.params {
            if let Some(g) = self.grads[v.0].take() {
                grads.set(id, g);
            }
        }
        Ok((grads, stats))
    }

    /// Reverse sweep without collecting parameter gradients; leaf gradients
    /// stay readable through [`Tape::grad`].
    pub fn backward_leaves(&mut self, loss: Var) -> Result<BackwardStats> {
        self.backward_inner(loss)
    }

    fn backward_inner(&mut self, loss: Var) -> Result<BackwardStats> {
        if self.backward_done {
            return Err(Error::Autodiff(
                "backward called twice without zero_grad".into(),
            ));
        }
        if self.shape(loss) != [1, 1] {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got {:?}",
                self.shape(loss)
            )));
        }
        self.check_finite()?;
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            visited += 1;
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            self.propagate(idx, &op, &g);
            // keep leaf gradients readable
            if matches!(op, Op::Leaf | Op::Param) {
                self.grads[idx] = Some(g);
            }
        }
        visited += self.nodes.len() - loss.0 - 1;
        Ok(BackwardStats { visited })
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, a: Var, g: &Tensor, df: impl Fn(f64, f64) -> f64) {
        if !self.wants(a) {
            return;
        }
        let x = &self.nodes[a.0].value;
        let mut out = g.clone();
        for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
            *o = df(xv, *o);
        }
        self.accumulate(a, out);
    }

    fn propagate(&mut self, idx: usize, op: &Op, g: &Tensor) {
        match *op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let [n, fan_in] = self.shape(x);
                let out = self.shape(w)[0];
                if self.wants(x) {
                    // gx = g · W
                    let mut gx = Tensor::zeros(n, fan_in);
                    gemm(
                        [n, out, fan_in],
                        (g.data(), out as isize, 1),
                        (self.nodes[w.0].value.data(), fan_in as isize, 1),
                        0.0,
                        gx.data_mut(),
                    );
                    self.accumulate(x, gx);
                }
                if self.wants(w) {
                    // gw = gᵀ · x
                    let mut gw = Tensor::zeros(out, fan_in);
                    gemm(
                        [out, n, fan_in],
                        (g.data(), 1, out as isize),
                        (self.nodes[x.0].value.data(), fan_in as isize, 1),
                        0.0,
                        gw.data_mut(),
                    );
                    self.accumulate(w, gw);
                }
                if let Some(b) = b {
                    if self.wants(b) {
                        let mut gb = Tensor::zeros(1, out);
                        for r in 0..n {
                            for (s, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *s += v;
                            }
                        }
                        self.accumulate(b, gb);
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let mut ga = g.clone();
                    for (o, y) in ga.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
                        *o *= y;
                    }
                    self.accumulate(a, ga);
                }
                if self.wants(b) {
                    let mut gb = g.clone();
                    for (o, x) in gb.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                        *o *= x;
                    }
                    self.accumulate(b, gb);
                }
            }
            Op::MulColumn { col, x } => {
                let n = g.rows();
                if self.wants(col) {
                    let xv = &self.nodes[x.0].value;
                    let data = (0..n)
                        .map(|r| g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accumulate(col, Tensor::from_vec(n, 1, data).expect("shape"));
                }
                if self.wants(x) {
                    let cv = &self.nodes[col.0].value;
                    let mut gx = g.clone();
                    for r in 0..n {
                        let s = cv.data()[r];
                        gx.row_mut(r).iter_mut().for_each(|e| *e *= s);
                    }
                    self.accumulate(x, gx);
                }
            }
            Op::Scale(a, c) => self.accumulate(a, g.map(|v| v * c)),
            Op::Swish(a) => {
                if self.wants(a) {
                    let node = &self.nodes[idx];
                    let s = node.aux.as_ref().expect("swish keeps its sigmoid");
                    let mut ga = g.clone();
                    for ((o, &sw), &s) in ga.data_mut().iter_mut().zip(node.value.data()).zip(s.data()) {
                        *o *= sw + s * (1.0 - sw);
                    }
                    self.accumulate(a, ga);
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(a) {
                    let mut ga = g.clone();
                    for (o, &s) in ga.data_mut().iter_mut().zip(self.nodes[idx].value.data()) {
                        *o *= s * (1.0 - s);
                    }
                    self.accumulate(a, ga);
                }
            }
            Op::LeakyRelu(a, slope) => {
                self.unary(a, g, |x, go| if x >= 0.0 { go } else { slope * go })
            }
            Op::Abs(a) => self.unary(a, g, |x, go| {
                if x > 0.0 {
                    go
                } else if x < 0.0 {
                    -go
                } else {
                    0.0
                }
            }),
            Op::Square(a) => self.unary(a, g, |x, go| 2.0 * x * go),
            Op::SmoothL1(a, beta) => self.unary(a, g, |x, go| {
                if x.abs() < beta {
                    go * x / beta
                } else {
                    go * x.signum()
                }
            }),
            Op::RowNorm(a) => {
                if self.wants(a) {
                    let xv = &self.nodes[a.0].value;
                    let y = &self.nodes[idx].value;
                    let mut gx = xv.clone();
                    for r in 0..xv.rows() {
                        let nr = y.data()[r];
                        let s = if nr > 0.0 { g.data()[r] / nr } else { 0.0 };
                        gx.row_mut(r).iter_mut().for_each(|e| *e *= s);
                    }
                    self.accumulate(a, gx);
                }
            }
            Op::Gather { src, ref index } => {
                if self.wants(src) {
                    let s = &self.nodes[src.0].value;
                    let mut gs = Tensor::zeros(s.rows(), s.cols());
                    for (k, &i) in index.iter().enumerate() {
                        for (o, v) in gs.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    self.accumulate(src, gs);
                }
            }
            Op::ScatterAdd { src, ref index } => {
                if self.wants(src) {
                    let mut gs = Tensor::zeros(index.len(), g.cols());
                    for (k, &i) in index.iter().enumerate() {
                        gs.row_mut(k).copy_from_slice(g.row(i));
                    }
                    self.accumulate(src, gs);
                }
            }
            Op::ConcatCols(ref parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = self.nodes[p.0].value.cols();
                    if self.wants(p) {
                        let mut gp = Tensor::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        self.accumulate(p, gp);
                    }
                    off += c;
                }
            }
            Op::SumAll(a) => {
                let [r, c] = self.shape(a);
                self.accumulate(a, Tensor::filled(r, c, g.item()));
            }
        }
    }
}
