//! The autodiff tape.
//!
//! A [`Graph`] records every primitive in execution order, so record order
//! is already a topological order and [`Graph::backward`] is a single reverse
//! sweep. Nodes that do not depend on any gradient-requiring leaf are never
//! visited during the sweep.

use super::kernels::{add_assign, axpy, dot, matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{shape_str, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    StackTime(Vec<Var>),
    TimeSlice(Var, usize),
    AddMid(Var, Var),
    WeightedSum(Var, Var),
    Sum(Var),
    Mean(Var),
    NllRows(Var, Vec<usize>, Vec<f64>),
    DotConst(Var, Vec<f64>),
    AddN(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward sweep: one optional gradient buffer per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, "2-D tensor", shape_str(s))),
    }
}

fn dims3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::shape(op, "3-D tensor", shape_str(s))),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, shape_str(a.shape()), shape_str(b.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.value(a))?;
        let (k2, n) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("[{k}, _] right operand"),
                shape_str(self.value(b).shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        same_shape(op_name, self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[m,n] + bias[n]` on every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = dims2("add_row", self.value(a))?;
        if self.value(bias).shape() != [n] {
            return Err(Error::shape("add_row", format!("[{n}] bias"), shape_str(self.value(bias).shape())));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            add_assign(row, b);
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRow(a, bias), rg))
    }

    /// `a[m,n] * c[m,1]`, scaling each row by its own factor.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (m, n) = dims2("mul_col", self.value(a))?;
        if self.value(c).shape() != [m, 1] {
            return Err(Error::shape("mul_col", format!("[{m}, 1]"), shape_str(self.value(c).shape())));
        }
        let cv = self.value(c).data();
        let mut out = self.value(a).data().to_vec();
        for (row, &s) in out.chunks_exact_mut(n).zip(cv) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        let rg = self.rg(&[a, c]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MulCol(a, c), rg))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| scale * x + shift).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor { shape, data }, Op::Affine(a, scale), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "at least one operand", "none"))?;
        let (m, _) = dims2("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2("concat_cols", self.value(p))?;
            if r != m {
                return Err(Error::shape("concat_cols", format!("[{m}, _]"), shape_str(self.value(p).shape())));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![m, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = dims2("slice_cols", self.value(a))?;
        if start >= end || end > n {
            return Err(Error::shape("slice_cols", format!("range within 0..{n}"), format!("{start}..{end}")));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![m, w], out)?, Op::SliceCols(a, start), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor { shape, data }, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    /// Elementwise clamp; the gradient is zero where the input was clipped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2("softmax_rows", self.value(a))?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::SoftmaxRows(a), rg))
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = dims2("gather_rows", self.value(table))?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::IdOutOfRange { id, size: v });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(Tensor::new(vec![ids.len(), d], out)?, Op::GatherRows(table, ids.to_vec()), rg))
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(Error::shape("reshape", format!("{} elements", self.value(a).len()), shape_str(shape)));
        }
        let t = self.value(a).clone().reshaped(shape.to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Stacks `T` tensors of shape `[B,D]` into `[B,T,D]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var> {
        let first = *steps
            .first()
            .ok_or_else(|| Error::shape("stack_time", "at least one step", "none"))?;
        let (b, d) = dims2("stack_time", self.value(first))?;
        for &s in steps {
            if self.value(s).shape() != [b, d] {
                return Err(Error::shape("stack_time", format!("[{b}, {d}]"), shape_str(self.value(s).shape())));
            }
        }
        let t = steps.len();
        let mut out = vec![0.0; b * t * d];
        for (ti, &s) in steps.iter().enumerate() {
            let src = self.value(s).data();
            for bi in 0..b {
                out[(bi * t + ti) * d..(bi * t + ti + 1) * d].copy_from_slice(&src[bi * d..(bi + 1) * d]);
            }
        }
        let rg = self.rg(steps);
        Ok(self.push(Tensor::new(vec![b, t, d], out)?, Op::StackTime(steps.to_vec()), rg))
    }

    /// `x[:, t, :]` of a `[B,T,D]` tensor.
    pub fn time_slice(&mut self, x: Var, t: usize) -> Result<Var> {
        let (b, tt, d) = dims3("time_slice", self.value(x))?;
        if t >= tt {
            return Err(Error::shape("time_slice", format!("t < {tt}"), format!("t = {t}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            out.extend_from_slice(&src[(bi * tt + t) * d..(bi * tt + t + 1) * d]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![b, d], out)?, Op::TimeSlice(x, t), rg))
    }

    /// `x[B,T,A] + y[B,A]`, adding `y[b]` at every time step.
    pub fn add_mid(&mut self, x: Var, y: Var) -> Result<Var> {
        let (b, t, a) = dims3("add_mid", self.value(x))?;
        if self.value(y).shape() != [b, a] {
            return Err(Error::shape("add_mid", format!("[{b}, {a}]"), shape_str(self.value(y).shape())));
        }
        let yv = self.value(y).data();
        let mut out = self.value(x).data().to_vec();
        for bi in 0..b {
            let yr = &yv[bi * a..(bi + 1) * a];
            for ti in 0..t {
                add_assign(&mut out[(bi * t + ti) * a..(bi * t + ti + 1) * a], yr);
            }
        }
        let rg = self.rg(&[x, y]);
        Ok(self.push(Tensor::new(vec![b, t, a], out)?, Op::AddMid(x, y), rg))
    }

    /// `out[b] = Σ_t alpha[b,t] · h[b,t,:]`.
    pub fn weighted_sum(&mut self, alpha: Var, h: Var) -> Result<Var> {
        let (b, t, d) = dims3("weighted_sum", self.value(h))?;
        if self.value(alpha).shape() != [b, t] {
            return Err(Error::shape("weighted_sum", format!("[{b}, {t}]"), shape_str(self.value(alpha).shape())));
        }
        let av = self.value(alpha).data();
        let hv = self.value(h).data();
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for ti in 0..t {
                axpy(av[bi * t + ti], &hv[(bi * t + ti) * d..(bi * t + ti + 1) * d], o);
            }
        }
        let rg = self.rg(&[alpha, h]);
        Ok(self.push(Tensor::new(vec![b, d], out)?, Op::WeightedSum(alpha, h), rg))
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

    /// Per-row negative log-likelihood `-log softmax(logits)[i, targets[i]]`,
    /// shape `[B]`.
    pub fn nll_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = dims2("nll_rows", self.value(logits))?;
        if targets.len() != m {
            return Err(Error::shape("nll_rows", format!("{m} targets"), format!("{} targets", targets.len())));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut out = Vec::with_capacity(m);
        for (row, &t) in probs.chunks_exact_mut(n).zip(targets) {
            if t >= n {
                return Err(Error::IdOutOfRange { id: t, size: n });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            out.push(lse - row[t]);
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::new(vec![m], out)?, Op::NllRows(logits, targets.to_vec(), probs), rg))
    }

    /// Mean cross-entropy of `logits[B,V]` against target ids.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let nll = self.nll_rows(logits, targets)?;
        Ok(self.mean(nll))
    }

    /// `Σ_i a[i] · w[i]` against a constant weight vector.
    pub fn dot_const(&mut self, a: Var, w: &[f64]) -> Result<Var> {
        if self.value(a).len() != w.len() {
            return Err(Error::shape(
                "dot_const",
                format!("{} weights", self.value(a).len()),
                format!("{} weights", w.len()),
            ));
        }
        let s = dot(self.value(a).data(), w);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::DotConst(a, w.to_vec()), rg))
    }

    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("add_n", "at least one operand", "none"))?;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            same_shape("add_n", &out, self.value(p))?;
            add_assign(out.data_mut(), self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::AddN(parts.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", "scalar loss", shape_str(self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop(node, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    matmul_nt_acc(g, bv.data(), m, n, k, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    matmul_tn_acc(av.data(), g, m, k, n, gb);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_assign(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    add_assign(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_assign(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    axpy(-1.0, g, gb);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_assign(ga, g);
                }
                let n = self.value(*bias).len();
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in g.chunks_exact(n) {
                        add_assign(gb, row);
                    }
                }
            }
            Op::MulCol(a, c) => {
                let n = self.value(*a).cols();
                let (av, cv) = (self.value(*a).data(), self.value(*c).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gr, gar), &s) in g.chunks_exact(n).zip(ga.chunks_exact_mut(n)).zip(cv) {
                        axpy(s, gr, gar);
                    }
                }
                if let Some(gc) = self.acc(grads, *c) {
                    for ((gr, ar), x) in g.chunks_exact(n).zip(av.chunks_exact(n)).zip(gc.iter_mut()) {
                        *x += dot(gr, ar);
                    }
                }
            }
            Op::Affine(a, scale) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(*scale, g, ga);
                }
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = self.acc(grads, p) {
                        for i in 0..m {
                            add_assign(&mut gp[i * w..(i + 1) * w], &g[i * total + offset..i * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let n = self.value(*a).cols();
                let w = node.value.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, gr) in g.chunks_exact(w).enumerate() {
                        add_assign(&mut ga[i * n + start..i * n + start + w], gr);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                        *x += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                        *x += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Log(a) => {
                let xv = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(xv) {
                        *x += gi / xi;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let xv = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(xv) {
                        if xi >= *lo && xi <= *hi {
                            *x += gi;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let n = node.value.cols();
                let y = node.value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gr, yr), gar) in g.chunks_exact(n).zip(y.chunks_exact(n)).zip(ga.chunks_exact_mut(n)) {
                        let s = dot(gr, yr);
                        for ((x, &gi), &yi) in gar.iter_mut().zip(gr).zip(yr) {
                            *x += yi * (gi - s);
                        }
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                let d = self.value(*table).cols();
                if let Some(gt) = self.acc(grads, *table) {
                    for (gr, &id) in g.chunks_exact(d).zip(ids) {
                        add_assign(&mut gt[id * d..(id + 1) * d], gr);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_assign(ga, g);
                }
            }
            Op::StackTime(steps) => {
                let [b, t, d] = node.value.shape() else { unreachable!() };
                let (b, t, d) = (*b, *t, *d);
                for (ti, &s) in steps.iter().enumerate() {
                    if let Some(gs) = self.acc(grads, s) {
                        for bi in 0..b {
                            add_assign(&mut gs[bi * d..(bi + 1) * d], &g[(bi * t + ti) * d..(bi * t + ti + 1) * d]);
                        }
                    }
                }
            }
            Op::TimeSlice(x, ti) => {
                let [b, t, d] = self.value(*x).shape() else { unreachable!() };
                let (b, t, d) = (*b, *t, *d);
                if let Some(gx) = self.acc(grads, *x) {
                    for bi in 0..b {
                        add_assign(&mut gx[(bi * t + ti) * d..(bi * t + ti + 1) * d], &g[bi * d..(bi + 1) * d]);
                    }
                }
            }
            Op::AddMid(x, y) => {
                let [b, t, a] = node.value.shape() else { unreachable!() };
                let (b, t, a) = (*b, *t, *a);
                if let Some(gx) = self.acc(grads, *x) {
                    add_assign(gx, g);
                }
                if let Some(gy) = self.acc(grads, *y) {
                    for bi in 0..b {
                        for ti in 0..t {
                            add_assign(&mut gy[bi * a..(bi + 1) * a], &g[(bi * t + ti) * a..(bi * t + ti + 1) * a]);
                        }
                    }
                }
            }
            Op::WeightedSum(alpha, h) => {
                let [b, t, d] = self.value(*h).shape() else { unreachable!() };
                let (b, t, d) = (*b, *t, *d);
                let (av, hv) = (self.value(*alpha).data(), self.value(*h).data());
                if let Some(galpha) = self.acc(grads, *alpha) {
                    for bi in 0..b {
                        let gr = &g[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            galpha[bi * t + ti] += dot(gr, &hv[(bi * t + ti) * d..(bi * t + ti + 1) * d]);
                        }
                    }
                }
                if let Some(gh) = self.acc(grads, *h) {
                    for bi in 0..b {
                        let gr = &g[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            axpy(av[bi * t + ti], gr, &mut gh[(bi * t + ti) * d..(bi * t + ti + 1) * d]);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0] / n);
                }
            }
            Op::NllRows(logits, targets, probs) => {
                let n = self.value(*logits).cols();
                if let Some(gl) = self.acc(grads, *logits) {
                    for (i, (&t, &gi)) in targets.iter().zip(g).enumerate() {
                        let row = &mut gl[i * n..(i + 1) * n];
                        axpy(gi, &probs[i * n..(i + 1) * n], row);
                        row[t] -= gi;
                    }
                }
            }
            Op::DotConst(a, w) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(g[0], w, ga);
                }
            }
            Op::AddN(parts) => {
                for &p in parts {
                    if let Some(gp) = self.acc(grads, p) {
                        add_assign(gp, g);
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    row.iter_mut().for_each(|x| *x /= z);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 5]));
        let y = g.softmax_rows(x).unwrap();
        for &p in g.value(y).data() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_n() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 7]));
        let ce = g.cross_entropy(x, &[0, 3, 6]).unwrap();
        assert!((g.value(ce).item() - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_matmul_is_identity() {
        let mut g = Graph::new();
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let a = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = g.matmul(i, a).unwrap();
        assert_eq!(g.value(y), g.value(a));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[3, _]") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(&[3, 2]));
        let err = g.add(a, c).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let p = g.param(t(&[2, 2], &[0.3, -1.0, 2.0, 5.0]));
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(p).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn grad_of_self_dot_is_twice_input() {
        let mut g = Graph::new();
        let p = g.param(t(&[3], &[0.5, -2.0, 3.0]));
        let sq = g.mul(p, p).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(p).unwrap(), &[1.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let p = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(p).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let p = g.param(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let y = g.mul(p, c).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(p).unwrap(), &[3.0, 4.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn gather_out_of_range_is_an_error() {
        let mut g = Graph::new();
        let table = g.param(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            g.gather_rows(table, &[0, 3]),
            Err(Error::IdOutOfRange { id: 3, size: 3 })
        ));
    }
}
