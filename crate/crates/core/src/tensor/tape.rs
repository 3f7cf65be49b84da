//! Reverse-mode differentiation over a linear record of operations.
//!
//! Nodes are appended in evaluation order, so the record is already a
//! topological order and `backward` is a single reverse sweep.

use std::borrow::Cow;
use std::collections::HashMap;


use super::kernels::{self, LayerNormCache};
use super::{Gradients, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Gelu(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache,
    },
    MaxPoolRows {
        x: Var,
        argmax: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    Mask(Var, Vec<f64>),
    BceWithLogitsMean(Var, Vec<f64>),
    L1Mean(Var, Vec<f64>),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// One forward pass. Parameter values are borrowed from the [`ParamSet`]
/// the tape was created over; everything else is owned.
pub struct Tape<'a> {
    params: Option<&'a ParamSet>,
    param_vars: HashMap<ParamId, Var>,
    nodes: Vec<Node<'a>>,
    check_finite: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            params: None,
            param_vars: HashMap::new(),
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_params(params: &'a ParamSet) -> Self {
        Tape {
            params: Some(params),
            ..Self::new()
        }
    }

    /// Enables or disables the per-operation non-finite check (on by
    /// default in debug builds).
    pub fn finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.check_finite {
            assert!(value.is_finite(), "non-finite value produced by tape op #{}", self.nodes.len());
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a parameter of the set this tape was created over. Repeated
    /// calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let params = self.params.expect("tape was created without a parameter set");
        self.nodes.push(Node {
            value: Cow::Borrowed(params.value(id)),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::MatMulNT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let y = self.value(a).transpose();
        self.push(y, Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| f(*v)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let y = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let y = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let y = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(y, Op::Mul(a, b)))
    }

    /// `x [m x n] + b [n]`, broadcasting the row vector over every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(b).len() != n {
            return Err(Error::shape("add_row", self.shape(x), self.shape(b)));
        }
        let mut y = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..y.rows() {
            for (v, bv) in y.row_mut(r).iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        Ok(self.push(y, Op::AddRow(x, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let y = self.map(a, |v| v * s);
        self.push(y, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.map(a, kernels::sigmoid_value);
        self.push(y, Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let y = self.map(a, kernels::gelu);
        self.push(y, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.map(a, |v| v.max(0.0));
        self.push(y, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let y = kernels::softmax_rows(self.value(a));
        self.push(y, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (y, cache) =
            kernels::layer_norm_with_cache(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            },
        ))
    }

    /// Column-wise max over rows; result is `1 x d`.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let (vals, argmax) = kernels::max_pool_with_argmax(self.value(x))?;
        let d = vals.len();
        let y = Tensor::matrix(1, d, vals)?;
        Ok(self.push(y, Op::MaxPoolRows { x, argmax }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(Error::shape("concat_rows", self.shape(*first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let y = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(y, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(Error::shape("concat_cols", self.shape(*first), self.shape(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let y = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(y, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start > end || end > t.rows() {
            return Err(Error::IndexOutOfRange {
                what: "slice_rows".into(),
                index: end,
                size: t.rows(),
            });
        }
        let c = t.cols();
        let y = Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec())?;
        Ok(self.push(y, Op::SliceRows(x, start)))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start > end || end > t.cols() {
            return Err(Error::IndexOutOfRange {
                what: "slice_cols".into(),
                index: end,
                size: t.cols(),
            });
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let y = Tensor::matrix(t.rows(), end - start, data)?;
        Ok(self.push(y, Op::SliceCols(x, start)))
    }

    /// Selects rows of a table, e.g. embedding lookup. Indices may repeat.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let c = t.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= t.rows() {
                return Err(Error::IndexOutOfRange {
                    what: "gather_rows".into(),
                    index: i,
                    size: t.rows(),
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let y = Tensor::matrix(indices.len(), c, data)?;
        Ok(self.push(y, Op::GatherRows(table, indices.to_vec())))
    }

    /// Column means, `1 x n`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let y = Tensor::matrix(1, c, out).expect("shape");
        self.push(y, Op::MeanRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and
    /// rescales survivors by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut impl rand::Rng) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let y = Tensor::new(t.shape().to_vec(), data).expect("shape");
        self.push(y, Op::Mask(x, mask))
    }

    /// Mean sigmoid cross-entropy of `logits` against constant binary targets.
    pub fn bce_with_logits_mean(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() {
            return Err(Error::shape("bce_with_logits", z.shape(), targets.shape()));
        }
        let n = z.len().max(1) as f64;
        let loss = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(z, y)| kernels::bce_with_logits(*z, *y))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogitsMean(logits, targets.data().to_vec()),
        ))
    }

    /// Mean absolute error of `pred` against constant targets.
    pub fn l1_mean(&mut self, pred: Var, targets: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != targets.len() {
            return Err(Error::shape("l1_mean", p.shape(), targets.shape()));
        }
        let n = p.len().max(1) as f64;
        let loss = p
            .data()
            .iter()
            .zip(targets.data())
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(loss), Op::L1Mean(pred, targets.data().to_vec())))
    }

    /// Reverse sweep from a scalar `loss`. Returns the gradient of every
    /// parameter reached; consuming the tape releases its borrow of the
    /// parameter set so the caller can accumulate the result.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));
        let mut out = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads)?;
            if let Op::Param(id) = node.op {
                out.push((id, g));
            }
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(Gradients { entries: out })
    }

    fn propagate(&self, node: &Node<'_>, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
        let mut acc = |v: Var, delta: Tensor| {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign_scaled(&delta, 1.0),
                slot => {
                    let shape = self.nodes[v.0].value.shape().to_vec();
                    *slot = Some(delta.reshape(&shape).expect("gradient shape"));
                }
            }
        };
        let like = |v: Var, data: Vec<f64>| Tensor::new(val(v).shape().to_vec(), data).expect("shape");
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                acc(*a, kernels::matmul_nt(g, val(*b))?);
                acc(*b, kernels::matmul_tn(val(*a), g)?);
            }
            Op::MatMulNT(a, b) => {
                acc(*a, kernels::matmul(g, val(*b))?);
                acc(*b, kernels::matmul_tn(g, val(*a))?);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, like(*b, g.data().iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, like(*a, g.data().iter().zip(y.data()).map(|(g, y)| g * y).collect()));
                acc(*b, like(*b, g.data().iter().zip(x.data()).map(|(g, x)| g * x).collect()));
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                let mut gb = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (o, v) in gb.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*b, like(*b, gb));
            }
            Op::Scale(a, s) => acc(*a, like(*a, g.data().iter().map(|v| v * s).collect())),
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d = g.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                acc(*a, like(*a, d));
            }
            Op::Gelu(a) => {
                let x = val(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(g, x)| g * kernels::gelu_grad(*x))
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::Relu(a) => {
                let x = val(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = vec![0.0; y.len()];
                let c = y.cols();
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        d[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            } => {
                let gv = val(*gain).data();
                let (m, d) = (node.value.rows(), node.value.cols());
                let mut dx = vec![0.0; m * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..m {
                    let gr = g.row(r);
                    let xh = &cache.xhat[r * d..(r + 1) * d];
                    let mut mean_gy = 0.0;
                    let mut mean_gy_xh = 0.0;
                    for c in 0..d {
                        let gy = gr[c] * gv[c];
                        mean_gy += gy;
                        mean_gy_xh += gy * xh[c];
                        dgain[c] += gr[c] * xh[c];
                        dbias[c] += gr[c];
                    }
                    mean_gy /= d as f64;
                    mean_gy_xh /= d as f64;
                    for c in 0..d {
                        let gy = gr[c] * gv[c];
                        dx[r * d + c] = cache.inv_std[r] * (gy - mean_gy - xh[c] * mean_gy_xh);
                    }
                }
                acc(*x, like(*x, dx));
                acc(*gain, like(*gain, dgain));
                acc(*bias, like(*bias, dbias));
            }
            Op::MaxPoolRows { x, argmax } => {
                let t = val(*x);
                let c = t.cols();
                let mut d = vec![0.0; t.len()];
                for (col, &row) in argmax.iter().enumerate() {
                    d[row * c + col] = g.data()[col];
                }
                acc(*x, like(*x, d));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    acc(*p, like(*p, g.data()[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for p in parts {
                    let pc = val(*p).cols();
                    let mut d = Vec::with_capacity(val(*p).len());
                    for r in 0..g.rows() {
                        d.extend_from_slice(&g.row(r)[col..col + pc]);
                    }
                    acc(*p, like(*p, d));
                    col += pc;
                }
            }
            Op::SliceRows(x, start) => {
                let t = val(*x);
                let c = t.cols();
                let mut d = vec![0.0; t.len()];
                d[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*x, like(*x, d));
            }
            Op::SliceCols(x, start) => {
                let t = val(*x);
                let c = t.cols();
                let w = g.cols();
                let mut d = vec![0.0; t.len()];
                for r in 0..t.rows() {
                    d[r * c + start..r * c + start + w].copy_from_slice(g.row(r));
                }
                acc(*x, like(*x, d));
            }
            Op::GatherRows(table, indices) => {
                let t = val(*table);
                let c = t.cols();
                let mut d = vec![0.0; t.len()];
                for (k, &i) in indices.iter().enumerate() {
                    for (o, v) in d[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*table, like(*table, d));
            }
            Op::MeanRows(x) => {
                let t = val(*x);
                let r = t.rows() as f64;
                let mut d = Vec::with_capacity(t.len());
                for _ in 0..t.rows() {
                    d.extend(g.data().iter().map(|v| v / r));
                }
                acc(*x, like(*x, d));
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                acc(*x, like(*x, vec![s; val(*x).len()]));
            }
            Op::Mask(x, mask) => {
                acc(*x, like(*x, g.data().iter().zip(mask).map(|(g, m)| g * m).collect()));
            }
            Op::BceWithLogitsMean(z, y) => {
                let s = g.data()[0] / y.len().max(1) as f64;
                let d = val(*z)
                    .data()
                    .iter()
                    .zip(y)
                    .map(|(z, y)| s * (kernels::sigmoid_value(*z) - y))
                    .collect();
                acc(*z, like(*z, d));
            }
            Op::L1Mean(p, t) => {
                let s = g.data()[0] / t.len().max(1) as f64;
                let d = val(*p)
                    .data()
                    .iter()
                    .zip(t)
                    .map(|(p, t)| {
                        let diff = p - t;
                        if diff > 0.0 {
                            s
                        } else if diff < 0.0 {
                            -s
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(*p, like(*p, d));
            }
        }
        Ok(())
    }
}
