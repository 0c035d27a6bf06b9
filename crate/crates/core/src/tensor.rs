//! Dense `f64` tensors and a reverse-mode autodiff tape.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! Parameters enter the tape by reference ([`Tape::param`]) so binding a
//! model costs nothing; [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients for every node that requires them.
//!
//! Matrix operations work on row-major 2-D tensors `[rows, cols]`. Vectors
//! are `[n]` and scalars have the empty shape.

use std::borrow::Cow;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from rows of equal length.
    pub fn matrix(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            shape: shape.to_vec(),
            data: (0..shape.iter().product()).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// `c (+)= op(a) · op(b)` for row-major buffers, where `op(a)` is `[m, k]`
/// and `op(b)` is `[k, n]`. A transposed operand is stored as its transpose.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], accumulate: bool) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every access made through the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a node on a [`Tape`].
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
    MatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax { x: Var, tau: f64 },
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    Gather { table: Var, idx: Vec<Option<usize>> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    MaskedFill { x: Var, mask: Vec<bool> },
    Log { x: Var, floor: f64 },
    Sum(Var),
    Mean(Var),
    PickCols { x: Var, idx: Vec<usize> },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Vars created after
    /// that point become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf borrowed from outside the tape.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An owned trainable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `[m, k] · [n, k]ᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape.len() != 2 || bv.shape.len() != 2 {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k) = (av.shape[0], av.shape[1]);
        let (kb, n) = if trans_b {
            (bv.shape[1], bv.shape[0])
        } else {
            (bv.shape[0], bv.shape[1])
        };
        if k != kb {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &av.data, false, &bv.data, trans_b, &mut out, false);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                left: xv.shape.clone(),
                right: vec![],
            });
        }
        let (r, c) = (xv.shape[0], xv.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv.data[i * c + j];
            }
        }
        Ok(self.push(Tensor { shape: vec![c, r], data: out }, Op::Transpose(x), &[x]))
    }

    /// Elementwise sum of equal shapes, or a matrix plus a row vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape == bv.shape {
            let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
            return Ok(self.push(Tensor { shape: av.shape.clone(), data }, Op::Add(a, b), &[a, b]));
        }
        if av.shape.len() == 2 && bv.shape.len() == 1 && av.shape[1] == bv.shape[0] {
            let c = bv.shape[0];
            let data = av
                .data
                .iter()
                .enumerate()
                .map(|(i, x)| x + bv.data[i % c])
                .collect();
            return Ok(self.push(Tensor { shape: av.shape.clone(), data }, Op::AddRow(a, b), &[a, b]));
        }
        Err(shape_err("add", av, bv))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(shape_err("mul", av, bv));
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        Ok(self.push(Tensor { shape: av.shape.clone(), data }, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data.iter().map(|v| v * s).collect();
        self.push(Tensor { shape: xv.shape.clone(), data }, Op::Scale(x, s), &[x])
    }

    /// Row-wise `softmax(x / tau)` with max subtraction.
    pub fn softmax(&mut self, x: Var, tau: f64) -> Var {
        assert!(tau > 0.0, "softmax temperature must be positive");
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = vec![0.0; xv.numel()];
        for (src, dst) in xv.data.chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(src, tau, dst);
        }
        self.push(Tensor { shape: xv.shape.clone(), data: out }, Op::Softmax { x, tau }, &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = vec![0.0; xv.numel()];
        for (src, dst) in xv.data.chunks(c).zip(out.chunks_mut(c)) {
            let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + src.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        }
        self.push(Tensor { shape: xv.shape.clone(), data: out }, Op::LogSoftmax(x), &[x])
    }

    /// Normalizes each row, then applies `gain` and `bias` (both `[cols]`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = xv.cols();
        if gv.shape != [c] || bv.shape != [c] {
            return Err(shape_err("layer_norm", xv, gv));
        }
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = Vec::with_capacity(xv.rows());
        let mut out = vec![0.0; xv.numel()];
        for (r, row) in xv.data.chunks(c).enumerate() {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data[j] + bv.data[j];
            }
        }
        let shape = xv.shape.clone();
        Ok(self.push(
            Tensor { shape, data: out },
            Op::LayerNorm { x, gain, bias, xhat, rstd },
            &[x, gain, bias],
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data.iter().map(|&v| gelu(v)).collect();
        self.push(Tensor { shape: xv.shape.clone(), data }, Op::Gelu(x), &[x])
    }

    /// Row lookup; `None` yields a zero row.
    pub fn gather_rows(&mut self, table: Var, idx: &[Option<usize>]) -> Result<Var> {
        let tv = self.value(table);
        let c = tv.cols();
        let rows = tv.rows();
        let mut out = vec![0.0; idx.len() * c];
        for (i, ix) in idx.iter().enumerate() {
            if let Some(r) = *ix {
                if r >= rows || tv.shape.len() != 2 {
                    return Err(Error::ShapeMismatch {
                        op: "gather_rows",
                        left: tv.shape.clone(),
                        right: vec![r],
                    });
                }
                out[i * c..(i + 1) * c].copy_from_slice(&tv.data[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(
            Tensor { shape: vec![idx.len(), c], data: out },
            Op::Gather { table, idx: idx.to_vec() },
            &[table],
        ))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let idx: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
        self.gather_rows(table, &idx)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            if pv.shape.len() != 2 || pv.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), pv));
            }
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&pv.data[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(
            Tensor { shape: vec![rows, total], data: out },
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.shape.len() != 2 || pv.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), pv));
            }
            out.extend_from_slice(&pv.data);
        }
        let rows = out.len() / cols.max(1);
        Ok(self.push(
            Tensor { shape: vec![rows, cols], data: out },
            Op::ConcatRows(parts.to_vec()),
            parts,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if xv.shape.len() != 2 || start > end || end > c {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: xv.shape.clone(),
                right: vec![start, end],
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(xv.rows() * w);
        for row in xv.data.chunks(c) {
            out.extend_from_slice(&row[start..end]);
        }
        let shape = vec![xv.rows(), w];
        Ok(self.push(Tensor { shape, data: out }, Op::SliceCols { x, start }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if xv.shape.len() != 2 || start > end || end > xv.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: xv.shape.clone(),
                right: vec![start, end],
            });
        }
        let data = xv.data[start * c..end * c].to_vec();
        Ok(self.push(
            Tensor { shape: vec![end - start, c], data },
            Op::SliceRows { x, start },
            &[x],
        ))
    }

    /// Replaces entries where `mask` is true with `value` (typically −∞).
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::ShapeMismatch {
                op: "masked_fill",
                left: xv.shape.clone(),
                right: vec![mask.len()],
            });
        }
        let data = xv
            .data
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        Ok(self.push(
            Tensor { shape: xv.shape.clone(), data },
            Op::MaskedFill { x, mask: mask.to_vec() },
            &[x],
        ))
    }

    /// `ln(max(x, floor))`.
    pub fn log(&mut self, x: Var, floor: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data.iter().map(|&v| v.max(floor).ln()).collect();
        self.push(Tensor { shape: xv.shape.clone(), data }, Op::Log { x, floor }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data.iter().sum::<f64>() / xv.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// `out[i] = x[i, idx[i]]`.
    pub fn pick_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if xv.rows() != idx.len() || idx.iter().any(|&j| j >= c) {
            return Err(Error::ShapeMismatch {
                op: "pick_cols",
                left: xv.shape.clone(),
                right: vec![idx.len()],
            });
        }
        let data = idx.iter().enumerate().map(|(i, &j)| xv.data[i * c + j]).collect();
        Ok(self.push(
            Tensor { shape: vec![idx.len()], data },
            Op::PickCols { x, idx: idx.to_vec() },
            &[x],
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients are kept for leaf
    /// nodes only; repeated uses of a node sum their contributions.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::LossNotScalar(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|data| Tensor { shape: n.value.shape.clone(), data }))
            .collect();
        Ok(Gradients { grads })
    }

    fn accum<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn backprop_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape[0], av.shape[1]);
                let n = out.shape[1];
                if let Some(ga) = self.accum(grads, *a) {
                    // dA = dC · op(B)ᵀ
                    gemm(m, n, k, g, false, &bv.data, !trans_b, ga, true);
                }
                if let Some(gb) = self.accum(grads, *b) {
                    if *trans_b {
                        // B is [n, k]: dB = dCᵀ · A
                        gemm(n, m, k, g, true, &av.data, false, gb, true);
                    } else {
                        gemm(k, m, n, &av.data, true, g, false, gb, true);
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape[1], out.shape[0]);
                if let Some(gx) = self.accum(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.accum(grads, v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.accum(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.accum(grads, *b) {
                    let c = gb.len();
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data.clone(), self.value(*b).data.clone());
                if let Some(ga) = self.accum(grads, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(&bv) {
                        *d += gi * y;
                    }
                }
                if let Some(gb) = self.accum(grads, *b) {
                    for ((d, gi), x) in gb.iter_mut().zip(g).zip(&av) {
                        *d += gi * x;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = self.accum(grads, *x) {
                    for (d, gi) in gx.iter_mut().zip(g) {
                        *d += gi * s;
                    }
                }
            }
            Op::Softmax { x, tau } => {
                let c = out.cols();
                if let Some(gx) = self.accum(grads, *x) {
                    for ((y, gy), d) in out.data.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[j] += y[j] * (gy[j] - dot) / tau;
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let c = out.cols();
                if let Some(gx) = self.accum(grads, *x) {
                    for ((y, gy), d) in out.data.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let total: f64 = gy.iter().sum();
                        for j in 0..c {
                            d[j] += gy[j] - y[j].exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let c = out.cols();
                let gain_v = self.value(*gain).data.clone();
                if let Some(gg) = self.accum(grads, *gain) {
                    for (h, gy) in xhat.chunks(c).zip(g.chunks(c)) {
                        for j in 0..c {
                            gg[j] += gy[j] * h[j];
                        }
                    }
                }
                if let Some(gb) = self.accum(grads, *bias) {
                    for gy in g.chunks(c) {
                        add_into(gb, gy);
                    }
                }
                if let Some(gx) = self.accum(grads, *x) {
                    let mut dh = vec![0.0; c];
                    for (r, (h, gy)) in xhat.chunks(c).zip(g.chunks(c)).enumerate() {
                        for j in 0..c {
                            dh[j] = gy[j] * gain_v[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / c as f64;
                        let mean_dhh = dh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[r * c + j] += rstd[r] * (dh[j] - mean_dh - h[j] * mean_dhh);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data.clone();
                if let Some(gx) = self.accum(grads, *x) {
                    for ((d, gi), v) in gx.iter_mut().zip(g).zip(&xv) {
                        *d += gi * gelu_grad(*v);
                    }
                }
            }
            Op::Gather { table, idx } => {
                let c = out.cols();
                if let Some(gt) = self.accum(grads, *table) {
                    for (i, ix) in idx.iter().enumerate() {
                        if let Some(r) = *ix {
                            add_into(&mut gt[r * c..(r + 1) * c], &g[i * c..(i + 1) * c]);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = self.accum(grads, p) {
                        for r in 0..rows {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(gp) = self.accum(grads, p) {
                        add_into(gp, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let w = out.cols();
                if let Some(gx) = self.accum(grads, *x) {
                    for (r, gy) in g.chunks(w.max(1)).enumerate() {
                        add_into(&mut gx[r * c + start..r * c + start + w], gy);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let c = out.cols();
                if let Some(gx) = self.accum(grads, *x) {
                    add_into(&mut gx[start * c..start * c + g.len()], g);
                }
            }
            Op::MaskedFill { x, mask } => {
                if let Some(gx) = self.accum(grads, *x) {
                    for ((d, gi), m) in gx.iter_mut().zip(g).zip(mask) {
                        if !m {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Log { x, floor } => {
                let xv = self.value(*x).data.clone();
                if let Some(gx) = self.accum(grads, *x) {
                    for ((d, gi), v) in gx.iter_mut().zip(g).zip(&xv) {
                        if *v > *floor {
                            *d += gi / v;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.accum(grads, *x) {
                    for d in gx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.accum(grads, *x) {
                    let s = g[0] / gx.len().max(1) as f64;
                    for d in gx.iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::PickCols { x, idx } => {
                let c = self.value(*x).cols();
                if let Some(gx) = self.accum(grads, *x) {
                    for (i, &j) in idx.iter().enumerate() {
                        gx[i * c + j] += g[i];
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn softmax_row(src: &[f64], tau: f64, dst: &mut [f64]) {
    let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, s) in dst.iter_mut().zip(src) {
        *d = ((s - max) / tau).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, max relative error, coordinates checked)`.
    pub per_tensor: Vec<(usize, f64, usize)>,
}

/// Compares analytic gradients against central differences
/// `(f(p+eps) − f(p−eps)) / 2eps` on a random subsample of at least
/// `samples_per_tensor` coordinates per tensor (all of them for smaller
/// tensors). Relative error uses `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F, R>(
    mut f: F,
    params: &mut [Tensor],
    analytic: &[Tensor],
    eps: f64,
    samples_per_tensor: usize,
    rng: &mut R,
) -> GradCheckReport
where
    F: FnMut(&[Tensor]) -> f64,
    R: Rng + ?Sized,
{
    assert!(eps > 0.0);
    assert_eq!(params.len(), analytic.len());
    let mut per_tensor = Vec::with_capacity(params.len());
    let mut overall: f64 = 0.0;
    for t in 0..params.len() {
        let n = params[t].numel();
        let coords: Vec<usize> = if n <= samples_per_tensor {
            (0..n).collect()
        } else {
            rand::seq::index::sample(rng, n, samples_per_tensor).into_vec()
        };
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let orig = params[t].data[i];
            params[t].data[i] = orig + eps;
            let up = f(params);
            params[t].data[i] = orig - eps;
            let down = f(params);
            params[t].data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let exact = analytic[t].data[i];
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((exact - numeric).abs() / denom);
        }
        overall = overall.max(worst);
        per_tensor.push((t, worst, coords.len()));
    }
    GradCheckReport {
        max_rel_error: overall,
        per_tensor,
    }
}
