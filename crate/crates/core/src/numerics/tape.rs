//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation is evaluated eagerly when it is recorded. [`Tape::backward`]
//! walks the record in reverse and returns one gradient per node. A tape is
//! owned by a single forward/backward pass and is not shared across threads.

use std::rc::Rc;

use super::matrix::{gemm_nn_acc, gemm_nt_acc, gemm_tn_acc, Matrix};
use super::{AttentionMask, ROPE_BASE};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix, inv_std: Vec<f64> },
    Rope { x: Var, positions: Vec<usize>, head_dim: usize },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MaskedSoftmax(Var),
    Gather { table: Var, ids: Vec<Option<usize>> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Matrix, count: usize },
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<&'static str>,
}

/// Gradients of a scalar output with respect to the leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn rope_angle(position: usize, pair: usize, head_dim: usize) -> f64 {
    position as f64 * ROPE_BASE.powf(-2.0 * pair as f64 / head_dim as f64)
}

/// Rotates each `head_dim`-wide block of every row. `sign = -1` applies the inverse rotation.
pub(crate) fn rope_apply(x: &Matrix, positions: &[usize], head_dim: usize, sign: f64) -> Matrix {
    assert_eq!(x.rows(), positions.len(), "one position per row");
    assert!(head_dim % 2 == 0 && x.cols() % head_dim == 0);
    let half = head_dim / 2;
    let mut out = x.clone();
    for (r, &pos) in positions.iter().enumerate() {
        let src = x.row(r);
        let dst = out.row_mut(r);
        for i in 0..half {
            let (sin, cos) = (sign * rope_angle(pos, i, head_dim)).sin_cos();
            for h in (0..src.len()).step_by(head_dim) {
                let a = src[h + i];
                let b = src[h + i + half];
                dst[h + i] = a * cos - b * sin;
                dst[h + i + half] = a * sin + b * cos;
            }
        }
    }
    out
}

/// Row-wise softmax where blocked entries are exactly zero and the maximum is
/// taken over visible entries only.
pub(crate) fn masked_softmax_rows(x: &Matrix, mask: Option<&AttentionMask>) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let src = x.row(r);
        let vis = |k: usize| mask.map_or(true, |m| m.is_visible(r, k));
        let mut max = f64::NEG_INFINITY;
        for (k, &v) in src.iter().enumerate() {
            if vis(k) && v > max {
                max = v;
            }
        }
        let dst = out.row_mut(r);
        let mut sum = 0.0;
        for (k, &v) in src.iter().enumerate() {
            if vis(k) {
                let e = (v - max).exp();
                dst[k] = e;
                sum += e;
            }
        }
        for v in dst.iter_mut() {
            *v /= sum;
        }
    }
    out
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

    /// Name of the first operation that produced a non-finite value, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        self.non_finite
    }

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name);
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant). Gradients are reported for every leaf.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(v, Op::MatMulNt(a, b), "matmul_nt")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b), "add")
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let rv = self.value(row);
        assert_eq!(rv.rows(), 1, "add_row expects a row vector");
        assert_eq!(rv.cols(), self.value(a).cols(), "add_row width mismatch");
        let bias = rv.row(0).to_vec();
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row), "add_row")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let v = Matrix::from_vec(va.rows(), va.cols(), data);
        self.push(v, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scaled(s);
        self.push(v, Op::Scale(a, s), "scale")
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| gelu(x)).collect();
        let v = Matrix::from_vec(va.rows(), va.cols(), data);
        self.push(v, Op::Gelu(a), "gelu")
    }

    /// Row-wise layer normalization with `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        assert_eq!(self.value(gain).shape(), (1, cols), "layer_norm gain shape");
        assert_eq!(self.value(bias).shape(), (1, cols), "layer_norm bias shape");
        let g = self.value(gain).row(0).to_vec();
        let b = self.value(bias).row(0).to_vec();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, "layer_norm")
    }

    /// Rotary position embedding applied per `head_dim` block, one position per row.
    pub fn rope(&mut self, x: Var, positions: &[usize], head_dim: usize) -> Var {
        let v = rope_apply(self.value(x), positions, head_dim, 1.0);
        self.push(v, Op::Rope { x, positions: positions.to_vec(), head_dim }, "rope")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice_cols(start, len);
        self.push(v, Op::SliceCols { x, start }, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&mats);
        self.push(v, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_rows(&mats);
        self.push(v, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Row-wise softmax with blocked entries forced to exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&Rc<AttentionMask>>) -> Var {
        if let Some(m) = mask {
            assert_eq!(m.shape(), self.value(x).shape(), "mask shape mismatch");
        }
        let v = masked_softmax_rows(self.value(x), mask.map(|m| m.as_ref()));
        self.push(v, Op::MaskedSoftmax(x), "masked_softmax")
    }

    /// Row lookup in `table`; `None` yields an all-zero row.
    pub fn gather(&mut self, table: Var, ids: &[Option<usize>]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols());
        for (r, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                assert!(id < t.rows(), "gather id {id} out of range {}", t.rows());
                out.row_mut(r).copy_from_slice(t.row(id));
            }
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() }, "gather")
    }

    /// Mean negative log-likelihood over rows whose target is `Some`. Returns a `1 × 1` value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per logit row");
        let probs = masked_softmax_rows(lv, None);
        let mut total = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = lv.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[t];
                count += 1;
            }
        }
        assert!(count > 0, "cross_entropy with every target ignored");
        let v = Matrix::from_vec(1, 1, vec![total / count as f64]);
        self.push(v, Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }, "cross_entropy")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(x), "sum")
    }

    /// Backpropagates from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward expects a scalar output");
        let n = output.0 + 1;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        fn slot<'a>(grads: &'a mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &'a mut Matrix {
            grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
        }

        for idx in (0..n).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(gy);
                continue;
            }
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    gemm_nt_acc(&gy, vb, slot(&mut grads, *a, va.shape()));
                    gemm_tn_acc(va, &gy, slot(&mut grads, *b, vb.shape()));
                }
                Op::MatMulNt(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    gemm_nn_acc(&gy, vb, slot(&mut grads, *a, va.shape()));
                    gemm_tn_acc(&gy, va, slot(&mut grads, *b, vb.shape()));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, gy.clone());
                    acc(&mut grads, *a, gy);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, gy.cols());
                    for r in 0..gy.rows() {
                        for (s, g) in gr.data_mut().iter_mut().zip(gy.row(r)) {
                            *s += g;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, gy);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = gy.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                    let gb = gy.data().iter().zip(va.data()).map(|(g, x)| g * x).collect();
                    acc(&mut grads, *a, Matrix::from_vec(gy.rows(), gy.cols(), ga));
                    acc(&mut grads, *b, Matrix::from_vec(gy.rows(), gy.cols(), gb));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, gy.scaled(*s)),
                Op::Gelu(a) => {
                    let va = self.value(*a);
                    let data = gy.data().iter().zip(va.data()).map(|(g, &x)| g * gelu_grad(x)).collect();
                    acc(&mut grads, *a, Matrix::from_vec(gy.rows(), gy.cols(), data));
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let (rows, cols) = gy.shape();
                    let g = self.value(*gain).row(0);
                    let mut ggain = Matrix::zeros(1, cols);
                    let mut gbias = Matrix::zeros(1, cols);
                    let mut gx = Matrix::zeros(rows, cols);
                    let nf = cols as f64;
                    for r in 0..rows {
                        let dy = gy.row(r);
                        let h = xhat.row(r);
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for c in 0..cols {
                            ggain.data_mut()[c] += dy[c] * h[c];
                            gbias.data_mut()[c] += dy[c];
                            let d = dy[c] * g[c];
                            sum_d += d;
                            sum_dh += d * h[c];
                        }
                        let inv = inv_std[r];
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let d = dy[c] * g[c];
                            out[c] = inv / nf * (nf * d - sum_d - h[c] * sum_dh);
                        }
                    }
                    acc(&mut grads, *gain, ggain);
                    acc(&mut grads, *bias, gbias);
                    acc(&mut grads, *x, gx);
                }
                Op::Rope { x, positions, head_dim } => {
                    acc(&mut grads, *x, rope_apply(&gy, positions, *head_dim, -1.0));
                }
                Op::SliceCols { x, start } => {
                    let shape = self.value(*x).shape();
                    let target = slot(&mut grads, *x, shape);
                    for r in 0..gy.rows() {
                        let dst = &mut target.row_mut(r)[*start..*start + gy.cols()];
                        for (d, g) in dst.iter_mut().zip(gy.row(r)) {
                            *d += g;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        acc(&mut grads, *p, gy.slice_cols(off, w));
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).rows();
                        acc(&mut grads, *p, gy.slice_rows(off, h));
                        off += h;
                    }
                }
                Op::MaskedSoftmax(x) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dr = gy.row(r);
                        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for (o, (yv, dv)) in gx.row_mut(r).iter_mut().zip(yr.iter().zip(dr)) {
                            *o = yv * (dv - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Gather { table, ids } => {
                    let shape = self.value(*table).shape();
                    let target = slot(&mut grads, *table, shape);
                    for (r, id) in ids.iter().enumerate() {
                        if let Some(id) = *id {
                            for (d, g) in target.row_mut(id).iter_mut().zip(gy.row(r)) {
                                *d += g;
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs, count } => {
                    let scale = gy.get(0, 0) / *count as f64;
                    let mut gl = Matrix::zeros(probs.rows(), probs.cols());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let dst = gl.row_mut(r);
                            for (d, p) in dst.iter_mut().zip(probs.row(r)) {
                                *d = p * scale;
                            }
                            dst[t] -= scale;
                        }
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    acc(&mut grads, *x, Matrix::filled(r, c, gy.get(0, 0)));
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Gradients { grads, shapes }
    }
}
