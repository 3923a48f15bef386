//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its output value and enough saved state
//! to compute the vector-Jacobian product. `backward` walks the tape once in
//! reverse; afterwards the tape is consumed.

use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::{shape_err, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Unary {
    Relu,
    Silu,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Square,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a + b`, `b` broadcast over the leading dims of `a`.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    RowScale(Var, Vec<f64>),
    SumRows(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        rstd: Vec<f64>,
    },
    Atan2(Var, Var),
    AngleDiff(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-use computation record. Build the forward pass with the op
/// methods, then call [`Tape::backward`] once.
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Option<Vec<Option<Vec<f64>>>>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    a == b || (b.len() <= a.len() && a[a.len() - b.len()..] == *b)
}

fn matmul_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: strides describe in-bounds views of `a` ([m,k]), `b` ([k,n]) and
    // the contiguous row-major `c` ([m,n]); `c` does not alias the inputs.
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
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

pub(crate) fn wrap_pi(a: f64) -> f64 {
    crate::geometry::wrap_angle(a)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: None,
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a parameter leaf, reusing the same node if already recorded.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.variable(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Copy of `v` cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcast_ok(sa, sb) {
            return Err(shape_err(name, sa, sb));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let nb = bv.len();
        let out: Vec<f64> = av.iter().enumerate().map(|(i, &x)| f(x, bv[i % nb])).collect();
        let shape = sa.to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise `atan2(y, x)`; shapes must match exactly.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var, TensorError> {
        if self.shape(y) != self.shape(x) {
            return Err(shape_err("atan2", self.shape(y), self.shape(x)));
        }
        self.binary(y, x, "atan2", f64::atan2, Op::Atan2(y, x))
    }

    /// Elementwise `a - b` wrapped onto `(-π, π]`.
    pub fn angle_diff(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("angle_diff", self.shape(a), self.shape(b)));
        }
        self.binary(a, b, "angle_diff", |x, y| wrap_pi(x - y), Op::AngleDiff(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a);
        let out = Tensor::new(value.shape().to_vec(), value.data().iter().map(|x| x * s).collect()).unwrap();
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a);
        let out = Tensor::new(value.shape().to_vec(), value.data().iter().map(|x| x + s).collect()).unwrap();
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Relu => |x| x.max(0.0),
            Unary::Silu => |x| x * sigmoid(x),
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Square => |x| x * x,
            Unary::Tanh => f64::tanh,
        };
        let value = self.value(a);
        let out = Tensor::new(value.shape().to_vec(), value.data().iter().map(|&x| f(x)).collect()).unwrap();
        let rg = self.rg(a);
        self.push(out, Op::Unary(a, kind), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).data();
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Concatenates `[n, c_i]` matrices along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![rows, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks `[n_i, c]` matrices along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = self.shape(parts[0])[1];
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(shape_err("concat_rows", self.shape(parts[0]), s));
            }
            rows += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end` of an `[n, c]` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 || start > end || end > s[1] {
            return Err(shape_err("slice_cols", s, &[start, end]));
        }
        let (rows, cols) = (s[0], s[1]);
        let v = self.value(a).data();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&v[r * cols + start..r * cols + end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![rows, end - start], out)?, Op::SliceCols(a, start), rg))
    }

    /// `out[i] = a[index[i]]` over rows.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("gather_rows", s, &[]));
        }
        let (rows, cols) = (s[0], s[1]);
        let v = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { index: i, len: rows });
            }
            out.extend_from_slice(&v[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![index.len(), cols], out)?,
            Op::GatherRows(a, index.to_vec()),
            rg,
        ))
    }

    /// `out[index[i]] += a[i]` into an `[rows, c]` zero matrix.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], rows: usize) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != index.len() {
            return Err(shape_err("scatter_add_rows", s, &[index.len()]));
        }
        let cols = s[1];
        let v = self.value(a).data();
        let mut out = vec![0.0; rows * cols];
        for (i, &dst) in index.iter().enumerate() {
            if dst >= rows {
                return Err(TensorError::IndexOutOfRange { index: dst, len: rows });
            }
            for c in 0..cols {
                out[dst * cols + c] += v[i * cols + c];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::ScatterAddRows(a, index.to_vec()),
            rg,
        ))
    }

    /// Multiplies row `r` by the constant `weights[r]`.
    pub fn row_scale(&mut self, a: Var, weights: &[f64]) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != weights.len() {
            return Err(shape_err("row_scale", s, &[weights.len()]));
        }
        let cols = s[1];
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * weights[i / cols.max(1)])
            .collect();
        let shape = s.to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::RowScale(a, weights.to_vec()), rg))
    }

    /// Column sums of an `[n, c]` matrix, shape `[c]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("sum_rows", s, &[]));
        }
        let cols = s[1];
        let mut out = vec![0.0; cols];
        for (i, x) in self.value(a).data().iter().enumerate() {
            out[i % cols] += x;
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![cols], out)?, Op::SumRows(a), rg))
    }

    /// Softmax over the trailing dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let cols = value.cols();
        let mut out = value.data().to_vec();
        for row in out.chunks_mut(cols.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        let out = Tensor::new(value.shape().to_vec(), out).unwrap();
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Normalizes each trailing-dimension row to zero mean, unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let value = self.value(a);
        let cols = value.cols().max(1);
        let mut out = value.data().to_vec();
        let mut rstd = Vec::with_capacity(out.len() / cols);
        for row in out.chunks_mut(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * r);
            rstd.push(r);
        }
        let out = Tensor::new(value.shape().to_vec(), out).unwrap();
        let rg = self.rg(a);
        self.push(out, Op::LayerNorm { x: a, rstd }, rg)
    }

    /// Back-propagates from the scalar `loss`. A tape supports exactly one call.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.backprop_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// Parameter gradients after backward, aligned with `store`.
    pub fn param_grads(&self, store: &ParamStore) -> Gradients {
        let mut out = Gradients::zeros_like(store);
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                out.grads[id.0] = Some(g.to_vec());
            }
        }
        out
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let send = |v: Var, contrib: Vec<f64>, grads: &mut [Option<Vec<f64>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    matmul_into(m, n, k, g, (n as isize, 1), val(*b), (1, n as isize), &mut ga);
                    send(*a, ga, grads);
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * n];
                    matmul_into(k, m, n, val(*a), (1, k as isize), g, (n as isize, 1), &mut gb);
                    send(*b, gb, grads);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                send(*a, g.to_vec(), grads);
                if self.rg(*b) {
                    let nb = val(*b).len();
                    let mut gb = vec![0.0; nb];
                    for (i, x) in g.iter().enumerate() {
                        gb[i % nb] += sign * x;
                    }
                    send(*b, gb, grads);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let nb = bv.len();
                if self.rg(*a) {
                    send(*a, g.iter().enumerate().map(|(i, x)| x * bv[i % nb]).collect(), grads);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; nb];
                    for (i, x) in g.iter().enumerate() {
                        gb[i % nb] += x * av[i];
                    }
                    send(*b, gb, grads);
                }
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|x| x * s).collect(), grads),
            Op::AddScalar(a) | Op::Reshape(a) => send(*a, g.to_vec(), grads),
            Op::Unary(a, kind) => {
                let x = val(*a);
                let y = node.value.data();
                let local: Vec<f64> = match kind {
                    Unary::Relu => x.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect(),
                    Unary::Silu => x
                        .iter()
                        .map(|&x| {
                            let s = sigmoid(x);
                            s + x * s * (1.0 - s)
                        })
                        .collect(),
                    Unary::Sigmoid => y.iter().map(|&s| s * (1.0 - s)).collect(),
                    Unary::Softplus => x.iter().map(|&x| sigmoid(x)).collect(),
                    Unary::Exp => y.to_vec(),
                    Unary::Log => x.iter().map(|&x| 1.0 / x).collect(),
                    Unary::Square => x.iter().map(|&x| 2.0 * x).collect(),
                    Unary::Tanh => y.iter().map(|&t| 1.0 - t * t).collect(),
                };
                send(*a, g.iter().zip(&local).map(|(g, l)| g * l).collect(), grads);
            }
            Op::Sum(a) => send(*a, vec![g[0]; val(*a).len()], grads),
            Op::Mean(a) => {
                let n = val(*a).len();
                send(*a, vec![g[0] / n.max(1) as f64; n], grads)
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        send(p, gp, grads);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    send(p, g[offset..offset + len].to_vec(), grads);
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = (self.shape(*a)[0], self.shape(*a)[1]);
                let w = node.value.cols();
                let mut ga = vec![0.0; rows * cols];
                for r in 0..rows {
                    ga[r * cols + start..r * cols + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                send(*a, ga, grads);
            }
            Op::GatherRows(a, index) => {
                let cols = node.value.cols();
                let mut ga = vec![0.0; val(*a).len()];
                for (i, &src) in index.iter().enumerate() {
                    for c in 0..cols {
                        ga[src * cols + c] += g[i * cols + c];
                    }
                }
                send(*a, ga, grads);
            }
            Op::ScatterAddRows(a, index) => {
                let cols = node.value.cols();
                let mut ga = Vec::with_capacity(index.len() * cols);
                for &dst in index {
                    ga.extend_from_slice(&g[dst * cols..(dst + 1) * cols]);
                }
                send(*a, ga, grads);
            }
            Op::RowScale(a, weights) => {
                let cols = node.value.cols().max(1);
                send(
                    *a,
                    g.iter().enumerate().map(|(i, x)| x * weights[i / cols]).collect(),
                    grads,
                );
            }
            Op::SumRows(a) => {
                let cols = node.value.numel();
                send(*a, (0..val(*a).len()).map(|i| g[i % cols]).collect(), grads);
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let cols = node.value.cols().max(1);
                let mut ga = vec![0.0; y.len()];
                for (r, (yr, gr)) in y.chunks(cols).zip(g.chunks(cols)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        ga[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                send(*a, ga, grads);
            }
            Op::LayerNorm { x, rstd } => {
                let y = node.value.data();
                let cols = node.value.cols().max(1);
                let n = cols as f64;
                let mut ga = vec![0.0; y.len()];
                for (r, (yr, gr)) in y.chunks(cols).zip(g.chunks(cols)).enumerate() {
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for c in 0..cols {
                        ga[r * cols + c] = rstd[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
                send(*x, ga, grads);
            }
            Op::Atan2(y, x) => {
                let (yv, xv) = (val(*y), val(*x));
                let denom: Vec<f64> = yv.iter().zip(xv).map(|(a, b)| a * a + b * b).collect();
                if self.rg(*y) {
                    send(*y, (0..g.len()).map(|i| g[i] * xv[i] / denom[i]).collect(), grads);
                }
                if self.rg(*x) {
                    send(*x, (0..g.len()).map(|i| -g[i] * yv[i] / denom[i]).collect(), grads);
                }
            }
            Op::AngleDiff(a, b) => {
                send(*a, g.to_vec(), grads);
                send(*b, g.iter().map(|x| -x).collect(), grads);
            }
        }
    }
}
