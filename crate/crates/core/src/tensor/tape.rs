//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles in
//! execution order. [`Tape::backward`] walks the record in exact reverse order
//! and accumulates gradients into leaves created with [`Tape::param`].
//! Leaves created with [`Tape::constant`] (and anything computed only from
//! constants) never receive a gradient, which is also how stop-gradient is
//! expressed: [`Var::detach`] copies a value onto a fresh constant leaf.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::array::{numel, Tensor};
use super::kernels::{self, broadcast_index, broadcast_shape, reduce_to_shape, split_axis};
use crate::error::{domain_err, shape_err, Error, Result};
use crate::scalar::Scalar;

/// Elementwise primitives exposed through [`Var::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Exp,
    Log,
    /// Power with the exponent taken from the scalar second operand.
    Pow,
    Relu,
    Gelu,
    Negate,
}

/// Reductions exposed through [`Var::reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    /// Variance with denominator `n` (population).
    Var,
}

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Sqrt(usize),
    Exp(usize),
    Log(usize),
    Powf(usize, T),
    Relu(usize),
    Gelu(usize),
    AddScalar(usize),
    MulScalar(usize, T),
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Sum(usize, Option<usize>),
    Mean(usize, Option<usize>),
    Var(usize, Option<usize>, usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    IndexSelect(usize, usize, Vec<usize>),
    Concat(Vec<usize>, usize),
    Softmax(usize),
    Cholesky(usize),
    SolveLower(usize, usize),
    Conv(usize, usize),
    MaxPool(usize, Vec<usize>),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) | BatchMatMul(a, b) => {
                vec![*a, *b]
            }
            SolveLower(a, b) | Conv(a, b) => vec![*a, *b],
            Neg(a)
            | Sqrt(a)
            | Exp(a)
            | Log(a)
            | Powf(a, _)
            | Relu(a)
            | Gelu(a)
            | AddScalar(a)
            | MulScalar(a, _)
            | Sum(a, _)
            | Mean(a, _)
            | Var(a, _, _)
            | Reshape(a)
            | Permute(a, _)
            | IndexSelect(a, _, _)
            | Softmax(a)
            | Cholesky(a)
            | MaxPool(a, _) => {
                vec![*a]
            }
            Concat(parts, _) => parts.clone(),
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation record for one forward/backward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Tensor<T>>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded operation and gradient.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.grads.get_mut().clear();
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        self.grads.borrow_mut().push(None);
        Var { tape: self, id }
    }

    fn record(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Accumulated gradient of a leaf, if it received one.
    pub fn grad(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.borrow()[var.id].clone()
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for g in self.grads.borrow_mut().iter_mut() {
            *g = None;
        }
    }

    /// Back-propagates from a one-element `loss`, accumulating into every
    /// trainable leaf it depends on. Repeated calls add up.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return shape_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", root.value.shape()),
            );
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut local: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        local[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let Some(g) = local[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let mut grads = self.grads.borrow_mut();
                match &mut grads[id] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(&g) {
                            *a += *v;
                        }
                    }
                    slot => *slot = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                }
                continue;
            }
            let contributions = backward_rule(&nodes, node, &g)?;
            for (input, grad) in contributions {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut local[input] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&grad) {
                            *a += *v;
                        }
                    }
                    slot => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }
}

fn needs(nodes: &[Node<impl Scalar>], id: usize) -> bool {
    nodes[id].requires_grad
}

fn backward_rule<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T]) -> Result<Vec<(usize, Vec<T>)>> {
    let out = &node.value;
    let val = |i: usize| &nodes[i].value;
    let mut res = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(nodes, *a) {
                res.push((*a, reduce_to_shape(g, out.shape(), val(*a).shape())));
            }
            if needs(nodes, *b) {
                res.push((*b, reduce_to_shape(g, out.shape(), val(*b).shape())));
            }
        }
        Op::Sub(a, b) => {
            if needs(nodes, *a) {
                res.push((*a, reduce_to_shape(g, out.shape(), val(*a).shape())));
            }
            if needs(nodes, *b) {
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                res.push((*b, reduce_to_shape(&neg, out.shape(), val(*b).shape())));
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if needs(nodes, *a) {
                let bb = expand(vb, out.shape());
                let prod: Vec<T> = g.iter().zip(bb.iter()).map(|(&x, &y)| x * y).collect();
                res.push((*a, reduce_to_shape(&prod, out.shape(), va.shape())));
            }
            if needs(nodes, *b) {
                let ab = expand(va, out.shape());
                let prod: Vec<T> = g.iter().zip(ab.iter()).map(|(&x, &y)| x * y).collect();
                res.push((*b, reduce_to_shape(&prod, out.shape(), vb.shape())));
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let bb = expand(vb, out.shape());
            if needs(nodes, *a) {
                let q: Vec<T> = g.iter().zip(bb.iter()).map(|(&x, &y)| x / y).collect();
                res.push((*a, reduce_to_shape(&q, out.shape(), va.shape())));
            }
            if needs(nodes, *b) {
                let q: Vec<T> = g
                    .iter()
                    .zip(bb.iter())
                    .zip(out.data())
                    .map(|((&x, &y), &o)| -x * o / y)
                    .collect();
                res.push((*b, reduce_to_shape(&q, out.shape(), vb.shape())));
            }
        }
        Op::Neg(a) => res.push((*a, g.iter().map(|&v| -v).collect())),
        Op::Sqrt(a) => {
            let half = T::of(0.5);
            res.push((*a, g.iter().zip(out.data()).map(|(&x, &o)| x * half / o).collect()));
        }
        Op::Exp(a) => res.push((*a, g.iter().zip(out.data()).map(|(&x, &o)| x * o).collect())),
        Op::Log(a) => res.push((*a, g.iter().zip(val(*a).data()).map(|(&x, &v)| x / v).collect())),
        Op::Powf(a, c) => {
            let c = *c;
            let cm1 = c - T::one();
            res.push((
                *a,
                g.iter()
                    .zip(val(*a).data())
                    .map(|(&x, &v)| x * c * v.powf(cm1))
                    .collect(),
            ));
        }
        Op::Relu(a) => res.push((
            *a,
            g.iter()
                .zip(val(*a).data())
                .map(|(&x, &v)| if v > T::zero() { x } else { T::zero() })
                .collect(),
        )),
        Op::Gelu(a) => res.push((
            *a,
            g.iter().zip(val(*a).data()).map(|(&x, &v)| x * gelu_grad(v)).collect(),
        )),
        Op::AddScalar(a) => res.push((*a, g.to_vec())),
        Op::MulScalar(a, c) => res.push((*a, g.iter().map(|&v| v * *c).collect())),
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k) = (va.shape()[0], va.shape()[1]);
            let n = vb.shape()[1];
            if needs(nodes, *a) {
                let mut ga = vec![T::zero(); m * k];
                kernels::gemm_nt(m, n, k, g, vb.data(), &mut ga, false);
                res.push((*a, ga));
            }
            if needs(nodes, *b) {
                let mut gb = vec![T::zero(); k * n];
                kernels::gemm_tn(k, m, n, va.data(), g, &mut gb, false);
                res.push((*b, gb));
            }
        }
        Op::BatchMatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (bs, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
            let n = vb.shape()[2];
            if needs(nodes, *a) {
                let mut ga = vec![T::zero(); bs * m * k];
                for i in 0..bs {
                    kernels::gemm_nt(
                        m,
                        n,
                        k,
                        &g[i * m * n..],
                        &vb.data()[i * k * n..],
                        &mut ga[i * m * k..],
                        false,
                    );
                }
                res.push((*a, ga));
            }
            if needs(nodes, *b) {
                let mut gb = vec![T::zero(); bs * k * n];
                for i in 0..bs {
                    kernels::gemm_tn(
                        k,
                        m,
                        n,
                        &va.data()[i * m * k..],
                        &g[i * m * n..],
                        &mut gb[i * k * n..],
                        false,
                    );
                }
                res.push((*b, gb));
            }
        }
        Op::Sum(a, axis) | Op::Mean(a, axis) => {
            let shape = val(*a).shape();
            let is_mean = matches!(node.op, Op::Mean(..));
            let grad = match axis {
                None => {
                    let n = numel(shape);
                    let v = if is_mean { g[0] / T::of(n as f64) } else { g[0] };
                    vec![v; n]
                }
                Some(ax) => {
                    let (outer, len, inner) = split_axis(shape, *ax);
                    let scale = if is_mean {
                        T::one() / T::of(len as f64)
                    } else {
                        T::one()
                    };
                    let mut grad = vec![T::zero(); outer * len * inner];
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                grad[(o * len + l) * inner + i] = g[o * inner + i] * scale;
                            }
                        }
                    }
                    grad
                }
            };
            res.push((*a, grad));
        }
        Op::Var(a, axis, ddof) => {
            let va = val(*a);
            let shape = va.shape();
            let x = va.data();
            let (outer, len, inner) = match axis {
                None => (1, x.len(), 1),
                Some(ax) => split_axis(shape, *ax),
            };
            let denom = T::of((len - ddof) as f64);
            let n = T::of(len as f64);
            let two = T::of(2.0);
            let mut grad = vec![T::zero(); x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let mut mean = T::zero();
                    for l in 0..len {
                        mean += x[(o * len + l) * inner + i];
                    }
                    mean /= n;
                    let go = g[o * inner + i];
                    for l in 0..len {
                        let idx = (o * len + l) * inner + i;
                        grad[idx] = go * two * (x[idx] - mean) / denom;
                    }
                }
            }
            res.push((*a, grad));
        }
        Op::Reshape(a) => res.push((*a, g.to_vec())),
        Op::Permute(a, perm) => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            res.push((*a, permute_data(g, out.shape(), &inverse)));
        }
        Op::IndexSelect(a, axis, indices) => {
            let shape = val(*a).shape();
            let (outer, len, inner) = split_axis(shape, *axis);
            let mut grad = vec![T::zero(); outer * len * inner];
            let m = indices.len();
            for o in 0..outer {
                for (j, &src) in indices.iter().enumerate() {
                    let dst = &mut grad[(o * len + src) * inner..(o * len + src + 1) * inner];
                    let from = &g[(o * m + j) * inner..(o * m + j + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(from) {
                        *d += s;
                    }
                }
            }
            res.push((*a, grad));
        }
        Op::Concat(parts, axis) => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for &p in parts {
                let len = val(p).shape()[*axis];
                if needs(nodes, p) {
                    let mut grad = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        grad.extend_from_slice(&g[start..start + len * inner]);
                    }
                    res.push((p, grad));
                }
                offset += len;
            }
        }
        Op::Softmax(a) => {
            let last = *out.shape().last().expect("softmax on rank >= 1");
            let y = out.data();
            let mut grad = vec![T::zero(); y.len()];
            for r in 0..y.len() / last {
                let ys = &y[r * last..(r + 1) * last];
                let gs = &g[r * last..(r + 1) * last];
                let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                for j in 0..last {
                    grad[r * last + j] = ys[j] * (gs[j] - dot);
                }
            }
            res.push((*a, grad));
        }
        Op::Cholesky(a) => {
            let n = out.shape()[0];
            res.push((*a, cholesky_backward(out.data(), g, n)?));
        }
        Op::SolveLower(l, b) => {
            let vl = val(*l);
            let n = vl.shape()[0];
            let m = out.shape()[1];
            let gb = kernels::solve_lower_transposed(vl.data(), n, g, m)?;
            if needs(nodes, *l) {
                // dL = -tril(gB · Xᵀ)
                let mut gl = vec![T::zero(); n * n];
                kernels::gemm_nt(n, m, n, &gb, out.data(), &mut gl, false);
                for i in 0..n {
                    for j in 0..n {
                        gl[i * n + j] = if j <= i { -gl[i * n + j] } else { T::zero() };
                    }
                }
                res.push((*l, gl));
            }
            if needs(nodes, *b) {
                res.push((*b, gb));
            }
        }
        Op::Conv(x, w) => {
            let (vx, vw) = (val(*x), val(*w));
            let (batch, c_in, width) = (vx.shape()[0], vx.shape()[1], vx.shape()[3]);
            let (c_out, kw) = (vw.shape()[0], vw.shape()[3]);
            let w_out = width - kw + 1;
            let ck = c_in * kw;
            let mut cols = vec![T::zero(); w_out * ck];
            let mut dcols = vec![T::zero(); w_out * ck];
            let mut gx = vec![T::zero(); vx.len()];
            let mut gw = vec![T::zero(); vw.len()];
            for n in 0..batch {
                let xn = &vx.data()[n * c_in * width..(n + 1) * c_in * width];
                let gn = &g[n * c_out * w_out..(n + 1) * c_out * w_out];
                kernels::im2col(xn, c_in, width, kw, &mut cols);
                if needs(nodes, *w) {
                    kernels::gemm_nn(c_out, w_out, ck, gn, &cols, &mut gw, true);
                }
                if needs(nodes, *x) {
                    kernels::gemm_tn(w_out, c_out, ck, gn, vw.data(), &mut dcols, false);
                    kernels::col2im(
                        &dcols,
                        c_in,
                        width,
                        kw,
                        &mut gx[n * c_in * width..(n + 1) * c_in * width],
                    );
                }
            }
            if needs(nodes, *x) {
                res.push((*x, gx));
            }
            if needs(nodes, *w) {
                res.push((*w, gw));
            }
        }
        Op::MaxPool(a, argmax) => {
            let mut grad = vec![T::zero(); val(*a).len()];
            for (&src, &gv) in argmax.iter().zip(g) {
                grad[src] += gv;
            }
            res.push((*a, grad));
        }
    }
    Ok(res)
}

/// Gradient of `A ↦ chol(A)` mapped back onto a symmetric input:
/// `sym(L⁻ᵀ Φ(Lᵀ L̄) L⁻¹)` with `Φ` taking the lower triangle and halving the
/// diagonal.
fn cholesky_backward<T: Scalar>(l: &[T], gl: &[T], n: usize) -> Result<Vec<T>> {
    let mut phi = vec![T::zero(); n * n];
    kernels::gemm_tn(n, n, n, l, gl, &mut phi, false);
    let half = T::of(0.5);
    for i in 0..n {
        for j in 0..n {
            if j > i {
                phi[i * n + j] = T::zero();
            } else if j == i {
                phi[i * n + j] *= half;
            }
        }
    }
    // X = L⁻ᵀ Φ
    let x = kernels::solve_lower_transposed(l, n, &phi, n)?;
    // G = X L⁻¹  ⇔  Gᵀ = L⁻ᵀ Xᵀ
    let mut xt = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            xt[j * n + i] = x[i * n + j];
        }
    }
    let gt = kernels::solve_lower_transposed(l, n, &xt, n)?;
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            // G[i][j] = gt[j][i]
            out[i * n + j] = half * (gt[j * n + i] + gt[i * n + j]);
        }
    }
    Ok(out)
}

fn expand<T: Scalar>(t: &Tensor<T>, out: &[usize]) -> Vec<T> {
    if t.shape() == out {
        return t.data().to_vec();
    }
    broadcast_index(t.shape(), out)
        .into_iter()
        .map(|i| t.data()[i])
        .collect()
}

fn permute_data<T: Scalar>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut counter = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..data.len() {
        out.push(data[flat]);
        for d in (0..rank).rev() {
            counter[d] += 1;
            flat += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            flat -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044715);
    T::of(0.5) * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044715);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::of(3.0) * k * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * dinner
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self)
    }

    /// Same value on a constant leaf: gradient flow stops here.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant((*self.value()).clone())
    }

    fn same_tape(&self, other: &Var<'_, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    /// Dispatches one of the elementwise primitives; binary kinds need `other`.
    pub fn elementwise(&self, op: ElementwiseOp, other: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        use ElementwiseOp::*;
        let need = |name| {
            other.ok_or_else(|| Error::Shape {
                op: name,
                detail: "binary operation needs a second operand".into(),
            })
        };
        match op {
            Add => self.add(need("add")?),
            Sub => self.sub(need("sub")?),
            Mul => self.mul(need("mul")?),
            Div => self.div(need("div")?),
            Pow => {
                let e = need("pow")?.value();
                if e.len() != 1 {
                    return shape_err("pow", "exponent must be a scalar");
                }
                self.powf(e.item())
            }
            Sqrt => self.sqrt(),
            Exp => Ok(self.exp()),
            Log => self.log(),
            Relu => Ok(self.relu()),
            Gelu => Ok(self.gelu()),
            Negate => Ok(self.neg()),
        }
    }

    fn binary(&self, other: Var<'t, T>, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var<'t, T>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let Some(shape) = broadcast_shape(a.shape(), b.shape()) else {
            return shape_err(name, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
        };
        let data: Vec<T> = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ia = broadcast_index(a.shape(), &shape);
            let ib = broadcast_index(b.shape(), &shape);
            ia.iter().zip(&ib).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect()
        };
        Ok(self.tape.record(Tensor::from_parts(shape, data), op))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        if other.value().data().iter().any(|v| *v == T::zero()) {
            return domain_err("div", "divisor contains zero");
        }
        self.binary(other, "div", |x, y| x / y, Op::Div(self.id, other.id))
    }

    fn unary(&self, f: impl Fn(T) -> T, op: Op<T>) -> Var<'t, T> {
        let out = self.value().map(f);
        self.tape.record(out, op)
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.unary(|x| -x, Op::Neg(self.id))
    }

    pub fn sqrt(&self) -> Result<Var<'t, T>> {
        if self.value().data().iter().any(|v| *v < T::zero()) {
            return domain_err("sqrt", "negative input");
        }
        Ok(self.unary(|x| x.sqrt(), Op::Sqrt(self.id)))
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary(|x| x.exp(), Op::Exp(self.id))
    }

    pub fn log(&self) -> Result<Var<'t, T>> {
        if self.value().data().iter().any(|v| *v < T::zero()) {
            return domain_err("log", "negative input");
        }
        Ok(self.unary(|x| x.ln(), Op::Log(self.id)))
    }

    pub fn powf(&self, e: T) -> Result<Var<'t, T>> {
        if e.fract() != T::zero() && self.value().data().iter().any(|v| *v < T::zero()) {
            return domain_err("pow", "negative base with fractional exponent");
        }
        Ok(self.unary(|x| x.powf(e), Op::Powf(self.id, e)))
    }

    pub fn square(&self) -> Var<'t, T> {
        self.unary(|x| x * x, Op::Powf(self.id, T::of(2.0)))
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(|x| if x > T::zero() { x } else { T::zero() }, Op::Relu(self.id))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t, T> {
        self.unary(gelu, Op::Gelu(self.id))
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        self.unary(|x| x + c, Op::AddScalar(self.id))
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        self.unary(|x| x * c, Op::MulScalar(self.id, c))
    }

    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let out = a.matmul(&b)?;
        Ok(self.tape.record(out, Op::MatMul(self.id, other.id)))
    }

    /// `[B×m×k] · [B×k×n] → [B×m×n]`.
    pub fn bmm(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err("bmm", format!("incompatible shapes {sa:?} x {sb:?}"));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        for i in 0..bs {
            kernels::gemm_nn(
                m,
                k,
                n,
                &a.data()[i * m * k..],
                &b.data()[i * k * n..],
                &mut out[i * m * n..],
                false,
            );
        }
        Ok(self.tape.record(
            Tensor::from_parts(vec![bs, m, n], out),
            Op::BatchMatMul(self.id, other.id),
        ))
    }

    /// Reduction over one axis (dropped from the shape) or over everything.
    pub fn reduce(&self, op: ReduceOp, axis: Option<usize>) -> Result<Var<'t, T>> {
        match op {
            ReduceOp::Sum => self.sum(axis),
            ReduceOp::Mean => self.mean(axis),
            ReduceOp::Var => self.var(axis, 0),
        }
    }

    fn reduce_values(&self, axis: Option<usize>, name: &'static str) -> Result<(Vec<usize>, usize, usize, usize)> {
        let shape = self.shape();
        match axis {
            None => Ok((Vec::new(), 1, numel(&shape), 1)),
            Some(ax) if ax < shape.len() => {
                let (outer, len, inner) = split_axis(&shape, ax);
                let mut out_shape = shape.clone();
                out_shape.remove(ax);
                Ok((out_shape, outer, len, inner))
            }
            Some(ax) => shape_err(name, format!("axis {ax} out of range for {shape:?}")),
        }
    }

    pub fn sum(&self, axis: Option<usize>) -> Result<Var<'t, T>> {
        let (shape, outer, len, inner) = self.reduce_values(axis, "sum")?;
        let out = reduce_along(&self.value(), outer, len, inner, |s, _| s);
        Ok(self.tape.record(Tensor::from_parts(shape, out), Op::Sum(self.id, axis)))
    }

    pub fn mean(&self, axis: Option<usize>) -> Result<Var<'t, T>> {
        let (shape, outer, len, inner) = self.reduce_values(axis, "mean")?;
        let out = reduce_along(&self.value(), outer, len, inner, |s, n| s / T::of(n as f64));
        Ok(self
            .tape
            .record(Tensor::from_parts(shape, out), Op::Mean(self.id, axis)))
    }

    /// Variance with denominator `n - ddof`.
    pub fn var(&self, axis: Option<usize>, ddof: usize) -> Result<Var<'t, T>> {
        let (shape, outer, len, inner) = self.reduce_values(axis, "var")?;
        if len <= ddof {
            return domain_err("var", format!("{len} elements with ddof {ddof}"));
        }
        let x = self.value();
        let x = x.data();
        let n = T::of(len as f64);
        let denom = T::of((len - ddof) as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut mean = T::zero();
                for l in 0..len {
                    mean += x[(o * len + l) * inner + i];
                }
                mean /= n;
                let mut ss = T::zero();
                for l in 0..len {
                    let d = x[(o * len + l) * inner + i] - mean;
                    ss += d * d;
                }
                out[o * inner + i] = ss / denom;
            }
        }
        Ok(self
            .tape
            .record(Tensor::from_parts(shape, out), Op::Var(self.id, axis, ddof)))
    }

    /// Mean over `axis` keeping it as a singleton dimension.
    pub fn mean_keepdim(&self, axis: usize) -> Result<Var<'t, T>> {
        let mut shape = self.shape();
        let m = self.mean(Some(axis))?;
        shape[axis] = 1;
        m.reshape(shape)
    }

    /// Population variance over `axis` keeping it as a singleton dimension.
    pub fn var_keepdim(&self, axis: usize) -> Result<Var<'t, T>> {
        let mut shape = self.shape();
        let v = self.var(Some(axis), 0)?;
        shape[axis] = 1;
        v.reshape(shape)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let out = self.value().reshape(shape)?;
        Ok(self.tape.record(out, Op::Reshape(self.id)))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return shape_err("permute", format!("invalid permutation {perm:?} for {shape:?}"));
        }
        let data = permute_data(self.value().data(), &shape, perm);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        Ok(self
            .tape
            .record(Tensor::from_parts(out_shape, data), Op::Permute(self.id, perm.to_vec())))
    }

    /// Matrix transpose.
    pub fn t(&self) -> Result<Var<'t, T>> {
        if self.shape().len() != 2 {
            return shape_err("transpose", "expected a matrix");
        }
        self.permute(&[1, 0])
    }

    /// Gathers entries along `axis` (repeats allowed); backward scatter-adds.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return shape_err("index_select", format!("axis {axis} out of range"));
        }
        if indices.is_empty() {
            return shape_err("index_select", "empty index list");
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[axis]) {
            return shape_err("index_select", format!("index {bad} out of range {}", shape[axis]));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &src in indices {
                data.extend_from_slice(&x.data()[(o * len + src) * inner..(o * len + src + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = indices.len();
        Ok(self.tape.record(
            Tensor::from_parts(out_shape, data),
            Op::IndexSelect(self.id, axis, indices.to_vec()),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let Some(&last) = x.shape().last() else {
            return shape_err("softmax", "scalar input");
        };
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(last) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(self
            .tape
            .record(Tensor::from_parts(x.shape().to_vec(), out), Op::Softmax(self.id)))
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix.
    pub fn cholesky(&self) -> Result<Var<'t, T>> {
        let a = self.value();
        let n = kernels::check_square("cholesky", a.shape())?;
        let l = kernels::cholesky(a.data(), n)?;
        Ok(self
            .tape
            .record(Tensor::from_parts(vec![n, n], l), Op::Cholesky(self.id)))
    }

    /// Solves `self · x = b` with `self` lower-triangular.
    pub fn solve_lower(&self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&b);
        let l = self.value();
        let n = kernels::check_square("triangular_solve", l.shape())?;
        let rhs = b.value();
        let (rows, m) = rhs.dims2()?;
        if rows != n {
            return shape_err(
                "triangular_solve",
                format!("left side is {n}x{n}, right side has {rows} rows"),
            );
        }
        let x = kernels::solve_lower(l.data(), n, rhs.data(), m)?;
        Ok(self
            .tape
            .record(Tensor::from_parts(vec![n, m], x), Op::SolveLower(self.id, b.id)))
    }

    /// Valid 1×kw cross-correlation: `self` is `[b, C_in, 1, W]`, `weight` is
    /// `[C_out, C_in, 1, kw]`.
    pub fn conv1xw(&self, weight: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&weight);
        let (x, w) = (self.value(), weight.value());
        let (sx, sw) = (x.shape(), w.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[2] != 1 || sw[2] != 1 || sx[1] != sw[1] {
            return shape_err("conv2d_1xw", format!("input {sx:?} incompatible with kernel {sw:?}"));
        }
        let (batch, c_in, width) = (sx[0], sx[1], sx[3]);
        let (c_out, kw) = (sw[0], sw[3]);
        if width < kw {
            return shape_err("conv2d_1xw", format!("input width {width} < kernel width {kw}"));
        }
        let w_out = width - kw + 1;
        let ck = c_in * kw;
        let mut cols = vec![T::zero(); w_out * ck];
        let mut out = vec![T::zero(); batch * c_out * w_out];
        for n in 0..batch {
            kernels::im2col(
                &x.data()[n * c_in * width..(n + 1) * c_in * width],
                c_in,
                width,
                kw,
                &mut cols,
            );
            kernels::gemm_nt(c_out, ck, w_out, w.data(), &cols, &mut out[n * c_out * w_out..], false);
        }
        Ok(self.tape.record(
            Tensor::from_parts(vec![batch, c_out, 1, w_out], out),
            Op::Conv(self.id, weight.id),
        ))
    }

    /// Non-overlapping max over width windows of size `k` on `[b, C, 1, W]`;
    /// trailing columns that do not fill a window are dropped.
    pub fn maxpool1xk(&self, k: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 4 || s[2] != 1 || k == 0 {
            return shape_err("maxpool_1xk", format!("bad input {s:?} for window {k}"));
        }
        let width = s[3];
        if width < k {
            return shape_err("maxpool_1xk", format!("input width {width} < window {k}"));
        }
        let w_out = width / k;
        let rows = s[0] * s[1];
        let mut out = Vec::with_capacity(rows * w_out);
        let mut argmax = Vec::with_capacity(rows * w_out);
        for r in 0..rows {
            for j in 0..w_out {
                let start = r * width + j * k;
                let mut best = start;
                for idx in start + 1..start + k {
                    if x.data()[idx] > x.data()[best] {
                        best = idx;
                    }
                }
                out.push(x.data()[best]);
                argmax.push(best);
            }
        }
        Ok(self.tape.record(
            Tensor::from_parts(vec![s[0], s[1], 1, w_out], out),
            Op::MaxPool(self.id, argmax),
        ))
    }
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat<'t, T: Scalar>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let Some(first) = parts.first() else {
        return shape_err("concat", "nothing to concatenate");
    };
    let tape = first.tape;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return shape_err("concat", format!("axis {axis} out of range"));
    }
    let mut total = 0;
    for v in &values {
        let s = v.shape();
        if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
            return shape_err("concat", format!("{s:?} does not match {base:?}"));
        }
        total += s[axis];
    }
    let (outer, _, inner) = split_axis(&base, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in &values {
            let len = v.shape()[axis];
            data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    Ok(tape.record(
        Tensor::from_parts(shape, data),
        Op::Concat(parts.iter().map(|p| p.id).collect(), axis),
    ))
}

fn reduce_along<T: Scalar>(
    x: &Tensor<T>,
    outer: usize,
    len: usize,
    inner: usize,
    finish: impl Fn(T, usize) -> T,
) -> Vec<T> {
    let data = x.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let row = &data[(o * len + l) * inner..(o * len + l + 1) * inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    for v in &mut out {
        *v = finish(*v, len);
    }
    out
}
