//! Operation tape for reverse-mode differentiation.
//!
//! A [`Graph`] records every forward operation in creation order, which is
//! already a topological order; [`Graph::backward`] walks it once in reverse.

use std::collections::HashMap;

use super::gemm::{gemm, strides};
use super::params::{ParamId, ParamStore};
use super::value::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Neg,
    Square,
    Sqrt,
    Exp,
    Tanh,
    Silu,
    Relu,
    /// `max(x, c)`
    ClampMin(f64),
}

#[derive(Debug, Clone)]
struct Conv2dSpec {
    input: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    pad: usize,
    /// im2col buffer from the forward pass, `[cin·k·k, hout·wout]`.
    cols: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(UnaryKind, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SumAll(Var),
    MeanAxis(Var, usize),
    Softmax(Var),
    Conv2d(Box<Conv2dSpec>),
    Upsample2x(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::invalid(format!("{op}: {detail}"))
}

/// Numpy-style right-aligned broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat output index, the flat index into an operand of shape
/// `src` broadcast to `out`.
fn broadcast_indices(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = numel(out);
    if src == out {
        return (0..n).collect();
    }
    let rank = out.len();
    let offset = rank - src.len();
    // stride of each output axis in the source (0 where broadcast)
    let mut src_strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        if src[i] != 1 {
            src_strides[i + offset] = acc;
        }
        acc *= src[i];
    }
    let mut idx = vec![0usize; rank];
    let mut res = Vec::with_capacity(n);
    let mut cur = 0usize;
    for _ in 0..n {
        res.push(cur);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            cur += src_strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            cur -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    res
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Vec<f64> {
    let mut cols = vec![0.0; c * k * k * ho * wo];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Vec<f64> {
    let mut x = vec![0.0; c * h * w];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[(ci * h + iy as usize) * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// The graph leaf for a stored parameter, created once per graph.
    /// Frozen parameters become constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, store.is_trainable(id));
        self.params.insert(id, v);
        v
    }

    /// Makes `var` stand in for parameter `id` in this graph, so values that
    /// are not f32-representable can flow through parameter lookups.
    pub fn bind_param(&mut self, id: ParamId, var: Var) -> Result<()> {
        if self.params.contains_key(&id) {
            return Err(Error::Conflict(format!("parameter {id:?} already bound")));
        }
        self.params.insert(id, var);
        Ok(())
    }

    /// Parameter leaves created in this graph.
    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    // ---- elementwise ----

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb)
            .ok_or_else(|| shape_err("binary", format!("cannot broadcast {sa:?} with {sb:?}")))?;
        let ia = broadcast_indices(&sa, &out_shape);
        let ib = broadcast_indices(&sb, &out_shape);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = ia
            .iter()
            .zip(&ib)
            .map(|(&i, &j)| {
                let (x, y) = (da[i], db[j]);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = Tensor::from_fn(self.shape(a).to_vec(), |i| self.value(a).data()[i] * factor);
        let rg = self.requires_grad(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = Tensor::from_fn(self.shape(a).to_vec(), |i| self.value(a).data()[i] + c);
        let rg = self.requires_grad(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let src = self.value(a).data();
        let data: Vec<f64> = src
            .iter()
            .map(|&x| match kind {
                UnaryKind::Neg => -x,
                UnaryKind::Square => x * x,
                UnaryKind::Sqrt => x.sqrt(),
                UnaryKind::Exp => x.exp(),
                UnaryKind::Tanh => x.tanh(),
                UnaryKind::Silu => x * sigmoid(x),
                UnaryKind::Relu => x.max(0.0),
                UnaryKind::ClampMin(c) => x.max(c),
            })
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.requires_grad(a);
        self.push(value, Op::Unary(kind, a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Silu, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Square, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sqrt, a)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("incompatible {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), strides(k, false), self.value(b).data(), strides(n, false), 0.0, &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("expected rank 2, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let data = (0..r * c).map(|i| src[(i % r) * c + i / r]).collect();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over `axis`, keeping it as a size-1 dimension.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("mean_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let base = (o * len + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MeanAxis(a, axis), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let cols = *shape.last().ok_or_else(|| shape_err("softmax", "scalar input".into()))?;
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for (row, dst) in src.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - max).exp();
                sum += *d;
            }
            dst.iter_mut().for_each(|d| *d /= sum);
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(a), rg))
    }

    // ---- spatial ----

    /// 2-D convolution of a `[cin, h, w]` input with `[cout, cin, k, k]`
    /// weights, zero padding, optional `[cout]` bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 3 || sw.len() != 4 || si[0] != sw[1] || sw[2] != sw[3] || stride == 0 {
            return Err(shape_err("conv2d", format!("input {si:?} weight {sw:?} stride {stride}")));
        }
        let (cin, h, w) = (si[0], si[1], si[2]);
        let (cout, k) = (sw[0], sw[2]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(shape_err("conv2d", format!("kernel {k} larger than padded input {h}x{w}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(shape_err("conv2d", format!("bias shape {:?}, expected [{cout}]", self.shape(b))));
            }
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let cols = im2col(self.value(input).data(), cin, h, w, k, stride, pad, ho, wo);
        let kk = cin * k * k;
        let mut out = vec![0.0; cout * ho * wo];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (co, chunk) in out.chunks_exact_mut(ho * wo).enumerate() {
                chunk.fill(bv[co]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(cout, kk, ho * wo, self.value(weight).data(), strides(kk, false), &cols, strides(ho * wo, false), beta, &mut out);
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        let spec = Conv2dSpec { input, weight, bias, stride, pad, cols: if rg { cols } else { Vec::new() } };
        Ok(self.push(Tensor::new(vec![cout, ho, wo], out)?, Op::Conv2d(Box::new(spec)), rg))
    }

    /// Nearest-neighbour 2× upsampling of a `[c, h, w]` tensor.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(shape_err("upsample2x", format!("expected [c,h,w], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let src = self.value(a).data();
        let mut out = vec![0.0; c * 4 * h * w];
        for ci in 0..c {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    out[(ci * 2 * h + y) * 2 * w + x] = src[(ci * h + y / 2) * w + x / 2];
                }
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(vec![c, 2 * h, 2 * w], out)?, Op::Upsample2x(a), rg))
    }

    /// Concatenation along axis 0.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(shape_err("concat", format!("trailing shape {:?} vs {:?}", s, tail)));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Rows `start..start+len` along axis 0.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || start + len > s[0] || len == 0 {
            return Err(shape_err("slice", format!("{start}..{} of {s:?}", start + len)));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(a).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice(a, start), rg))
    }

    // ---- backward ----

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v).to_vec()));
        f(slot.data_mut());
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let out_shape = node.value.shape();
                let ia = broadcast_indices(self.shape(*a), out_shape);
                let ib = broadcast_indices(self.shape(*b), out_shape);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for (k, (&i, &j)) in ia.iter().zip(&ib).enumerate() {
                        ga[i] += gd[k]
                            * match kind {
                                BinaryKind::Add | BinaryKind::Sub => 1.0,
                                BinaryKind::Mul => vb[j],
                                BinaryKind::Div => 1.0 / vb[j],
                            };
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (k, (&i, &j)) in ia.iter().zip(&ib).enumerate() {
                        gb[j] += gd[k]
                            * match kind {
                                BinaryKind::Add => 1.0,
                                BinaryKind::Sub => -1.0,
                                BinaryKind::Mul => va[i],
                                BinaryKind::Div => -va[i] / (vb[j] * vb[j]),
                            };
                    }
                });
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, |ga| {
                ga.iter_mut().zip(gd).for_each(|(x, g)| *x += g * f);
            }),
            Op::AddScalar(a) | Op::Reshape(a) => self.accumulate(grads, *a, |ga| {
                ga.iter_mut().zip(gd).for_each(|(x, g)| *x += g);
            }),
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        let d = match kind {
                            UnaryKind::Neg => -1.0,
                            UnaryKind::Square => 2.0 * x[i],
                            UnaryKind::Sqrt => 0.5 / y[i],
                            UnaryKind::Exp => y[i],
                            UnaryKind::Tanh => 1.0 - y[i] * y[i],
                            UnaryKind::Silu => {
                                let s = sigmoid(x[i]);
                                s * (1.0 + x[i] * (1.0 - s))
                            }
                            UnaryKind::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::ClampMin(c) => {
                                if x[i] > *c {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        ga[i] += gd[i] * d;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                // dA = G·Bᵀ, dB = Aᵀ·G
                self.accumulate(grads, *a, |ga| gemm(m, n, k, gd, strides(n, false), vb, strides(n, true), 1.0, ga));
                self.accumulate(grads, *b, |gb| gemm(k, m, n, va, strides(k, true), gd, strides(n, false), 1.0, gb));
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[0], s[1]);
                self.accumulate(grads, *a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += gd[j * r + i];
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let g0 = gd[0];
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g0));
            }
            Op::MeanAxis(a, axis) => {
                let shape = self.shape(*a);
                let outer: usize = shape[..*axis].iter().product();
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                self.accumulate(grads, *a, |ga| {
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                ga[(o * len + j) * inner + i] += gd[o * inner + i] / len as f64;
                            }
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let cols = *node.value.shape().last().expect("softmax rank >= 1");
                self.accumulate(grads, *a, |ga| {
                    for ((yr, gr), dst) in y.chunks_exact(cols).zip(gd.chunks_exact(cols)).zip(ga.chunks_exact_mut(cols)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for i in 0..cols {
                            dst[i] += yr[i] * (gr[i] - dot);
                        }
                    }
                });
            }
            Op::Conv2d(spec) => {
                let si = self.shape(spec.input);
                let sw = self.shape(spec.weight);
                let (cin, h, w) = (si[0], si[1], si[2]);
                let (cout, k) = (sw[0], sw[2]);
                let so = node.value.shape();
                let (ho, wo) = (so[1], so[2]);
                let kk = cin * k * k;
                let hw = ho * wo;
                if let Some(b) = spec.bias {
                    self.accumulate(grads, b, |gb| {
                        for (co, chunk) in gd.chunks_exact(hw).enumerate() {
                            gb[co] += chunk.iter().sum::<f64>();
                        }
                    });
                }
                // dW = G·colsᵀ
                self.accumulate(grads, spec.weight, |gw| {
                    gemm(cout, hw, kk, gd, strides(hw, false), &spec.cols, strides(hw, true), 1.0, gw)
                });
                if self.nodes[spec.input.0].requires_grad {
                    // dcols = Wᵀ·G, folded back onto the input grid
                    let mut dcols = vec![0.0; kk * hw];
                    let wv = self.value(spec.weight).data();
                    gemm(kk, cout, hw, wv, strides(kk, true), gd, strides(hw, false), 0.0, &mut dcols);
                    let dx = col2im(&dcols, cin, h, w, k, spec.stride, spec.pad, ho, wo);
                    self.accumulate(grads, spec.input, |gi| {
                        gi.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
                    });
                }
            }
            Op::Upsample2x(a) => {
                let s = self.shape(*a);
                let (c, h, w) = (s[0], s[1], s[2]);
                self.accumulate(grads, *a, |ga| {
                    for ci in 0..c {
                        for y in 0..2 * h {
                            for x in 0..2 * w {
                                ga[(ci * h + y / 2) * w + x / 2] += gd[(ci * 2 * h + y) * 2 * w + x];
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, |gp| {
                        gp.iter_mut().zip(&gd[offset..offset + n]).for_each(|(a, b)| *a += b);
                    });
                    offset += n;
                }
            }
            Op::Slice(a, start) => {
                let inner: usize = self.shape(*a)[1..].iter().product();
                let off = start * inner;
                self.accumulate(grads, *a, |ga| {
                    ga[off..off + gd.len()].iter_mut().zip(gd).for_each(|(a, b)| *a += b);
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[3, 4], &[4]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[3, 1, 5], &[4, 1]), Some(vec![3, 4, 5]));
        assert_eq!(broadcast_shape(&[3, 4], &[]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[3, 4], &[3]), None);
        assert_eq!(broadcast_indices(&[1, 2], &[3, 2]), vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(broadcast_indices(&[3, 1], &[3, 2]), vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn identity_matmul_and_sum_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn([3, 3], |i| i as f64 - 4.0));
        let eye = g.constant(Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let y = g.matmul(x, eye).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(grads.get(eye).is_none());
    }

    #[test]
    fn delta_kernel_conv_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([2, 5, 4], |i| (i as f64 * 0.37).sin()));
        let w = g.constant(Tensor::from_fn([2, 2, 3, 3], |i| {
            let (co, ci, ky, kx) = (i / 18, (i / 9) % 2, (i / 3) % 3, i % 3);
            if co == ci && ky == 1 && kx == 1 { 1.0 } else { 0.0 }
        }));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn strided_conv_output_shape() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([3, 24, 24]));
        let w = g.constant(Tensor::zeros([8, 3, 3, 3]));
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[8, 12, 12]);
        let bad = g.constant(Tensor::zeros([8, 4, 3, 3]));
        assert!(g.conv2d(x, bad, None, 1, 1).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([4, 7], |i| (i as f64 * 13.7).sin() * 50.0));
        let y = g.softmax(x).unwrap();
        for r in 0..4 {
            let s: f64 = g.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_are_invalid_argument() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::InvalidArgument(_))));
        let c = g.constant(Tensor::zeros([4]));
        assert!(g.add(a, c).is_err());
        assert!(g.backward(a).is_err());
    }
}
