//! Operation tape and reverse-mode gradient accumulation.

use std::sync::Arc;

use super::{Tensor, TensorError};

// ── recorded operations ──

/// One operand of a recorded operation: the producing node (if the operand is
/// tracked) plus a shared copy of the forward value for the backward rules that
/// need it.
#[derive(Clone)]
struct Src {
    node: Option<usize>,
    data: Arc<Vec<f64>>,
    shape: Vec<usize>,
}

impl Src {
    fn of(t: &Tensor) -> Self {
        Src {
            node: t.node,
            data: Arc::clone(&t.data),
            shape: t.shape.clone(),
        }
    }
}

enum Op {
    Leaf,
    Add(Src, Src),
    Sub(Src, Src),
    Mul(Src, Src),
    Neg(Src),
    Scale(Src, f64),
    Tanh(Src),
    Relu(Src),
    Sigmoid(Src),
    Log(Src),
    Abs(Src),
    Matmul(Src, Src),
    Softmax(Src),
    Conv2d { input: Src, kernels: Src, stride: usize },
    Pad2d { input: Src, pad: usize },
    Upsample2x(Src),
    Concat0 { parts: Vec<Src>, chunk: usize },
    Reshape(Src),
    Sum(Src),
    Index(Src, usize),
    Smul { s: Src, t: Src },
    BiasCh { x: Src, b: Src },
    Clamp { x: Src, lo: f64, hi: f64 },
}

struct Node {
    op: Op,
    /// Forward output, shared with the tensor handed back to the caller.
    out: Arc<Vec<f64>>,
}

/// Records primitive operations during a forward pass and differentiates the
/// resulting graph in reverse. A tape is append-only; node ids are indices in
/// creation order, so iterating ids downward visits the graph in reverse
/// topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`, as a tensor shaped like `t`.
    /// Returns zeros if no gradient flowed to `t`; fails if `t` was never
    /// tracked on the tape this came from.
    pub fn wrt(&self, t: &Tensor) -> Result<Tensor, TensorError> {
        let id = t.node.ok_or(TensorError::NotTracked { op: "wrt" })?;
        let data = match &self.grads[id] {
            Some(g) => g.clone(),
            None => vec![0.0; t.numel()],
        };
        Tensor::new(t.shape.clone(), data)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, out: Vec<f64>) -> Tensor {
        let out = Arc::new(out);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            out: Arc::clone(&out),
        });
        Tensor {
            shape,
            data: out,
            requires_grad: false,
            node: Some(id),
        }
    }

    /// Emits the result of an op: recorded when any input is tracked,
    /// otherwise passed through as an untracked constant.
    fn emit(&mut self, tracked: bool, op: Op, shape: Vec<usize>, out: Vec<f64>) -> Tensor {
        if tracked {
            self.push(op, shape, out)
        } else {
            Tensor {
                shape,
                data: Arc::new(out),
                requires_grad: false,
                node: None,
            }
        }
    }

    /// Registers `t` as a differentiable leaf and returns the tracked handle.
    /// Gradients only accumulate for tensors that went through `var`.
    pub fn var(&mut self, t: &Tensor) -> Tensor {
        let out = Arc::clone(&t.data);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            out: Arc::clone(&out),
        });
        Tensor {
            shape: t.shape.clone(),
            data: out,
            requires_grad: true,
            node: Some(id),
        }
    }

    // ── elementwise binary ──

    fn zip(
        &mut self,
        op_name: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(Src, Src) -> Op,
    ) -> Result<Tensor, TensorError> {
        if a.shape != b.shape {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let out: Vec<f64> = a.data.iter().zip(b.data.iter()).map(|(&x, &y)| f(x, y)).collect();
        let tracked = a.node.is_some() || b.node.is_some();
        Ok(self.emit(tracked, make(Src::of(a), Src::of(b)), a.shape.clone(), out))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul)
    }

    // ── elementwise unary ──

    fn map(
        &mut self,
        t: &Tensor,
        f: impl Fn(f64) -> f64,
        make: impl FnOnce(Src) -> Op,
    ) -> Tensor {
        let out: Vec<f64> = t.data.iter().map(|&x| f(x)).collect();
        self.emit(t.node.is_some(), make(Src::of(t)), t.shape.clone(), out)
    }

    pub fn neg(&mut self, t: &Tensor) -> Tensor {
        self.map(t, |x| -x, Op::Neg)
    }

    pub fn scale(&mut self, t: &Tensor, c: f64) -> Tensor {
        self.map(t, |x| c * x, |s| Op::Scale(s, c))
    }

    pub fn tanh(&mut self, t: &Tensor) -> Tensor {
        self.map(t, f64::tanh, Op::Tanh)
    }

    pub fn relu(&mut self, t: &Tensor) -> Tensor {
        self.map(t, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn sigmoid(&mut self, t: &Tensor) -> Tensor {
        self.map(t, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid)
    }

    /// Natural log; every element must be strictly positive.
    pub fn log(&mut self, t: &Tensor) -> Result<Tensor, TensorError> {
        if let Some(idx) = t.data.iter().position(|&x| x <= 0.0 || x.is_nan()) {
            return Err(TensorError::Domain {
                op: "log",
                msg: format!("element {idx} is {} (must be > 0)", t.data[idx]),
            });
        }
        Ok(self.map(t, f64::ln, Op::Log))
    }

    pub fn abs(&mut self, t: &Tensor) -> Tensor {
        self.map(t, f64::abs, Op::Abs)
    }

    // ── matmul ──

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        };
        if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
            return Err(mismatch());
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let out = matmul_raw(&a.data, &b.data, m, k, n);
        let tracked = a.node.is_some() || b.node.is_some();
        Ok(self.emit(tracked, Op::Matmul(Src::of(a), Src::of(b)), vec![m, n], out))
    }

    /// `[m, k] x [k] -> [m]`, a reshape-matmul-reshape composition.
    pub fn matvec(&mut self, w: &Tensor, x: &Tensor) -> Result<Tensor, TensorError> {
        if w.shape.len() != 2 || x.shape.len() != 1 || w.shape[1] != x.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                lhs: w.shape.clone(),
                rhs: x.shape.clone(),
            });
        }
        let col = self.reshape(x, vec![x.shape[0], 1])?;
        let prod = self.matmul(w, &col)?;
        self.reshape(&prod, vec![w.shape[0]])
    }

    /// Inner product of two equal-length vectors, producing shape `[1]`.
    pub fn dot(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        if a.shape.len() != 1 || a.shape != b.shape {
            return Err(TensorError::ShapeMismatch {
                op: "dot",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let row = self.reshape(a, vec![1, a.shape[0]])?;
        let col = self.reshape(b, vec![b.shape[0], 1])?;
        let prod = self.matmul(&row, &col)?;
        self.reshape(&prod, vec![1])
    }

    // ── softmax ──

    /// Numerically stable softmax over a rank-1 tensor. Rejects non-finite
    /// inputs rather than letting NaN propagate silently.
    pub fn softmax(&mut self, logits: &Tensor) -> Result<Tensor, TensorError> {
        if logits.shape.len() != 1 {
            return Err(TensorError::InvalidShape {
                shape: logits.shape.clone(),
                reason: "softmax expects a rank-1 tensor".into(),
            });
        }
        if let Some(idx) = logits.data.iter().position(|x| !x.is_finite()) {
            return Err(TensorError::Numeric {
                op: "softmax",
                msg: format!("element {idx} is {}", logits.data[idx]),
            });
        }
        let max = logits.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.data.iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        Ok(self.emit(
            logits.node.is_some(),
            Op::Softmax(Src::of(logits)),
            logits.shape.clone(),
            out,
        ))
    }

    // ── convolution and spatial ops ──

    /// Valid cross-correlation of `input [C, H, W]` with `kernels [F, C, kh, kw]`
    /// at the given stride, producing `[F, H', W']`.
    pub fn conv2d(
        &mut self,
        input: &Tensor,
        kernels: &Tensor,
        stride: usize,
    ) -> Result<Tensor, TensorError> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape.clone(),
            rhs: kernels.shape.clone(),
        };
        if input.shape.len() != 3 || kernels.shape.len() != 4 {
            return Err(mismatch());
        }
        let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
        let (f, kc, kh, kw) = (
            kernels.shape[0],
            kernels.shape[1],
            kernels.shape[2],
            kernels.shape[3],
        );
        if kc != c || kh > h || kw > w {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(TensorError::InvalidShape {
                shape: vec![stride],
                reason: "conv2d stride must be >= 1".into(),
            });
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let mut out = vec![0.0; f * oh * ow];
        for of in 0..f {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for u in 0..kh {
                            let in_row = &input.data
                                [ic * h * w + (oi * stride + u) * w + oj * stride..];
                            let k_row = &kernels.data
                                [of * c * kh * kw + ic * kh * kw + u * kw..];
                            for v in 0..kw {
                                acc += in_row[v] * k_row[v];
                            }
                        }
                    }
                    out[of * oh * ow + oi * ow + oj] = acc;
                }
            }
        }
        let tracked = input.node.is_some() || kernels.node.is_some();
        Ok(self.emit(
            tracked,
            Op::Conv2d {
                input: Src::of(input),
                kernels: Src::of(kernels),
                stride,
            },
            vec![f, oh, ow],
            out,
        ))
    }

    /// Zero-pads `[C, H, W]` by `pad` on each spatial side.
    pub fn pad2d(&mut self, input: &Tensor, pad: usize) -> Result<Tensor, TensorError> {
        if input.shape.len() != 3 {
            return Err(TensorError::InvalidShape {
                shape: input.shape.clone(),
                reason: "pad2d expects [C, H, W]".into(),
            });
        }
        let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let mut out = vec![0.0; c * oh * ow];
        for ic in 0..c {
            for i in 0..h {
                let src = &input.data[ic * h * w + i * w..ic * h * w + i * w + w];
                let dst = ic * oh * ow + (i + pad) * ow + pad;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
        Ok(self.emit(
            input.node.is_some(),
            Op::Pad2d {
                input: Src::of(input),
                pad,
            },
            vec![c, oh, ow],
            out,
        ))
    }

    /// Nearest-neighbour 2x upsampling of `[C, H, W]` to `[C, 2H, 2W]`.
    pub fn upsample2x(&mut self, input: &Tensor) -> Result<Tensor, TensorError> {
        if input.shape.len() != 3 {
            return Err(TensorError::InvalidShape {
                shape: input.shape.clone(),
                reason: "upsample2x expects [C, H, W]".into(),
            });
        }
        let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * oh * ow];
        for ic in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    out[ic * oh * ow + i * ow + j] = input.data[ic * h * w + (i / 2) * w + j / 2];
                }
            }
        }
        Ok(self.emit(
            input.node.is_some(),
            Op::Upsample2x(Src::of(input)),
            vec![c, oh, ow],
            out,
        ))
    }

    /// Concatenates tensors along axis 0. All trailing dimensions must agree.
    pub fn concat0(&mut self, parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidShape {
            shape: vec![],
            reason: "concat0 needs at least one input".into(),
        })?;
        let trailing: usize = first.shape[1..].iter().product();
        let mut lead = 0;
        for p in parts {
            if p.shape.len() != first.shape.len() || p.shape[1..] != first.shape[1..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat0",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            lead += p.shape[0];
        }
        let mut out = Vec::with_capacity(lead * trailing);
        for p in parts {
            out.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        let tracked = parts.iter().any(|p| p.node.is_some());
        Ok(self.emit(
            tracked,
            Op::Concat0 {
                parts: parts.iter().map(|p| Src::of(p)).collect(),
                chunk: trailing,
            },
            shape,
            out,
        ))
    }

    // ── shape and reduction ──

    /// Reinterprets the buffer under a new shape with the same element count.
    /// Shares storage; the gradient passes through unchanged.
    pub fn reshape(&mut self, t: &Tensor, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) || numel != t.numel() {
            return Err(TensorError::InvalidShape {
                shape,
                reason: format!("cannot reshape {:?} ({} elements)", t.shape, t.numel()),
            });
        }
        if t.node.is_none() {
            return Ok(Tensor {
                shape,
                data: Arc::clone(&t.data),
                requires_grad: false,
                node: None,
            });
        }
        let out = t.data.as_ref().clone();
        Ok(self.push(Op::Reshape(Src::of(t)), shape, out))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, t: &Tensor) -> Tensor {
        let total: f64 = t.data.iter().sum();
        self.emit(t.node.is_some(), Op::Sum(Src::of(t)), vec![1], vec![total])
    }

    /// Arithmetic mean of all elements, shape `[1]`.
    pub fn mean(&mut self, t: &Tensor) -> Tensor {
        let s = self.sum(t);
        self.scale(&s, 1.0 / t.numel() as f64)
    }

    /// Extracts element `i` of a rank-1 tensor as shape `[1]`.
    pub fn index(&mut self, t: &Tensor, i: usize) -> Result<Tensor, TensorError> {
        if t.shape.len() != 1 || i >= t.shape[0] {
            return Err(TensorError::InvalidShape {
                shape: t.shape.clone(),
                reason: format!("index {i} out of range for rank-1 tensor"),
            });
        }
        let v = t.data[i];
        Ok(self.emit(t.node.is_some(), Op::Index(Src::of(t), i), vec![1], vec![v]))
    }

    /// Multiplies every element of `t` by the scalar tensor `s` (shape `[1]`).
    pub fn smul(&mut self, s: &Tensor, t: &Tensor) -> Result<Tensor, TensorError> {
        if !s.is_scalar() {
            return Err(TensorError::NonScalar {
                op: "smul",
                shape: s.shape.clone(),
            });
        }
        let c = s.data[0];
        let out: Vec<f64> = t.data.iter().map(|&x| c * x).collect();
        let tracked = s.node.is_some() || t.node.is_some();
        Ok(self.emit(
            tracked,
            Op::Smul {
                s: Src::of(s),
                t: Src::of(t),
            },
            t.shape.clone(),
            out,
        ))
    }

    /// Adds bias `b [C]` to every spatial position of `x [C, H, W]`.
    pub fn bias_ch(&mut self, x: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        if x.shape.len() != 3 || b.shape.len() != 1 || b.shape[0] != x.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "bias_ch",
                lhs: x.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let hw = x.shape[1] * x.shape[2];
        let mut out = x.data.as_ref().clone();
        for (c, &bias) in b.data.iter().enumerate() {
            for v in &mut out[c * hw..(c + 1) * hw] {
                *v += bias;
            }
        }
        let tracked = x.node.is_some() || b.node.is_some();
        Ok(self.emit(
            tracked,
            Op::BiasCh {
                x: Src::of(x),
                b: Src::of(b),
            },
            x.shape.clone(),
            out,
        ))
    }

    /// Clamps every element into `[lo, hi]`. The gradient passes through
    /// unclamped elements and is zero where the bound was applied.
    pub fn clamp(&mut self, x: &Tensor, lo: f64, hi: f64) -> Result<Tensor, TensorError> {
        if !(lo <= hi) {
            return Err(TensorError::Domain {
                op: "clamp",
                msg: format!("invalid bounds [{lo}, {hi}]"),
            });
        }
        let out: Vec<f64> = x.data.iter().map(|&v| v.clamp(lo, hi)).collect();
        Ok(self.emit(
            x.node.is_some(),
            Op::Clamp {
                x: Src::of(x),
                lo,
                hi,
            },
            x.shape.clone(),
            out,
        ))
    }

    // ── backward ──

    /// Accumulates `d loss / d node` for every tape node reachable from
    /// `loss`, which must be a tracked scalar. The tape is untouched, so
    /// repeated calls on the same tape give bitwise-identical results.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, TensorError> {
        let lid = loss.node.ok_or(TensorError::NotTracked { op: "backward" })?;
        if !loss.is_scalar() {
            return Err(TensorError::NonScalar {
                op: "backward",
                shape: loss.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[lid] = Some(vec![1.0]);
        for id in (0..=lid).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.out;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for (di, &gi) in d.iter_mut().zip(g) {
                            *di += gi;
                        }
                    });
                }
                if let Some(nb) = b.node {
                    accumulate(&mut grads[nb], b.data.len(), |d| {
                        for (di, &gi) in d.iter_mut().zip(g) {
                            *di += gi;
                        }
                    });
                }
            }
            Op::Sub(a, b) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for (di, &gi) in d.iter_mut().zip(g) {
                            *di += gi;
                        }
                    });
                }
                if let Some(nb) = b.node {
                    accumulate(&mut grads[nb], b.data.len(), |d| {
                        for (di, &gi) in d.iter_mut().zip(g) {
                            *di -= gi;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * b.data[i];
                        }
                    });
                }
                if let Some(nb) = b.node {
                    accumulate(&mut grads[nb], b.data.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * a.data[i];
                        }
                    });
                }
            }
            Op::Neg(a) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for (di, &gi) in d.iter_mut().zip(g) {
                            *di -= gi;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for (di, &gi) in d.iter_mut().zip(g) {
                            *di += c * gi;
                        }
                    });
                }
            }
            Op::Tanh(a) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * (1.0 - out[i] * out[i]);
                        }
                    });
                }
            }
            Op::Relu(a) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for i in 0..d.len() {
                            if a.data[i] > 0.0 {
                                d[i] += g[i];
                            }
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * out[i] * (1.0 - out[i]);
                        }
                    });
                }
            }
            Op::Log(a) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] / a.data[i];
                        }
                    });
                }
            }
            Op::Abs(a) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for i in 0..d.len() {
                            let x = a.data[i];
                            if x > 0.0 {
                                d[i] += g[i];
                            } else if x < 0.0 {
                                d[i] -= g[i];
                            }
                        }
                    });
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (a.shape[0], a.shape[1]);
                let n = b.shape[1];
                if let Some(na) = a.node {
                    // dA = g . B^T
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for i in 0..m {
                            for j in 0..k {
                                let mut acc = 0.0;
                                for l in 0..n {
                                    acc += g[i * n + l] * b.data[j * n + l];
                                }
                                d[i * k + j] += acc;
                            }
                        }
                    });
                }
                if let Some(nb) = b.node {
                    // dB = A^T . g
                    accumulate(&mut grads[nb], b.data.len(), |d| {
                        for i in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0;
                                for l in 0..m {
                                    acc += a.data[l * k + i] * g[l * n + j];
                                }
                                d[i * n + j] += acc;
                            }
                        }
                    });
                }
            }
            Op::Softmax(a) => {
                if let Some(na) = a.node {
                    let dot: f64 = g.iter().zip(out.iter()).map(|(&gi, &yi)| gi * yi).sum();
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += out[i] * (g[i] - dot);
                        }
                    });
                }
            }
            Op::Conv2d { input, kernels, stride } => {
                let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
                let (f, kh, kw) = (kernels.shape[0], kernels.shape[2], kernels.shape[3]);
                let oh = (h - kh) / stride + 1;
                let ow = (w - kw) / stride + 1;
                if let Some(ni) = input.node {
                    accumulate(&mut grads[ni], input.data.len(), |d| {
                        for of in 0..f {
                            for oi in 0..oh {
                                for oj in 0..ow {
                                    let gi = g[of * oh * ow + oi * ow + oj];
                                    for ic in 0..c {
                                        for u in 0..kh {
                                            for v in 0..kw {
                                                d[ic * h * w
                                                    + (oi * stride + u) * w
                                                    + oj * stride
                                                    + v] += gi
                                                    * kernels.data[of * c * kh * kw
                                                        + ic * kh * kw
                                                        + u * kw
                                                        + v];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                if let Some(nk) = kernels.node {
                    accumulate(&mut grads[nk], kernels.data.len(), |d| {
                        for of in 0..f {
                            for oi in 0..oh {
                                for oj in 0..ow {
                                    let gi = g[of * oh * ow + oi * ow + oj];
                                    for ic in 0..c {
                                        for u in 0..kh {
                                            for v in 0..kw {
                                                d[of * c * kh * kw + ic * kh * kw + u * kw + v] +=
                                                    gi * input.data[ic * h * w
                                                        + (oi * stride + u) * w
                                                        + oj * stride
                                                        + v];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Pad2d { input, pad } => {
                if let Some(ni) = input.node {
                    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
                    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
                    accumulate(&mut grads[ni], input.data.len(), |d| {
                        for ic in 0..c {
                            for i in 0..h {
                                for j in 0..w {
                                    d[ic * h * w + i * w + j] +=
                                        g[ic * oh * ow + (i + pad) * ow + (j + pad)];
                                }
                            }
                        }
                    });
                }
            }
            Op::Upsample2x(input) => {
                if let Some(ni) = input.node {
                    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
                    let (oh, ow) = (2 * h, 2 * w);
                    accumulate(&mut grads[ni], input.data.len(), |d| {
                        for ic in 0..c {
                            for i in 0..oh {
                                for j in 0..ow {
                                    d[ic * h * w + (i / 2) * w + j / 2] +=
                                        g[ic * oh * ow + i * ow + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Concat0 { parts, chunk } => {
                let mut offset = 0;
                for p in parts {
                    let len = p.shape[0] * chunk;
                    if let Some(np) = p.node {
                        let piece = &g[offset..offset + len];
                        accumulate(&mut grads[np], p.data.len(), |d| {
                            for (di, &gi) in d.iter_mut().zip(piece) {
                                *di += gi;
                            }
                        });
                    }
                    offset += len;
                }
            }
            Op::Reshape(a) => {
                if let Some(na) = a.node {
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for (di, &gi) in d.iter_mut().zip(g) {
                            *di += gi;
                        }
                    });
                }
            }
            Op::Sum(a) => {
                if let Some(na) = a.node {
                    let gi = g[0];
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        for di in d.iter_mut() {
                            *di += gi;
                        }
                    });
                }
            }
            Op::Index(a, i) => {
                if let Some(na) = a.node {
                    let gi = g[0];
                    let i = *i;
                    accumulate(&mut grads[na], a.data.len(), |d| {
                        d[i] += gi;
                    });
                }
            }
            Op::Smul { s, t } => {
                if let Some(ns) = s.node {
                    let acc: f64 = g.iter().zip(t.data.iter()).map(|(&gi, &xi)| gi * xi).sum();
                    accumulate(&mut grads[ns], 1, |d| {
                        d[0] += acc;
                    });
                }
                if let Some(nt) = t.node {
                    let c = s.data[0];
                    accumulate(&mut grads[nt], t.data.len(), |d| {
                        for (di, &gi) in d.iter_mut().zip(g) {
                            *di += c * gi;
                        }
                    });
                }
            }
            Op::BiasCh { x, b } => {
                let hw = x.shape[1] * x.shape[2];
                if let Some(nx) = x.node {
                    accumulate(&mut grads[nx], x.data.len(), |d| {
                        for (di, &gi) in d.iter_mut().zip(g) {
                            *di += gi;
                        }
                    });
                }
                if let Some(nb) = b.node {
                    accumulate(&mut grads[nb], b.data.len(), |d| {
                        for (c, dc) in d.iter_mut().enumerate() {
                            *dc += g[c * hw..(c + 1) * hw].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Clamp { x, lo, hi } => {
                if let Some(nx) = x.node {
                    let (lo, hi) = (*lo, *hi);
                    accumulate(&mut grads[nx], x.data.len(), |d| {
                        for i in 0..d.len() {
                            let v = x.data[i];
                            if v >= lo && v <= hi {
                                d[i] += g[i];
                            }
                        }
                    });
                }
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[l * n..l * n + n];
            let o_row = &mut out[i * n..i * n + n];
            for j in 0..n {
                o_row[j] += av * b_row[j];
            }
        }
    }
    out
}
