//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding the forward
//! value and enough bookkeeping to run the reverse sweep. [`Var`] is a cheap
//! handle into the tape. Forward evaluation happens eagerly as the graph is
//! built, so callers can inspect values (e.g. to special-case degenerate
//! loss terms) before wiring further ops.
//!
//! All arithmetic is f64 and strictly sequential, so repeated forwards on the
//! same inputs are bit-identical.

mod backward;
mod gradcheck;

pub use gradcheck::{grad_check, grad_check_with_tamper, GradCheckReport, GradTamper};

use crate::error::{CoreError, Result};
use crate::tensor::{split_axis, strides_for, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar { x: usize },
    MulScalar { x: usize, c: f64 },
    /// x * s where s is a single-element var, broadcast over x.
    ScaleByElem { x: usize, s: usize },
    /// x + s where s is a single-element var, broadcast over x.
    ShiftByElem { x: usize, s: usize },
    /// Extract element `idx` of x as a `[1]` tensor.
    IndexElem { x: usize, idx: usize },
    MatMul { a: usize, b: usize },
    SoftmaxLastDim { x: usize },
    Log { x: usize },
    Sigmoid { x: usize },
    Relu { x: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    MaxOverAxis { x: usize, axis: usize, argmax: Vec<usize> },
    MeanAll { x: usize },
    SumAll { x: usize },
    Permute { x: usize, axes: Vec<usize> },
    Reshape { x: usize },
    Conv2d { x: usize, w: usize, b: usize, stride: usize, pad: usize },
    Resize2dLinear { x: usize },
    Resize2dNearest { x: usize },
    /// Gather along `axis` at fractional positions, linear interpolation,
    /// positions clamped to the valid range first.
    InterpGather { x: usize, pos: usize, axis: usize },
    /// Elementwise smooth-L1 with unit knee: e^2/2 if |e| < 1 else |e| - 1/2.
    HuberUnit { x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    Detach,
    /// Forward (x > thr) as 0/1; backward passes the gradient through
    /// unchanged when `straight_through`, otherwise blocks it.
    HardThreshold { x: usize, straight_through: bool },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// The tape. One forward computation per instance; gradients are stored per
/// node after [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    pub(crate) grads: Vec<Option<Vec<f64>>>,
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

    /// Gradient of the last backward target w.r.t. `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads.get(v.0).and_then(|g| {
            g.as_ref()
                .map(|data| Tensor::new(self.nodes[v.0].value.shape().to_vec(), data.clone()).unwrap())
        })
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.is_finite(),
            "non-finite forward value produced by {op:?}"
        );
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

    // ---- leaves ------------------------------------------------------

    /// Insert a value that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Insert a trainable leaf; gradients accumulate here during backward.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    // ---- elementwise -------------------------------------------------

    fn check_same_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::ShapeMismatch(format!(
                "{name}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, Op::Sub(a.0, b.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, Op::Mul(a.0, b.0), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("div", a, b)?;
        if self.value(b).data().iter().any(|&v| v == 0.0) {
            return Err(CoreError::Numerical {
                term: "div".into(),
                detail: "division by zero".into(),
            });
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, Op::Div(a.0, b.0), rg))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v + c).collect()).unwrap();
        let rg = self.rg(x);
        self.push(data, Op::AddScalar { x: x.0 }, rg)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect()).unwrap();
        let rg = self.rg(x);
        self.push(data, Op::MulScalar { x: x.0, c }, rg)
    }

    fn check_single(&self, name: &str, s: Var) -> Result<()> {
        if self.value(s).numel() != 1 {
            return Err(CoreError::ShapeMismatch(format!(
                "{name}: broadcast operand must have one element, got {:?}",
                self.value(s).shape()
            )));
        }
        Ok(())
    }

    pub fn scale_by_elem(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check_single("scale_by_elem", s)?;
        let sv = self.value(s).data()[0];
        let t = self.value(x);
        let data =
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * sv).collect()).unwrap();
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(data, Op::ScaleByElem { x: x.0, s: s.0 }, rg))
    }

    pub fn shift_by_elem(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check_single("shift_by_elem", s)?;
        let sv = self.value(s).data()[0];
        let t = self.value(x);
        let data =
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v + sv).collect()).unwrap();
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(data, Op::ShiftByElem { x: x.0, s: s.0 }, rg))
    }

    pub fn index_elem(&mut self, x: Var, idx: usize) -> Result<Var> {
        if idx >= self.value(x).numel() {
            return Err(CoreError::InvalidArgument(format!(
                "index_elem: index {idx} out of range for {} elements",
                self.value(x).numel()
            )));
        }
        let v = self.value(x).data()[idx];
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(v), Op::IndexElem { x: x.0, idx }, rg))
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(CoreError::ShapeMismatch(format!(
                "matmul: {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out).unwrap(),
            Op::MatMul { a: a.0, b: b.0 },
            rg,
        ))
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let last = *t.shape().last().unwrap();
        let rows = t.numel() / last;
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let seg = &t.data()[r * last..(r + 1) * last];
            let m = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (i, &v) in seg.iter().enumerate() {
                let e = (v - m).exp();
                out[r * last + i] = e;
                sum += e;
            }
            for i in 0..last {
                out[r * last + i] /= sum;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(t.shape().to_vec(), out).unwrap(),
            Op::SoftmaxLastDim { x: x.0 },
            rg,
        ))
    }

    // ---- unary -------------------------------------------------------

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(CoreError::Numerical {
                term: "log".into(),
                detail: "non-positive input".into(),
            });
        }
        let t = self.value(x);
        let data =
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.ln()).collect()).unwrap();
        let rg = self.rg(x);
        Ok(self.push(data, Op::Log { x: x.0 }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
        )
        .unwrap();
        let rg = self.rg(x);
        self.push(data, Op::Sigmoid { x: x.0 }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v.max(0.0)).collect(),
        )
        .unwrap();
        let rg = self.rg(x);
        self.push(data, Op::Relu { x: x.0 }, rg)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x);
        let data = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v.clamp(lo, hi)).collect(),
        )
        .unwrap();
        let rg = self.rg(x);
        self.push(data, Op::Clamp { x: x.0, lo, hi }, rg)
    }

    pub fn huber_unit(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = Tensor::new(
            t.shape().to_vec(),
            t.data()
                .iter()
                .map(|&e| if e.abs() < 1.0 { 0.5 * e * e } else { e.abs() - 0.5 })
                .collect(),
        )
        .unwrap();
        let rg = self.rg(x);
        self.push(data, Op::HuberUnit { x: x.0 }, rg)
    }

    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::Detach, false)
    }

    pub fn hard_threshold(&mut self, x: Var, thr: f64, straight_through: bool) -> Var {
        let t = self.value(x);
        let data = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&v| if v > thr { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let rg = straight_through && self.rg(x);
        self.push(
            data,
            Op::HardThreshold {
                x: x.0,
                straight_through,
            },
            rg,
        )
    }

    // ---- structure ---------------------------------------------------

    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::InvalidArgument("concat: no inputs".into()));
        }
        let base = self.value(parts[0]).shape().to_vec();
        if axis >= base.len() {
            return Err(CoreError::InvalidArgument(format!(
                "concat: axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != base.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != base[i])
            {
                return Err(CoreError::ShapeMismatch(format!(
                    "concat: {s:?} incompatible with {base:?} on axis {axis}"
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = vec![0.0; out_shape.iter().product()];
        for o in 0..outer {
            let mut written = 0usize;
            for &p in parts {
                let t = self.value(p);
                let mid = t.shape()[axis];
                let src = &t.data()[o * mid * inner..(o + 1) * mid * inner];
                let dst_base = (o * axis_total + written) * inner;
                out[dst_base..dst_base + mid * inner].copy_from_slice(src);
                written += mid;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(out_shape, out).unwrap(),
            Op::Concat {
                inputs: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice_axis(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "slice_axis: axis {axis} range {start}..{} invalid for shape {shape:?}",
                start + len
            )));
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = vec![0.0; outer * len * inner];
        let data = self.value(x).data();
        for o in 0..outer {
            let src = (o * mid + start) * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&data[src..src + len * inner]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(out_shape, out).unwrap(),
            Op::Slice {
                x: x.0,
                axis,
                start,
            },
            rg,
        ))
    }

    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let dim = {
            let shape = self.value(x).shape();
            if axis >= shape.len() {
                return Err(CoreError::InvalidArgument(format!(
                    "split: axis {axis} out of range for rank {}",
                    shape.len()
                )));
            }
            shape[axis]
        };
        if sizes.iter().sum::<usize>() != dim {
            return Err(CoreError::ShapeMismatch(format!(
                "split: sizes {sizes:?} do not sum to dim {dim}"
            )));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &len in sizes {
            out.push(self.slice_axis(x, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Maximum over one axis (the axis is removed). The backward pass routes
    /// the full upstream gradient to the argmax element, ties broken to the
    /// lowest index.
    pub fn max_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(CoreError::InvalidArgument(format!(
                "max_over_axis: axis {axis} out of range for rank {}",
                shape.len()
            )));
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let data = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                for i in 0..inner {
                    let v = data[(o * mid + m) * inner + i];
                    let oi = o * inner + i;
                    if v > out[oi] {
                        out[oi] = v;
                        argmax[oi] = m;
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(out_shape, out).unwrap(),
            Op::MaxOverAxis {
                x: x.0,
                axis,
                argmax,
            },
            rg,
        ))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.sum() / t.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::MeanAll { x: x.0 }, rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll { x: x.0 }, rg)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(CoreError::InvalidArgument(format!(
                "permute: axes {axes:?} is not a permutation of 0..{rank}"
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let data = permute_raw(self.value(x).data(), &shape, axes, &out_shape);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(out_shape, data).unwrap(),
            Op::Permute {
                x: x.0,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let out = t.reshaped(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape { x: x.0 }, rg))
    }

    // ---- spatial -----------------------------------------------------

    /// 2D convolution over `x: [C_in, H, W]` with `w: [C_out, C_in, kh, kw]`
    /// and bias `b: [C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 3 || ws.len() != 4 || bs != vec![ws[0]] || ws[1] != xs[0] {
            return Err(CoreError::ShapeMismatch(format!(
                "conv2d: x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        if stride == 0 {
            return Err(CoreError::InvalidArgument("conv2d: stride must be >= 1".into()));
        }
        let (h, wd) = (xs[1], xs[2]);
        let (kh, kw) = (ws[2], ws[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(CoreError::ShapeMismatch(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {h}x{wd} (+{pad})"
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let out = conv2d_raw(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &xs,
            &ws,
            stride,
            pad,
            ho,
            wo,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![ws[0], ho, wo], out).unwrap(),
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Bilinear resize of `x: [C, H, W]` to `[C, out_h, out_w]` using
    /// half-pixel source mapping.
    pub fn resize2d_linear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || out_h == 0 || out_w == 0 {
            return Err(CoreError::ShapeMismatch(format!(
                "resize2d_linear: x {xs:?} -> {out_h}x{out_w}"
            )));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let mut out = vec![0.0; c * out_h * out_w];
        let data = self.value(x).data();
        for ch in 0..c {
            for oy in 0..out_h {
                let (y0, y1, fy) = linear_src(oy, out_h, h);
                for ox in 0..out_w {
                    let (x0, x1, fx) = linear_src(ox, out_w, w);
                    let base = ch * h * w;
                    let v = (1.0 - fy) * (1.0 - fx) * data[base + y0 * w + x0]
                        + (1.0 - fy) * fx * data[base + y0 * w + x1]
                        + fy * (1.0 - fx) * data[base + y1 * w + x0]
                        + fy * fx * data[base + y1 * w + x1];
                    out[(ch * out_h + oy) * out_w + ox] = v;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![c, out_h, out_w], out).unwrap(),
            Op::Resize2dLinear { x: x.0 },
            rg,
        ))
    }

    /// Nearest-neighbour resize of `x: [C, H, W]` (half-pixel centres).
    pub fn resize2d_nearest(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || out_h == 0 || out_w == 0 {
            return Err(CoreError::ShapeMismatch(format!(
                "resize2d_nearest: x {xs:?} -> {out_h}x{out_w}"
            )));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let data = self.value(x).data();
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            for oy in 0..out_h {
                let sy = nearest_src(oy, out_h, h);
                for ox in 0..out_w {
                    let sx = nearest_src(ox, out_w, w);
                    out[(ch * out_h + oy) * out_w + ox] = data[(ch * h + sy) * w + sx];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![c, out_h, out_w], out).unwrap(),
            Op::Resize2dNearest { x: x.0 },
            rg,
        ))
    }

    /// Gather slices of `x` along `axis` at fractional `positions` (a 1-D
    /// var). Positions are clamped to `[0, dim-1]` before interpolation; at
    /// integer positions the exact element is copied and the position
    /// gradient follows the right-derivative convention.
    pub fn linear_interp_gather(&mut self, x: Var, axis: usize, positions: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(CoreError::InvalidArgument(format!(
                "linear_interp_gather: axis {axis} out of range for rank {}",
                shape.len()
            )));
        }
        let ps = self.value(positions).shape().to_vec();
        if ps.len() != 1 {
            return Err(CoreError::ShapeMismatch(format!(
                "linear_interp_gather: positions must be 1-D, got {ps:?}"
            )));
        }
        if !self.value(positions).is_finite() {
            return Err(CoreError::InvalidArgument(
                "linear_interp_gather: positions must be finite".into(),
            ));
        }
        let p_len = ps[0];
        let (outer, mid, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = p_len;
        let data = self.value(x).data();
        let pos = self.value(positions).data();
        let mut out = vec![0.0; outer * p_len * inner];
        for (pi, &p_raw) in pos.iter().enumerate() {
            let (i0, i1, f) = interp_cell(p_raw, mid);
            for o in 0..outer {
                let src0 = (o * mid + i0) * inner;
                let src1 = (o * mid + i1) * inner;
                let dst = (o * p_len + pi) * inner;
                if f == 0.0 {
                    out[dst..dst + inner].copy_from_slice(&data[src0..src0 + inner]);
                } else {
                    for i in 0..inner {
                        out[dst + i] = (1.0 - f) * data[src0 + i] + f * data[src1 + i];
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(positions);
        Ok(self.push(
            Tensor::new(out_shape, out).unwrap(),
            Op::InterpGather {
                x: x.0,
                pos: positions.0,
                axis,
            },
            rg,
        ))
    }
}

// ---- raw kernels shared by forward and backward -----------------------

pub(crate) fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let row = p * n;
            let dst = i * n;
            for j in 0..n {
                out[dst + j] += av * b[row + j];
            }
        }
    }
    out
}

pub(crate) fn permute_raw(
    data: &[f64],
    in_shape: &[usize],
    axes: &[usize],
    out_shape: &[usize],
) -> Vec<f64> {
    let in_strides = strides_for(in_shape);
    let out_strides = strides_for(out_shape);
    let numel = data.len();
    let rank = in_shape.len();
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; rank];
    for (flat, out_slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in 0..rank {
            coords[d] = rem / out_strides[d];
            rem %= out_strides[d];
        }
        let mut src = 0;
        for d in 0..rank {
            src += coords[d] * in_strides[axes[d]];
        }
        *out_slot = data[src];
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_raw(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    xs: &[usize],
    ws: &[usize],
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let (cin, h, wd) = (xs[0], xs[1], xs[2]);
    let (cout, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let mut out = vec![0.0; cout * ho * wo];
    for co in 0..cout {
        let bias = b[co];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias;
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc += x[(ci * h + iy as usize) * wd + ix as usize]
                                * w[((co * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

/// Half-pixel bilinear source cell: returns (low index, high index, fraction).
pub(crate) fn linear_src(out_idx: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let src = (out_idx as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    let src = src.clamp(0.0, (in_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

pub(crate) fn nearest_src(out_idx: usize, out_len: usize, in_len: usize) -> usize {
    let src = (out_idx as f64 + 0.5) * in_len as f64 / out_len as f64;
    (src.floor() as usize).min(in_len - 1)
}

/// Clamped interpolation cell for a raw fractional position.
pub(crate) fn interp_cell(p_raw: f64, dim: usize) -> (usize, usize, f64) {
    let p = p_raw.clamp(0.0, (dim - 1) as f64);
    let i0 = p.floor() as usize;
    let i1 = (i0 + 1).min(dim - 1);
    (i0, i1, p - i0 as f64)
}
