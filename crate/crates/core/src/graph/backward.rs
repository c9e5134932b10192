//! Reverse sweep over the tape.

use super::{interp_cell, linear_src, nearest_src, Graph, Node, Op, Var};
use crate::error::{CoreError, Result};
use crate::tensor::{split_axis, strides_for};

fn wants(nodes: &[Node], id: usize) -> bool {
    nodes[id].requires_grad
}

fn buf<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], id: usize) -> &'a mut [f64] {
    if grads[id].is_none() {
        grads[id] = Some(vec![0.0; nodes[id].value.numel()]);
    }
    grads[id].as_mut().unwrap()
}

impl Graph {
    /// Accumulate d(target)/d(node) for every reachable node that requires a
    /// gradient. `target` must be a single-element tensor.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.value(target).numel() != 1 {
            return Err(CoreError::InvalidArgument(format!(
                "backward: target must be scalar, got shape {:?}",
                self.value(target).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[target.0] = Some(vec![1.0]);

        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=target.0).rev() {
            if !nodes[i].requires_grad || grads[i].is_none() {
                continue;
            }
            let g = grads[i].take().unwrap();
            match &nodes[i].op {
                Op::Leaf | Op::Constant | Op::Detach => {}
                Op::Add(a, b) => {
                    if wants(nodes, *a) {
                        for (d, &gv) in buf(nodes, grads, *a).iter_mut().zip(&g) {
                            *d += gv;
                        }
                    }
                    if wants(nodes, *b) {
                        for (d, &gv) in buf(nodes, grads, *b).iter_mut().zip(&g) {
                            *d += gv;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if wants(nodes, *a) {
                        for (d, &gv) in buf(nodes, grads, *a).iter_mut().zip(&g) {
                            *d += gv;
                        }
                    }
                    if wants(nodes, *b) {
                        for (d, &gv) in buf(nodes, grads, *b).iter_mut().zip(&g) {
                            *d -= gv;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if wants(nodes, *a) {
                        let vb = nodes[*b].value.data();
                        let d = buf(nodes, grads, *a);
                        for k in 0..g.len() {
                            d[k] += g[k] * vb[k];
                        }
                    }
                    if wants(nodes, *b) {
                        let va = nodes[*a].value.data();
                        let d = buf(nodes, grads, *b);
                        for k in 0..g.len() {
                            d[k] += g[k] * va[k];
                        }
                    }
                }
                Op::Div(a, b) => {
                    if wants(nodes, *a) {
                        let vb = nodes[*b].value.data();
                        let d = buf(nodes, grads, *a);
                        for k in 0..g.len() {
                            d[k] += g[k] / vb[k];
                        }
                    }
                    if wants(nodes, *b) {
                        let va = nodes[*a].value.data();
                        let vb = nodes[*b].value.data();
                        let d = buf(nodes, grads, *b);
                        for k in 0..g.len() {
                            d[k] -= g[k] * va[k] / (vb[k] * vb[k]);
                        }
                    }
                }
                Op::AddScalar { x } => {
                    if wants(nodes, *x) {
                        for (d, &gv) in buf(nodes, grads, *x).iter_mut().zip(&g) {
                            *d += gv;
                        }
                    }
                }
                Op::MulScalar { x, c } => {
                    if wants(nodes, *x) {
                        let c = *c;
                        for (d, &gv) in buf(nodes, grads, *x).iter_mut().zip(&g) {
                            *d += gv * c;
                        }
                    }
                }
                Op::ScaleByElem { x, s } => {
                    let sv = nodes[*s].value.data()[0];
                    if wants(nodes, *x) {
                        let d = buf(nodes, grads, *x);
                        for k in 0..g.len() {
                            d[k] += g[k] * sv;
                        }
                    }
                    if wants(nodes, *s) {
                        let vx = nodes[*x].value.data();
                        let mut acc = 0.0;
                        for k in 0..g.len() {
                            acc += g[k] * vx[k];
                        }
                        buf(nodes, grads, *s)[0] += acc;
                    }
                }
                Op::ShiftByElem { x, s } => {
                    if wants(nodes, *x) {
                        for (d, &gv) in buf(nodes, grads, *x).iter_mut().zip(&g) {
                            *d += gv;
                        }
                    }
                    if wants(nodes, *s) {
                        buf(nodes, grads, *s)[0] += g.iter().sum::<f64>();
                    }
                }
                Op::IndexElem { x, idx } => {
                    if wants(nodes, *x) {
                        buf(nodes, grads, *x)[*idx] += g[0];
                    }
                }
                Op::MatMul { a, b } => {
                    let sa = nodes[*a].value.shape();
                    let (m, k) = (sa[0], sa[1]);
                    let n = nodes[*b].value.shape()[1];
                    if wants(nodes, *a) {
                        let vb = nodes[*b].value.data();
                        let d = buf(nodes, grads, *a);
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * vb[p * n + j];
                                }
                                d[i * k + p] += acc;
                            }
                        }
                    }
                    if wants(nodes, *b) {
                        let va = nodes[*a].value.data();
                        let d = buf(nodes, grads, *b);
                        for i in 0..m {
                            for p in 0..k {
                                let av = va[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    d[p * n + j] += av * g[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::SoftmaxLastDim { x } => {
                    if wants(nodes, *x) {
                        let y = nodes[i].value.data();
                        let last = *nodes[i].value.shape().last().unwrap();
                        let d = buf(nodes, grads, *x);
                        let rows = y.len() / last;
                        for r in 0..rows {
                            let base = r * last;
                            let mut dot = 0.0;
                            for j in 0..last {
                                dot += g[base + j] * y[base + j];
                            }
                            for j in 0..last {
                                d[base + j] += y[base + j] * (g[base + j] - dot);
                            }
                        }
                    }
                }
                Op::Log { x } => {
                    if wants(nodes, *x) {
                        let vx = nodes[*x].value.data();
                        let d = buf(nodes, grads, *x);
                        for k in 0..g.len() {
                            d[k] += g[k] / vx[k];
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    if wants(nodes, *x) {
                        let y = nodes[i].value.data();
                        let d = buf(nodes, grads, *x);
                        for k in 0..g.len() {
                            d[k] += g[k] * y[k] * (1.0 - y[k]);
                        }
                    }
                }
                Op::Relu { x } => {
                    if wants(nodes, *x) {
                        let vx = nodes[*x].value.data();
                        let d = buf(nodes, grads, *x);
                        for k in 0..g.len() {
                            if vx[k] > 0.0 {
                                d[k] += g[k];
                            }
                        }
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    if wants(nodes, *x) {
                        let (lo, hi) = (*lo, *hi);
                        let vx = nodes[*x].value.data();
                        let d = buf(nodes, grads, *x);
                        for k in 0..g.len() {
                            if vx[k] >= lo && vx[k] <= hi {
                                d[k] += g[k];
                            }
                        }
                    }
                }
                Op::HuberUnit { x } => {
                    if wants(nodes, *x) {
                        let vx = nodes[*x].value.data();
                        let d = buf(nodes, grads, *x);
                        for k in 0..g.len() {
                            let e = vx[k];
                            d[k] += g[k] * if e.abs() < 1.0 { e } else { e.signum() };
                        }
                    }
                }
                Op::HardThreshold {
                    x,
                    straight_through,
                    ..
                } => {
                    if *straight_through && wants(nodes, *x) {
                        for (d, &gv) in buf(nodes, grads, *x).iter_mut().zip(&g) {
                            *d += gv;
                        }
                    }
                }
                Op::Concat { inputs, axis } => {
                    let out_shape = nodes[i].value.shape();
                    let (outer, total, inner) = split_axis(out_shape, *axis);
                    let mut offset = 0usize;
                    for &inp in inputs {
                        let mid = nodes[inp].value.shape()[*axis];
                        if wants(nodes, inp) {
                            let d = buf(nodes, grads, inp);
                            for o in 0..outer {
                                let src = (o * total + offset) * inner;
                                let dst = o * mid * inner;
                                for k in 0..mid * inner {
                                    d[dst + k] += g[src + k];
                                }
                            }
                        }
                        offset += mid;
                    }
                }
                Op::Slice { x, axis, start } => {
                    if wants(nodes, *x) {
                        let in_shape = nodes[*x].value.shape();
                        let len = nodes[i].value.shape()[*axis];
                        let (outer, mid, inner) = split_axis(in_shape, *axis);
                        let start = *start;
                        let d = buf(nodes, grads, *x);
                        for o in 0..outer {
                            let dst = (o * mid + start) * inner;
                            let src = o * len * inner;
                            for k in 0..len * inner {
                                d[dst + k] += g[src + k];
                            }
                        }
                    }
                }
                Op::MaxOverAxis { x, axis, argmax } => {
                    if wants(nodes, *x) {
                        let in_shape = nodes[*x].value.shape();
                        let (outer, mid, inner) = split_axis(in_shape, *axis);
                        let d = buf(nodes, grads, *x);
                        for o in 0..outer {
                            for k in 0..inner {
                                let oi = o * inner + k;
                                d[(o * mid + argmax[oi]) * inner + k] += g[oi];
                            }
                        }
                    }
                }
                Op::MeanAll { x } => {
                    if wants(nodes, *x) {
                        let n = nodes[*x].value.numel() as f64;
                        let gv = g[0] / n;
                        for d in buf(nodes, grads, *x).iter_mut() {
                            *d += gv;
                        }
                    }
                }
                Op::SumAll { x } => {
                    if wants(nodes, *x) {
                        let gv = g[0];
                        for d in buf(nodes, grads, *x).iter_mut() {
                            *d += gv;
                        }
                    }
                }
                Op::Permute { x, axes } => {
                    if wants(nodes, *x) {
                        let in_shape = nodes[*x].value.shape().to_vec();
                        let out_shape = nodes[i].value.shape();
                        let in_strides = strides_for(&in_shape);
                        let out_strides = strides_for(out_shape);
                        let rank = in_shape.len();
                        let d = buf(nodes, grads, *x);
                        let mut coords = vec![0usize; rank];
                        for (flat, &gv) in g.iter().enumerate() {
                            let mut rem = flat;
                            for dim in 0..rank {
                                coords[dim] = rem / out_strides[dim];
                                rem %= out_strides[dim];
                            }
                            let mut src = 0;
                            for dim in 0..rank {
                                src += coords[dim] * in_strides[axes[dim]];
                            }
                            d[src] += gv;
                        }
                    }
                }
                Op::Reshape { x } => {
                    if wants(nodes, *x) {
                        for (d, &gv) in buf(nodes, grads, *x).iter_mut().zip(&g) {
                            *d += gv;
                        }
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let xs = nodes[*x].value.shape().to_vec();
                    let ws = nodes[*w].value.shape().to_vec();
                    let os = nodes[i].value.shape().to_vec();
                    let (cin, h, wd) = (xs[0], xs[1], xs[2]);
                    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
                    let (ho, wo) = (os[1], os[2]);
                    let (stride, pad) = (*stride, *pad);
                    if wants(nodes, *b) {
                        let d = buf(nodes, grads, *b);
                        for co in 0..cout {
                            let mut acc = 0.0;
                            for k in 0..ho * wo {
                                acc += g[co * ho * wo + k];
                            }
                            d[co] += acc;
                        }
                    }
                    if wants(nodes, *w) {
                        let vx = nodes[*x].value.data();
                        let d = buf(nodes, grads, *w);
                        for co in 0..cout {
                            for oy in 0..ho {
                                for ox in 0..wo {
                                    let gv = g[(co * ho + oy) * wo + ox];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        for ky in 0..kh {
                                            let iy = (oy * stride + ky) as isize - pad as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix =
                                                    (ox * stride + kx) as isize - pad as isize;
                                                if ix < 0 || ix >= wd as isize {
                                                    continue;
                                                }
                                                d[((co * cin + ci) * kh + ky) * kw + kx] += gv
                                                    * vx[(ci * h + iy as usize) * wd
                                                        + ix as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if wants(nodes, *x) {
                        let vw = nodes[*w].value.data();
                        let d = buf(nodes, grads, *x);
                        for co in 0..cout {
                            for oy in 0..ho {
                                for ox in 0..wo {
                                    let gv = g[(co * ho + oy) * wo + ox];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        for ky in 0..kh {
                                            let iy = (oy * stride + ky) as isize - pad as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix =
                                                    (ox * stride + kx) as isize - pad as isize;
                                                if ix < 0 || ix >= wd as isize {
                                                    continue;
                                                }
                                                d[(ci * h + iy as usize) * wd + ix as usize] +=
                                                    gv * vw[((co * cin + ci) * kh + ky) * kw
                                                        + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Resize2dLinear { x } => {
                    if wants(nodes, *x) {
                        let xs = nodes[*x].value.shape().to_vec();
                        let os = nodes[i].value.shape().to_vec();
                        let (c, h, w) = (xs[0], xs[1], xs[2]);
                        let (oh, ow) = (os[1], os[2]);
                        let d = buf(nodes, grads, *x);
                        for ch in 0..c {
                            for oy in 0..oh {
                                let (y0, y1, fy) = linear_src(oy, oh, h);
                                for ox in 0..ow {
                                    let (x0, x1, fx) = linear_src(ox, ow, w);
                                    let gv = g[(ch * oh + oy) * ow + ox];
                                    let base = ch * h * w;
                                    d[base + y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                                    d[base + y0 * w + x1] += gv * (1.0 - fy) * fx;
                                    d[base + y1 * w + x0] += gv * fy * (1.0 - fx);
                                    d[base + y1 * w + x1] += gv * fy * fx;
                                }
                            }
                        }
                    }
                }
                Op::Resize2dNearest { x } => {
                    if wants(nodes, *x) {
                        let xs = nodes[*x].value.shape().to_vec();
                        let os = nodes[i].value.shape().to_vec();
                        let (c, h, w) = (xs[0], xs[1], xs[2]);
                        let (oh, ow) = (os[1], os[2]);
                        let d = buf(nodes, grads, *x);
                        for ch in 0..c {
                            for oy in 0..oh {
                                let sy = nearest_src(oy, oh, h);
                                for ox in 0..ow {
                                    let sx = nearest_src(ox, ow, w);
                                    d[(ch * h + sy) * w + sx] += g[(ch * oh + oy) * ow + ox];
                                }
                            }
                        }
                    }
                }
                Op::InterpGather { x, pos, axis } => {
                    let in_shape = nodes[*x].value.shape().to_vec();
                    let (outer, mid, inner) = split_axis(&in_shape, *axis);
                    let pvals = nodes[*pos].value.data().to_vec();
                    let p_len = pvals.len();
                    if wants(nodes, *x) {
                        let d = buf(nodes, grads, *x);
                        for (pi, &p_raw) in pvals.iter().enumerate() {
                            let (i0, i1, f) = interp_cell(p_raw, mid);
                            for o in 0..outer {
                                let src0 = (o * mid + i0) * inner;
                                let src1 = (o * mid + i1) * inner;
                                let gbase = (o * p_len + pi) * inner;
                                for k in 0..inner {
                                    let gv = g[gbase + k];
                                    d[src0 + k] += (1.0 - f) * gv;
                                    if i1 != i0 {
                                        d[src1 + k] += f * gv;
                                    }
                                }
                            }
                        }
                    }
                    if wants(nodes, *pos) {
                        let vx = nodes[*x].value.data();
                        let max_p = (mid - 1) as f64;
                        let d = buf(nodes, grads, *pos);
                        for (pi, &p_raw) in pvals.iter().enumerate() {
                            // Clamped positions have zero slope.
                            if p_raw < 0.0 || p_raw > max_p {
                                continue;
                            }
                            let (i0, i1, _) = interp_cell(p_raw, mid);
                            let mut acc = 0.0;
                            for o in 0..outer {
                                let src0 = (o * mid + i0) * inner;
                                let src1 = (o * mid + i1) * inner;
                                let gbase = (o * p_len + pi) * inner;
                                for k in 0..inner {
                                    acc += g[gbase + k] * (vx[src1 + k] - vx[src0 + k]);
                                }
                            }
                            d[pi] += acc;
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(())
    }
}
