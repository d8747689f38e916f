//! The reverse-mode autodiff graph.
//!
//! Operations append nodes in topological order (inputs always precede
//! consumers), so backward is a single reverse sweep. Saved activations are
//! owned copies; nothing in a graph aliases caller memory.

use crate::error::{Error, Result};
use crate::signal::stft::{check_istft_shapes, istft_adjoint_channel, istft_channel};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `[M,K] x [K,N] -> [M,N]`.
    Matmul,
    Add,
    Sub,
    /// Elementwise product of same-shape tensors.
    Mul,
    /// Rank-1 bias indexed by axis 0, broadcast over trailing axes.
    AddBias,
    /// Scalar (numel-1 tensor) times tensor.
    Scale,
    Tanh,
    Sigmoid,
    Softmax { axis: usize },
    /// Arithmetic mean over one axis; the axis is removed.
    MeanAxis { axis: usize },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Reshape,
    SumAll,
    /// Mean of absolute values over all elements (the L1 reduction
    /// convention used by every loss term in this crate).
    L1Mean,
    /// Per-column standardization over axis 0 of a matrix (layer-norm
    /// without learned affine parameters).
    NormCols { eps: f64 },
    /// Inverse STFT of one channel: inputs are the real and imaginary
    /// planes `[bins, frames]`, output is the waveform `[out_len]`.
    Istft { window: usize, hop: usize, out_len: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
}

/// Records a differentiable computation and runs one backward pass over it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    ran_backward: bool,
}

/// `(product of dims before axis, dim at axis, product of dims after)`.
fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::AxisOutOfRange {
            op,
            axis,
            shape: shape.to_vec(),
        });
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

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Adds an input tensor. Its `requires_grad` flag decides whether
    /// backward fills its gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, vec![], t)
    }

    /// Adds a non-differentiable input regardless of the tensor's flag.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.push(Op::Leaf, vec![], t)
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass w.r.t. `v`, if one was computed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// True when every value recorded in the graph is finite.
    pub fn all_finite(&self) -> bool {
        self.nodes.iter().all(|n| n.value.is_finite())
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, mut value: Tensor) -> Var {
        if !matches!(op, Op::Leaf) {
            let needs = inputs.iter().any(|&i| self.nodes[i].value.requires_grad());
            value.set_requires_grad(needs);
        }
        self.nodes.push(Node { op, inputs, value });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                let row = &db[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in dst.iter_mut().zip(row) {
                    *o += aip * bv;
                }
            }
        }
        let t = Tensor::from_vec(vec![m, n], out)?;
        Ok(self.push(Op::Matmul, vec![a.0, b.0], t))
    }

    fn zip_elementwise(
        &mut self,
        op: Op,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        Ok(self.push(op, vec![a.0, b.0], t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(Op::Add, "add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(Op::Sub, "sub", a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(Op::Mul, "mul", a, b, |x, y| x * y)
    }

    /// `a + bias`, where `bias` is rank 1 matching axis 0 of `a` and is
    /// broadcast over any trailing axes.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(bias).to_vec());
        if sb.len() != 1 || sa.is_empty() || sa[0] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: sa,
                rhs: sb,
            });
        }
        let inner: usize = sa[1..].iter().product();
        let db = self.value(bias).to_vec();
        let data = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + db[i / inner])
            .collect();
        let t = Tensor::from_vec(sa, data)?;
        Ok(self.push(Op::AddBias, vec![a.0, bias.0], t))
    }

    /// Scalar times tensor. `s` must have exactly one element.
    pub fn scale(&mut self, s: Var, a: Var) -> Result<Var> {
        if self.tensor(s).numel() != 1 {
            return Err(Error::InvalidShape {
                op: "scale",
                shape: self.shape(s).to_vec(),
                reason: "scale factor must have exactly one element".into(),
            });
        }
        let sv = self.value(s)[0];
        let data = self.value(a).iter().map(|&x| sv * x).collect();
        let t = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        Ok(self.push(Op::Scale, vec![s.0, a.0], t))
    }

    fn map_unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let data = self.value(a).iter().map(|&x| f(x)).collect();
        let t = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        Ok(self.push(op, vec![a.0], t))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map_unary(Op::Tanh, a, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map_unary(Op::Sigmoid, a, sigmoid)
    }

    /// Softmax along `axis`, numerically stabilized by subtracting the lane
    /// maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("softmax", &shape, axis)?;
        if shape[axis] == 0 {
            return Err(Error::InvalidShape {
                op: "softmax",
                shape,
                reason: "softmax axis has size 0".into(),
            });
        }
        let (outer, extent, inner) = outer_inner(&shape, axis);
        let x = self.value(a);
        let mut data = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * extent + k) * inner + i;
                let max = (0..extent).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..extent {
                    let e = (x[at(k)] - max).exp();
                    data[at(k)] = e;
                    sum += e;
                }
                for k in 0..extent {
                    data[at(k)] /= sum;
                }
            }
        }
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.push(Op::Softmax { axis }, vec![a.0], t))
    }

    /// Mean over `axis`; the axis is removed from the shape, so `[M, T]`
    /// reduced over axis 1 becomes `[M]` (a rank-1 input reduces to `[1]`).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("mean", &shape, axis)?;
        if shape[axis] == 0 {
            return Err(Error::InvalidShape {
                op: "mean",
                shape,
                reason: "mean over axis of size 0".into(),
            });
        }
        let (outer, extent, inner) = outer_inner(&shape, axis);
        let x = self.value(a);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..extent {
                for i in 0..inner {
                    data[o * inner + i] += x[(o * extent + k) * inner + i];
                }
            }
        }
        for v in &mut data {
            *v /= extent as f64;
        }
        let mut new_shape: Vec<usize> = shape[..axis].to_vec();
        new_shape.extend_from_slice(&shape[axis + 1..]);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let t = Tensor::from_vec(new_shape, data)?;
        Ok(self.push(Op::MeanAxis { axis }, vec![a.0], t))
    }

    /// Concatenates along `axis`; all parts must agree on every other axis.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(&v) => v,
            None => {
                return Err(Error::InvalidShape {
                    op: "concat",
                    shape: vec![],
                    reason: "no tensors to concatenate".into(),
                })
            }
        };
        let base = self.shape(first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(ax, (x, y))| ax == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = outer_inner(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for &p in parts {
            let e = self.shape(p)[axis];
            let src = self.value(p);
            for o in 0..outer {
                let dst_start = (o * total + offset) * inner;
                let src_start = o * e * inner;
                data[dst_start..dst_start + e * inner]
                    .copy_from_slice(&src[src_start..src_start + e * inner]);
            }
            offset += e;
        }
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.push(Op::Concat { axis }, parts.iter().map(|v| v.0).collect(), t))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("slice", &shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                shape: shape.clone(),
                reason: format!("range {start}..{} exceeds axis {axis}", start + len),
            });
        }
        let (outer, extent, inner) = outer_inner(&shape, axis);
        let x = self.value(a);
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src_start = (o * extent + start) * inner;
            let dst_start = o * len * inner;
            data[dst_start..dst_start + len * inner]
                .copy_from_slice(&x[src_start..src_start + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let t = Tensor::from_vec(new_shape, data)?;
        Ok(self.push(Op::Slice { axis, start, len }, vec![a.0], t))
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&mut self, a: Var, new_shape: Vec<usize>) -> Result<Var> {
        let numel: usize = new_shape.iter().product();
        if numel != self.tensor(a).numel() || new_shape.is_empty() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape: new_shape,
                reason: format!("cannot reshape {:?}", self.shape(a)),
            });
        }
        let t = Tensor::from_vec(new_shape, self.value(a).to_vec())?;
        Ok(self.push(Op::Reshape, vec![a.0], t))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).iter().sum();
        Ok(self.push(Op::SumAll, vec![a.0], Tensor::scalar(s)))
    }

    /// Mean of absolute values over all elements, shape `[1]`. This is the
    /// L1 reduction convention for every loss term: mean, not sum, so the
    /// magnitude is independent of tensor size.
    pub fn l1_mean(&mut self, a: Var) -> Result<Var> {
        let n = self.tensor(a).numel();
        if n == 0 {
            return Err(Error::InvalidShape {
                op: "l1_mean",
                shape: self.shape(a).to_vec(),
                reason: "mean of empty tensor".into(),
            });
        }
        let s: f64 = self.value(a).iter().map(|v| v.abs()).sum();
        Ok(self.push(Op::L1Mean, vec![a.0], Tensor::scalar(s / n as f64)))
    }

    /// Standardizes every column of a matrix to zero mean and unit variance
    /// over axis 0 (no learned affine part). The optional pre-RNN
    /// normalization hook.
    pub fn norm_cols(&mut self, a: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::InvalidShape {
                op: "norm_cols",
                shape,
                reason: "expects a [rows, cols] matrix with rows >= 1".into(),
            });
        }
        let (m, t_dim) = (shape[0], shape[1]);
        let x = self.value(a);
        let mut data = vec![0.0; x.len()];
        for t in 0..t_dim {
            let mut mean = 0.0;
            for r in 0..m {
                mean += x[r * t_dim + t];
            }
            mean /= m as f64;
            let mut var = 0.0;
            for r in 0..m {
                let d = x[r * t_dim + t] - mean;
                var += d * d;
            }
            var /= m as f64;
            let s = (var + eps).sqrt();
            for r in 0..m {
                data[r * t_dim + t] = (x[r * t_dim + t] - mean) / s;
            }
        }
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.push(Op::NormCols { eps }, vec![a.0], t))
    }

    /// Inverse STFT of one channel as a graph operation: `re` and `im` are
    /// `[bins, frames]` planes, output is the `[out_len]` waveform. Shares
    /// the synthesis kernel with [`crate::signal::istft`]; the backward pass
    /// is the exact adjoint of that linear map.
    pub fn istft(
        &mut self,
        re: Var,
        im: Var,
        window: usize,
        hop: usize,
        out_len: usize,
    ) -> Result<Var> {
        let (sr, si) = (self.shape(re).to_vec(), self.shape(im).to_vec());
        if sr != si || sr.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "istft",
                lhs: sr,
                rhs: si,
            });
        }
        check_istft_shapes(sr[0], sr[1], window, hop, out_len)?;
        let wave = istft_channel(self.value(re), self.value(im), sr[1], window, hop, out_len);
        let t = Tensor::from_vec(vec![out_len], wave)?;
        Ok(self.push(
            Op::Istft {
                window,
                hop,
                out_len,
            },
            vec![re.0, im.0],
            t,
        ))
    }

    /// Reverse sweep from a scalar loss. Populates `grad` on every tensor
    /// that requires gradients and is reachable from `loss`. A graph runs
    /// backward at most once; build a fresh graph per step.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.ran_backward {
            return Err(Error::BackwardTwice);
        }
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        self.ran_backward = true;
        if !lt.requires_grad() {
            return Ok(()); // loss depends on no gradient target
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad() {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[idx].value.requires_grad() {
                    self.nodes[idx].value.set_grad(g);
                }
            }
        }
        Ok(())
    }

    /// Adds `idx`'s output gradient contribution to its inputs' gradients.
    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let needs = |i: usize| self.nodes[node.inputs[i]].value.requires_grad();
        let mut acc = |i: usize, contrib: Vec<f64>| {
            let slot = node.inputs[i];
            match &mut grads[slot] {
                Some(buf) => {
                    for (b, c) in buf.iter_mut().zip(&contrib) {
                        *b += c;
                    }
                }
                empty => *empty = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul => {
                let a = &self.nodes[node.inputs[0]].value;
                let b = &self.nodes[node.inputs[1]].value;
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                if needs(0) {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * b.data()[p * n + j];
                            }
                            ga[i * k + p] = s;
                        }
                    }
                    acc(0, ga);
                }
                if needs(1) {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = a.data()[i * k + p];
                            let row = &g[i * n..(i + 1) * n];
                            let dst = &mut gb[p * n..(p + 1) * n];
                            for (d, &gv) in dst.iter_mut().zip(row) {
                                *d += aip * gv;
                            }
                        }
                    }
                    acc(1, gb);
                }
            }
            Op::Add => {
                if needs(0) {
                    acc(0, g.to_vec());
                }
                if needs(1) {
                    acc(1, g.to_vec());
                }
            }
            Op::Sub => {
                if needs(0) {
                    acc(0, g.to_vec());
                }
                if needs(1) {
                    acc(1, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul => {
                let a = self.nodes[node.inputs[0]].value.data();
                let b = self.nodes[node.inputs[1]].value.data();
                if needs(0) {
                    acc(0, g.iter().zip(b).map(|(gv, bv)| gv * bv).collect());
                }
                if needs(1) {
                    acc(1, g.iter().zip(a).map(|(gv, av)| gv * av).collect());
                }
            }
            Op::AddBias => {
                let shape = node.value.shape();
                let inner: usize = shape[1..].iter().product();
                if needs(0) {
                    acc(0, g.to_vec());
                }
                if needs(1) {
                    let mut gb = vec![0.0; shape[0]];
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i / inner] += gv;
                    }
                    acc(1, gb);
                }
            }
            Op::Scale => {
                let s = self.nodes[node.inputs[0]].value.data()[0];
                let a = self.nodes[node.inputs[1]].value.data();
                if needs(0) {
                    let dot: f64 = g.iter().zip(a).map(|(gv, av)| gv * av).sum();
                    acc(0, vec![dot]);
                }
                if needs(1) {
                    acc(1, g.iter().map(|gv| s * gv).collect());
                }
            }
            Op::Tanh => {
                if needs(0) {
                    let y = node.value.data();
                    acc(0, g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect());
                }
            }
            Op::Sigmoid => {
                if needs(0) {
                    let y = node.value.data();
                    acc(0, g.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect());
                }
            }
            Op::Softmax { axis } => {
                if needs(0) {
                    let y = node.value.data();
                    let shape = node.value.shape();
                    let (outer, extent, inner) = outer_inner(shape, *axis);
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * extent + k) * inner + i;
                            let dot: f64 = (0..extent).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..extent {
                                gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                    acc(0, gx);
                }
            }
            Op::MeanAxis { axis } => {
                if needs(0) {
                    let shape = self.nodes[node.inputs[0]].value.shape();
                    let (outer, extent, inner) = outer_inner(shape, *axis);
                    let scale = 1.0 / extent as f64;
                    let mut gx = vec![0.0; outer * extent * inner];
                    for o in 0..outer {
                        for k in 0..extent {
                            for i in 0..inner {
                                gx[(o * extent + k) * inner + i] = g[o * inner + i] * scale;
                            }
                        }
                    }
                    acc(0, gx);
                }
            }
            Op::Concat { axis } => {
                let total = node.value.shape()[*axis];
                let (outer, _, inner) = outer_inner(node.value.shape(), *axis);
                let mut offset = 0;
                for (pi, &input) in node.inputs.iter().enumerate() {
                    let e = self.nodes[input].value.shape()[*axis];
                    if needs(pi) {
                        let mut gp = vec![0.0; outer * e * inner];
                        for o in 0..outer {
                            let src_start = (o * total + offset) * inner;
                            let dst_start = o * e * inner;
                            gp[dst_start..dst_start + e * inner]
                                .copy_from_slice(&g[src_start..src_start + e * inner]);
                        }
                        acc(pi, gp);
                    }
                    offset += e;
                }
            }
            Op::Slice { axis, start, len } => {
                if needs(0) {
                    let shape = self.nodes[node.inputs[0]].value.shape();
                    let (outer, extent, inner) = outer_inner(shape, *axis);
                    let mut gx = vec![0.0; outer * extent * inner];
                    for o in 0..outer {
                        let dst_start = (o * extent + start) * inner;
                        let src_start = o * len * inner;
                        gx[dst_start..dst_start + len * inner]
                            .copy_from_slice(&g[src_start..src_start + len * inner]);
                    }
                    acc(0, gx);
                }
            }
            Op::Reshape => {
                if needs(0) {
                    acc(0, g.to_vec());
                }
            }
            Op::SumAll => {
                if needs(0) {
                    let n = self.nodes[node.inputs[0]].value.numel();
                    acc(0, vec![g[0]; n]);
                }
            }
            Op::L1Mean => {
                if needs(0) {
                    let x = self.nodes[node.inputs[0]].value.data();
                    let scale = g[0] / x.len() as f64;
                    // Subgradient at 0 is taken as 0.
                    acc(0, x.iter().map(|&v| scale * sign(v)).collect());
                }
            }
            Op::NormCols { eps } => {
                if needs(0) {
                    let x = self.nodes[node.inputs[0]].value.data();
                    let y = node.value.data();
                    let shape = node.value.shape();
                    let (m, t_dim) = (shape[0], shape[1]);
                    let mut gx = vec![0.0; x.len()];
                    for t in 0..t_dim {
                        let mut mean = 0.0;
                        for r in 0..m {
                            mean += x[r * t_dim + t];
                        }
                        mean /= m as f64;
                        let mut var = 0.0;
                        for r in 0..m {
                            let d = x[r * t_dim + t] - mean;
                            var += d * d;
                        }
                        var /= m as f64;
                        let s = (var + eps).sqrt();
                        let mut g_mean = 0.0;
                        let mut gy_dot = 0.0;
                        for r in 0..m {
                            g_mean += g[r * t_dim + t];
                            gy_dot += g[r * t_dim + t] * y[r * t_dim + t];
                        }
                        g_mean /= m as f64;
                        gy_dot /= m as f64;
                        for r in 0..m {
                            gx[r * t_dim + t] =
                                (g[r * t_dim + t] - g_mean - y[r * t_dim + t] * gy_dot) / s;
                        }
                    }
                    acc(0, gx);
                }
            }
            Op::Istft {
                window,
                hop,
                out_len,
            } => {
                let frames = self.nodes[node.inputs[0]].value.shape()[1];
                let (gre, gim) = istft_adjoint_channel(g, frames, *window, *hop, *out_len);
                if needs(0) {
                    acc(0, gre);
                }
                if needs(1) {
                    acc(1, gim);
                }
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
