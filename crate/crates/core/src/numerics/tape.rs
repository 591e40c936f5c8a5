//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each op pushes a node that
//! owns its output value; [`Tape::backward`] walks the nodes in reverse and
//! applies the per-op adjoint rule. Nodes are appended in execution order, so
//! the node list is already topologically sorted.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::param::DiffTensor;
use super::kernels::{axpy, dot, matmul_acc, matmul_tn_acc, transpose};
use super::tensor::{channel_axis, channel_layout, Tensor};
use crate::{math, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn node_id(self) -> usize {
        self.0
    }
}

/// Adjoint rule for [`Tape::custom`]: receives the op inputs, its output and
/// the upstream gradient, and returns one gradient per input.
pub type CustomBackward = Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    Reshape,
    Mask,
    LastAxisMap,
    TemporalMix,
    SpatialMix,
    ChannelMix { groups: usize },
    ChannelBias,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Prelu,
    Relu6,
    BatchNorm(BatchNormCache),
    ConvTime,
    ChannelNorm,
    Sum,
    Mean,
    Custom(CustomBackward),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Reshape => "reshape",
            Op::Mask => "mask",
            Op::LastAxisMap => "last_axis_map",
            Op::TemporalMix => "temporal_mix",
            Op::SpatialMix => "spatial_mix",
            Op::ChannelMix { .. } => "channel_mix",
            Op::ChannelBias => "channel_bias",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Prelu => "prelu",
            Op::Relu6 => "relu6",
            Op::BatchNorm(_) => "batch_norm",
            Op::ConvTime => "conv_time",
            Op::ChannelNorm => "channel_norm",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Custom(_) => "custom",
        }
    }
}

struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    training: bool,
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Batch-norm evaluation mode.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel statistics of a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Number of values each channel was reduced over.
    pub count: usize,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    // Non-short-circuiting so the scan vectorizes.
    if !data.iter().fold(false, |bad, x| bad | !x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFault { op })
    }
}

/// `(batch, v, t)` for a tensor whose trailing axes are `[.., V, T]`.
fn trailing_vt(shape: &[usize]) -> Option<(usize, usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    let r = shape.len();
    Some((shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1]))
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>) -> Result<Var> {
        check_finite(op.name(), value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a persistent tensor; gradients flow to it iff it requires them.
    pub fn leaf(&mut self, t: &DiffTensor) -> Var {
        self.nodes.push(Node {
            value: t.value.clone(),
            op: Op::Leaf,
            inputs: Vec::new(),
            requires_grad: t.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor that takes part in differentiation.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape, vec![x])
    }

    /// Keeps `a` where `mask` is 1 and writes an exact `+0.0` where it is 0.
    ///
    /// Masked entries receive a zero gradient. Mask entries must be 0 or 1.
    pub fn mask(&mut self, a: Var, mask: Var) -> Result<Var> {
        let (at, mt) = (self.value(a), self.value(mask));
        if at.shape() != mt.shape() {
            return Err(mismatch("mask", at.shape(), mt.shape()));
        }
        if let Some(i) = mt.data().iter().position(|m| *m != 0.0 && *m != 1.0) {
            return Err(Error::contract(alloc::format!(
                "mask entry {i} is {}, expected 0 or 1",
                mt.data()[i]
            )));
        }
        let out = at
            .data()
            .iter()
            .zip(mt.data())
            .map(|(v, m)| if *m == 1.0 { *v } else { 0.0 })
            .collect();
        let shape = at.shape().to_vec();
        self.push(Tensor::from_raw(shape, out), Op::Mask, vec![a, mask])
    }

    /// Linear map over the last axis: `out[.., m] = Σ_k a[m, k] · x[.., k]`.
    ///
    /// With `x` of shape `[N, C, V·T]` and `a` of shape `[V·T, V·T]` this is
    /// the full-adjacency graph product; with `x = [N, C, V, T]` and
    /// `a = [K, T]` it remaps the time axis.
    pub fn last_axis_map(&mut self, x: Var, a: Var) -> Result<Var> {
        let (xs, as_) = (self.value(x).shape(), self.value(a).shape());
        if as_.len() != 2 || xs.is_empty() || *xs.last().unwrap() != as_[1] {
            return Err(mismatch("last_axis_map", xs, as_));
        }
        let (m, k) = (as_[0], as_[1]);
        let rows = self.value(x).len() / k;
        let xd = self.value(x).data();
        let ad = self.value(a).data();
        let mut out = vec![0.0; rows * m];
        matmul_acc(xd, &transpose(ad, m, k), &mut out, rows, k, m);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = m;
        self.push(Tensor::from_raw(shape, out), Op::LastAxisMap, vec![x, a])
    }

    /// Per-joint temporal mixing: `y[.., v, t] = Σ_s a_t[t, s, v] · x[.., v, s]`.
    pub fn temporal_mix(&mut self, x: Var, a_t: Var) -> Result<Var> {
        let (xs, as_) = (self.value(x).shape(), self.value(a_t).shape());
        let (batch, v, t) =
            trailing_vt(xs).ok_or_else(|| mismatch("temporal_mix", xs, as_))?;
        if as_ != [t, t, v] {
            return Err(mismatch("temporal_mix", xs, as_));
        }
        let at = transpose_temporal(self.value(a_t).data(), t, v);
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for b in 0..batch {
            for j in 0..v {
                let base = (b * v + j) * t;
                let xr = &xd[base..base + t];
                for ti in 0..t {
                    let row = &at[(j * t + ti) * t..(j * t + ti + 1) * t];
                    out[base + ti] = dot(row, xr);
                }
            }
        }
        let shape = xs.to_vec();
        self.push(Tensor::from_raw(shape, out), Op::TemporalMix, vec![x, a_t])
    }

    /// Per-frame spatial mixing: `z[.., v, t] = Σ_u a_s[v, u, t] · x[.., u, t]`.
    pub fn spatial_mix(&mut self, x: Var, a_s: Var) -> Result<Var> {
        let (xs, as_) = (self.value(x).shape(), self.value(a_s).shape());
        let (batch, v, t) = trailing_vt(xs).ok_or_else(|| mismatch("spatial_mix", xs, as_))?;
        if as_ != [v, v, t] {
            return Err(mismatch("spatial_mix", xs, as_));
        }
        let ad = self.value(a_s).data();
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        let plane = v * t;
        for b in 0..batch {
            let xb = &xd[b * plane..(b + 1) * plane];
            let ob = &mut out[b * plane..(b + 1) * plane];
            for i in 0..v {
                let orow = &mut ob[i * t..(i + 1) * t];
                for u in 0..v {
                    let arow = &ad[(i * v + u) * t..(i * v + u + 1) * t];
                    let xrow = &xb[u * t..(u + 1) * t];
                    for ((o, a), xv) in orow.iter_mut().zip(arow).zip(xrow) {
                        *o += a * xv;
                    }
                }
            }
        }
        let shape = xs.to_vec();
        self.push(Tensor::from_raw(shape, out), Op::SpatialMix, vec![x, a_s])
    }

    /// Grouped 1x1 channel map.
    ///
    /// `w` has shape `[C_out, C_in / groups]`; output channel `o` reads the
    /// input channels of group `o / (C_out / groups)`. `groups == 1` is a
    /// dense channel matmul, `groups == C_in == C_out` is depth-wise.
    pub fn channel_mix(&mut self, x: Var, w: Var, groups: usize) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        let (n, c_in, r) = channel_layout(xs);
        if ws.len() != 2 || groups == 0 || c_in % groups != 0 || ws[0] % groups != 0 {
            return Err(mismatch("channel_mix", xs, ws));
        }
        let (c_out, gin) = (ws[0], ws[1]);
        if gin * groups != c_in {
            return Err(mismatch("channel_mix", xs, ws));
        }
        let gout = c_out / groups;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; n * c_out * r];
        for b in 0..n {
            let xb = &xd[b * c_in * r..(b + 1) * c_in * r];
            let ob = &mut out[b * c_out * r..(b + 1) * c_out * r];
            if groups == 1 {
                matmul_acc(wd, xb, ob, c_out, c_in, r);
                continue;
            }
            for o in 0..c_out {
                let g = o / gout;
                let orow = &mut ob[o * r..(o + 1) * r];
                for il in 0..gin {
                    let i = g * gin + il;
                    axpy(wd[o * gin + il], &xb[i * r..(i + 1) * r], orow);
                }
            }
        }
        let mut shape = xs.to_vec();
        match channel_axis(shape.len()) {
            Some(ax) => shape[ax] = c_out,
            None => return Err(mismatch("channel_mix", xs, ws)),
        }
        self.push(
            Tensor::from_raw(shape, out),
            Op::ChannelMix { groups },
            vec![x, w],
        )
    }

    /// Adds `b[c]` to every entry of channel `c`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.value(x).shape(), self.value(b).shape());
        let (n, c, r) = channel_layout(xs);
        if bs != [c] {
            return Err(mismatch("channel_bias", xs, bs));
        }
        let bd = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for bi in 0..n {
            for ci in 0..c {
                for o in &mut out[(bi * c + ci) * r..(bi * c + ci + 1) * r] {
                    *o += bd[ci];
                }
            }
        }
        let shape = xs.to_vec();
        self.push(Tensor::from_raw(shape, out), Op::ChannelBias, vec![x, b])
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(mismatch(op.name(), at.shape(), bt.shape()));
        }
        let out = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = at.shape().to_vec();
        self.push(Tensor::from_raw(shape, out), op, vec![a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let xt = self.value(x);
        let out = xt.data().iter().map(|v| v * s).collect();
        let shape = xt.shape().to_vec();
        self.push(Tensor::from_raw(shape, out), Op::Scale(s), vec![x])
    }

    /// Parametric ReLU with one learned slope per channel.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let (xs, ss) = (self.value(x).shape(), self.value(slope).shape());
        let (n, c, r) = channel_layout(xs);
        if ss != [c] {
            return Err(mismatch("prelu", xs, ss));
        }
        let sd = self.value(slope).data();
        let mut out = self.value(x).data().to_vec();
        for b in 0..n {
            for ci in 0..c {
                let a = sd[ci];
                for o in &mut out[(b * c + ci) * r..(b * c + ci + 1) * r] {
                    if *o < 0.0 {
                        *o *= a;
                    }
                }
            }
        }
        let shape = xs.to_vec();
        self.push(Tensor::from_raw(shape, out), Op::Prelu, vec![x, slope])
    }

    /// `min(max(x, 0), 6)`.
    pub fn relu6(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let out = xt.data().iter().map(|v| v.clamp(0.0, 6.0)).collect();
        let shape = xt.shape().to_vec();
        self.push(Tensor::from_raw(shape, out), Op::Relu6, vec![x])
    }

    /// Per-channel batch normalization over the batch and trailing axes,
    /// followed by the affine `gamma · x̂ + beta`.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// update its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.value(x).shape();
        let (n, c, r) = channel_layout(xs);
        for p in [gamma, beta] {
            let ps = self.value(p).shape();
            if ps != [c] {
                return Err(mismatch("batch_norm", xs, ps));
            }
        }
        if !(eps > 0.0) {
            return Err(Error::contract("batch_norm epsilon must be positive"));
        }
        let xd = self.value(x).data();
        let count = n * r;
        let (mean, var, training) = match mode {
            BatchNormMode::Train => {
                if count < 2 {
                    return Err(Error::contract(
                        "batch_norm in training mode needs at least two values per channel",
                    ));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += xd[(b * c + ci) * r..(b * c + ci + 1) * r].iter().sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut q = 0.0;
                    for b in 0..n {
                        for v in &xd[(b * c + ci) * r..(b * c + ci + 1) * r] {
                            q += (v - m) * (v - m);
                        }
                    }
                    mean[ci] = m;
                    var[ci] = q / count as f64;
                }
                (mean, var, true)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(mismatch("batch_norm", xs, &[mean.len(), var.len()]));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + eps)).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..n {
            for ci in 0..c {
                let span = (b * c + ci) * r..(b * c + ci + 1) * r;
                for ((h, o), v) in xhat[span.clone()]
                    .iter_mut()
                    .zip(&mut out[span.clone()])
                    .zip(&xd[span])
                {
                    *h = (v - mean[ci]) * inv_std[ci];
                    *o = gd[ci] * *h + bd[ci];
                }
            }
        }
        let stats = training.then_some(BatchStats {
            mean,
            var,
            count,
        });
        let shape = xs.to_vec();
        let cache = BatchNormCache {
            xhat,
            inv_std,
            training,
        };
        let y = self.push(
            Tensor::from_raw(shape, out),
            Op::BatchNorm(cache),
            vec![x, gamma, beta],
        )?;
        Ok((y, stats))
    }

    /// Depth-wise 1-D convolution along the last axis with symmetric zero
    /// padding: `out[.., c, .., l] = Σ_j k[c, j] · x[.., c, .., l + j − (w−1)/2]`.
    pub fn conv_time(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (xs, ks) = (self.value(x).shape(), self.value(kernel).shape());
        let (n, c, r) = channel_layout(xs);
        if ks.len() != 2 || ks[0] != c || ks[1] % 2 == 0 || xs.len() < 2 {
            return Err(mismatch("conv_time", xs, ks));
        }
        let width = ks[1];
        let len = *xs.last().unwrap();
        if width > len {
            return Err(Error::contract(alloc::format!(
                "conv_time kernel width {width} exceeds sequence length {len}"
            )));
        }
        let pad = (width - 1) / 2;
        let rows = r / len;
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let mut out = vec![0.0; xd.len()];
        for b in 0..n {
            for ci in 0..c {
                let kr = &kd[ci * width..(ci + 1) * width];
                for row in 0..rows {
                    let base = ((b * c + ci) * rows + row) * len;
                    let xr = &xd[base..base + len];
                    let or = &mut out[base..base + len];
                    for (j, kv) in kr.iter().enumerate() {
                        let (lo, hi, d) = conv_span(j, pad, len);
                        axpy(*kv, &xr[lo + d - pad..hi + d - pad], &mut or[lo..hi]);
                    }
                }
            }
        }
        let shape = xs.to_vec();
        self.push(Tensor::from_raw(shape, out), Op::ConvTime, vec![x, kernel])
    }

    /// Euclidean norm over the channel axis, which is removed.
    pub fn channel_norm(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let ax = channel_axis(xs.len()).ok_or_else(|| mismatch("channel_norm", xs, &[]))?;
        let (n, c, r) = channel_layout(xs);
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * r];
        for b in 0..n {
            for ci in 0..c {
                let xr = &xd[(b * c + ci) * r..(b * c + ci + 1) * r];
                for (o, v) in out[b * r..(b + 1) * r].iter_mut().zip(xr) {
                    *o += v * v;
                }
            }
        }
        for o in &mut out {
            *o = math::sqrt(*o);
        }
        let mut shape = xs.to_vec();
        shape.remove(ax);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(Tensor::from_raw(shape, out), Op::ChannelNorm, vec![x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.data().iter().sum::<f64>() / xt.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean, vec![x])
    }

    /// Records an op whose value was computed by the caller, with a
    /// caller-supplied adjoint rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Result<Var> {
        self.push(value, Op::Custom(backward), inputs.to_vec())
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0];
        if rv.value.len() != 1 {
            return Err(Error::contract(alloc::format!(
                "backward root must be scalar, got shape {:?}",
                rv.value.shape()
            )));
        }
        if !rv.requires_grad {
            return Err(Error::EmptyGradient);
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::from_raw(rv.value.shape().to_vec(), vec![1.0]));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = self.adjoint(node, &g, &needs);
            for ((var, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
                if !need {
                    continue;
                }
                let Some(ig) = ig else { continue };
                check_finite(node.op.name(), ig.data())?;
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn adjoint(&self, node: &Node, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let val = |i: usize| &self.nodes[node.inputs[i].0].value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Reshape => {
                let x = val(0);
                vec![Some(Tensor::from_raw(x.shape().to_vec(), gd.to_vec()))]
            }
            Op::Mask => {
                let m = val(1);
                vec![
                    needs[0].then(|| zip_map(g, m, |gv, mv| if mv == 1.0 { gv } else { 0.0 })),
                    None,
                ]
            }
            Op::LastAxisMap => {
                let (x, a) = (val(0), val(1));
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let rows = x.len() / k;
                let (xd, ad) = (x.data(), a.data());
                let mut dx = needs[0].then(|| vec![0.0; x.len()]);
                let mut da = needs[1].then(|| vec![0.0; a.len()]);
                if let Some(dx) = dx.as_mut() {
                    matmul_acc(gd, ad, dx, rows, m, k);
                }
                if let Some(da) = da.as_mut() {
                    matmul_tn_acc(gd, xd, da, m, rows, k);
                }
                vec![wrap(x, dx), wrap(a, da)]
            }
            Op::TemporalMix => {
                let (x, a) = (val(0), val(1));
                let (batch, v, t) = trailing_vt(x.shape()).unwrap();
                let at = transpose_temporal(a.data(), t, v);
                let xd = x.data();
                let mut dx = needs[0].then(|| vec![0.0; x.len()]);
                let mut dat = needs[1].then(|| vec![0.0; a.len()]);
                for b in 0..batch {
                    for j in 0..v {
                        let base = (b * v + j) * t;
                        let xr = &xd[base..base + t];
                        for ti in 0..t {
                            let gv = gd[base + ti];
                            let at_row = (j * t + ti) * t..(j * t + ti + 1) * t;
                            if let Some(dx) = dx.as_mut() {
                                axpy(gv, &at[at_row.clone()], &mut dx[base..base + t]);
                            }
                            if let Some(dat) = dat.as_mut() {
                                axpy(gv, xr, &mut dat[at_row]);
                            }
                        }
                    }
                }
                let da = dat.map(|d| untranspose_temporal(&d, t, v));
                vec![wrap(x, dx), wrap(a, da)]
            }
            Op::SpatialMix => {
                let (x, a) = (val(0), val(1));
                let (batch, v, t) = trailing_vt(x.shape()).unwrap();
                let (xd, ad) = (x.data(), a.data());
                let plane = v * t;
                let mut dx = needs[0].then(|| vec![0.0; x.len()]);
                let mut da = needs[1].then(|| vec![0.0; a.len()]);
                for b in 0..batch {
                    let gb = &gd[b * plane..(b + 1) * plane];
                    let xb = &xd[b * plane..(b + 1) * plane];
                    for i in 0..v {
                        let grow = &gb[i * t..(i + 1) * t];
                        for u in 0..v {
                            let arange = (i * v + u) * t..(i * v + u + 1) * t;
                            if let Some(dx) = dx.as_mut() {
                                let dxr = &mut dx[b * plane + u * t..b * plane + (u + 1) * t];
                                for ((d, av), gv) in dxr.iter_mut().zip(&ad[arange.clone()]).zip(grow) {
                                    *d += av * gv;
                                }
                            }
                            if let Some(da) = da.as_mut() {
                                let xrow = &xb[u * t..(u + 1) * t];
                                for ((d, xv), gv) in da[arange].iter_mut().zip(xrow).zip(grow) {
                                    *d += xv * gv;
                                }
                            }
                        }
                    }
                }
                vec![wrap(x, dx), wrap(a, da)]
            }
            Op::ChannelMix { groups } => {
                let (x, w) = (val(0), val(1));
                let (n, c_in, r) = channel_layout(x.shape());
                let (c_out, gin) = (w.shape()[0], w.shape()[1]);
                let gout = c_out / groups;
                let (xd, wd) = (x.data(), w.data());
                let mut dx = needs[0].then(|| vec![0.0; x.len()]);
                let mut dw = needs[1].then(|| vec![0.0; w.len()]);
                if *groups == 1 {
                    let wt = transpose(wd, c_out, c_in);
                    for b in 0..n {
                        let gb = &gd[b * c_out * r..(b + 1) * c_out * r];
                        let xb = &xd[b * c_in * r..(b + 1) * c_in * r];
                        if let Some(dx) = dx.as_mut() {
                            matmul_acc(&wt, gb, &mut dx[b * c_in * r..(b + 1) * c_in * r], c_in, c_out, r);
                        }
                        if let Some(dw) = dw.as_mut() {
                            let xt = transpose(xb, c_in, r);
                            matmul_acc(gb, &xt, dw, c_out, r, c_in);
                        }
                    }
                    return vec![wrap(x, dx), wrap(w, dw)];
                }
                for b in 0..n {
                    for o in 0..c_out {
                        let g = o / gout;
                        let grow = &gd[(b * c_out + o) * r..(b * c_out + o + 1) * r];
                        for il in 0..gin {
                            let i = g * gin + il;
                            let xs = (b * c_in + i) * r..(b * c_in + i + 1) * r;
                            if let Some(dx) = dx.as_mut() {
                                axpy(wd[o * gin + il], grow, &mut dx[xs.clone()]);
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw[o * gin + il] += dot(grow, &xd[xs]);
                            }
                        }
                    }
                }
                vec![wrap(x, dx), wrap(w, dw)]
            }
            Op::ChannelBias => {
                let (x, b) = (val(0), val(1));
                let (n, c, r) = channel_layout(x.shape());
                let db = needs[1].then(|| {
                    let mut db = vec![0.0; c];
                    for bi in 0..n {
                        for (ci, d) in db.iter_mut().enumerate() {
                            *d += gd[(bi * c + ci) * r..(bi * c + ci + 1) * r].iter().sum::<f64>();
                        }
                    }
                    db
                });
                vec![needs[0].then(|| g.clone()), wrap(b, db)]
            }
            Op::Add => vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())],
            Op::Sub => vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| map(g, |v| -v)),
            ],
            Op::Mul => {
                let (a, b) = (val(0), val(1));
                vec![
                    needs[0].then(|| zip_map(g, b, |gv, bv| gv * bv)),
                    needs[1].then(|| zip_map(g, a, |gv, av| gv * av)),
                ]
            }
            Op::Scale(s) => vec![needs[0].then(|| map(g, |v| v * s))],
            Op::Prelu => {
                let (x, s) = (val(0), val(1));
                let (n, c, r) = channel_layout(x.shape());
                let (xd, sd) = (x.data(), s.data());
                let mut dx = needs[0].then(|| vec![0.0; x.len()]);
                let mut ds = needs[1].then(|| vec![0.0; c]);
                for b in 0..n {
                    for ci in 0..c {
                        for idx in (b * c + ci) * r..(b * c + ci + 1) * r {
                            let neg = xd[idx] < 0.0;
                            if let Some(dx) = dx.as_mut() {
                                dx[idx] = if neg { gd[idx] * sd[ci] } else { gd[idx] };
                            }
                            if let Some(ds) = ds.as_mut() {
                                if neg {
                                    ds[ci] += gd[idx] * xd[idx];
                                }
                            }
                        }
                    }
                }
                vec![wrap(x, dx), wrap(s, ds)]
            }
            Op::Relu6 => {
                let x = val(0);
                vec![needs[0].then(|| {
                    zip_map(g, x, |gv, xv| if xv > 0.0 && xv < 6.0 { gv } else { 0.0 })
                })]
            }
            Op::BatchNorm(cache) => {
                let (x, gamma) = (val(0), val(1));
                let (n, c, r) = channel_layout(x.shape());
                let gam = gamma.data();
                let count = (n * r) as f64;
                let mut dx = needs[0].then(|| vec![0.0; x.len()]);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ci in 0..c {
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    for b in 0..n {
                        let span = (b * c + ci) * r..(b * c + ci + 1) * r;
                        for (gv, h) in gd[span.clone()].iter().zip(&cache.xhat[span]) {
                            sg += gv;
                            sgx += gv * h;
                        }
                    }
                    dgamma[ci] = sgx;
                    dbeta[ci] = sg;
                    if let Some(dx) = dx.as_mut() {
                        let k = gam[ci] * cache.inv_std[ci];
                        for b in 0..n {
                            let span = (b * c + ci) * r..(b * c + ci + 1) * r;
                            for ((d, gv), h) in dx[span.clone()]
                                .iter_mut()
                                .zip(&gd[span.clone()])
                                .zip(&cache.xhat[span])
                            {
                                *d = if cache.training {
                                    k * (gv - sg / count - h * sgx / count)
                                } else {
                                    k * gv
                                };
                            }
                        }
                    }
                }
                vec![
                    wrap(x, dx),
                    needs[1].then(|| Tensor::from_raw(vec![c], dgamma)),
                    needs[2].then(|| Tensor::from_raw(vec![c], dbeta)),
                ]
            }
            Op::ConvTime => {
                let (x, k) = (val(0), val(1));
                let (n, c, r) = channel_layout(x.shape());
                let width = k.shape()[1];
                let len = *x.shape().last().unwrap();
                let pad = (width - 1) / 2;
                let rows = r / len;
                let (xd, kd) = (x.data(), k.data());
                let mut dx = needs[0].then(|| vec![0.0; x.len()]);
                let mut dk = needs[1].then(|| vec![0.0; k.len()]);
                for b in 0..n {
                    for ci in 0..c {
                        for row in 0..rows {
                            let base = ((b * c + ci) * rows + row) * len;
                            let grow = &gd[base..base + len];
                            for j in 0..width {
                                let (lo, hi, d) = conv_span(j, pad, len);
                                let src = base + lo + d - pad..base + hi + d - pad;
                                if let Some(dx) = dx.as_mut() {
                                    axpy(kd[ci * width + j], &grow[lo..hi], &mut dx[src.clone()]);
                                }
                                if let Some(dk) = dk.as_mut() {
                                    dk[ci * width + j] += dot(&xd[src], &grow[lo..hi]);
                                }
                            }
                        }
                    }
                }
                vec![wrap(x, dx), wrap(k, dk)]
            }
            Op::ChannelNorm => {
                let x = val(0);
                let (n, c, r) = channel_layout(x.shape());
                let norms = node.value.data();
                let xd = x.data();
                let mut dx = vec![0.0; x.len()];
                for b in 0..n {
                    for ci in 0..c {
                        for j in 0..r {
                            let nv = norms[b * r + j];
                            let idx = (b * c + ci) * r + j;
                            // Subgradient 0 at the origin.
                            if nv > 0.0 {
                                dx[idx] = gd[b * r + j] * xd[idx] / nv;
                            }
                        }
                    }
                }
                vec![Some(Tensor::from_raw(x.shape().to_vec(), dx))]
            }
            Op::Sum => {
                let x = val(0);
                vec![Some(Tensor::full(x.shape(), gd[0]))]
            }
            Op::Mean => {
                let x = val(0);
                vec![Some(Tensor::full(x.shape(), gd[0] / x.len() as f64))]
            }
            Op::Custom(rule) => {
                let inputs: Vec<&Tensor> = (0..node.inputs.len()).map(val).collect();
                rule(&inputs, &node.value, g).into_iter().map(Some).collect()
            }
        }
    }
}

fn wrap(like: &Tensor, data: Option<Vec<f64>>) -> Option<Tensor> {
    data.map(|d| Tensor::from_raw(like.shape().to_vec(), d))
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_raw(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_raw(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect(),
    )
}

/// Output range `lo..hi` touched by kernel tap `j`, and the tap index `j`
/// itself, so the source range is `lo + j - pad .. hi + j - pad`.
fn conv_span(j: usize, pad: usize, len: usize) -> (usize, usize, usize) {
    let lo = pad.saturating_sub(j);
    let hi = (len + pad).saturating_sub(j).min(len);
    (lo, hi.max(lo), j)
}

/// `[t, s, v]` → `[v, t, s]` so each joint's frame-mixing matrix is contiguous.
fn transpose_temporal(a: &[f64], t: usize, v: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for ti in 0..t {
        for s in 0..t {
            for j in 0..v {
                out[(j * t + ti) * t + s] = a[(ti * t + s) * v + j];
            }
        }
    }
    out
}

fn untranspose_temporal(a: &[f64], t: usize, v: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for ti in 0..t {
        for s in 0..t {
            for j in 0..v {
                out[(ti * t + s) * v + j] = a[(j * t + ti) * t + s];
            }
        }
    }
    out
}
