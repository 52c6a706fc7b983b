//! Differentiable tensor values and the forward operations that record the
//! computation graph.
//!
//! Every backward rule is itself written with these operations, so a gradient
//! computed with `create_graph` is an ordinary graph node that can be
//! differentiated again.

use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{GradError, Result};
use crate::kernels::{self, ConvDims, ConvGeom};
use crate::tensor::{Shape, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x + self.w <= width && self.y + self.h <= height
    }
}

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulConst(Var, Tensor),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    ConvInputGrad { g: Var, w: Var, geom: ConvGeom },
    ConvWeightGrad { x: Var, g: Var, geom: ConvGeom },
    Upsample(Var, usize),
    SumPool(Var, usize),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Mean(Var),
    Expand(Var),
    Reshape(Var),
    Slice { x: Var, start: [usize; 4] },
    Pad { x: Var, start: [usize; 4] },
    Concat(Vec<Var>),
    BroadcastChannels(Var),
    SumChannels(Var),
    BiasExpand(Var),
    BiasReduce(Var),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MulConst(..) => "mul_const",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvInputGrad { .. } => "conv_transpose2d",
            Op::ConvWeightGrad { .. } => "conv2d_weight_grad",
            Op::Upsample(..) => "upsample_nearest",
            Op::SumPool(..) => "sum_pool",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Abs(..) => "abs",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Expand(..) => "expand",
            Op::Reshape(..) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::Concat(..) => "concat_channels",
            Op::BroadcastChannels(..) => "broadcast_channels",
            Op::SumChannels(..) => "sum_channels",
            Op::BiasExpand(..) => "bias_expand",
            Op::BiasReduce(..) => "bias_reduce",
        }
    }

    pub(crate) fn parents(&self) -> Vec<&Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
            Op::Conv2d { x, w, .. } => vec![x, w],
            Op::ConvInputGrad { g, w, .. } => vec![g, w],
            Op::ConvWeightGrad { x, g, .. } => vec![x, g],
            Op::Concat(parts) => parts.iter().collect(),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::MulConst(a, _)
            | Op::Upsample(a, _)
            | Op::SumPool(a, _)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::LeakyRelu(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Expand(a)
            | Op::Reshape(a)
            | Op::Slice { x: a, .. }
            | Op::Pad { x: a, .. }
            | Op::BroadcastChannels(a)
            | Op::SumChannels(a)
            | Op::BiasExpand(a)
            | Op::BiasReduce(a) => vec![a],
        }
    }
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// A tensor participating in a differentiation graph.
///
/// Cloning is cheap and shares the node. Graphs are single-threaded; to use a
/// value on another thread, move its [`Tensor`] and rebuild a leaf there.
#[derive(Clone)]
pub struct Var(pub(crate) Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Var#{}({}, grad={}, {:?})",
            self.0.id,
            self.0.op.name(),
            self.0.requires_grad,
            self.0.value
        )
    }
}

fn same_shape(op: &str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(GradError::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Var {
    /// Constant leaf: never receives a gradient.
    pub fn constant(value: Tensor) -> Self {
        Var(Rc::new(Node { id: next_id(), value, op: Op::Leaf, requires_grad: false }))
    }

    /// Trainable leaf.
    pub fn param(value: Tensor) -> Self {
        Var(Rc::new(Node { id: next_id(), value, op: Op::Leaf, requires_grad: true }))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(Tensor::scalar(v))
    }

    fn record(value: Tensor, op: Op) -> Result<Self> {
        if !value.is_finite() {
            return Err(GradError::NonFinite(op.name().to_string()));
        }
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(Var(Rc::new(Node { id: next_id(), value, op, requires_grad })))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &Shape {
        self.0.value.shape()
    }

    pub fn dims(&self) -> &[usize] {
        self.0.value.dims()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    /// Scalar value of a single-element var.
    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Var {
        if !self.requires_grad() {
            return self.clone();
        }
        Var::constant(self.0.value.clone())
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&self, other: &Var) -> Result<Var> {
        same_shape("add", self, other)?;
        let v = self.value().zip_map(other.value(), |a, b| a + b)?;
        Var::record(v, Op::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        same_shape("sub", self, other)?;
        let v = self.value().zip_map(other.value(), |a, b| a - b)?;
        Var::record(v, Op::Sub(self.clone(), other.clone()))
    }

    pub fn neg(&self) -> Result<Var> {
        Var::record(self.value().map(|a| -a), Op::Neg(self.clone()))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&self, c: f64) -> Result<Var> {
        Var::record(self.value().map(|a| a * c), Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var> {
        Var::record(self.value().map(|a| a + c), Op::AddScalar(self.clone()))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        same_shape("mul", self, other)?;
        let v = self.value().zip_map(other.value(), |a, b| a * b)?;
        Var::record(v, Op::Mul(self.clone(), other.clone()))
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        same_shape("div", self, other)?;
        let v = self.value().zip_map(other.value(), |a, b| a / b)?;
        Var::record(v, Op::Div(self.clone(), other.clone()))
    }

    /// Elementwise product with a constant tensor that never carries gradient.
    pub fn mul_const(&self, c: &Tensor) -> Result<Var> {
        let v = self.value().zip_map(c, |a, b| a * b)?;
        Var::record(v, Op::MulConst(self.clone(), c.clone()))
    }

    pub fn abs(&self) -> Result<Var> {
        Var::record(self.value().map(f64::abs), Op::Abs(self.clone()))
    }

    pub fn square(&self) -> Result<Var> {
        Var::record(self.value().map(|a| a * a), Op::Square(self.clone()))
    }

    pub fn sqrt(&self) -> Result<Var> {
        if self.value().data().iter().any(|&a| a < 0.0) {
            return Err(GradError::NonFinite("sqrt of negative value".into()));
        }
        Var::record(self.value().map(f64::sqrt), Op::Sqrt(self.clone()))
    }

    pub fn sigmoid(&self) -> Result<Var> {
        Var::record(self.value().map(sigmoid), Op::Sigmoid(self.clone()))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Result<Var> {
        Var::record(self.value().map(softplus), Op::Softplus(self.clone()))
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var> {
        Var::record(
            self.value().map(|a| if a > 0.0 { a } else { a * slope }),
            Op::LeakyRelu(self.clone(), slope),
        )
    }

    // ---- reductions and shape plumbing -------------------------------------

    pub fn sum(&self) -> Result<Var> {
        Var::record(Tensor::scalar(self.value().sum()), Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Result<Var> {
        Var::record(Tensor::scalar(self.value().mean()), Op::Mean(self.clone()))
    }

    /// Broadcasts a single-element var to `shape`.
    pub fn expand(&self, shape: impl Into<Shape>) -> Result<Var> {
        if !self.shape().is_scalar() {
            return Err(GradError::Shape(format!("expand from non-scalar {:?}", self.shape())));
        }
        let v = Tensor::full(shape, self.item());
        Var::record(v, Op::Expand(self.clone()))
    }

    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Var> {
        let v = self.value().reshape(shape)?;
        Var::record(v, Op::Reshape(self.clone()))
    }

    /// Sub-block of an NCHW tensor starting at `start` with extent `size`.
    pub fn slice(&self, start: [usize; 4], size: [usize; 4]) -> Result<Var> {
        let (n, c, h, w) = self.shape().nchw()?;
        let full = [n, c, h, w];
        for k in 0..4 {
            if start[k] + size[k] > full[k] || size[k] == 0 {
                return Err(GradError::Shape(format!(
                    "slice start {start:?} size {size:?} outside {full:?}"
                )));
            }
        }
        let v = slice_nchw(self.value().data(), full, start, size);
        Var::record(Tensor::from_parts(Shape::new(size), v), Op::Slice { x: self.clone(), start })
    }

    /// Places this NCHW tensor at `start` inside a zero tensor of shape `full`.
    pub fn pad(&self, start: [usize; 4], full: [usize; 4]) -> Result<Var> {
        let (n, c, h, w) = self.shape().nchw()?;
        let size = [n, c, h, w];
        for k in 0..4 {
            if start[k] + size[k] > full[k] {
                return Err(GradError::Shape(format!(
                    "pad of {size:?} at {start:?} exceeds {full:?}"
                )));
            }
        }
        let v = pad_nchw(self.value().data(), size, start, full);
        Var::record(Tensor::from_parts(Shape::new(full), v), Op::Pad { x: self.clone(), start })
    }

    /// Spatial crop of every plane.
    pub fn crop(&self, rect: Rect) -> Result<Var> {
        let (n, c, _, _) = self.shape().nchw()?;
        self.slice([0, 0, rect.y, rect.x], [n, c, rect.h, rect.w])
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| GradError::Invalid("concat of zero tensors".into()))?;
        let (n, _, h, w) = first.shape().nchw()?;
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.shape().nchw()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(GradError::Shape(format!(
                    "concat_channels: {:?} vs {:?}",
                    first.shape(),
                    p.shape()
                )));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for p in parts {
                let pc = p.dims()[1];
                out.extend_from_slice(&p.value().data()[b * pc * plane..(b + 1) * pc * plane]);
            }
        }
        Var::record(
            Tensor::from_parts(Shape::new([n, total_c, h, w]), out),
            Op::Concat(parts.to_vec()),
        )
    }

    /// Repeats a single-channel `[N,1,H,W]` map across `c` channels.
    pub fn broadcast_channels(&self, c: usize) -> Result<Var> {
        let (n, c1, h, w) = self.shape().nchw()?;
        if c1 != 1 {
            return Err(GradError::Shape(format!("broadcast_channels from {:?}", self.shape())));
        }
        let plane = h * w;
        let src = self.value().data();
        let mut out = Vec::with_capacity(n * c * plane);
        for b in 0..n {
            for _ in 0..c {
                out.extend_from_slice(&src[b * plane..(b + 1) * plane]);
            }
        }
        Var::record(
            Tensor::from_parts(Shape::new([n, c, h, w]), out),
            Op::BroadcastChannels(self.clone()),
        )
    }

    /// Sums over the channel axis, keeping it as size 1.
    pub fn sum_channels(&self) -> Result<Var> {
        let (n, c, h, w) = self.shape().nchw()?;
        let plane = h * w;
        let src = self.value().data();
        let mut out = vec![0.0; n * plane];
        for b in 0..n {
            let dst = &mut out[b * plane..(b + 1) * plane];
            for ch in 0..c {
                let s = &src[(b * c + ch) * plane..][..plane];
                for (d, &v) in dst.iter_mut().zip(s) {
                    *d += v;
                }
            }
        }
        Var::record(Tensor::from_parts(Shape::new([n, 1, h, w]), out), Op::SumChannels(self.clone()))
    }

    /// Adds a per-channel bias vector `[C]` to an NCHW tensor.
    pub fn add_bias(&self, bias: &Var) -> Result<Var> {
        let (n, c, h, w) = self.shape().nchw()?;
        let expanded = bias.bias_expand([n, c, h, w])?;
        self.add(&expanded)
    }

    pub(crate) fn bias_expand(&self, full: [usize; 4]) -> Result<Var> {
        let [n, c, h, w] = full;
        if self.dims() != [c] {
            return Err(GradError::Shape(format!("bias {:?} for {c} channels", self.shape())));
        }
        let plane = h * w;
        let b = self.value().data();
        let mut out = Vec::with_capacity(n * c * plane);
        for _ in 0..n {
            for &bv in b {
                out.extend(std::iter::repeat_n(bv, plane));
            }
        }
        Var::record(Tensor::from_parts(Shape::new(full), out), Op::BiasExpand(self.clone()))
    }

    pub(crate) fn bias_reduce(&self) -> Result<Var> {
        let (n, c, h, w) = self.shape().nchw()?;
        let plane = h * w;
        let src = self.value().data();
        let mut out = vec![0.0; c];
        for b in 0..n {
            for (ch, o) in out.iter_mut().enumerate() {
                *o += src[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
            }
        }
        Var::record(Tensor::from_parts(Shape::new([c]), out), Op::BiasReduce(self.clone()))
    }

    // ---- convolution family -------------------------------------------------

    fn conv_dims(x: &Shape, w: &Shape, geom: ConvGeom) -> Result<ConvDims> {
        let (n, ci, h, wd) = x.nchw()?;
        let (co, wci, kh, kw) = w.nchw()?;
        if ci != wci {
            return Err(GradError::Shape(format!("conv2d: input {x:?} vs kernel {w:?}")));
        }
        let ho = geom.out_len(h, kh);
        let wo = geom.out_len(wd, kw);
        match (ho, wo) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => {
                Ok(ConvDims { n, ci, h, w: wd, co, kh, kw, ho, wo })
            }
            _ => Err(GradError::Shape(format!("conv2d: kernel {w:?} larger than padded input {x:?}"))),
        }
    }

    /// 2-D cross-correlation with zero padding, `[N,Ci,H,W] x [Co,Ci,K,K]`.
    pub fn conv2d(&self, w: &Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom { stride, pad };
        let d = Var::conv_dims(self.shape(), w.shape(), geom)?;
        let out = kernels::conv2d(self.value().data(), w.value().data(), &d, geom);
        Var::record(
            Tensor::from_parts(Shape::new([d.n, d.co, d.ho, d.wo]), out),
            Op::Conv2d { x: self.clone(), w: w.clone(), geom },
        )
    }

    /// Transposed convolution: the adjoint of `conv2d(., w, stride, pad)` mapping
    /// a `[N,Co,Ho,Wo]` tensor back to `[N,Ci,out_h,out_w]`.
    pub fn conv_transpose2d(
        &self,
        w: &Var,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
    ) -> Result<Var> {
        let geom = ConvGeom { stride, pad };
        let (n, co, ho, wo) = self.shape().nchw()?;
        let (wco, ci, kh, kw) = w.shape().nchw()?;
        let (h, wd) = out_hw;
        if wco != co || geom.out_len(h, kh) != Some(ho) || geom.out_len(wd, kw) != Some(wo) {
            return Err(GradError::Shape(format!(
                "conv_transpose2d: {:?} with kernel {:?} cannot produce {out_hw:?}",
                self.shape(),
                w.shape()
            )));
        }
        let d = ConvDims { n, ci, h, w: wd, co, kh, kw, ho, wo };
        let out = kernels::conv2d_input_grad(self.value().data(), w.value().data(), &d, geom);
        Var::record(
            Tensor::from_parts(Shape::new([n, ci, h, wd]), out),
            Op::ConvInputGrad { g: self.clone(), w: w.clone(), geom },
        )
    }

    /// Kernel-shaped correlation of `self` (conv input) with `gout` (conv
    /// output gradient): the adjoint of conv2d with respect to its kernel.
    pub(crate) fn conv_weight_grad(
        &self,
        gout: &Var,
        geom: ConvGeom,
        kernel: (usize, usize),
    ) -> Result<Var> {
        let (n, ci, h, wd) = self.shape().nchw()?;
        let (gn, co, ho, wo) = gout.shape().nchw()?;
        if gn != n {
            return Err(GradError::Shape("conv_weight_grad batch mismatch".into()));
        }
        let d = ConvDims { n, ci, h, w: wd, co, kh: kernel.0, kw: kernel.1, ho, wo };
        let out = kernels::conv2d_weight_grad(self.value().data(), gout.value().data(), &d, geom);
        Var::record(
            Tensor::from_parts(Shape::new([co, ci, kernel.0, kernel.1]), out),
            Op::ConvWeightGrad { x: self.clone(), g: gout.clone(), geom },
        )
    }

    pub fn upsample_nearest(&self, factor: usize) -> Result<Var> {
        let (n, c, h, w) = self.shape().nchw()?;
        if factor == 0 {
            return Err(GradError::Invalid("upsample factor 0".into()));
        }
        let out = kernels::upsample_nearest(self.value().data(), n * c, h, w, factor);
        Var::record(
            Tensor::from_parts(Shape::new([n, c, h * factor, w * factor]), out),
            Op::Upsample(self.clone(), factor),
        )
    }

    /// Sum over non-overlapping `factor x factor` blocks.
    pub fn sum_pool(&self, factor: usize) -> Result<Var> {
        let (n, c, h, w) = self.shape().nchw()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(GradError::Shape(format!("sum_pool({factor}) of {:?}", self.shape())));
        }
        let out = kernels::sum_pool(self.value().data(), n * c, h, w, factor);
        Var::record(
            Tensor::from_parts(Shape::new([n, c, h / factor, w / factor]), out),
            Op::SumPool(self.clone(), factor),
        )
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn slice_nchw(src: &[f64], full: [usize; 4], start: [usize; 4], size: [usize; 4]) -> Vec<f64> {
    let mut out = Vec::with_capacity(size.iter().product());
    for n in 0..size[0] {
        for c in 0..size[1] {
            for y in 0..size[2] {
                let base = (((start[0] + n) * full[1] + start[1] + c) * full[2] + start[2] + y)
                    * full[3]
                    + start[3];
                out.extend_from_slice(&src[base..base + size[3]]);
            }
        }
    }
    out
}

fn pad_nchw(src: &[f64], size: [usize; 4], start: [usize; 4], full: [usize; 4]) -> Vec<f64> {
    let mut out = vec![0.0; full.iter().product()];
    let mut i = 0;
    for n in 0..size[0] {
        for c in 0..size[1] {
            for y in 0..size[2] {
                let base = (((start[0] + n) * full[1] + start[1] + c) * full[2] + start[2] + y)
                    * full[3]
                    + start[3];
                out[base..base + size[3]].copy_from_slice(&src[i..i + size[3]]);
                i += size[3];
            }
        }
    }
    out
}

/// Gradient contributions of one node to its parents, in parent order.
/// `None` marks parents that do not require gradient.
pub(crate) fn backward_rule(out: &Var, g: &Var, create_graph: bool) -> Result<Vec<Option<Var>>> {
    let keep = |v: &Var| if create_graph { v.clone() } else { v.detach() };
    let want = |v: &Var| v.requires_grad();
    let node = &out.0;
    let grads = match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![want(a).then(|| g.clone()), want(b).then(|| g.clone())],
        Op::Sub(a, b) => vec![
            want(a).then(|| g.clone()),
            if want(b) { Some(g.neg()?) } else { None },
        ],
        Op::Neg(_) => vec![Some(g.neg()?)],
        Op::Scale(_, c) => vec![Some(g.scale(*c)?)],
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::Mul(a, b) => vec![
            if want(a) { Some(g.mul(&keep(b))?) } else { None },
            if want(b) { Some(g.mul(&keep(a))?) } else { None },
        ],
        Op::Div(a, b) => {
            let bk = keep(b);
            vec![
                if want(a) { Some(g.div(&bk)?) } else { None },
                if want(b) { Some(g.mul(&keep(out))?.div(&bk)?.neg()?) } else { None },
            ]
        }
        Op::MulConst(_, c) => vec![Some(g.mul_const(c)?)],
        Op::Conv2d { x, w, geom } => {
            let (h, wd) = (x.dims()[2], x.dims()[3]);
            let (kh, kw) = (w.dims()[2], w.dims()[3]);
            vec![
                if want(x) {
                    Some(g.conv_transpose2d(&keep(w), geom.stride, geom.pad, (h, wd))?)
                } else {
                    None
                },
                if want(w) { Some(keep(x).conv_weight_grad(g, *geom, (kh, kw))?) } else { None },
            ]
        }
        Op::ConvInputGrad { g: gin, w, geom } => {
            // out = T_w(gin); <gz, T_w gin> = <conv(gz, w), gin> = <w, wgrad(gz, gin)>
            let (kh, kw) = (w.dims()[2], w.dims()[3]);
            vec![
                if want(gin) { Some(g.conv2d(&keep(w), geom.stride, geom.pad)?) } else { None },
                if want(w) { Some(g.conv_weight_grad(&keep(gin), *geom, (kh, kw))?) } else { None },
            ]
        }
        Op::ConvWeightGrad { x, g: gin, geom } => {
            // out = W(x, gin); <gz, W(x, gin)> = <conv(x, gz), gin> = <x, T_gz(gin)>
            let (h, wd) = (x.dims()[2], x.dims()[3]);
            vec![
                if want(x) {
                    Some(keep(gin).conv_transpose2d(g, geom.stride, geom.pad, (h, wd))?)
                } else {
                    None
                },
                if want(gin) { Some(keep(x).conv2d(g, geom.stride, geom.pad)?) } else { None },
            ]
        }
        Op::Upsample(_, f) => vec![Some(g.sum_pool(*f)?)],
        Op::SumPool(_, f) => vec![Some(g.upsample_nearest(*f)?)],
        Op::Sigmoid(_) => {
            let y = keep(out);
            let dy = y.mul(&y.neg()?.add_scalar(1.0)?)?;
            vec![Some(g.mul(&dy)?)]
        }
        Op::Softplus(x) => vec![Some(g.mul(&keep(x).sigmoid()?)?)],
        Op::Abs(x) => {
            let sign = x.value().map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });
            vec![Some(g.mul_const(&sign)?)]
        }
        Op::Square(x) => vec![Some(g.mul(&keep(x))?.scale(2.0)?)],
        Op::Sqrt(_) => vec![Some(g.div(&keep(out))?.scale(0.5)?)],
        Op::LeakyRelu(x, slope) => {
            let mask = x.value().map(|v| if v > 0.0 { 1.0 } else { *slope });
            vec![Some(g.mul_const(&mask)?)]
        }
        Op::Sum(x) => vec![Some(g.expand(x.shape().clone())?)],
        Op::Mean(x) => {
            let n = x.value().len() as f64;
            vec![Some(g.expand(x.shape().clone())?.scale(1.0 / n)?)]
        }
        Op::Expand(x) => vec![Some(g.sum()?.reshape(x.shape().clone())?)],
        Op::Reshape(x) => vec![Some(g.reshape(x.shape().clone())?)],
        Op::Slice { x, start } => {
            let full: [usize; 4] = x.dims().try_into().expect("rank 4");
            vec![Some(g.pad(*start, full)?)]
        }
        Op::Pad { x, start } => {
            let size: [usize; 4] = x.dims().try_into().expect("rank 4");
            vec![Some(g.slice(*start, size)?)]
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            let mut res = Vec::with_capacity(parts.len());
            for p in parts {
                let size: [usize; 4] = p.dims().try_into().expect("rank 4");
                res.push(if want(p) { Some(g.slice([0, offset, 0, 0], size)?) } else { None });
                offset += size[1];
            }
            res
        }
        Op::BroadcastChannels(_) => vec![Some(g.sum_channels()?)],
        Op::SumChannels(x) => vec![Some(g.broadcast_channels(x.dims()[1])?)],
        Op::BiasExpand(_) => vec![Some(g.bias_reduce()?)],
        Op::BiasReduce(x) => {
            let full: [usize; 4] = x.dims().try_into().expect("rank 4");
            vec![Some(g.bias_expand(full)?)]
        }
    };
    Ok(grads)
}
