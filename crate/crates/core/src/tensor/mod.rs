//! Dense multi-dimensional arrays with reverse-mode automatic differentiation.
//!
//! Tensors are immutable after creation and carry the operation that produced
//! them, so every forward computation implicitly records the tape. Calling
//! [`Tensor::backward`] on a scalar walks that record once in reverse
//! topological order and accumulates gradients on every `requires_grad` leaf.
//!
//! Values are 64-bit throughout; graphs are confined to one thread (handles
//! are `Rc`-based and deliberately not `Send`).

mod fft;
mod graph;
mod kernels;
mod ops;

pub mod gradcheck;

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::TensorError;
use kernels::ConvDims;
use ops::Op;

pub use graph::Graph;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    needs_grad: bool,
    op: Op,
}

/// Handle to a node of the computation graph. Cloning is cheap and shares
/// the underlying value.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

type OpResult = Result<Tensor, TensorError>;

fn validate_shape(op: &'static str, shape: &[usize], len: usize) -> Result<(), TensorError> {
    if shape.is_empty() || shape.iter().any(|&e| e == 0) {
        return Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: format!("shape holds {numel} elements but data holds {len}"),
        });
    }
    Ok(())
}

impl Tensor {
    fn new_node(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        let needs_grad = requires_grad || op.parents().iter().any(|p| p.0.needs_grad);
        // When nothing upstream wants gradients the parent links only pin
        // memory; drop them so activations free eagerly.
        let op = if needs_grad { op } else { Op::Leaf };
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            grad: RefCell::new(None),
            requires_grad,
            needs_grad,
            op,
        }))
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> OpResult {
        validate_shape("from_vec", shape, data.len())?;
        Ok(Self::new_node(shape.to_vec(), data, false, Op::Leaf))
    }

    /// Leaf that participates in gradient accumulation when `requires_grad`.
    pub fn leaf(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> OpResult {
        validate_shape("leaf", shape, data.len())?;
        Ok(Self::new_node(shape.to_vec(), data, requires_grad, Op::Leaf))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![0.0; n], false, Op::Leaf)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![value; n], false, Op::Leaf)
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::new_node(vec![1], vec![value], false, Op::Leaf)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub(crate) fn shape_vec(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub(crate) fn data_ref(&self) -> &[f64] {
        &self.0.data
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub(crate) fn node_needs_grad(&self) -> bool {
        self.0.needs_grad
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    /// Accumulated gradient. Zeros for a `requires_grad` leaf that no
    /// backward pass has reached; `None` for non-leaf tensors.
    pub fn grad(&self) -> Option<Vec<f64>> {
        if !self.0.requires_grad {
            return None;
        }
        Some(
            self.0
                .grad
                .borrow()
                .clone()
                .unwrap_or_else(|| vec![0.0; self.numel()]),
        )
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the value detached from the graph.
    pub fn detach(&self) -> Tensor {
        Self::new_node(self.0.shape.clone(), self.0.data.clone(), false, Op::Leaf)
    }

    /// Explicit finiteness check; reports the first offending flat index.
    pub fn check_finite(&self, op: &'static str) -> Result<(), TensorError> {
        match self.0.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[f64]) {
        self.accumulate_grad_scaled(contrib, 1.0);
    }

    pub(crate) fn accumulate_grad_scaled(&self, contrib: &[f64], scale: f64) {
        if !self.0.needs_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gv, &cv) in g.iter_mut().zip(contrib) {
                    *gv += scale * cv;
                }
            }
            None => {
                slot.replace(contrib.iter().map(|&c| scale * c).collect());
            }
        }
    }

    pub(crate) fn take_grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow_mut().take()
    }

    pub(crate) fn op(&self) -> &Op {
        &self.0.op
    }

    pub(crate) fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    /// Reverse-mode pass from a scalar loss. Gradients accumulate across
    /// repeated calls; use [`Tensor::zero_grad`] on leaves to reset.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.0.shape.clone(),
            });
        }
        Graph::trace(self).backprop(self);
        Ok(())
    }

    // ---- elementwise and reduction primitives ----

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<(), TensorError> {
        if self.0.shape != other.0.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.0.shape.clone(),
                rhs: other.0.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> OpResult {
        self.same_shape(other, "add")?;
        let data = zip_map(self.data(), other.data(), |a, b| a + b);
        Ok(Self::new_node(
            self.0.shape.clone(),
            data,
            false,
            Op::Add(self.clone(), other.clone()),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> OpResult {
        self.same_shape(other, "sub")?;
        let data = zip_map(self.data(), other.data(), |a, b| a - b);
        Ok(Self::new_node(
            self.0.shape.clone(),
            data,
            false,
            Op::Sub(self.clone(), other.clone()),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> OpResult {
        self.same_shape(other, "mul")?;
        let data = zip_map(self.data(), other.data(), |a, b| a * b);
        Ok(Self::new_node(
            self.0.shape.clone(),
            data,
            false,
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|&v| v * s).collect();
        Self::new_node(
            self.0.shape.clone(),
            data,
            false,
            Op::MulScalar(self.clone(), s),
        )
    }

    pub fn silu(&self) -> Tensor {
        let data = self
            .data()
            .iter()
            .map(|&v| v * ops::sigmoid(v))
            .collect();
        Self::new_node(self.0.shape.clone(), data, false, Op::Silu(self.clone()))
    }

    pub fn abs(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.abs()).collect();
        Self::new_node(self.0.shape.clone(), data, false, Op::Abs(self.clone()))
    }

    pub fn square(&self) -> Tensor {
        let data = self.data().iter().map(|v| v * v).collect();
        Self::new_node(self.0.shape.clone(), data, false, Op::Square(self.clone()))
    }

    /// Elementwise square root. Inputs must be positive for a finite
    /// gradient.
    pub fn sqrt(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.sqrt()).collect();
        Self::new_node(self.0.shape.clone(), data, false, Op::Sqrt(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let m = self.data().iter().sum::<f64>() / self.numel() as f64;
        Self::new_node(vec![1], vec![m], false, Op::Mean(self.clone()))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum::<f64>();
        Self::new_node(vec![1], vec![s], false, Op::Sum(self.clone()))
    }

    // ---- linear algebra ----

    pub fn matmul(&self, other: &Tensor) -> OpResult {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let data = kernels::matmul_nn(self.data(), other.data(), m, k, n);
        Ok(Self::new_node(
            vec![m, n],
            data,
            false,
            Op::Matmul {
                a: self.clone(),
                b: other.clone(),
                m,
                k,
                n,
            },
        ))
    }

    /// Affine map of row vectors: `x[N,I] * w[O,I]^T + b[O]`.
    pub fn linear(&self, w: &Tensor, b: &Tensor) -> OpResult {
        let (xs, ws, bs) = (self.shape(), w.shape(), b.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let (batch, in_f, out_f) = (xs[0], xs[1], ws[0]);
        let mut data = kernels::matmul_nt(self.data(), w.data(), batch, in_f, out_f);
        for row in data.chunks_exact_mut(out_f) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        Ok(Self::new_node(
            vec![batch, out_f],
            data,
            false,
            Op::Linear {
                x: self.clone(),
                w: w.clone(),
                b: b.clone(),
                batch,
                in_f,
                out_f,
            },
        ))
    }

    /// 2D convolution over `[N,C,H,W]` with zero padding.
    pub fn conv2d(
        &self,
        w: &Tensor,
        b: &Tensor,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> OpResult {
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || b.shape() != [ws[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let oh = ConvDims::output_extent(xs[2], ws[2], stride.0, pad.0);
        let ow = ConvDims::output_extent(xs[3], ws[3], stride.1, pad.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                shape: xs.to_vec(),
                reason: format!("kernel {:?} exceeds padded input", &ws[2..]),
            });
        };
        let dims = ConvDims {
            batch: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            oh,
            ow,
        };
        let data = kernels::conv2d_forward(self.data(), w.data(), b.data(), &dims);
        Ok(Self::new_node(
            vec![dims.batch, dims.c_out, oh, ow],
            data,
            false,
            Op::Conv2d {
                x: self.clone(),
                w: w.clone(),
                b: b.clone(),
                dims,
            },
        ))
    }

    /// Group normalization over `[N,C,...]` with affine parameters.
    pub fn group_norm(&self, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f64) -> OpResult {
        let xs = self.shape();
        if xs.len() < 2 {
            return Err(TensorError::InvalidShape {
                op: "group_norm",
                shape: xs.to_vec(),
                reason: "rank must be at least 2".into(),
            });
        }
        let (n, c) = (xs[0], xs[1]);
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::InvalidShape {
                op: "group_norm",
                shape: xs.to_vec(),
                reason: format!("group count {groups} must divide channels {c}"),
            });
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "group_norm",
                lhs: vec![c],
                rhs: gamma.shape().to_vec(),
            });
        }
        let hw: usize = xs[2..].iter().product();
        let cg = c / groups;
        let m = (cg * hw) as f64;
        let xd = self.data();
        let mut mean = vec![0.0; n * groups];
        let mut rstd = vec![0.0; n * groups];
        let mut out = vec![0.0; self.numel()];
        for i in 0..n {
            for grp in 0..groups {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for ch in grp * cg..(grp + 1) * cg {
                    let base = (i * c + ch) * hw;
                    for &v in &xd[base..base + hw] {
                        sum += v;
                        sq += v * v;
                    }
                }
                let mu = sum / m;
                let var = (sq / m - mu * mu).max(0.0);
                let rs = 1.0 / (var + eps).sqrt();
                mean[i * groups + grp] = mu;
                rstd[i * groups + grp] = rs;
                for ch in grp * cg..(grp + 1) * cg {
                    let base = (i * c + ch) * hw;
                    let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
                    for k in 0..hw {
                        out[base + k] = (xd[base + k] - mu) * rs * ga + be;
                    }
                }
            }
        }
        Ok(Self::new_node(
            xs.to_vec(),
            out,
            false,
            Op::GroupNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                groups,
                mean,
                rstd,
            },
        ))
    }

    // ---- spatial resampling ----

    /// Nearest-neighbor 2x upsampling of the trailing two axes.
    pub fn upsample_nearest2(&self) -> OpResult {
        let xs = self.shape();
        if xs.len() < 2 {
            return Err(TensorError::InvalidShape {
                op: "nearest_upsample",
                shape: xs.to_vec(),
                reason: "rank must be at least 2".into(),
            });
        }
        let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let planes = self.numel() / (h * w);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; planes * oh * ow];
        let xd = self.data();
        for p in 0..planes {
            let ib = p * h * w;
            let ob = p * oh * ow;
            for oy in 0..oh {
                let irow = ib + (oy / 2) * w;
                let orow = ob + oy * ow;
                for ox in 0..ow {
                    out[orow + ox] = xd[irow + ox / 2];
                }
            }
        }
        let mut shape = xs.to_vec();
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        Ok(Self::new_node(
            shape,
            out,
            false,
            Op::UpsampleNearest2(self.clone()),
        ))
    }

    /// Keeps every second row/column of the trailing two axes.
    pub fn downsample2(&self) -> OpResult {
        let xs = self.shape();
        if xs.len() < 2 {
            return Err(TensorError::InvalidShape {
                op: "strided_downsample",
                shape: xs.to_vec(),
                reason: "rank must be at least 2".into(),
            });
        }
        let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let planes = self.numel() / (h * w);
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = vec![0.0; planes * oh * ow];
        let xd = self.data();
        for p in 0..planes {
            let ib = p * h * w;
            let ob = p * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    out[ob + oy * ow + ox] = xd[ib + 2 * oy * w + 2 * ox];
                }
            }
        }
        let mut shape = xs.to_vec();
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        Ok(Self::new_node(
            shape,
            out,
            false,
            Op::Downsample2(self.clone()),
        ))
    }

    /// Average pooling to a fixed output extent (torch window convention).
    pub fn adaptive_avg_pool(&self, out_h: usize, out_w: usize) -> OpResult {
        let xs = self.shape();
        if xs.len() < 2 || out_h == 0 || out_w == 0 {
            return Err(TensorError::InvalidShape {
                op: "adaptive_avg_pool",
                shape: xs.to_vec(),
                reason: "rank must be at least 2 and output extents positive".into(),
            });
        }
        let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let planes = self.numel() / (h * w);
        let mut out = vec![0.0; planes * out_h * out_w];
        let xd = self.data();
        for p in 0..planes {
            let ib = p * h * w;
            let ob = p * out_h * out_w;
            for oy in 0..out_h {
                let (y0, y1) = kernels::pool_window(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = kernels::pool_window(ox, w, out_w);
                    let mut acc = 0.0;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc += xd[ib + yy * w + xx];
                        }
                    }
                    out[ob + oy * out_w + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        let mut shape = xs.to_vec();
        let r = shape.len();
        shape[r - 2] = out_h;
        shape[r - 1] = out_w;
        Ok(Self::new_node(
            shape,
            out,
            false,
            Op::AdaptiveAvgPool {
                x: self.clone(),
                out_hw: (out_h, out_w),
            },
        ))
    }

    // ---- structured ops ----

    /// Concatenates two `[N,C,H,W]` tensors along the channel axis.
    pub fn concat_channels(&self, other: &Tensor) -> OpResult {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 4
            || b.len() != 4
            || a[0] != b[0]
            || a[2] != b[2]
            || a[3] != b[3]
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        let (n, c1, c2, hw) = (a[0], a[1], b[1], a[2] * a[3]);
        let mut out = vec![0.0; n * (c1 + c2) * hw];
        for i in 0..n {
            let dst = i * (c1 + c2) * hw;
            out[dst..dst + c1 * hw]
                .copy_from_slice(&self.data()[i * c1 * hw..(i + 1) * c1 * hw]);
            out[dst + c1 * hw..dst + (c1 + c2) * hw]
                .copy_from_slice(&other.data()[i * c2 * hw..(i + 1) * c2 * hw]);
        }
        Ok(Self::new_node(
            vec![n, c1 + c2, a[2], a[3]],
            out,
            false,
            Op::ConcatChannels(self.clone(), other.clone()),
        ))
    }

    /// Adds a per-sample, per-channel bias `[N,C]` across `[N,C,H,W]`.
    pub fn add_channel_bias(&self, bias: &Tensor) -> OpResult {
        let (xs, bs) = (self.shape(), bias.shape());
        if xs.len() != 4 || bs != [xs[0], xs[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: xs.to_vec(),
                rhs: bs.to_vec(),
            });
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let mut out = self.data().to_vec();
        for i in 0..n {
            for ch in 0..c {
                let bv = bias.data()[i * c + ch];
                let base = (i * c + ch) * hw;
                for v in &mut out[base..base + hw] {
                    *v += bv;
                }
            }
        }
        Ok(Self::new_node(
            xs.to_vec(),
            out,
            false,
            Op::AddChannelBias {
                x: self.clone(),
                bias: bias.clone(),
            },
        ))
    }

    /// Modulus of the unnormalized 2D DFT over the trailing two axes.
    /// The subgradient at exactly-zero modulus is zero.
    pub fn dft2_modulus(&self) -> OpResult {
        let xs = self.shape();
        if xs.len() < 2 {
            return Err(TensorError::InvalidShape {
                op: "dft2_modulus",
                shape: xs.to_vec(),
                reason: "rank must be at least 2".into(),
            });
        }
        let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let plane = h * w;
        let planes = self.numel() / plane;
        let mut re = vec![0.0; self.numel()];
        let mut im = vec![0.0; self.numel()];
        let mut out = vec![0.0; self.numel()];
        for p in 0..planes {
            let r = p * plane..(p + 1) * plane;
            let f = fft::dft2_real(&self.data()[r.clone()], h, w);
            for (i, idx) in r.clone().enumerate() {
                out[idx] = f.re[i].hypot(f.im[i]);
            }
            re[r.clone()].copy_from_slice(&f.re);
            im[r].copy_from_slice(&f.im);
        }
        Ok(Self::new_node(
            xs.to_vec(),
            out,
            false,
            Op::Dft2Modulus {
                x: self.clone(),
                re,
                im,
                h,
                w,
            },
        ))
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}
