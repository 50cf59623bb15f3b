//! Recorded operations and their vector-Jacobian products.

use super::fft;
use super::kernels::{self, ConvDims};
use super::Tensor;

/// The operation that produced a tensor, with everything backward needs:
/// parent handles and saved forward context.
pub(crate) enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    MulScalar(Tensor, f64),
    Matmul {
        a: Tensor,
        b: Tensor,
        m: usize,
        k: usize,
        n: usize,
    },
    Linear {
        x: Tensor,
        w: Tensor,
        b: Tensor,
        batch: usize,
        in_f: usize,
        out_f: usize,
    },
    Conv2d {
        x: Tensor,
        w: Tensor,
        b: Tensor,
        dims: ConvDims,
    },
    Silu(Tensor),
    GroupNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        groups: usize,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    UpsampleNearest2(Tensor),
    Downsample2(Tensor),
    Mean(Tensor),
    Sum(Tensor),
    Abs(Tensor),
    Square(Tensor),
    Sqrt(Tensor),
    Dft2Modulus {
        x: Tensor,
        re: Vec<f64>,
        im: Vec<f64>,
        h: usize,
        w: usize,
    },
    ConcatChannels(Tensor, Tensor),
    AddChannelBias {
        x: Tensor,
        bias: Tensor,
    },
    AdaptiveAvgPool {
        x: Tensor,
        out_hw: (usize, usize),
    },
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ConcatChannels(a, b) => {
                vec![a, b]
            }
            Op::MulScalar(a, _) => vec![a],
            Op::Matmul { a, b, .. } => vec![a, b],
            Op::Linear { x, w, b, .. } => vec![x, w, b],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::GroupNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Silu(x)
            | Op::UpsampleNearest2(x)
            | Op::Downsample2(x)
            | Op::Mean(x)
            | Op::Sum(x)
            | Op::Abs(x)
            | Op::Square(x)
            | Op::Sqrt(x) => vec![x],
            Op::Dft2Modulus { x, .. } => vec![x],
            Op::AddChannelBias { x, bias } => vec![x, bias],
            Op::AdaptiveAvgPool { x, .. } => vec![x],
        }
    }

    /// Propagates the output gradient `g` to the parents. `out_data` is the
    /// forward value of the node this op produced.
    pub(crate) fn backward(&self, g: &[f64], out_data: &[f64]) {
        match self {
            Op::Leaf => {}
            Op::Add(a, b) => {
                a.accumulate_grad(g);
                b.accumulate_grad(g);
            }
            Op::Sub(a, b) => {
                a.accumulate_grad(g);
                b.accumulate_grad_scaled(g, -1.0);
            }
            Op::Mul(a, b) => {
                if a.node_needs_grad() {
                    let bd = b.data_ref();
                    let da: Vec<f64> = g.iter().zip(bd.iter()).map(|(gv, bv)| gv * bv).collect();
                    a.accumulate_grad(&da);
                }
                if b.node_needs_grad() {
                    let ad = a.data_ref();
                    let db: Vec<f64> = g.iter().zip(ad.iter()).map(|(gv, av)| gv * av).collect();
                    b.accumulate_grad(&db);
                }
            }
            Op::MulScalar(a, s) => a.accumulate_grad_scaled(g, *s),
            Op::Matmul { a, b, m, k, n } => {
                if a.node_needs_grad() {
                    let da = kernels::matmul_nt(g, b.data_ref(), *m, *n, *k);
                    a.accumulate_grad(&da);
                }
                if b.node_needs_grad() {
                    let db = kernels::matmul_tn(a.data_ref(), g, *m, *k, *n);
                    b.accumulate_grad(&db);
                }
            }
            Op::Linear {
                x,
                w,
                b,
                batch,
                in_f,
                out_f,
            } => {
                if x.node_needs_grad() {
                    // dx[N,I] = g[N,O] * w[O,I]
                    let dx = kernels::matmul_nn(g, w.data_ref(), *batch, *out_f, *in_f);
                    x.accumulate_grad(&dx);
                }
                if w.node_needs_grad() {
                    // dw[O,I] = g^T[O,N] * x[N,I]
                    let dw = kernels::matmul_tn(g, x.data_ref(), *batch, *out_f, *in_f);
                    w.accumulate_grad(&dw);
                }
                if b.node_needs_grad() {
                    let mut db = vec![0.0; *out_f];
                    for row in g.chunks_exact(*out_f) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    b.accumulate_grad(&db);
                }
            }
            Op::Conv2d { x, w, b, dims } => {
                let (dx, dw, db) = kernels::conv2d_backward(x.data_ref(), w.data_ref(), g, dims);
                if x.node_needs_grad() {
                    x.accumulate_grad(&dx);
                }
                if w.node_needs_grad() {
                    w.accumulate_grad(&dw);
                }
                if b.node_needs_grad() {
                    b.accumulate_grad(&db);
                }
            }
            Op::Silu(x) => {
                let xd = x.data_ref();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(gv, &xv)| {
                        let s = sigmoid(xv);
                        gv * (s + xv * s * (1.0 - s))
                    })
                    .collect();
                x.accumulate_grad(&dx);
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => {
                group_norm_backward(g, x, gamma, beta, *groups, mean, rstd);
            }
            Op::UpsampleNearest2(x) => {
                let shape = x.shape_vec();
                let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let planes = x.numel() / (h * w);
                let mut dx = vec![0.0; x.numel()];
                let (oh, ow) = (2 * h, 2 * w);
                for p in 0..planes {
                    let ib = p * h * w;
                    let ob = p * oh * ow;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dx[ib + (oy / 2) * w + ox / 2] += g[ob + oy * ow + ox];
                        }
                    }
                }
                x.accumulate_grad(&dx);
            }
            Op::Downsample2(x) => {
                let shape = x.shape_vec();
                let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let planes = x.numel() / (h * w);
                let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
                let mut dx = vec![0.0; x.numel()];
                for p in 0..planes {
                    let ib = p * h * w;
                    let ob = p * oh * ow;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dx[ib + (2 * oy) * w + 2 * ox] += g[ob + oy * ow + ox];
                        }
                    }
                }
                x.accumulate_grad(&dx);
            }
            Op::Mean(x) => {
                let scale = g[0] / x.numel() as f64;
                let dx = vec![scale; x.numel()];
                x.accumulate_grad(&dx);
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; x.numel()];
                x.accumulate_grad(&dx);
            }
            Op::Abs(x) => {
                let xd = x.data_ref();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(gv, &xv)| {
                        if xv > 0.0 {
                            *gv
                        } else if xv < 0.0 {
                            -*gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                x.accumulate_grad(&dx);
            }
            Op::Square(x) => {
                let xd = x.data_ref();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(gv, &xv)| 2.0 * xv * gv)
                    .collect();
                x.accumulate_grad(&dx);
            }
            Op::Sqrt(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(out_data.iter())
                    .map(|(gv, &ov)| 0.5 * gv / ov)
                    .collect();
                x.accumulate_grad(&dx);
            }
            Op::Dft2Modulus { x, re, im, h, w } => {
                let plane = h * w;
                let planes = x.numel() / plane;
                let mut dx = vec![0.0; x.numel()];
                for p in 0..planes {
                    let r = p * plane..(p + 1) * plane;
                    let back = fft::modulus_backward(
                        &g[r.clone()],
                        &re[r.clone()],
                        &im[r.clone()],
                        &out_data[r.clone()],
                        *h,
                        *w,
                    );
                    dx[r].copy_from_slice(&back);
                }
                x.accumulate_grad(&dx);
            }
            Op::ConcatChannels(a, b) => {
                let sa = a.shape_vec();
                let sb = b.shape_vec();
                let (n, c1, hw) = (sa[0], sa[1], sa[2] * sa[3]);
                let c2 = sb[1];
                if a.node_needs_grad() {
                    let mut da = vec![0.0; a.numel()];
                    for i in 0..n {
                        let src = (i * (c1 + c2)) * hw;
                        da[i * c1 * hw..(i + 1) * c1 * hw]
                            .copy_from_slice(&g[src..src + c1 * hw]);
                    }
                    a.accumulate_grad(&da);
                }
                if b.node_needs_grad() {
                    let mut db = vec![0.0; b.numel()];
                    for i in 0..n {
                        let src = (i * (c1 + c2) + c1) * hw;
                        db[i * c2 * hw..(i + 1) * c2 * hw]
                            .copy_from_slice(&g[src..src + c2 * hw]);
                    }
                    b.accumulate_grad(&db);
                }
            }
            Op::AddChannelBias { x, bias } => {
                if x.node_needs_grad() {
                    x.accumulate_grad(g);
                }
                if bias.node_needs_grad() {
                    let shape = x.shape_vec();
                    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                    let mut db = vec![0.0; n * c];
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * hw;
                            db[i * c + ch] = g[base..base + hw].iter().sum();
                        }
                    }
                    bias.accumulate_grad(&db);
                }
            }
            Op::AdaptiveAvgPool { x, out_hw } => {
                let shape = x.shape_vec();
                let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let planes = x.numel() / (h * w);
                let (oh, ow) = *out_hw;
                let mut dx = vec![0.0; x.numel()];
                for p in 0..planes {
                    let ib = p * h * w;
                    let ob = p * oh * ow;
                    for oy in 0..oh {
                        let (y0, y1) = kernels::pool_window(oy, h, oh);
                        for ox in 0..ow {
                            let (x0, x1) = kernels::pool_window(ox, w, ow);
                            let share =
                                g[ob + oy * ow + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    dx[ib + yy * w + xx] += share;
                                }
                            }
                        }
                    }
                }
                x.accumulate_grad(&dx);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn group_norm_backward(
    g: &[f64],
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    groups: usize,
    mean: &[f64],
    rstd: &[f64],
) {
    let shape = x.shape_vec();
    let (n, c) = (shape[0], shape[1]);
    let hw: usize = shape[2..].iter().product();
    let cg = c / groups;
    let m = (cg * hw) as f64;
    let xd = x.data_ref();
    let gd = gamma.data_ref();

    let mut dx = vec![0.0; x.numel()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];

    for i in 0..n {
        for grp in 0..groups {
            let mu = mean[i * groups + grp];
            let rs = rstd[i * groups + grp];
            // Two reduction passes over the group, then the pointwise pass.
            let mut sum_gg = 0.0;
            let mut sum_gg_xhat = 0.0;
            for ch in grp * cg..(grp + 1) * cg {
                let base = (i * c + ch) * hw;
                let gam = gd[ch];
                for k in 0..hw {
                    let gv = g[base + k];
                    let xhat = (xd[base + k] - mu) * rs;
                    dgamma[ch] += gv * xhat;
                    dbeta[ch] += gv;
                    sum_gg += gv * gam;
                    sum_gg_xhat += gv * gam * xhat;
                }
            }
            let mean_gg = sum_gg / m;
            let mean_gg_xhat = sum_gg_xhat / m;
            for ch in grp * cg..(grp + 1) * cg {
                let base = (i * c + ch) * hw;
                let gam = gd[ch];
                for k in 0..hw {
                    let xhat = (xd[base + k] - mu) * rs;
                    dx[base + k] =
                        rs * (g[base + k] * gam - mean_gg - xhat * mean_gg_xhat);
                }
            }
        }
    }

    if x.node_needs_grad() {
        x.accumulate_grad(&dx);
    }
    if gamma.node_needs_grad() {
        gamma.accumulate_grad(&dgamma);
    }
    if beta.node_needs_grad() {
        beta.accumulate_grad(&dbeta);
    }
}
