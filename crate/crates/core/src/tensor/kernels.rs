//! Raw numeric kernels shared by forward evaluation and backward passes.
//!
//! Everything operates on flat row-major `f64` slices. Convolution loops are
//! ordered kernel-tap outer, pixel inner, so the innermost loop is a
//! contiguous (or fixed-stride) axpy the compiler can vectorize.

/// out[m,n] = a[m,k] * b[k,n]
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// out[m,n] = a[m,k] * b[n,k]^T
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// out[k,n] = a[m,k]^T * b[m,n]
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn output_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = extent + 2 * pad;
        if padded < k {
            return None;
        }
        Some((padded - k) / stride + 1)
    }
}

/// Direct 2D convolution (cross-correlation), zero padding.
pub fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], d: &ConvDims) -> Vec<f64> {
    let (sy, sx) = d.stride;
    let (py, px) = d.pad;
    let mut out = vec![0.0; d.batch * d.c_out * d.oh * d.ow];
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let o_base = (n * d.c_out + co) * d.oh * d.ow;
            out[o_base..o_base + d.oh * d.ow].fill(b[co]);
            for ci in 0..d.c_in {
                let x_base = (n * d.c_in + ci) * d.h * d.w;
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let wv = w[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..d.oh {
                            let iy = (oy * sy + ky) as isize - py as isize;
                            if iy < 0 || iy as usize >= d.h {
                                continue;
                            }
                            let x_row = x_base + iy as usize * d.w;
                            let o_row = o_base + oy * d.ow;
                            for ox in 0..d.ow {
                                let ix = (ox * sx + kx) as isize - px as isize;
                                if ix < 0 || ix as usize >= d.w {
                                    continue;
                                }
                                out[o_row + ox] += wv * x[x_row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weights, and bias.
pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: &ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (sy, sx) = d.stride;
    let (py, px) = d.pad;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.c_out];
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let o_base = (n * d.c_out + co) * d.oh * d.ow;
            for v in &g[o_base..o_base + d.oh * d.ow] {
                db[co] += v;
            }
            for ci in 0..d.c_in {
                let x_base = (n * d.c_in + ci) * d.h * d.w;
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let w_idx = ((co * d.c_in + ci) * d.kh + ky) * d.kw + kx;
                        let wv = w[w_idx];
                        let mut wacc = 0.0;
                        for oy in 0..d.oh {
                            let iy = (oy * sy + ky) as isize - py as isize;
                            if iy < 0 || iy as usize >= d.h {
                                continue;
                            }
                            let x_row = x_base + iy as usize * d.w;
                            let o_row = o_base + oy * d.ow;
                            for ox in 0..d.ow {
                                let ix = (ox * sx + kx) as isize - px as isize;
                                if ix < 0 || ix as usize >= d.w {
                                    continue;
                                }
                                let gv = g[o_row + ox];
                                wacc += gv * x[x_row + ix as usize];
                                dx[x_row + ix as usize] += gv * wv;
                            }
                        }
                        dw[w_idx] += wacc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Adaptive average pooling window bounds, torch convention.
#[inline]
pub fn pool_window(i: usize, in_extent: usize, out_extent: usize) -> (usize, usize) {
    let start = i * in_extent / out_extent;
    let end = ((i + 1) * in_extent).div_ceil(out_extent);
    (start, end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let nn = matmul_nn(&a, &b, 2, 3, 2);
        assert_eq!(nn, vec![58.0, 64.0, 139.0, 154.0]);

        // b^T is 2x3 stored row-major as b_t
        let b_t = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        assert_eq!(matmul_nt(&a, &b_t, 2, 3, 2), nn);

        // a^T stored as a with swapped dims: tn computes a^T b with a: [m,k]
        let a_t = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // 3x2, transpose = a
        assert_eq!(matmul_tn(&a_t, &b, 3, 2, 2), nn);
    }

    #[test]
    fn conv_identity_kernel() {
        let d = ConvDims {
            batch: 1,
            c_in: 1,
            h: 3,
            w: 3,
            c_out: 1,
            kh: 1,
            kw: 1,
            stride: (1, 1),
            pad: (0, 0),
            oh: 3,
            ow: 3,
        };
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let out = conv2d_forward(&x, &[1.0], &[0.0], &d);
        assert_eq!(out, x);
    }

    #[test]
    fn pool_windows_cover_input() {
        let (s0, e0) = pool_window(0, 10, 3);
        let (s2, e2) = pool_window(2, 10, 3);
        assert_eq!(s0, 0);
        assert!(e0 >= 3);
        assert_eq!(e2, 10);
        assert!(s2 < e2);
    }
}
