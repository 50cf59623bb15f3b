//! Direct O(N^2)-per-axis 2D discrete Fourier transform.
//!
//! Extents in this pipeline stay at or below 64 pixels, where the direct
//! row-column transform is plenty fast and trivially exact to verify. The
//! forward transform is unnormalized (no 1/HW factor).

/// Complex 2D field stored as separate real/imaginary planes.
pub struct Complex2d {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

struct Twiddle {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddle {
    fn new(n: usize) -> Self {
        let mut cos = vec![0.0; n];
        let mut sin = vec![0.0; n];
        for (i, (c, s)) in cos.iter_mut().zip(sin.iter_mut()).enumerate() {
            let ang = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            *c = ang.cos();
            *s = ang.sin();
        }
        Twiddle { cos, sin }
    }
}

/// 2D DFT of one H x W plane. `sign` is -1 for the forward transform and
/// +1 for the (unnormalized) inverse.
pub fn dft2(re_in: &[f64], im_in: &[f64], h: usize, w: usize, sign: f64) -> Complex2d {
    let tw_w = Twiddle::new(w);
    let tw_h = Twiddle::new(h);

    // Rows.
    let mut row_re = vec![0.0; h * w];
    let mut row_im = vec![0.0; h * w];
    for y in 0..h {
        for k in 0..w {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for x in 0..w {
                let c = tw_w.cos[k * x % w];
                let s = sign * tw_w.sin[k * x % w];
                let vr = re_in[y * w + x];
                let vi = im_in[y * w + x];
                acc_re += vr * c - vi * s;
                acc_im += vr * s + vi * c;
            }
            row_re[y * w + k] = acc_re;
            row_im[y * w + k] = acc_im;
        }
    }

    // Columns.
    let mut out_re = vec![0.0; h * w];
    let mut out_im = vec![0.0; h * w];
    for k2 in 0..w {
        for k1 in 0..h {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for y in 0..h {
                let c = tw_h.cos[k1 * y % h];
                let s = sign * tw_h.sin[k1 * y % h];
                let vr = row_re[y * w + k2];
                let vi = row_im[y * w + k2];
                acc_re += vr * c - vi * s;
                acc_im += vr * s + vi * c;
            }
            out_re[k1 * w + k2] = acc_re;
            out_im[k1 * w + k2] = acc_im;
        }
    }

    Complex2d {
        re: out_re,
        im: out_im,
    }
}

/// Forward DFT of a real plane.
pub fn dft2_real(x: &[f64], h: usize, w: usize) -> Complex2d {
    let zeros = vec![0.0; h * w];
    dft2(x, &zeros, h, w, -1.0)
}

/// Gradient of sum(g * |F(x)|) w.r.t. the real input plane.
///
/// `re`/`im` are the saved forward spectrum, `modulus` its magnitude. Bins
/// with exactly zero modulus use the zero subgradient convention.
pub fn modulus_backward(
    g: &[f64],
    re: &[f64],
    im: &[f64],
    modulus: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let n = h * w;
    let mut gr = vec![0.0; n];
    let mut gi = vec![0.0; n];
    for i in 0..n {
        if modulus[i] > 0.0 {
            let scale = g[i] / modulus[i];
            gr[i] = scale * re[i];
            gi[i] = scale * im[i];
        }
    }
    // d sum / dx = Re( IDFT_unnormalized(G) ) for real input.
    let back = dft2(&gr, &gi, h, w, 1.0);
    back.re
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_bin_of_constant_plane() {
        let x = vec![3.0; 16];
        let f = dft2_real(&x, 4, 4);
        assert!((f.re[0] - 48.0).abs() < 1e-9);
        for i in 1..16 {
            assert!(f.re[i].abs() < 1e-9 && f.im[i].abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_recovers_signal() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let f = dft2_real(&x, 3, 4);
        let back = dft2(&f.re, &f.im, 3, 4, 1.0);
        for (a, b) in back.re.iter().zip(&x) {
            assert!((a / 12.0 - b).abs() < 1e-10);
        }
    }
}
