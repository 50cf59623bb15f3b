//! Structural similarity, single- and multi-scale.
//!
//! Windows are Gaussian-weighted (sigma 1.5), evaluated at every valid
//! position. The window shrinks to the image when an extent is smaller than
//! the nominal 11, which is what makes the coarsest scales of small images
//! well-defined. Per-scale contrast-structure means are clamped at zero
//! before exponent weighting.

use crate::error::{Error, Result};

/// Canonical five-scale exponent weights.
pub const CANONICAL_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

struct WindowMoments {
    luminance: f64,
    cs: f64,
}

fn window_moments(
    a: &[f64],
    b: &[f64],
    w: usize,
    y0: usize,
    x0: usize,
    win: &[f64],
    cfg: &SsimConfig,
) -> WindowMoments {
    let k = win.len();
    let (mut ma, mut mb) = (0.0, 0.0);
    for dy in 0..k {
        for dx in 0..k {
            let wt = win[dy] * win[dx];
            ma += wt * a[(y0 + dy) * w + x0 + dx];
            mb += wt * b[(y0 + dy) * w + x0 + dx];
        }
    }
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for dy in 0..k {
        for dx in 0..k {
            let wt = win[dy] * win[dx];
            let da = a[(y0 + dy) * w + x0 + dx] - ma;
            let db = b[(y0 + dy) * w + x0 + dx] - mb;
            va += wt * da * da;
            vb += wt * db * db;
            cov += wt * da * db;
        }
    }
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    WindowMoments {
        luminance: (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1),
        cs: (2.0 * cov + c2) / (va + vb + c2),
    }
}

/// Mean SSIM and mean contrast-structure over all valid window positions.
fn ssim_components(a: &[f64], b: &[f64], h: usize, w: usize, cfg: &SsimConfig) -> (f64, f64) {
    let k = cfg.window.min(h).min(w);
    let win = gaussian_window(k, cfg.sigma);
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    let mut count = 0.0;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let m = window_moments(a, b, w, y0, x0, &win, cfg);
            ssim_sum += m.luminance * m.cs;
            cs_sum += m.cs;
            count += 1.0;
        }
    }
    (ssim_sum / count, cs_sum / count)
}

/// Plain single-scale SSIM.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, cfg: &SsimConfig) -> f64 {
    ssim_components(a, b, h, w, cfg).0
}

fn downsample_half(x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            out[y * ow + xx] = 0.25
                * (x[2 * y * w + 2 * xx]
                    + x[2 * y * w + 2 * xx + 1]
                    + x[(2 * y + 1) * w + 2 * xx]
                    + x[(2 * y + 1) * w + 2 * xx + 1]);
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM with the canonical weights truncated to `scales` and
/// renormalized to sum 1. Coarser scales come from 2x2 average pooling.
pub fn ms_ssim(a: &[f64], b: &[f64], h: usize, w: usize, scales: usize, cfg: &SsimConfig) -> Result<f64> {
    if scales == 0 || scales > CANONICAL_WEIGHTS.len() {
        return Err(Error::config(
            "eval.msssim_scales",
            format!("scale count must be 1..={}", CANONICAL_WEIGHTS.len()),
        ));
    }
    let min_extent = 4 << (scales - 1);
    if h < min_extent || w < min_extent {
        return Err(Error::config(
            "eval.msssim_scales",
            format!(
                "image {h}x{w} too small for {scales} scales; need extents >= {min_extent}"
            ),
        ));
    }
    let wsum: f64 = CANONICAL_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = CANONICAL_WEIGHTS[..scales].iter().map(|v| v / wsum).collect();

    let (mut ca, mut cb) = (a.to_vec(), b.to_vec());
    let (mut ch, mut cw) = (h, w);
    let mut value = 1.0;
    for (s, &weight) in weights.iter().enumerate() {
        let (ssim_mean, cs_mean) = ssim_components(&ca, &cb, ch, cw, cfg);
        if s + 1 == scales {
            value *= ssim_mean.max(0.0).powf(weight);
        } else {
            value *= cs_mean.max(0.0).powf(weight);
            let (na, nh, nw) = downsample_half(&ca, ch, cw);
            let (nb, _, _) = downsample_half(&cb, ch, cw);
            ca = na;
            cb = nb;
            ch = nh;
            cw = nw;
        }
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, Streams};

    #[test]
    fn identical_images_score_one() {
        let a = normal_vec(&mut Streams::new(1).stream("s", &[]), 32 * 32);
        let a01: Vec<f64> = a.iter().map(|v| 0.5 + 0.1 * v).collect();
        let cfg = SsimConfig::default();
        assert!((ssim(&a01, &a01, 32, 32, &cfg) - 1.0).abs() < 1e-12);
        assert!((ms_ssim(&a01, &a01, 32, 32, 3, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverted_binary_image_scores_low() {
        use rand::Rng;
        let mut rng = Streams::new(2).stream("bin", &[]);
        let a: Vec<f64> = (0..(32 * 32)).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        let inv: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        let v = ms_ssim(&a, &inv, 32, 32, 3, &SsimConfig::default()).unwrap();
        assert!(v < 0.2, "ms-ssim of inverted image = {v}");
    }

    #[test]
    fn too_small_for_scales_is_error() {
        let a = vec![0.5; 8 * 8];
        let err = ms_ssim(&a, &a, 8, 8, 3, &SsimConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains(">= 16"), "{err}");
    }

    #[test]
    fn single_scale_on_8x8_equals_brute_force() {
        // Independent re-derivation: one truncated Gaussian window covering
        // the whole 8x8 image, moments computed from the definition.
        use rand::Rng;
        let mut rng = Streams::new(3).stream("bf", &[]);
        let a: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let cfg = SsimConfig::default();
        let got = ssim(&a, &b, 8, 8, &cfg);

        let sigma = 1.5;
        let mut wts = vec![0.0; 64];
        let mut wsum = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let gy = (-((y as f64 - 3.5) * (y as f64 - 3.5)) / (2.0 * sigma * sigma)).exp();
                let gx = (-((x as f64 - 3.5) * (x as f64 - 3.5)) / (2.0 * sigma * sigma)).exp();
                wts[y * 8 + x] = gy * gx;
                wsum += gy * gx;
            }
        }
        for v in &mut wts {
            *v /= wsum;
        }
        let mu_a: f64 = wts.iter().zip(&a).map(|(w, v)| w * v).sum();
        let mu_b: f64 = wts.iter().zip(&b).map(|(w, v)| w * v).sum();
        let var_a: f64 = wts.iter().zip(&a).map(|(w, v)| w * (v - mu_a) * (v - mu_a)).sum();
        let var_b: f64 = wts.iter().zip(&b).map(|(w, v)| w * (v - mu_b) * (v - mu_b)).sum();
        let cov: f64 = wts
            .iter()
            .zip(a.iter().zip(&b))
            .map(|(w, (x, y))| w * (x - mu_a) * (y - mu_b))
            .sum();
        let c1 = 0.01f64.powi(2);
        let c2 = 0.03f64.powi(2);
        let expect = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
            / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn truncated_weights_renormalize_to_one() {
        let wsum: f64 = CANONICAL_WEIGHTS[..3].iter().sum();
        let total: f64 = CANONICAL_WEIGHTS[..3].iter().map(|v| v / wsum).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
