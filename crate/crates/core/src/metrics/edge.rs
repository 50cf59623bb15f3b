//! Edge extraction (Sobel magnitude + Otsu threshold) and the edge
//! localization figure of merit.

/// Sobel gradient magnitude; border pixels get zero.
pub fn sobel_magnitude(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut mag = vec![0.0; h * w];
    if h < 3 || w < 3 {
        return mag;
    }
    for y in 1..h - 1 {
        for xx in 1..w - 1 {
            let p = |dy: isize, dx: isize| -> f64 {
                x[((y as isize + dy) as usize) * w + (xx as isize + dx) as usize]
            };
            // paired differences cancel exactly on constant images
            let gx = (p(-1, 1) - p(-1, -1)) + 2.0 * (p(0, 1) - p(0, -1)) + (p(1, 1) - p(1, -1));
            let gy = (p(1, -1) - p(-1, -1)) + 2.0 * (p(1, 0) - p(-1, 0)) + (p(1, 1) - p(-1, 1));
            mag[y * w + xx] = gx.hypot(gy);
        }
    }
    mag
}

/// Otsu's threshold over a 256-bin histogram. Returns `None` when the data
/// has no spread (no meaningful edges).
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    if !(max > min) {
        return None;
    }
    const BINS: usize = 256;
    let mut hist = [0usize; BINS];
    let scale = (BINS as f64 - 1.0) / (max - min);
    for &v in values {
        hist[((v - min) * scale) as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w_bg, mut sum_bg) = (0.0, 0.0);
    let mut best = (0.0, 0usize);
    for t in 0..BINS {
        w_bg += hist[t] as f64;
        if w_bg == 0.0 {
            continue;
        }
        let w_fg = total - w_bg;
        if w_fg == 0.0 {
            break;
        }
        sum_bg += t as f64 * hist[t] as f64;
        let mu_bg = sum_bg / w_bg;
        let mu_fg = (sum_all - sum_bg) / w_fg;
        let between = w_bg * w_fg * (mu_bg - mu_fg) * (mu_bg - mu_fg);
        if between > best.0 {
            best = (between, t);
        }
    }
    Some(min + (best.1 as f64 + 0.5) / scale)
}

/// Binary edge map from Sobel magnitude with an Otsu threshold.
pub fn detect_edges(x: &[f64], h: usize, w: usize) -> Vec<bool> {
    let mag = sobel_magnitude(x, h, w);
    match otsu_threshold(&mag) {
        None => vec![false; h * w],
        Some(t) => mag.iter().map(|&m| m > t).collect(),
    }
}

/// Edge-level figure of merit with alpha = 1/9:
/// (1 / max(N_d, N_gt)) * sum over detected pixels of 1 / (1 + alpha d^2),
/// d the Euclidean distance to the nearest ground-truth edge pixel.
/// Both maps empty scores 1; exactly one empty scores 0.
pub fn fom_from_edges(detected: &[bool], truth: &[bool], h: usize, w: usize) -> f64 {
    let alpha = 1.0 / 9.0;
    let det: Vec<(usize, usize)> = index_set(detected, w);
    let gt: Vec<(usize, usize)> = index_set(truth, w);
    match (det.is_empty(), gt.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    debug_assert!(detected.len() == h * w && truth.len() == h * w);
    let mut acc = 0.0;
    for &(dy, dx) in &det {
        let mut d2_min = f64::MAX;
        for &(gy, gx) in &gt {
            let d2 = (dy as f64 - gy as f64).powi(2) + (dx as f64 - gx as f64).powi(2);
            if d2 < d2_min {
                d2_min = d2;
            }
        }
        acc += 1.0 / (1.0 + alpha * d2_min);
    }
    acc / det.len().max(gt.len()) as f64
}

fn index_set(mask: &[bool], w: usize) -> Vec<(usize, usize)> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (i / w, i % w))
        .collect()
}

/// Pratt figure of merit between two images: edges are extracted from both
/// and the detected map (first argument) is scored against the ground truth
/// (second argument). Not symmetric.
pub fn pratt_fom(pred: &[f64], truth: &[f64], h: usize, w: usize) -> f64 {
    let det = detect_edges(pred, h, w);
    let gt = detect_edges(truth, h, w);
    fom_from_edges(&det, &gt, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_image(h: usize, w: usize, y0: usize, x0: usize, side: usize) -> Vec<f64> {
        let mut img = vec![0.0; h * w];
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                img[y * w + x] = 1.0;
            }
        }
        img
    }

    #[test]
    fn identical_images_score_one() {
        let img = square_image(24, 24, 8, 8, 8);
        assert_eq!(pratt_fom(&img, &img, 24, 24), 1.0);
    }

    #[test]
    fn one_pixel_offset_scores_point_nine() {
        // same count, every detected pixel exactly one off
        let (h, w) = (8, 16);
        let mut det = vec![false; h * w];
        let mut gt = vec![false; h * w];
        for y in 0..h {
            gt[y * w + 7] = true;
            det[y * w + 8] = true;
        }
        let v = fom_from_edges(&det, &gt, h, w);
        assert!((v - 0.9).abs() < 1e-12, "{v}");
    }

    #[test]
    fn blank_prediction_scores_zero() {
        let blank = vec![0.3; 24 * 24];
        let img = square_image(24, 24, 6, 6, 10);
        assert_eq!(pratt_fom(&blank, &img, 24, 24), 0.0);
        assert_eq!(pratt_fom(&img, &blank, 24, 24), 0.0);
        assert_eq!(pratt_fom(&blank, &blank, 24, 24), 1.0);
    }

    #[test]
    fn fom_is_not_symmetric() {
        let (h, w) = (6, 6);
        let mut a = vec![false; h * w];
        let mut b = vec![false; h * w];
        // a has extra spurious edges far away
        a[0] = true;
        a[7] = true;
        a[35] = true;
        b[7] = true;
        let ab = fom_from_edges(&a, &b, h, w);
        let ba = fom_from_edges(&b, &a, h, w);
        assert_ne!(ab, ba);
    }

    #[test]
    fn otsu_splits_bimodal_data() {
        let mut v = vec![0.1; 50];
        v.extend(vec![0.9; 50]);
        let t = otsu_threshold(&v).unwrap();
        assert!(t > 0.1 && t < 0.9);
        assert!(otsu_threshold(&[0.5; 10]).is_none());
    }
}
