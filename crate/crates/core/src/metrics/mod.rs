//! Reconstruction quality metrics and per-set evaluation.
//!
//! All metrics operate on normalized map values in [-1, 1]: MAE and PSNR
//! (data range 2) directly; MS-SSIM and the edge figure of merit after an
//! affine remap to [0, 1].

mod edge;
mod ssim;

pub use edge::{detect_edges, fom_from_edges, pratt_fom, sobel_magnitude};
pub use ssim::{ms_ssim, ssim, SsimConfig, CANONICAL_WEIGHTS};

use crate::error::{Error, Result};
use crate::exec;

/// PSNR cap for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub msssim_scales: usize,
    pub ssim: SsimConfig,
    /// PSNR data range in normalized units.
    pub psnr_data_range: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            msssim_scales: 3,
            ssim: SsimConfig::default(),
            psnr_data_range: 2.0,
        }
    }
}

/// Mean absolute difference.
pub fn mae(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &[f64], b: &[f64], data_range: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP_DB)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub ms_ssim: f64,
    pub psnr_db: f64,
    pub mae: f64,
    pub fom: f64,
}

/// Per-image rows plus mean and population standard deviation aggregates.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
    pub std: MetricRow,
}

impl MetricReport {
    /// Fixed-column CSV: per-image rows followed by aggregate rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,ms_ssim,psnr_db,mae,fom\n");
        for r in self.rows.iter().chain([&self.mean, &self.std]) {
            out.push_str(&format!(
                "{},{:.6},{:.4},{:.6},{:.6}\n",
                r.id, r.ms_ssim, r.psnr_db, r.mae, r.fom
            ));
        }
        out
    }
}

fn to_unit(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| (v + 1.0) * 0.5).collect()
}

/// Scores one normalized prediction against its normalized ground truth.
pub fn evaluate_pair(
    id: &str,
    pred: &[f64],
    truth: &[f64],
    h: usize,
    w: usize,
    cfg: &EvalConfig,
) -> Result<MetricRow> {
    if pred.len() != h * w || truth.len() != h * w {
        return Err(Error::invalid(format!(
            "evaluate: {id}: grids must be {h}x{w}"
        )));
    }
    let pred01 = to_unit(pred);
    let truth01 = to_unit(truth);
    Ok(MetricRow {
        id: id.to_string(),
        ms_ssim: ms_ssim(&pred01, &truth01, h, w, cfg.msssim_scales, &cfg.ssim)?,
        psnr_db: psnr(pred, truth, cfg.psnr_data_range),
        mae: mae(pred, truth),
        fom: pratt_fom(&pred01, &truth01, h, w),
    })
}

/// Evaluates a matched set of (id, prediction, truth) grids and aggregates.
pub fn evaluate_set(
    items: &[(String, Vec<f64>, Vec<f64>)],
    h: usize,
    w: usize,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::invalid("evaluate: empty set"));
    }
    let rows: Vec<MetricRow> = exec::ordered_map(items.len(), |i| {
        let (id, pred, truth) = &items[i];
        evaluate_pair(id, pred, truth, h, w, cfg)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let n = rows.len() as f64;
    let mean_of = |f: &dyn Fn(&MetricRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let std_of = |f: &dyn Fn(&MetricRow) -> f64, m: f64| {
        (rows.iter().map(|r| (f(r) - m) * (f(r) - m)).sum::<f64>() / n).sqrt()
    };
    let m = MetricRow {
        id: "mean".into(),
        ms_ssim: mean_of(&|r| r.ms_ssim),
        psnr_db: mean_of(&|r| r.psnr_db),
        mae: mean_of(&|r| r.mae),
        fom: mean_of(&|r| r.fom),
    };
    let s = MetricRow {
        id: "std".into(),
        ms_ssim: std_of(&|r| r.ms_ssim, m.ms_ssim),
        psnr_db: std_of(&|r| r.psnr_db, m.psnr_db),
        mae: std_of(&|r| r.mae, m.mae),
        fom: std_of(&|r| r.fom, m.fom),
    };
    Ok(MetricReport {
        rows,
        mean: m,
        std: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, Streams};
    use rand::Rng;

    fn rand01(tag: &str, n: usize) -> Vec<f64> {
        let mut rng = Streams::new(17).stream(tag, &[]);
        (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect()
    }

    #[test]
    fn mae_identity_and_offset() {
        let a = rand01("m", 64);
        assert_eq!(mae(&a, &a), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.03).collect();
        assert!((mae(&a, &b) - 0.03).abs() < 1e-12);
    }

    #[test]
    fn mae_matches_naive() {
        let a = rand01("na", 50);
        let b = rand01("nb", 50);
        let naive = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 50.0;
        assert!((mae(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn psnr_hand_cases() {
        // mse equal to the squared range is 0 dB
        let a = vec![0.0; 16];
        let b = vec![2.0; 16];
        assert!((psnr(&a, &b, 2.0) - 0.0).abs() < 1e-12);
        // identical images hit the cap
        assert_eq!(psnr(&a, &a, 2.0), 100.0);
        // constant 0.1 offset at range 2: 10*log10(400)
        let c = vec![0.1; 16];
        assert!((psnr(&a, &c, 2.0) - 26.020599913279625).abs() < 1e-6);
    }

    #[test]
    fn psnr_monotone_on_noise_ladder() {
        let base = rand01("pm", 256);
        let noise = normal_vec(&mut Streams::new(8).stream("pn", &[]), 256);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.03, 0.1, 0.3] {
            let noisy: Vec<f64> = base.iter().zip(&noise).map(|(b, n)| b + amp * n).collect();
            let v = psnr(&base, &noisy, 2.0);
            assert!(v < last, "psnr not decreasing at amp {amp}");
            last = v;
        }
    }

    #[test]
    fn symmetry_properties() {
        let a = rand01("sa", 16 * 16);
        let b = rand01("sb", 16 * 16);
        assert_eq!(mae(&a, &b), mae(&b, &a));
        assert_eq!(psnr(&a, &b, 2.0), psnr(&b, &a, 2.0));
    }

    #[test]
    fn evaluate_pair_perfect_prediction() {
        let truth = rand01("ep", 32 * 32);
        let row =
            evaluate_pair("x", &truth, &truth, 32, 32, &EvalConfig::default()).unwrap();
        assert!((row.ms_ssim - 1.0).abs() < 1e-9);
        assert_eq!(row.psnr_db, 100.0);
        assert_eq!(row.mae, 0.0);
        assert_eq!(row.fom, 1.0);
    }

    #[test]
    fn evaluate_set_aggregates() {
        let cfg = EvalConfig::default();
        // single pair: std all zero
        let t = rand01("ag", 32 * 32);
        let one = vec![("a".to_string(), t.clone(), t.clone())];
        let rep = evaluate_set(&one, 32, 32, &cfg).unwrap();
        assert_eq!(rep.std.mae, 0.0);
        assert_eq!(rep.std.ms_ssim, 0.0);

        // five pairs vs an independent recomputation of the aggregates
        let items: Vec<(String, Vec<f64>, Vec<f64>)> = (0..5)
            .map(|i| {
                let truth = rand01(&format!("t{i}"), 32 * 32);
                let pred: Vec<f64> = truth
                    .iter()
                    .zip(rand01(&format!("n{i}"), 32 * 32))
                    .map(|(t, n)| (t + 0.05 * n).clamp(-1.0, 1.0))
                    .collect();
                (format!("{i}"), pred, truth)
            })
            .collect();
        let rep = evaluate_set(&items, 32, 32, &cfg).unwrap();
        let maes: Vec<f64> = rep.rows.iter().map(|r| r.mae).collect();
        let mean = maes.iter().sum::<f64>() / 5.0;
        let var = maes.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        assert!((rep.mean.mae - mean).abs() < 1e-12);
        assert!((rep.std.mae - var.sqrt()).abs() < 1e-12);

        // permutation invariance of aggregates
        let mut shuffled = items.clone();
        shuffled.swap(0, 3);
        shuffled.swap(1, 4);
        let rep2 = evaluate_set(&shuffled, 32, 32, &cfg).unwrap();
        assert!((rep.mean.ms_ssim - rep2.mean.ms_ssim).abs() < 1e-12);
        assert!((rep.std.fom - rep2.std.fom).abs() < 1e-12);
    }

    #[test]
    fn csv_has_fixed_columns_and_aggregate_rows() {
        let t = rand01("csv", 32 * 32);
        let rep = evaluate_set(
            &[("img0".to_string(), t.clone(), t)],
            32,
            32,
            &EvalConfig::default(),
        )
        .unwrap();
        let csv = rep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "id,ms_ssim,psnr_db,mae,fom");
        assert!(csv.contains("\nmean,"));
        assert!(csv.contains("\nstd,"));
    }
}
