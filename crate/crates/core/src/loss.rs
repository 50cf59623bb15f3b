//! Hybrid training objective: noise prediction, clean-map reconstruction,
//! and Fourier-amplitude matching.
//!
//! All norms are reduced by mean over elements, which keeps the weighting
//! coefficients scale-stable across resolutions. Terms with a zero weight
//! are skipped entirely (their reported pre-weighting value is 0), so the
//! zero-weight configuration reduces bit-exactly to plain noise prediction.

use crate::error::{Error, Result, TensorError};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Weighting coefficients of the reconstruction and frequency terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_freq: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rec: 0.1,
            lambda_freq: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_rec < 0.0 || self.lambda_freq < 0.0 {
            return Err(Error::config(
                "train.lambda",
                format!(
                    "loss weights must be non-negative, got rec={} freq={}",
                    self.lambda_rec, self.lambda_freq
                ),
            ));
        }
        Ok(())
    }
}

/// Itemized loss values for one step. `total` satisfies
/// `total = noise + lambda_rec * rec + lambda_freq * freq` up to rounding;
/// skipped zero-weight terms are recorded as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub noise_term: f64,
    pub rec_term: f64,
    pub freq_term: f64,
}

impl LossReport {
    /// Composition identity, checked with a rounding-scale tolerance.
    pub fn composes(&self, w: &LossWeights) -> bool {
        let expect = self.noise_term + w.lambda_rec * self.rec_term + w.lambda_freq * self.freq_term;
        (self.total - expect).abs() <= 1e-12 * (1.0 + expect.abs())
    }
}

/// Mean squared error between the true and predicted noise.
pub fn loss_noise(eps: &Tensor, eps_hat: &Tensor) -> Result<Tensor, TensorError> {
    Ok(eps.sub(eps_hat)?.square().mean())
}

/// Mean absolute error between the clean map and its estimate.
pub fn loss_rec(x0: &Tensor, x0_hat: &Tensor) -> Result<Tensor, TensorError> {
    Ok(x0.sub(x0_hat)?.abs().mean())
}

/// Mean absolute difference of the 2D Fourier amplitude spectra.
pub fn loss_freq(eps: &Tensor, eps_hat: &Tensor) -> Result<Tensor, TensorError> {
    let a = eps.dft2_modulus()?;
    let b = eps_hat.dft2_modulus()?;
    Ok(a.sub(&b)?.abs().mean())
}

/// Analytic clean-map estimate from the noisy latent and predicted noise:
/// (x_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t).
/// Unclamped; the sampler applies its own clamping policy.
pub fn predict_x0(
    x_t: &Tensor,
    t: usize,
    eps_hat: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if t == 0 || t > sched.num_steps() {
        return Err(Error::invalid(format!(
            "timestep {t} outside 1..={}",
            sched.num_steps()
        )));
    }
    let ab = sched.alpha_bar(t);
    let scale = (1.0 - ab).sqrt();
    let inv = 1.0 / ab.sqrt();
    Ok(x_t.sub(&eps_hat.mul_scalar(scale))?.mul_scalar(inv))
}

/// Plain-slice variant of [`predict_x0`] for the no-grad sampling path.
pub fn predict_x0_slice(x_t: &[f64], t: usize, eps_hat: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    let ab = sched.alpha_bar(t);
    let scale = (1.0 - ab).sqrt();
    let inv = 1.0 / ab.sqrt();
    x_t.iter()
        .zip(eps_hat)
        .map(|(&x, &e)| (x - scale * e) * inv)
        .collect()
}

/// Weighted hybrid objective for one (x0, x_t, t) batch with the model's
/// noise prediction. Returns the differentiable total and the itemized
/// report. Gradients flow into every active term through `eps_hat`.
pub fn loss_total(
    x0: &Tensor,
    x_t: &Tensor,
    t: usize,
    eps: &Tensor,
    eps_hat: &Tensor,
    sched: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<(Tensor, LossReport)> {
    weights.validate()?;
    let noise = loss_noise(eps, eps_hat)?;
    let mut total = noise.clone();
    let mut rec_term = 0.0;
    let mut freq_term = 0.0;
    if weights.lambda_rec > 0.0 {
        let x0_hat = predict_x0(x_t, t, eps_hat, sched)?;
        let rec = loss_rec(x0, &x0_hat)?;
        rec_term = rec.item();
        total = total.add(&rec.mul_scalar(weights.lambda_rec))?;
    }
    if weights.lambda_freq > 0.0 {
        let freq = loss_freq(eps, eps_hat)?;
        freq_term = freq.item();
        total = total.add(&freq.mul_scalar(weights.lambda_freq))?;
    }
    let report = LossReport {
        total: total.item(),
        noise_term: noise.item(),
        rec_term,
        freq_term,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, Streams};
    use crate::schedule::make_linear_schedule;
    use crate::tensor::gradcheck;

    fn rand(tag: &str, n: usize) -> Vec<f64> {
        normal_vec(&mut Streams::new(31).stream(tag, &[]), n)
    }

    #[test]
    fn perfect_prediction_zeroes_all_terms() {
        let e = Tensor::from_vec(&[4, 4], rand("e", 16)).unwrap();
        assert_eq!(loss_noise(&e, &e).unwrap().item(), 0.0);
        assert_eq!(loss_rec(&e, &e).unwrap().item(), 0.0);
        assert_eq!(loss_freq(&e, &e).unwrap().item(), 0.0);
    }

    #[test]
    fn noise_loss_hand_case() {
        let eps = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let eps_hat = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        assert_eq!(loss_noise(&eps, &eps_hat).unwrap().item(), 1.0);
    }

    #[test]
    fn rec_loss_hand_case() {
        let x0 = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let x0_hat = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        assert_eq!(loss_rec(&x0, &x0_hat).unwrap().item(), 1.0);
    }

    #[test]
    fn losses_match_naive_recomputation() {
        let a = rand("na", 24);
        let b = rand("nb", 24);
        let ta = Tensor::from_vec(&[4, 6], a.clone()).unwrap();
        let tb = Tensor::from_vec(&[4, 6], b.clone()).unwrap();
        let mse: f64 =
            a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 24.0;
        let mae: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 24.0;
        assert!((loss_noise(&ta, &tb).unwrap().item() - mse).abs() < 1e-12);
        assert!((loss_rec(&ta, &tb).unwrap().item() - mae).abs() < 1e-12);
    }

    #[test]
    fn freq_loss_ignores_circular_shifts() {
        let (h, w) = (5, 6);
        let data = rand("sh", h * w);
        let mut shifted = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                shifted[((y + 2) % h) * w + (x + 4) % w] = data[y * w + x];
            }
        }
        let a = Tensor::from_vec(&[h, w], data).unwrap();
        let b = Tensor::from_vec(&[h, w], shifted).unwrap();
        assert!(loss_freq(&a, &b).unwrap().item() < 1e-10);
    }

    #[test]
    fn freq_loss_delta_versus_zero() {
        // |F| of a unit impulse is all ones, so against an all-zero
        // prediction the mean amplitude gap is exactly 1 for any extent.
        for (h, w) in [(4, 4), (5, 7), (8, 3)] {
            let mut d = vec![0.0; h * w];
            d[0] = 1.0;
            let delta = Tensor::from_vec(&[h, w], d).unwrap();
            let zero = Tensor::zeros(&[h, w]);
            let v = loss_freq(&delta, &zero).unwrap().item();
            assert!((v - 1.0).abs() < 1e-12, "{h}x{w}: {v}");
        }
    }

    #[test]
    fn predict_x0_inverts_q_sample() {
        let sched = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        for t in [1usize, 77, 500, 1000] {
            let x0 = Tensor::from_vec(&[3, 3], rand("x0", 9)).unwrap();
            let eps = Tensor::from_vec(&[3, 3], rand("eps", 9)).unwrap();
            let x_t = sched.q_sample(&x0, t, &eps).unwrap();
            let rec = predict_x0(&x_t, t, &eps, &sched).unwrap();
            for (a, b) in rec.data().iter().zip(x0.data()) {
                assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn predict_x0_zero_prediction_amplifies() {
        // At t=T the default schedule amplifies by 1/sqrt(alpha_bar_T),
        // about 157; values are unclamped here by design.
        let sched = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let x_t = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let zero = Tensor::zeros(&[1]);
        let out = predict_x0(&x_t, 1000, &zero, &sched).unwrap();
        let amp = 1.0 / sched.alpha_bar(1000).sqrt();
        assert!((out.item() - amp).abs() < 1e-9);
        assert!(amp > 150.0 && amp < 165.0, "amplification {amp}");
        assert!(predict_x0(&x_t, 0, &zero, &sched).is_err());
    }

    #[test]
    fn total_composes_from_components() {
        let sched = make_linear_schedule(100, 1e-4, 0.02).unwrap();
        let x0 = Tensor::from_vec(&[6, 6], rand("cx0", 36)).unwrap();
        let eps = Tensor::from_vec(&[6, 6], rand("ceps", 36)).unwrap();
        let eps_hat = Tensor::from_vec(&[6, 6], rand("chat", 36)).unwrap();
        let t = 40;
        let x_t = sched.q_sample(&x0, t, &eps).unwrap();
        let w = LossWeights::default();
        let (total, rep) = loss_total(&x0, &x_t, t, &eps, &eps_hat, &sched, &w).unwrap();

        // hand-composed from the three component calls
        let n = loss_noise(&eps, &eps_hat).unwrap().item();
        let r = loss_rec(&x0, &predict_x0(&x_t, t, &eps_hat, &sched).unwrap())
            .unwrap()
            .item();
        let f = loss_freq(&eps, &eps_hat).unwrap().item();
        let expect = n + 0.1 * r + 0.01 * f;
        assert!((total.item() - expect).abs() < 1e-12 * (1.0 + expect));
        assert!(rep.composes(&w));
        assert!(rep.noise_term >= 0.0 && rep.rec_term >= 0.0 && rep.freq_term >= 0.0);
    }

    #[test]
    fn zero_weights_reduce_to_noise_loss_bitwise() {
        let sched = make_linear_schedule(100, 1e-4, 0.02).unwrap();
        let x0 = Tensor::from_vec(&[4, 4], rand("zx0", 16)).unwrap();
        let eps = Tensor::from_vec(&[4, 4], rand("zeps", 16)).unwrap();
        let eps_hat = Tensor::from_vec(&[4, 4], rand("zhat", 16)).unwrap();
        let x_t = sched.q_sample(&x0, 10, &eps).unwrap();
        let w = LossWeights {
            lambda_rec: 0.0,
            lambda_freq: 0.0,
        };
        let (total, rep) = loss_total(&x0, &x_t, 10, &eps, &eps_hat, &sched, &w).unwrap();
        let noise = loss_noise(&eps, &eps_hat).unwrap();
        assert_eq!(total.item().to_bits(), noise.item().to_bits());
        assert_eq!(rep.rec_term, 0.0);
        assert_eq!(rep.freq_term, 0.0);
        assert!(rep.composes(&w));
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights {
            lambda_rec: -0.1,
            lambda_freq: 0.0,
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn total_gradient_matches_finite_differences_on_probe_model() {
        // Two-parameter probe: eps_hat = conv1x1(x_t; w, b). The finite
        // difference runs the whole hybrid objective forward only.
        let sched = make_linear_schedule(100, 1e-4, 0.02).unwrap();
        let t = 35;
        let x0v = rand("px0", 36);
        let epsv = rand("peps", 36);
        let x0 = Tensor::from_vec(&[1, 1, 6, 6], x0v).unwrap();
        let eps = Tensor::from_vec(&[1, 1, 6, 6], epsv).unwrap();
        let x_t = sched.q_sample(&x0, t, &eps).unwrap();
        let weights = LossWeights::default();

        gradcheck::assert_grad(
            |leaves| {
                let eps_hat = x_t.conv2d(&leaves[0], &leaves[1], (1, 1), (0, 0))?;
                let (total, _) =
                    loss_total(&x0, &x_t, t, &eps, &eps_hat, &sched, &weights).map_err(|_| {
                        crate::error::TensorError::NonScalarLoss { shape: vec![] }
                    })?;
                Ok(total)
            },
            &[
                (vec![1, 1, 1, 1], vec![0.8]),
                (vec![1], vec![-0.2]),
            ],
            1e-3,
        );
    }
}
