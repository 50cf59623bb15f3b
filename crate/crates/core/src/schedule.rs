//! Noise schedules, closed-form forward marginals, and timestep embeddings.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance schedule of the forward process. Steps are 1-indexed;
/// `alpha_bar(0)` is defined as 1 to anchor the final sampling transition.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Shape of the beta schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::config(
                "schedule.kind",
                format!("unknown schedule '{other}' (expected linear or cosine)"),
            )),
        }
    }
}

impl NoiseSchedule {
    fn from_betas(beta: Vec<f64>) -> Result<Self> {
        for (i, &b) in beta.iter().enumerate() {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::config(
                    "schedule.beta",
                    format!("beta_{} = {b} outside (0, 1)", i + 1),
                ));
            }
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut prod = 1.0;
        for &a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        Ok(NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.beta.len()
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// alpha_t = 1 - beta_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product of alphas up to t, with alpha_bar(0) = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.num_steps()
            )));
        }
        Ok(())
    }

    /// Closed-form forward marginal:
    /// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
    pub fn q_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        self.check_t(t)?;
        if x0.shape() != eps.shape() {
            return Err(crate::error::TensorError::ShapeMismatch {
                op: "q_sample",
                lhs: x0.shape().to_vec(),
                rhs: eps.shape().to_vec(),
            }
            .into());
        }
        let ab = self.alpha_bar(t);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let data: Vec<f64> = x0
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&x, &e)| sa * x + sb * e)
            .collect();
        Ok(Tensor::from_vec(x0.shape(), data)?)
    }

    /// Plain-slice variant of [`NoiseSchedule::q_sample`].
    pub fn q_sample_slice(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        let ab = self.alpha_bar(t);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0
            .iter()
            .zip(eps)
            .map(|(&x, &e)| sa * x + sb * e)
            .collect())
    }
}

/// Linear beta schedule, endpoints inclusive.
pub fn make_linear_schedule(t_count: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_count == 0 {
        return Err(Error::config("schedule.steps", "step count must be >= 1"));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(
            "schedule.beta",
            format!("need 0 < beta_start ({beta_start}) <= beta_end ({beta_end}) < 1"),
        ));
    }
    let beta = if t_count == 1 {
        vec![beta_start]
    } else {
        (0..t_count)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_count - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(beta)
}

/// Cosine alpha_bar schedule (squared-cosine ramp with the usual 0.008
/// offset), betas clipped to 0.999.
pub fn make_cosine_schedule(t_count: usize) -> Result<NoiseSchedule> {
    if t_count == 0 {
        return Err(Error::config("schedule.steps", "step count must be >= 1"));
    }
    let s = 0.008;
    let f = |u: f64| ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let f0 = f(0.0);
    let mut beta = Vec::with_capacity(t_count);
    let mut prev = 1.0;
    for t in 1..=t_count {
        let ab = f(t as f64 / t_count as f64) / f0;
        let b = (1.0 - ab / prev).clamp(1e-8, 0.999);
        beta.push(b);
        prev *= 1.0 - b;
    }
    NoiseSchedule::from_betas(beta)
}

/// Sinusoidal timestep features, `dim/2` sine components followed by their
/// cosine counterparts, frequencies 10000^(-2i/dim).
#[derive(Debug, Clone)]
pub struct TimestepEmbedding {
    pub dim: usize,
    pub values: Vec<f64>,
}

pub fn embed_timestep(t: usize, dim: usize) -> Result<TimestepEmbedding> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::config(
            "model.time_embed_dim",
            format!("embedding width must be even and positive, got {dim}"),
        ));
    }
    let half = dim / 2;
    let mut values = vec![0.0; dim];
    for i in 0..half {
        let omega = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        values[i] = (t as f64 * omega).sin();
        values[half + i] = (t as f64 * omega).cos();
    }
    Ok(TimestepEmbedding { dim, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, Streams};

    #[test]
    fn two_step_hand_product() {
        let s = make_linear_schedule(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn single_step_schedule() {
        let s = make_linear_schedule(1, 0.3, 0.3).unwrap();
        assert_eq!(s.num_steps(), 1);
        assert!((s.alpha_bar(1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_terminal_alpha_bar() {
        // Independently computed: product of (1 - beta_t) for the inclusive
        // linear ramp 1e-4..0.02 over 1000 steps is 4.0358297653756833e-5.
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let ab = s.alpha_bar(1000);
        assert!(ab < 1e-4);
        assert!((ab - 4.0358297653756833e-5).abs() / ab < 1e-10);
    }

    #[test]
    fn alpha_bar_monotone_and_product_identity() {
        for sched in [
            make_linear_schedule(100, 1e-4, 0.05).unwrap(),
            make_cosine_schedule(100).unwrap(),
        ] {
            for t in 1..=100 {
                assert!(sched.alpha_bar(t) < sched.alpha_bar(t - 1));
                let expect = sched.alpha_bar(t - 1) * sched.alpha(t);
                assert_eq!(sched.alpha_bar(t), expect, "t={t}");
            }
        }
    }

    #[test]
    fn bounds_violations_rejected() {
        assert!(make_linear_schedule(0, 1e-4, 0.02).is_err());
        assert!(make_linear_schedule(10, 0.0, 0.02).is_err());
        assert!(make_linear_schedule(10, 0.03, 0.02).is_err());
        assert!(make_linear_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn q_sample_boundaries() {
        let s = make_linear_schedule(50, 1e-4, 0.02).unwrap();
        let x0 = Tensor::from_vec(&[4], vec![0.5, -0.25, 1.0, 0.0]).unwrap();
        let zero = Tensor::zeros(&[4]);
        // zero noise leaves only the sqrt(alpha_bar) scaling
        let xt = s.q_sample(&x0, 7, &zero).unwrap();
        let sa = s.alpha_bar(7).sqrt();
        for (a, b) in xt.data().iter().zip(x0.data()) {
            assert_eq!(*a, sa * b);
        }
        // zero signal leaves only the noise branch
        let eps = Tensor::from_vec(&[4], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let x0z = Tensor::zeros(&[4]);
        let xt = s.q_sample(&x0z, 7, &eps).unwrap();
        let sb = (1.0 - s.alpha_bar(7)).sqrt();
        for (a, b) in xt.data().iter().zip(eps.data()) {
            assert_eq!(*a, sb * b);
        }
        assert!(s.q_sample(&x0, 0, &zero).is_err());
        assert!(s.q_sample(&x0, 51, &zero).is_err());
    }

    #[test]
    fn q_sample_monte_carlo_moments() {
        // Empirical mean/std over 10^4 draws vs the closed form, 3 standard
        // errors.
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let streams = Streams::new(1234);
        let x0 = 0.6;
        let n = 10_000;
        for t in [1usize, 500, 1000] {
            let mut rng = streams.stream("mc", &[t as u64]);
            let draws: Vec<f64> = (0..n)
                .map(|_| {
                    let e = normal_vec(&mut rng, 1)[0];
                    s.q_sample_slice(&[x0], t, &[e]).unwrap()[0]
                })
                .collect();
            let mean: f64 = draws.iter().sum::<f64>() / n as f64;
            let var: f64 =
                draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
            let true_mean = s.alpha_bar(t).sqrt() * x0;
            let true_std = (1.0 - s.alpha_bar(t)).sqrt();
            let se_mean = true_std / (n as f64).sqrt();
            let se_std = true_std / (2.0 * n as f64).sqrt();
            assert!(
                (mean - true_mean).abs() < 3.0 * se_mean,
                "t={t}: mean {mean} vs {true_mean}"
            );
            assert!(
                (var.sqrt() - true_std).abs() < 3.0 * se_std,
                "t={t}: std {} vs {true_std}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn embedding_at_zero_and_bounds() {
        let e = embed_timestep(0, 8).unwrap();
        assert_eq!(&e.values[..4], &[0.0; 4]);
        assert_eq!(&e.values[4..], &[1.0; 4]);
        for t in 1..=1000 {
            let e = embed_timestep(t, 64).unwrap();
            assert!(e.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert!(embed_timestep(3, 7).is_err());
    }

    #[test]
    fn embeddings_distinct_over_training_range() {
        // Exhaustive pairwise distinctness for t in 1..=1000 at the default
        // width. Sorting by the first component cuts the pair count down,
        // but 1000 embeddings is small enough to brute-force.
        let dim = 256;
        let embs: Vec<Vec<f64>> = (1..=1000)
            .map(|t| embed_timestep(t, dim).unwrap().values)
            .collect();
        let mut min_d2 = f64::INFINITY;
        for i in 0..embs.len() {
            for j in i + 1..embs.len() {
                let d2: f64 = embs[i]
                    .iter()
                    .zip(&embs[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                min_d2 = min_d2.min(d2);
            }
        }
        assert!(min_d2 > 0.0, "min pairwise distance^2 = {min_d2}");
    }
}
