//! Reverse-process inference: stochastic implicit-diffusion updates over a
//! strided timestep subsequence, plus Monte-Carlo ensembles with per-pixel
//! uncertainty.

use crate::dataset::NormStats;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::exec;
use crate::loss::predict_x0_slice;
use crate::nn::ParamStore;
use crate::rng::{normal_vec, Streams};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;
use crate::wavesim::SosMap;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub num_steps: usize,
    /// Stochasticity knob: 0 is deterministic, 1 matches the ancestral
    /// posterior variance on adjacent steps.
    pub eta: f64,
    /// Clamp the clean-map estimate to [-1, 1] at every step.
    pub clamp_x0: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_steps: 10,
            eta: 1.0,
            clamp_x0: true,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.num_steps == 0 || self.num_steps > sched.num_steps() {
            return Err(Error::config(
                "sampler.steps",
                format!(
                    "step count must be in 1..={}, got {}",
                    sched.num_steps(),
                    self.num_steps
                ),
            ));
        }
        if self.eta < 0.0 {
            return Err(Error::config("sampler.eta", "eta must be non-negative"));
        }
        Ok(())
    }
}

/// Noise scale of the update from `t` to `t_prev`:
/// eta * sqrt((1 - ab_prev) / (1 - ab_t)) * sqrt(1 - ab_t / ab_prev),
/// with the cumulative products taken at the subsequence endpoints.
pub fn ddim_sigma(t: usize, t_prev: usize, eta: f64, sched: &NoiseSchedule) -> Result<f64> {
    if t_prev >= t || t > sched.num_steps() {
        return Err(Error::invalid(format!(
            "sigma: need t_prev < t <= {}, got t={t}, t_prev={t_prev}",
            sched.num_steps()
        )));
    }
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    if ab_prev <= ab_t {
        return Err(Error::invalid(format!(
            "sigma: schedule violation, alpha_bar({t_prev}) <= alpha_bar({t})"
        )));
    }
    Ok(eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt())
}

/// One reverse update from `t` to `t_prev` given the predicted noise:
/// x_prev = sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev - sigma^2) * eps_hat
///        + sigma * z.
/// Fresh noise is drawn from `rng` only when sigma > 0.
pub fn ddim_step(
    x_t: &[f64],
    t: usize,
    t_prev: usize,
    eps_hat: &[f64],
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if x_t.len() != eps_hat.len() {
        return Err(Error::invalid("ddim_step: shape mismatch"));
    }
    let sigma = ddim_sigma(t, t_prev, cfg.eta, sched)?;
    let ab_prev = sched.alpha_bar(t_prev);
    let radicand = 1.0 - ab_prev - sigma * sigma;
    if radicand < -1e-12 {
        return Err(Error::invalid(format!(
            "ddim_step: negative direction radicand at t={t} (eta={} too large)",
            cfg.eta
        )));
    }
    let dir = radicand.max(0.0).sqrt();
    let sa = ab_prev.sqrt();

    let mut x0_hat = predict_x0_slice(x_t, t, eps_hat, sched);
    if cfg.clamp_x0 {
        for v in &mut x0_hat {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    let noise = if sigma > 0.0 {
        Some(normal_vec(rng, x_t.len()))
    } else {
        None
    };
    Ok(x0_hat
        .iter()
        .enumerate()
        .map(|(i, &x0)| {
            let mut v = sa * x0 + dir * eps_hat[i];
            if let Some(z) = &noise {
                v += sigma * z[i];
            }
            v
        })
        .collect())
}

/// Uniformly strided decreasing subsequence T = tau_0 > ... > tau_K = 0.
pub fn timestep_subsequence(t_total: usize, num_steps: usize) -> Vec<usize> {
    let mut taus: Vec<usize> = (0..=num_steps)
        .map(|i| (t_total * (num_steps - i) + num_steps / 2) / num_steps)
        .collect();
    taus.dedup();
    taus
}

/// Per-pixel statistics over a Monte-Carlo ensemble of reconstructions,
/// in normalized map units.
#[derive(Debug, Clone)]
pub struct UncertaintyMap {
    /// Population variance (divide by N).
    pub variance: Vec<f64>,
    pub ensemble_mean: Vec<f64>,
    pub ensemble_size: usize,
    pub height: usize,
    pub width: usize,
}

/// Full reverse trajectory from pure noise, conditioned on one normalized
/// waveform set. Returns the reconstruction in physical units.
pub fn sample(
    model: &Denoiser,
    params: &ParamStore,
    y_norm: &[f64],
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    stats: &NormStats,
    spacing: f64,
) -> Result<SosMap> {
    Ok(sample_normalized(model, params, y_norm, cfg, sched)?.into_map(stats, spacing))
}

/// Normalized-output trajectory; callers needing physical units wrap it
/// with the dataset statistics.
pub fn sample_normalized(
    model: &Denoiser,
    params: &ParamStore,
    y_norm: &[f64],
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
) -> Result<NormalizedSample> {
    cfg.validate(sched)?;
    let mc = model.config();
    let (h, w) = (mc.map_height, mc.map_width);
    let wave_shape = [1, mc.waveform_channels, mc.wave_time, mc.wave_receivers];
    let y = Tensor::from_vec(&wave_shape, y_norm.to_vec())?;
    let leaves = params.leaves(false);

    let streams = Streams::new(cfg.seed);
    let mut rng = streams.stream("trajectory", &[]);
    let mut x = normal_vec(&mut rng, h * w);
    let taus = timestep_subsequence(sched.num_steps(), cfg.num_steps);
    for k in 0..taus.len() - 1 {
        let (t, t_prev) = (taus[k], taus[k + 1]);
        let x_t = Tensor::from_vec(&[1, 1, h, w], x.clone())?;
        let eps_hat = model.forward(&leaves, &x_t, &[t], &y)?;
        eps_hat.check_finite("denoiser_forward")?;
        x = ddim_step(&x, t, t_prev, eps_hat.data(), cfg, sched, &mut rng)?;
    }
    Ok(NormalizedSample {
        grid: x,
        height: h,
        width: w,
    })
}

/// A reconstruction still in [-1, 1] units.
#[derive(Debug, Clone)]
pub struct NormalizedSample {
    pub grid: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

impl NormalizedSample {
    pub fn into_map(self, stats: &NormStats, spacing: f64) -> SosMap {
        SosMap {
            grid: stats.norm_to_phys(&self.grid),
            height: self.height,
            width: self.width,
            spacing,
            c_min: stats.sos_min,
            c_max: stats.sos_max,
        }
    }
}

/// N independent trajectories with distinct noise streams and shared
/// weights/condition. Members run in parallel and merge by index.
pub fn sample_ensemble(
    model: &Denoiser,
    params: &ParamStore,
    y_norm: &[f64],
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    stats: &NormStats,
    spacing: f64,
    ensemble_size: usize,
) -> Result<(Vec<SosMap>, UncertaintyMap)> {
    if ensemble_size == 0 {
        return Err(Error::config("sampler.ensemble", "ensemble size must be >= 1"));
    }
    let streams = Streams::new(cfg.seed);
    let members: Vec<Result<NormalizedSample>> = exec::ordered_map(ensemble_size, |k| {
        let member_cfg = SamplerConfig {
            seed: streams.child_seed("member", k as u64),
            ..*cfg
        };
        sample_normalized(model, params, y_norm, &member_cfg, sched)
    });
    let members: Vec<NormalizedSample> = members.into_iter().collect::<Result<_>>()?;

    let (h, w) = (members[0].height, members[0].width);
    let n = members.len() as f64;
    let mut mean = vec![0.0; h * w];
    for m in &members {
        for (acc, v) in mean.iter_mut().zip(&m.grid) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= n;
    }
    let mut variance = vec![0.0; h * w];
    for m in &members {
        for (i, v) in m.grid.iter().enumerate() {
            let d = v - mean[i];
            variance[i] += d * d;
        }
    }
    for v in &mut variance {
        *v /= n;
    }

    let uncertainty = UncertaintyMap {
        variance,
        ensemble_mean: mean,
        ensemble_size,
        height: h,
        width: w,
    };
    let maps = members
        .into_iter()
        .map(|m| m.into_map(stats, spacing))
        .collect();
    Ok((maps, uncertainty))
}
