//! The optimization loop: warmup + cosine learning rate, per-sample graphs
//! with gradients reduced in fixed order, EMA shadow weights, periodic
//! validation by actually sampling reconstructions, and checkpointing.

use crate::dataset::Dataset;
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::exec;
use crate::io::{save_checkpoint, write_atomic, Checkpoint};
use crate::loss::{loss_total, LossReport, LossWeights};
use crate::metrics::{ms_ssim, SsimConfig};
use crate::nn::{ema_update, ParamStore};
use crate::optim::{adam_step, OptimizerState};
use crate::rng::{normal_vec, Streams};
use crate::sampler::{sample_normalized, SamplerConfig};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;
use rand::Rng;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub warmup_epochs: usize,
    pub ema_decay: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub validate_every: usize,
    pub checkpoint_every: usize,
    /// Validation images per pass; 0 means the whole validation split.
    pub val_subset: usize,
    /// Sampler used for validation reconstructions (EMA weights).
    pub val_sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4000,
            batch_size: 16,
            lr_max: 8e-5,
            warmup_epochs: 200,
            ema_decay: 0.995,
            seed: 0,
            weights: LossWeights::default(),
            grad_clip: 0.0,
            validate_every: 50,
            checkpoint_every: 50,
            val_subset: 0,
            val_sampler: SamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "train.epochs",
                "epochs and batch size must be positive",
            ));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::config(
                "train.warmup_epochs",
                format!(
                    "warmup ({}) must be below total epochs ({})",
                    self.warmup_epochs, self.epochs
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::config("train.ema_decay", "decay must be in [0, 1)"));
        }
        if self.lr_max <= 0.0 {
            return Err(Error::config("train.lr_max", "peak learning rate must be positive"));
        }
        if self.validate_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::config(
                "train.validate_every",
                "cadences must be positive",
            ));
        }
        self.weights.validate()
    }
}

/// Linear warmup to `lr_max`, then cosine decay reaching 0 at the final
/// epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.warmup_epochs {
        return cfg.lr_max * epoch as f64 / cfg.warmup_epochs as f64;
    }
    let denom = (cfg.epochs - 1).saturating_sub(cfg.warmup_epochs).max(1);
    let progress = (epoch - cfg.warmup_epochs) as f64 / denom as f64;
    cfg.lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// In-memory normalized training corpus.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<(Vec<f64>, Vec<f64>)>,
    /// (id, normalized map, normalized waveform)
    pub val: Vec<(String, Vec<f64>, Vec<f64>)>,
    pub height: usize,
    pub width: usize,
}

impl TrainData {
    pub fn from_dataset(ds: &Dataset) -> Result<TrainData> {
        if ds.train.is_empty() {
            return Err(Error::invalid("training split is empty"));
        }
        if ds.val.is_empty() {
            return Err(Error::invalid("validation split is empty"));
        }
        let mut train = Vec::with_capacity(ds.train.len());
        for id in &ds.train {
            train.push(ds.load_norm_pair(id)?);
        }
        let mut val = Vec::with_capacity(ds.val.len());
        for id in &ds.val {
            let (x0, y) = ds.load_norm_pair(id)?;
            val.push((id.clone(), x0, y));
        }
        Ok(TrainData {
            train,
            val,
            height: ds.meta.height,
            width: ds.meta.width,
        })
    }
}

/// One CSV row of the training log.
fn log_row(
    epoch: usize,
    step: u64,
    lr: f64,
    report: Option<&LossReport>,
    val: Option<f64>,
) -> String {
    let loss = match report {
        Some(r) => format!(
            "{:.8e},{:.8e},{:.8e},{:.8e}",
            r.total, r.noise_term, r.rec_term, r.freq_term
        ),
        None => ",,,".to_string(),
    };
    let v = match val {
        Some(m) => format!("{m:.6}"),
        None => String::new(),
    };
    format!("{epoch},{step},{lr:.8e},{loss},{v}\n")
}

pub const LOG_HEADER: &str = "epoch,step,lr,loss_total,loss_noise,loss_rec,loss_freq,val_msssim\n";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_msssim: f64,
    pub best_epoch: u64,
    pub epochs_run: usize,
    pub final_loss: LossReport,
    pub best_checkpoint: PathBuf,
    pub latest_checkpoint: PathBuf,
}

pub struct Trainer {
    model: Denoiser,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    config_echo: String,
    params: ParamStore,
    ema: ParamStore,
    opt: OptimizerState,
    streams: Streams,
    epoch_next: usize,
    best_msssim: f64,
    best_epoch: u64,
}

impl Trainer {
    pub fn new(
        model_cfg: DenoiserConfig,
        sched: NoiseSchedule,
        cfg: TrainConfig,
        config_echo: String,
    ) -> Result<Trainer> {
        cfg.validate()?;
        cfg.val_sampler.validate(&sched)?;
        let streams = Streams::new(cfg.seed);
        let mut params = ParamStore::new();
        let model = Denoiser::build(model_cfg, &mut params, streams.child_seed("init", 0))?;
        let ema = params.clone();
        let opt = OptimizerState::new(&params);
        Ok(Trainer {
            model,
            sched,
            cfg,
            config_echo,
            params,
            ema,
            opt,
            streams,
            epoch_next: 0,
            best_msssim: f64::NEG_INFINITY,
            best_epoch: 0,
        })
    }

    /// Restores a trainer mid-run. The checkpoint must structurally match
    /// the model the config describes.
    pub fn resume(
        model_cfg: DenoiserConfig,
        sched: NoiseSchedule,
        cfg: TrainConfig,
        config_echo: String,
        ckpt: Checkpoint,
    ) -> Result<Trainer> {
        cfg.validate()?;
        let mut probe = ParamStore::new();
        let model = Denoiser::build(model_cfg, &mut probe, 0)?;
        if !probe.same_layout(&ckpt.params) {
            return Err(Error::Checkpoint(
                "checkpoint parameters do not match the configured model".into(),
            ));
        }
        if ckpt.master_seed != cfg.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with seed {}, config says {}",
                ckpt.master_seed, cfg.seed
            )));
        }
        Ok(Trainer {
            model,
            sched,
            streams: Streams::new(cfg.seed),
            cfg,
            config_echo,
            params: ckpt.params,
            ema: ckpt.ema,
            opt: OptimizerState::from_parts(ckpt.adam_m, ckpt.adam_v, ckpt.adam_step),
            epoch_next: ckpt.epoch_next as usize,
            best_msssim: ckpt.best_msssim,
            best_epoch: ckpt.best_epoch,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn ema(&self) -> &ParamStore {
        &self.ema
    }

    pub fn model(&self) -> &Denoiser {
        &self.model
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_text: self.config_echo.clone(),
            params: self.params.clone(),
            ema: self.ema.clone(),
            adam_m: self.opt.m.clone(),
            adam_v: self.opt.v.clone(),
            adam_step: self.opt.step,
            master_seed: self.cfg.seed,
            epoch_next: self.epoch_next as u64,
            best_msssim: self.best_msssim,
            best_epoch: self.best_epoch,
        }
    }

    /// Gradients and loss report for one sample on its own graph.
    fn sample_pass(
        &self,
        x0: &[f64],
        wave: &[f64],
        h: usize,
        w: usize,
        t: usize,
        eps: &[f64],
    ) -> Result<(Vec<Vec<f64>>, LossReport)> {
        let mc = self.model.config();
        let x0_t = Tensor::from_vec(&[1, 1, h, w], x0.to_vec())?;
        let eps_t = Tensor::from_vec(&[1, 1, h, w], eps.to_vec())?;
        let x_t = self.sched.q_sample(&x0_t, t, &eps_t)?;
        let y = Tensor::from_vec(
            &[1, mc.waveform_channels, mc.wave_time, mc.wave_receivers],
            wave.to_vec(),
        )?;
        let leaves = self.params.leaves(true);
        let eps_hat = self.model.forward(&leaves, &x_t, &[t], &y)?;
        let (total, report) =
            loss_total(&x0_t, &x_t, t, &eps_t, &eps_hat, &self.sched, &self.cfg.weights)?;
        total.backward()?;
        Ok((leaves.grads(), report))
    }

    /// Mean validation MS-SSIM from actual sampled reconstructions using
    /// the EMA weights.
    fn validate(&self, data: &TrainData, epoch: usize) -> Result<f64> {
        let subset = if self.cfg.val_subset == 0 {
            data.val.len()
        } else {
            self.cfg.val_subset.min(data.val.len())
        };
        let scales = max_scales_for(data.height, data.width, 3);
        let scores = exec::ordered_map(subset, |i| -> Result<f64> {
            let (_, x0, wave) = &data.val[i];
            let cfg = SamplerConfig {
                seed: self
                    .streams
                    .child_seed("val", (epoch as u64) << 32 | i as u64),
                ..self.cfg.val_sampler
            };
            let rec = sample_normalized(&self.model, &self.ema, wave, &cfg, &self.sched)?;
            let to01 = |g: &[f64]| -> Vec<f64> { g.iter().map(|v| (v + 1.0) * 0.5).collect() };
            ms_ssim(
                &to01(&rec.grid),
                &to01(x0),
                data.height,
                data.width,
                scales,
                &SsimConfig::default(),
            )
        });
        let mut total = 0.0;
        for s in scores {
            total += s?;
        }
        Ok(total / subset as f64)
    }

    /// Runs the remaining epochs, appending to the log and writing
    /// checkpoints under `out_dir`.
    pub fn run(&mut self, data: &TrainData, out_dir: &Path) -> Result<TrainOutcome> {
        if data.train.is_empty() || data.val.is_empty() {
            return Err(Error::invalid("empty training or validation split"));
        }
        crate::io::ensure_dir(out_dir)?;
        let log_path = out_dir.join("train_log.csv");
        let latest = out_dir.join("checkpoint.dsck");
        let best = out_dir.join("best.dsck");
        let mut log = String::new();
        if self.epoch_next == 0 || !log_path.exists() {
            log.push_str(LOG_HEADER);
        } else {
            log = std::fs::read_to_string(&log_path)
                .map_err(|e| Error::io(log_path.display().to_string(), e))?;
        }

        let (h, w) = (data.height, data.width);
        let t_max = self.sched.num_steps();
        let mut final_loss = LossReport {
            total: 0.0,
            noise_term: 0.0,
            rec_term: 0.0,
            freq_term: 0.0,
        };

        for epoch in self.epoch_next..self.cfg.epochs {
            let lr = lr_at(epoch, &self.cfg);
            let order = {
                let mut idx: Vec<usize> = (0..data.train.len()).collect();
                use rand::seq::SliceRandom;
                idx.shuffle(&mut self.streams.stream("shuffle", &[epoch as u64]));
                idx
            };

            for (step_in_epoch, batch) in order.chunks(self.cfg.batch_size).enumerate() {
                let e64 = epoch as u64;
                let s64 = step_in_epoch as u64;
                let passes = exec::ordered_map(batch.len(), |j| {
                    let (x0, wave) = &data.train[batch[j]];
                    let t = self
                        .streams
                        .stream("t", &[e64, s64, j as u64])
                        .gen_range(1..=t_max);
                    let eps = normal_vec(
                        &mut self.streams.stream("eps", &[e64, s64, j as u64]),
                        h * w,
                    );
                    self.sample_pass(x0, wave, h, w, t, &eps)
                });

                // Fixed-order reduction keeps results thread-count invariant.
                let mut grads: Option<Vec<Vec<f64>>> = None;
                let mut report = LossReport {
                    total: 0.0,
                    noise_term: 0.0,
                    rec_term: 0.0,
                    freq_term: 0.0,
                };
                let bsize = batch.len() as f64;
                for pass in passes {
                    let (g, r) = pass?;
                    report.total += r.total / bsize;
                    report.noise_term += r.noise_term / bsize;
                    report.rec_term += r.rec_term / bsize;
                    report.freq_term += r.freq_term / bsize;
                    match grads.as_mut() {
                        None => grads = Some(g),
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                for (x, y) in a.iter_mut().zip(b) {
                                    *x += y;
                                }
                            }
                        }
                    }
                }
                let mut grads = grads.unwrap();
                for g in &mut grads {
                    for v in g.iter_mut() {
                        *v /= bsize;
                    }
                }

                if !report.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step: step_in_epoch,
                    });
                }
                adam_step(&mut self.params, &grads, &mut self.opt, lr, self.cfg.grad_clip)?;
                ema_update(&mut self.ema, &self.params, self.cfg.ema_decay)?;
                log.push_str(&log_row(epoch, self.opt.step, lr, Some(&report), None));
                final_loss = report;
            }

            let last = epoch + 1 == self.cfg.epochs;
            if (epoch + 1) % self.cfg.validate_every == 0 || last {
                let msssim = self.validate(data, epoch)?;
                log.push_str(&log_row(epoch, self.opt.step, lr, None, Some(msssim)));
                if msssim > self.best_msssim {
                    self.best_msssim = msssim;
                    self.best_epoch = epoch as u64;
                    self.epoch_next = epoch + 1;
                    save_checkpoint(&best, &self.checkpoint())?;
                }
            }
            self.epoch_next = epoch + 1;
            if (epoch + 1) % self.cfg.checkpoint_every == 0 || last {
                save_checkpoint(&latest, &self.checkpoint())?;
                write_atomic(&log_path, log.as_bytes())?;
            }
        }
        write_atomic(&log_path, log.as_bytes())?;
        if !best.exists() {
            save_checkpoint(&best, &self.checkpoint())?;
        }
        Ok(TrainOutcome {
            best_msssim: self.best_msssim,
            best_epoch: self.best_epoch,
            epochs_run: self.cfg.epochs,
            final_loss,
            best_checkpoint: best,
            latest_checkpoint: latest,
        })
    }
}

/// Largest scale count (up to `preferred`) the image extent supports.
pub fn max_scales_for(h: usize, w: usize, preferred: usize) -> usize {
    let mut s = preferred.max(1);
    while s > 1 && (4 << (s - 1)) > h.min(w) {
        s -= 1;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Conditioning;
    use crate::schedule::make_linear_schedule;

    fn tiny_model_cfg() -> DenoiserConfig {
        DenoiserConfig {
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            time_embed_dim: 16,
            blocks_per_scale: 1,
            waveform_channels: 2,
            wave_time: 32,
            wave_receivers: 8,
            map_height: 8,
            map_width: 8,
            conditioning: Conditioning::ControlNet,
        }
    }

    fn tiny_data(n_train: usize, n_val: usize) -> TrainData {
        let streams = Streams::new(99);
        let mk = |tag: &str, i: usize| -> (Vec<f64>, Vec<f64>) {
            let x0: Vec<f64> = normal_vec(&mut streams.stream(tag, &[i as u64]), 64)
                .iter()
                .map(|v| v.tanh() * 0.8)
                .collect();
            let y = normal_vec(&mut streams.stream("wave", &[i as u64]), 2 * 32 * 8);
            (x0, y)
        };
        TrainData {
            train: (0..n_train).map(|i| mk("train", i)).collect(),
            val: (0..n_val)
                .map(|i| {
                    let (a, b) = mk("val", i);
                    (format!("v{i}"), a, b)
                })
                .collect(),
            height: 8,
            width: 8,
        }
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            lr_max: 1e-3,
            warmup_epochs: 1,
            ema_decay: 0.9,
            seed: 7,
            weights: LossWeights::default(),
            grad_clip: 0.0,
            validate_every: 2,
            checkpoint_every: 2,
            val_subset: 1,
            val_sampler: SamplerConfig {
                num_steps: 4,
                eta: 1.0,
                clamp_x0: true,
                seed: 0,
            },
        }
    }

    #[test]
    fn lr_schedule_shape() {
        let cfg = TrainConfig {
            epochs: 101,
            warmup_epochs: 20,
            lr_max: 8e-5,
            ..quick_cfg(101)
        };
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert!((lr_at(20, &cfg) - 8e-5).abs() < 1e-20);
        // continuity at the warmup boundary
        let just_before = lr_at(19, &cfg);
        assert!((just_before - 8e-5 * 19.0 / 20.0).abs() < 1e-20);
        // non-increasing after warmup, exactly zero at the final epoch
        let mut prev = lr_at(20, &cfg);
        for e in 21..101 {
            let v = lr_at(e, &cfg);
            assert!(v <= prev);
            prev = v;
        }
        assert!(lr_at(100, &cfg).abs() < 1e-20);
        // midpoint of the cosine segment is about half of lr_max
        let mid = 20 + (101 - 20) / 2;
        assert!((lr_at(mid, &cfg) - 4e-5).abs() < 2e-6);
    }

    #[test]
    fn config_validation() {
        let mut cfg = quick_cfg(10);
        cfg.warmup_epochs = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = quick_cfg(10);
        cfg.ema_decay = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = quick_cfg(10);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_sample_overfit_drops_noise_loss() {
        // Fixed (x0, y, t, eps) tuple; the model should memorize eps well
        // below 0.01 within 2000 steps.
        let sched = make_linear_schedule(100, 1e-4, 0.02).unwrap();
        let streams = Streams::new(3);
        let mut params = ParamStore::new();
        let model = Denoiser::build(tiny_model_cfg(), &mut params, 1).unwrap();
        let mut opt = OptimizerState::new(&params);

        let x0: Vec<f64> = normal_vec(&mut streams.stream("x0", &[]), 64)
            .iter()
            .map(|v| v.tanh() * 0.8)
            .collect();
        let wave = normal_vec(&mut streams.stream("y", &[]), 2 * 32 * 8);
        let eps = normal_vec(&mut streams.stream("eps", &[]), 64);
        let t = 42;
        let x0_t = Tensor::from_vec(&[1, 1, 8, 8], x0).unwrap();
        let eps_t = Tensor::from_vec(&[1, 1, 8, 8], eps).unwrap();
        let x_t = sched.q_sample(&x0_t, t, &eps_t).unwrap();
        let y = Tensor::from_vec(&[1, 2, 32, 8], wave).unwrap();

        let mut reached = None;
        for step in 0..2000 {
            let leaves = params.leaves(true);
            let eps_hat = model.forward(&leaves, &x_t, &[t], &y).unwrap();
            let noise = crate::loss::loss_noise(&eps_t, &eps_hat).unwrap();
            if noise.item() < 0.01 {
                reached = Some(step);
                break;
            }
            noise.backward().unwrap();
            adam_step(&mut params, &leaves.grads(), &mut opt, 3e-3, 0.0).unwrap();
        }
        assert!(reached.is_some(), "noise loss never dropped below 0.01");
    }

    #[test]
    fn training_runs_and_logs() {
        let dir = tempfile::tempdir().unwrap();
        let sched = make_linear_schedule(50, 1e-4, 0.02).unwrap();
        let mut trainer = Trainer::new(
            tiny_model_cfg(),
            sched,
            quick_cfg(4),
            "[test]\nrun = 1\n".into(),
        )
        .unwrap();
        let data = tiny_data(8, 2);
        let out = trainer.run(&data, dir.path()).unwrap();
        assert!(out.best_msssim.is_finite());
        assert!(out.best_checkpoint.exists());
        assert!(out.latest_checkpoint.exists());
        let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        assert!(log.starts_with(LOG_HEADER));
        // 4 epochs, validate_every 2 -> 2 validation rows
        let val_rows = log
            .lines()
            .skip(1)
            .filter(|l| l.split(',').nth(7).is_some_and(|v| !v.is_empty()))
            .count();
        assert_eq!(val_rows, 2);
        // 8 samples / batch 4 = 2 steps per epoch, 4 epochs
        let step_rows = log
            .lines()
            .skip(1)
            .filter(|l| l.split(',').nth(3).is_some_and(|v| !v.is_empty()))
            .count();
        assert_eq!(step_rows, 8);
    }

    #[test]
    fn resume_reproduces_loss_trajectory_bitwise() {
        let sched = make_linear_schedule(50, 1e-4, 0.02).unwrap();
        let data = tiny_data(8, 2);
        let cfg = quick_cfg(4);

        // uninterrupted run
        let d1 = tempfile::tempdir().unwrap();
        let mut full = Trainer::new(tiny_model_cfg(), sched.clone(), cfg.clone(), String::new())
            .unwrap();
        full.run(&data, d1.path()).unwrap();
        let log_full = std::fs::read_to_string(d1.path().join("train_log.csv")).unwrap();

        // two-epoch run, checkpoint, resume for the rest
        let d2 = tempfile::tempdir().unwrap();
        let mut first = Trainer::new(tiny_model_cfg(), sched.clone(), cfg.clone(), String::new())
            .unwrap();
        // run only two epochs by shrinking the loop bound, then resume with
        // the full budget from the written checkpoint
        first.cfg.epochs = 2;
        first.run(&data, d2.path()).unwrap();
        let ckpt = crate::io::load_checkpoint(&d2.path().join("checkpoint.dsck")).unwrap();
        let mut resumed =
            Trainer::resume(tiny_model_cfg(), sched, cfg, String::new(), ckpt).unwrap();
        resumed.run(&data, d2.path()).unwrap();
        let log_resumed = std::fs::read_to_string(d2.path().join("train_log.csv")).unwrap();

        let steps = |log: &str| -> Vec<String> {
            log.lines()
                .skip(1)
                .filter(|l| l.split(',').nth(3).is_some_and(|v| !v.is_empty()))
                .map(|l| {
                    let mut parts: Vec<&str> = l.split(',').collect();
                    // lr differs only through cfg; keep loss columns
                    parts.truncate(7);
                    parts[3..].join(",")
                })
                .collect()
        };
        assert_eq!(steps(&log_full), steps(&log_resumed));
        // final parameters identical bitwise
        for id in full.params.ids() {
            assert_eq!(full.params.value(id), resumed.params.value(id));
        }
    }

    #[test]
    fn zero_weight_training_reduces_to_noise_objective() {
        let sched = make_linear_schedule(50, 1e-4, 0.02).unwrap();
        let mut cfg = quick_cfg(2);
        cfg.weights = LossWeights {
            lambda_rec: 0.0,
            lambda_freq: 0.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let mut tr = Trainer::new(tiny_model_cfg(), sched, cfg, String::new()).unwrap();
        tr.run(&tiny_data(4, 1), dir.path()).unwrap();
        let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        for line in log.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if !cols[3].is_empty() {
                assert_eq!(cols[3], cols[4], "total != noise in {line}");
            }
        }
    }

    #[test]
    fn max_scales_adapts_to_extent() {
        assert_eq!(max_scales_for(32, 32, 3), 3);
        assert_eq!(max_scales_for(8, 8, 3), 2);
        assert_eq!(max_scales_for(4, 4, 3), 1);
    }
}
