//! Run configuration: a sectioned `key = value` file overlaid by
//! command-line overrides, validated field by field, materialized into the
//! per-module config structs, and echoed verbatim to output directories.

use crate::dataset::{DatasetConfig, DatasetMeta};
use crate::denoiser::{Conditioning, DenoiserConfig};
use crate::error::{Error, Result};
use crate::io::KvFile;
use crate::loss::LossWeights;
use crate::metrics::EvalConfig;
use crate::sampler::SamplerConfig;
use crate::schedule::{make_cosine_schedule, make_linear_schedule, NoiseSchedule, ScheduleKind};
use crate::trainer::TrainConfig;
use crate::wavesim::{ArrayLayout, InclusionShape, PhantomSpec};
use std::path::Path;

/// Fully resolved configuration for every subcommand.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    model: ModelSection,
    pub schedule_kind: ScheduleKind,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub ensemble: usize,
    pub eval: EvalConfig,
    /// Canonical text of the resolved configuration.
    echo: String,
}

#[derive(Debug, Clone)]
struct ModelSection {
    base_channels: usize,
    channel_multipliers: Vec<usize>,
    time_embed_dim: usize,
    blocks_per_scale: usize,
    conditioning: Conditioning,
}

/// Built-in defaults as a key-value tree.
pub fn default_kv() -> KvFile {
    let mut kv = KvFile::new();
    let d = &mut kv;
    d.set("dataset", "n", 200);
    d.set("dataset", "seed", 7);
    d.set("dataset", "height", 32);
    d.set("dataset", "width", 32);
    d.set("dataset", "spacing", "1.5e-3");
    d.set("dataset", "background", 1500.0);
    d.set("dataset", "c_min", 1400.0);
    d.set("dataset", "c_max", 1600.0);
    d.set("dataset", "inclusion_min", 1);
    d.set("dataset", "inclusion_max", 4);
    d.set("dataset", "speed_min", 1420.0);
    d.set("dataset", "speed_max", 1580.0);
    d.set("dataset", "shape", "ellipse");
    d.set("dataset", "smoothing", 1);
    d.set("dataset", "sources", 8);
    d.set("dataset", "receivers", 32);
    d.set("dataset", "time_samples", 256);
    d.set("dataset", "dt", "6e-7");
    d.set("dataset", "center_freq", "1.5e5");
    d.set("dataset", "layout", "opposed_linear");

    d.set("model", "base_channels", 24);
    d.set("model", "channel_multipliers", "1,2,3");
    d.set("model", "time_embed_dim", 256);
    d.set("model", "blocks_per_scale", 2);
    d.set("model", "conditioning", "controlnet");

    d.set("schedule", "steps", 1000);
    d.set("schedule", "kind", "linear");
    d.set("schedule", "beta_start", "1e-4");
    d.set("schedule", "beta_end", "0.02");

    d.set("train", "epochs", 4000);
    d.set("train", "batch_size", 16);
    d.set("train", "lr_max", "8e-5");
    d.set("train", "warmup_epochs", 200);
    d.set("train", "ema_decay", 0.995);
    d.set("train", "seed", 0);
    d.set("train", "lambda_rec", 0.1);
    d.set("train", "lambda_freq", 0.01);
    d.set("train", "grad_clip", 0);
    d.set("train", "validate_every", 50);
    d.set("train", "checkpoint_every", 50);
    d.set("train", "val_subset", 0);

    d.set("sampler", "steps", 10);
    d.set("sampler", "eta", 1.0);
    d.set("sampler", "clamp_x0", "true");
    d.set("sampler", "ensemble", 10);
    d.set("sampler", "seed", 0);

    d.set("eval", "msssim_scales", 3);
    d.set("eval", "psnr_data_range", 2.0);
    kv
}

fn merge(base: &mut KvFile, overlay: &KvFile) -> Result<()> {
    for (section, entries) in overlay.sections() {
        for (key, value) in entries {
            if base.get(section, key).is_none() {
                return Err(Error::config(
                    format!("{section}.{key}"),
                    "unknown configuration field",
                ));
            }
            base.set(section, key, value);
        }
    }
    Ok(())
}

impl RunConfig {
    /// Defaults, optionally overlaid by a config file, then by
    /// `section.key=value` override strings.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut kv = default_kv();
        if let Some(path) = file {
            merge(&mut kv, &KvFile::load(path)?)?;
        }
        if !overrides.is_empty() {
            let mut over = KvFile::new();
            for item in overrides {
                let (path, value) = item.split_once('=').ok_or_else(|| {
                    Error::config("--set", format!("expected section.key=value, got '{item}'"))
                })?;
                let (section, key) = path.trim().split_once('.').ok_or_else(|| {
                    Error::config("--set", format!("expected section.key=value, got '{item}'"))
                })?;
                over.set(section.trim(), key.trim(), value.trim());
            }
            merge(&mut kv, &over)?;
        }
        Self::from_kv(&kv)
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut kv = default_kv();
        merge(&mut kv, &KvFile::parse(text)?)?;
        Self::from_kv(&kv)
    }

    fn from_kv(kv: &KvFile) -> Result<RunConfig> {
        fn need<T: std::str::FromStr>(kv: &KvFile, s: &str, k: &str) -> Result<T> {
            kv.parse_field::<T>(s, k)?
                .ok_or_else(|| Error::config(format!("{s}.{k}"), "missing field"))
        }
        let phantom = PhantomSpec {
            height: need(kv, "dataset", "height")?,
            width: need(kv, "dataset", "width")?,
            spacing: need(kv, "dataset", "spacing")?,
            background: need(kv, "dataset", "background")?,
            inclusion_count: (
                need(kv, "dataset", "inclusion_min")?,
                need(kv, "dataset", "inclusion_max")?,
            ),
            inclusion_speed: (
                need(kv, "dataset", "speed_min")?,
                need(kv, "dataset", "speed_max")?,
            ),
            shape: need::<InclusionShape>(kv, "dataset", "shape")?,
            smoothing_radius: need(kv, "dataset", "smoothing")?,
            c_min: need(kv, "dataset", "c_min")?,
            c_max: need(kv, "dataset", "c_max")?,
        };
        let dataset = DatasetConfig {
            n: need(kv, "dataset", "n")?,
            seed: need(kv, "dataset", "seed")?,
            phantom,
            sources: need(kv, "dataset", "sources")?,
            receivers: need(kv, "dataset", "receivers")?,
            time_samples: need(kv, "dataset", "time_samples")?,
            dt: need(kv, "dataset", "dt")?,
            center_freq_hz: need(kv, "dataset", "center_freq")?,
            layout: need::<ArrayLayout>(kv, "dataset", "layout")?,
        };

        let multipliers: Vec<usize> = need::<String>(kv, "model", "channel_multipliers")?
            .split(',')
            .map(|p| {
                p.trim().parse::<usize>().map_err(|_| {
                    Error::config("model.channel_multipliers", format!("bad entry '{p}'"))
                })
            })
            .collect::<Result<_>>()?;
        let model = ModelSection {
            base_channels: need(kv, "model", "base_channels")?,
            channel_multipliers: multipliers,
            time_embed_dim: need(kv, "model", "time_embed_dim")?,
            blocks_per_scale: need(kv, "model", "blocks_per_scale")?,
            conditioning: need::<Conditioning>(kv, "model", "conditioning")?,
        };

        let train = TrainConfig {
            epochs: need(kv, "train", "epochs")?,
            batch_size: need(kv, "train", "batch_size")?,
            lr_max: need(kv, "train", "lr_max")?,
            warmup_epochs: need(kv, "train", "warmup_epochs")?,
            ema_decay: need(kv, "train", "ema_decay")?,
            seed: need(kv, "train", "seed")?,
            weights: LossWeights {
                lambda_rec: need(kv, "train", "lambda_rec")?,
                lambda_freq: need(kv, "train", "lambda_freq")?,
            },
            grad_clip: need(kv, "train", "grad_clip")?,
            validate_every: need(kv, "train", "validate_every")?,
            checkpoint_every: need(kv, "train", "checkpoint_every")?,
            val_subset: need(kv, "train", "val_subset")?,
            val_sampler: SamplerConfig {
                num_steps: need(kv, "sampler", "steps")?,
                eta: need(kv, "sampler", "eta")?,
                clamp_x0: need::<bool>(kv, "sampler", "clamp_x0")?,
                seed: 0,
            },
        };

        let sampler = SamplerConfig {
            num_steps: need(kv, "sampler", "steps")?,
            eta: need(kv, "sampler", "eta")?,
            clamp_x0: need::<bool>(kv, "sampler", "clamp_x0")?,
            seed: need(kv, "sampler", "seed")?,
        };

        let eval = EvalConfig {
            msssim_scales: need(kv, "eval", "msssim_scales")?,
            ssim: Default::default(),
            psnr_data_range: need(kv, "eval", "psnr_data_range")?,
        };

        let cfg = RunConfig {
            dataset,
            model,
            schedule_kind: need::<ScheduleKind>(kv, "schedule", "kind")?,
            schedule_steps: need(kv, "schedule", "steps")?,
            beta_start: need(kv, "schedule", "beta_start")?,
            beta_end: need(kv, "schedule", "beta_end")?,
            train,
            sampler,
            ensemble: need(kv, "sampler", "ensemble")?,
            eval,
            echo: kv.to_text(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Validates every field against the owning module's constraints
    /// before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let sched = self.schedule()?;
        self.train.validate()?;
        self.sampler.validate(&sched)?;
        if self.ensemble == 0 {
            return Err(Error::config("sampler.ensemble", "ensemble size must be >= 1"));
        }
        if self.eval.msssim_scales == 0 || self.eval.msssim_scales > 5 {
            return Err(Error::config("eval.msssim_scales", "scale count must be 1..=5"));
        }
        if self.eval.psnr_data_range <= 0.0 {
            return Err(Error::config("eval.psnr_data_range", "data range must be positive"));
        }
        // model config is validated against the dataset extents
        self.denoiser_config_for(&self.dataset.meta())?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        match self.schedule_kind {
            ScheduleKind::Linear => {
                make_linear_schedule(self.schedule_steps, self.beta_start, self.beta_end)
            }
            ScheduleKind::Cosine => make_cosine_schedule(self.schedule_steps),
        }
    }

    /// Model config with spatial and waveform extents taken from dataset
    /// metadata.
    pub fn denoiser_config_for(&self, meta: &DatasetMeta) -> Result<DenoiserConfig> {
        let cfg = DenoiserConfig {
            base_channels: self.model.base_channels,
            channel_multipliers: self.model.channel_multipliers.clone(),
            time_embed_dim: self.model.time_embed_dim,
            blocks_per_scale: self.model.blocks_per_scale,
            waveform_channels: meta.sources,
            wave_time: meta.time_samples,
            wave_receivers: meta.receivers,
            map_height: meta.height,
            map_width: meta.width,
            conditioning: self.model.conditioning,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical resolved text, suitable for echoing and for checkpoint
    /// compatibility checks.
    pub fn echo(&self) -> &str {
        &self.echo
    }

    /// Structural compatibility with a checkpoint's echoed config: the
    /// model and schedule sections must match exactly.
    pub fn compatible_with_checkpoint(&self, ckpt_echo: &str) -> Result<()> {
        let ours = KvFile::parse(&self.echo)?;
        let theirs = KvFile::parse(ckpt_echo)
            .map_err(|e| Error::Checkpoint(format!("unparsable config echo: {e}")))?;
        for section in ["model", "schedule"] {
            if ours.take_keys(section) != theirs.take_keys(section) {
                return Err(Error::Checkpoint(format!(
                    "checkpoint [{section}] section does not match the current configuration"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_reference_setup() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.ema_decay, 0.995);
        assert_eq!(cfg.train.lr_max, 8e-5);
        assert_eq!(cfg.train.warmup_epochs, 200);
        assert_eq!(cfg.train.epochs, 4000);
        assert_eq!(cfg.schedule_steps, 1000);
        assert_eq!(cfg.train.weights.lambda_rec, 0.1);
        assert_eq!(cfg.train.weights.lambda_freq, 0.01);
        assert_eq!(cfg.sampler.num_steps, 10);
        assert_eq!(cfg.ensemble, 10);
        assert_eq!(cfg.dataset.n, 200);
    }

    #[test]
    fn overrides_apply_and_unknown_fields_rejected() {
        let cfg = RunConfig::load(
            None,
            &["train.epochs=12".into(), "dataset.n=10".into(), "train.warmup_epochs=2".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 12);
        assert_eq!(cfg.dataset.n, 10);
        let err = RunConfig::load(None, &["train.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("train.bogus"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        for (field, over) in [
            ("train.warmup_epochs", "train.warmup_epochs=5000"),
            ("train.ema_decay", "train.ema_decay=1.5"),
            ("sampler.eta", "sampler.eta=-1"),
            ("sampler.steps", "sampler.steps=2000"),
            ("schedule.beta", "schedule.beta_end=1.5"),
            ("dataset.speeds", "dataset.speed_max=2000"),
            ("model.map_extent", "dataset.height=30"),
        ] {
            let err = RunConfig::load(None, &[over.into()]).unwrap_err().to_string();
            assert!(err.contains(field.split('.').next().unwrap()), "{over}: {err}");
        }
    }

    #[test]
    fn echo_roundtrips() {
        let cfg = RunConfig::load(None, &["train.epochs=8".into(), "train.warmup_epochs=2".into()]).unwrap();
        let again = RunConfig::from_text(cfg.echo()).unwrap();
        assert_eq!(again.train.epochs, 8);
        assert_eq!(again.echo(), cfg.echo());
    }

    #[test]
    fn checkpoint_compatibility_checks_model_and_schedule() {
        let a = RunConfig::load(None, &[]).unwrap();
        let b =
            RunConfig::load(None, &["model.base_channels=16".into()]).unwrap();
        assert!(a.compatible_with_checkpoint(a.echo()).is_ok());
        assert!(a.compatible_with_checkpoint(b.echo()).is_err());
        // train-section differences are allowed
        let c = RunConfig::load(None, &["train.epochs=99".into(), "train.warmup_epochs=9".into()]).unwrap();
        assert!(a.compatible_with_checkpoint(c.echo()).is_ok());
    }
}
