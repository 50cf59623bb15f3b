//! Subcommand implementations.

use diffsos_core::config::RunConfig;
use diffsos_core::dataset::{build_dataset, Dataset, NormStats};
use diffsos_core::denoiser::Denoiser;
use diffsos_core::error::{Error, Result};
use diffsos_core::io::{
    ensure_dir, load_checkpoint, read_tensor, write_atomic, write_pgm, write_tensor, Checkpoint,
};
use diffsos_core::metrics::{evaluate_set, MetricReport};
use diffsos_core::nn::ParamStore;
use diffsos_core::sampler::{sample_ensemble, SamplerConfig};
use diffsos_core::schedule::NoiseSchedule;
use diffsos_core::trainer::{TrainData, Trainer};
use std::path::Path;
use std::time::Instant;

pub fn simulate(
    config: Option<&Path>,
    out: &Path,
    n: Option<usize>,
    seed: Option<u64>,
    mut overrides: Vec<String>,
) -> Result<()> {
    if let Some(n) = n {
        overrides.push(format!("dataset.n={n}"));
    }
    if let Some(seed) = seed {
        overrides.push(format!("dataset.seed={seed}"));
    }
    let cfg = RunConfig::load(config, &overrides)?;
    build_dataset(&cfg.dataset, out)?;
    write_atomic(&out.join("config.txt"), cfg.echo().as_bytes())?;
    let ds = Dataset::load(out)?;
    println!(
        "wrote {} samples to {} (train/val/test = {}/{}/{})",
        cfg.dataset.n,
        out.display(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    Ok(())
}

pub fn train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    overrides: Vec<String>,
) -> Result<()> {
    let cfg = RunConfig::load(config, &overrides)?;
    let ds = Dataset::load(data)?;
    let model_cfg = cfg.denoiser_config_for(&ds.meta)?;
    let sched = cfg.schedule()?;
    let mut trainer = match resume {
        None => Trainer::new(model_cfg, sched, cfg.train.clone(), cfg.echo().to_string())?,
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            cfg.compatible_with_checkpoint(&ckpt.config_text)?;
            Trainer::resume(model_cfg, sched, cfg.train.clone(), cfg.echo().to_string(), ckpt)?
        }
    };
    ensure_dir(out)?;
    write_atomic(&out.join("config.txt"), cfg.echo().as_bytes())?;
    let train_data = TrainData::from_dataset(&ds)?;
    let outcome = trainer.run(&train_data, out)?;
    println!(
        "trained {} epochs; best validation ms-ssim {:.4} at epoch {}",
        outcome.epochs_run, outcome.best_msssim, outcome.best_epoch
    );
    println!("best checkpoint: {}", outcome.best_checkpoint.display());
    Ok(())
}

/// Loads a checkpoint plus the model/schedule it was trained with, checked
/// against the dataset geometry.
fn model_from_checkpoint(
    ckpt: &Checkpoint,
    ds: &Dataset,
) -> Result<(RunConfig, Denoiser, NoiseSchedule)> {
    let ckpt_cfg = RunConfig::from_text(&ckpt.config_text)
        .map_err(|e| Error::Checkpoint(format!("embedded config invalid: {e}")))?;
    let model_cfg = ckpt_cfg.denoiser_config_for(&ds.meta)?;
    let mut probe = ParamStore::new();
    let model = Denoiser::build(model_cfg, &mut probe, 0)?;
    if !probe.same_layout(&ckpt.params) {
        return Err(Error::Checkpoint(
            "checkpoint parameters do not match the model/dataset configuration".into(),
        ));
    }
    let sched = ckpt_cfg.schedule()?;
    Ok((ckpt_cfg, model, sched))
}

fn split_ids<'a>(ds: &'a Dataset, split: &str) -> Result<&'a [String]> {
    match split {
        "train" => Ok(&ds.train),
        "val" => Ok(&ds.val),
        "test" => Ok(&ds.test),
        other => Err(Error::config(
            "--split",
            format!("unknown split '{other}' (expected train, val, or test)"),
        )),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn sample(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    steps: Option<usize>,
    eta: Option<f64>,
    ensemble: Option<usize>,
    seed: Option<u64>,
    split: &str,
    mut overrides: Vec<String>,
) -> Result<()> {
    if let Some(v) = steps {
        overrides.push(format!("sampler.steps={v}"));
    }
    if let Some(v) = eta {
        overrides.push(format!("sampler.eta={v}"));
    }
    if let Some(v) = ensemble {
        overrides.push(format!("sampler.ensemble={v}"));
    }
    if let Some(v) = seed {
        overrides.push(format!("sampler.seed={v}"));
    }
    let cli_cfg = RunConfig::load(None, &overrides)?;
    let ds = Dataset::load(data)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let (_, model, sched) = model_from_checkpoint(&ckpt, &ds)?;
    let ids = split_ids(&ds, split)?.to_vec();
    if ids.is_empty() {
        return Err(Error::invalid(format!("split '{split}' is empty")));
    }

    ensure_dir(out)?;
    ensure_dir(&out.join("reconstruction"))?;
    let n_members = cli_cfg.ensemble;
    if n_members > 1 {
        ensure_dir(&out.join("mean"))?;
        ensure_dir(&out.join("uncertainty"))?;
    }
    write_atomic(&out.join("config.txt"), cli_cfg.echo().as_bytes())?;

    let mut timing = String::from("id,seconds\n");
    let base_cfg = SamplerConfig {
        num_steps: cli_cfg.sampler.num_steps,
        eta: cli_cfg.sampler.eta,
        clamp_x0: cli_cfg.sampler.clamp_x0,
        seed: cli_cfg.sampler.seed,
    };
    for (i, id) in ids.iter().enumerate() {
        let wave = ds.load_wave(id)?;
        let y_norm = ds.stats.wave_to_norm(&wave.data);
        let cfg = SamplerConfig {
            seed: base_cfg.seed.wrapping_add(i as u64),
            ..base_cfg
        };
        let started = Instant::now();
        let (members, uncertainty) = sample_ensemble(
            &model,
            &ckpt.ema,
            &y_norm,
            &cfg,
            &sched,
            &ds.stats,
            ds.meta.spacing,
            n_members,
        )?;
        let seconds = started.elapsed().as_secs_f64();
        timing.push_str(&format!("{id},{seconds:.6}\n"));

        let rec = &members[0];
        let shape = [rec.height, rec.width];
        write_tensor(&out.join("reconstruction").join(format!("{id}.dsos")), &shape, &rec.grid)?;
        write_pgm(
            &out.join("reconstruction").join(format!("{id}.pgm")),
            &rec.grid,
            rec.height,
            rec.width,
        )?;
        if n_members > 1 {
            let mean_phys = ds.stats.norm_to_phys(&uncertainty.ensemble_mean);
            write_tensor(&out.join("mean").join(format!("{id}.dsos")), &shape, &mean_phys)?;
            write_pgm(
                &out.join("mean").join(format!("{id}.pgm")),
                &mean_phys,
                rec.height,
                rec.width,
            )?;
            write_tensor(
                &out.join("uncertainty").join(format!("{id}.dsos")),
                &shape,
                &uncertainty.variance,
            )?;
            write_pgm(
                &out.join("uncertainty").join(format!("{id}.pgm")),
                &uncertainty.variance,
                rec.height,
                rec.width,
            )?;
        }
    }
    write_atomic(&out.join("timing.csv"), timing.as_bytes())?;
    println!(
        "reconstructed {} inputs ({} steps, eta {}, ensemble {})",
        ids.len(),
        base_cfg.num_steps,
        base_cfg.eta,
        n_members
    );
    Ok(())
}

fn list_map_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(id) = name.strip_suffix(".dsos") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Normalization stats for ground-truth maps: from the dataset's norm.txt
/// when the truth dir belongs to one, otherwise derived from the truth maps.
fn stats_for_truth(truth_dir: &Path, truth_maps: &[(String, Vec<f64>)]) -> NormStats {
    for candidate in [truth_dir.join("norm.txt"), truth_dir.join("../norm.txt")] {
        if candidate.exists() {
            if let Ok(kv) = diffsos_core::io::KvFile::load(&candidate) {
                let get = |s: &str, k: &str| kv.parse_field::<f64>(s, k).ok().flatten();
                if let (Some(min), Some(max)) = (get("sos", "min"), get("sos", "max")) {
                    return NormStats {
                        sos_min: min,
                        sos_max: max,
                        wave_mean: 0.0,
                        wave_std: 1.0,
                    };
                }
            }
        }
    }
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for (_, g) in truth_maps {
        for &v in g {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    NormStats {
        sos_min: lo,
        sos_max: hi.max(lo + 1e-9),
        wave_mean: 0.0,
        wave_std: 1.0,
    }
}

fn evaluate_dirs(pred: &Path, truth: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let truth_dir = if truth.join("sos").is_dir() {
        truth.join("sos")
    } else {
        truth.to_path_buf()
    };
    let pred_ids = list_map_ids(pred)?;
    let truth_ids = list_map_ids(&truth_dir)?;
    let missing_in_truth: Vec<&String> =
        pred_ids.iter().filter(|i| !truth_ids.contains(i)).collect();
    let missing_in_pred: Vec<&String> =
        truth_ids.iter().filter(|i| !pred_ids.contains(i)).collect();
    if pred_ids.is_empty() {
        return Err(Error::config("--pred", "no .dsos maps found"));
    }
    // Truth dirs are usually the full dataset; only unmatched predictions
    // are an error, but report both directions when nothing lines up.
    if !missing_in_truth.is_empty() {
        return Err(Error::config(
            "--pred/--truth",
            format!(
                "ids without ground truth: {}",
                missing_in_truth
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        ));
    }
    let _ = missing_in_pred;

    let mut truth_maps = Vec::new();
    let mut shape_hw: Option<(usize, usize)> = None;
    for id in &pred_ids {
        let (shape, grid) = read_tensor(&truth_dir.join(format!("{id}.dsos")))?;
        if shape.len() != 2 {
            return Err(Error::invalid(format!("{id}: truth map must be rank 2")));
        }
        let hw = (shape[0], shape[1]);
        if *shape_hw.get_or_insert(hw) != hw {
            return Err(Error::invalid("inconsistent map shapes in truth set"));
        }
        truth_maps.push((id.clone(), grid));
    }
    let stats = stats_for_truth(&truth_dir, &truth_maps);
    let (h, w) = shape_hw.unwrap();

    let mut items = Vec::new();
    for (id, truth_grid) in &truth_maps {
        let (shape, pred_grid) = read_tensor(&pred.join(format!("{id}.dsos")))?;
        if shape != [h, w] {
            return Err(Error::invalid(format!(
                "{id}: prediction shape {shape:?} differs from truth {h}x{w}"
            )));
        }
        items.push((
            id.clone(),
            stats.map_to_norm(&pred_grid),
            stats.map_to_norm(truth_grid),
        ));
    }
    let report = evaluate_set(&items, h, w, &cfg.eval)?;
    write_atomic(out, report.to_csv().as_bytes())?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &MetricReport) {
    println!(
        "{} images: ms-ssim {:.4} +/- {:.4}, psnr {:.2} dB, mae {:.4}, fom {:.4}",
        report.rows.len(),
        report.mean.ms_ssim,
        report.std.ms_ssim,
        report.mean.psnr_db,
        report.mean.mae,
        report.mean.fom
    );
}

fn parse_list(name: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(name, format!("bad entry '{p}'")))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn evaluate_sweep(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    sweep_steps: &[usize],
    sweep_ensemble: &[usize],
    cfg: &RunConfig,
) -> Result<()> {
    let ds = Dataset::load(data)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let (_, model, sched) = model_from_checkpoint(&ckpt, &ds)?;
    if ds.test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }

    let mut rows = String::from("steps,ensemble,ms_ssim,psnr_db,mae,fom,seconds_per_image\n");
    for &steps in sweep_steps {
        for &members in sweep_ensemble {
            let mut items = Vec::new();
            let started = Instant::now();
            for (i, id) in ds.test.iter().enumerate() {
                let wave = ds.load_wave(id)?;
                let y_norm = ds.stats.wave_to_norm(&wave.data);
                let scfg = SamplerConfig {
                    num_steps: steps,
                    eta: cfg.sampler.eta,
                    clamp_x0: cfg.sampler.clamp_x0,
                    seed: cfg.sampler.seed.wrapping_add(i as u64),
                };
                let (_, unc) = sample_ensemble(
                    &model,
                    &ckpt.ema,
                    &y_norm,
                    &scfg,
                    &sched,
                    &ds.stats,
                    ds.meta.spacing,
                    members,
                )?;
                let truth = ds.stats.map_to_norm(&ds.load_sos(id)?.grid);
                items.push((id.clone(), unc.ensemble_mean, truth));
            }
            let seconds = started.elapsed().as_secs_f64() / ds.test.len() as f64;
            let report = evaluate_set(&items, ds.meta.height, ds.meta.width, &cfg.eval)?;
            rows.push_str(&format!(
                "{steps},{members},{:.6},{:.4},{:.6},{:.6},{seconds:.6}\n",
                report.mean.ms_ssim, report.mean.psnr_db, report.mean.mae, report.mean.fom
            ));
        }
    }
    write_atomic(out, rows.as_bytes())?;
    println!("sweep table written to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    pred: Option<&Path>,
    truth: Option<&Path>,
    out: &Path,
    checkpoint: Option<&Path>,
    data: Option<&Path>,
    sweep_steps: Option<&str>,
    sweep_ensemble: Option<&str>,
    overrides: Vec<String>,
) -> Result<()> {
    let cfg = RunConfig::load(None, &overrides)?;
    let sweeping = sweep_steps.is_some() || sweep_ensemble.is_some();
    if sweeping {
        let (Some(checkpoint), Some(data)) = (checkpoint, data) else {
            return Err(Error::config(
                "--sweep-steps",
                "sweep mode needs --checkpoint and --data",
            ));
        };
        let steps = match sweep_steps {
            Some(raw) => parse_list("--sweep-steps", raw)?,
            None => vec![cfg.sampler.num_steps],
        };
        let members = match sweep_ensemble {
            Some(raw) => parse_list("--sweep-ensemble", raw)?,
            None => vec![1],
        };
        if steps.is_empty() || members.is_empty() || members.contains(&0) || steps.contains(&0) {
            return Err(Error::config("--sweep-steps", "sweep lists must be positive"));
        }
        return evaluate_sweep(checkpoint, data, out, &steps, &members, &cfg);
    }
    let (Some(pred), Some(truth)) = (pred, truth) else {
        return Err(Error::config("--pred", "evaluate needs --pred and --truth"));
    };
    evaluate_dirs(pred, truth, out, &cfg)
}
