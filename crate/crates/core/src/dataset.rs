//! Dataset generation and loading: paired (speed-of-sound map, waveform set)
//! samples with normalization statistics and a deterministic 8:1:1 split.
//!
//! Directory layout:
//!
//! ```text
//! <root>/
//!   geometry.txt        acquisition + grid metadata
//!   norm.txt            dataset normalization statistics
//!   splits/{train,val,test}.txt
//!   sos/<id>.dsos       H x W map, physical m/s
//!   wave/<id>.dsos      S x T x R raw traces
//! ```
//!
//! Maps are normalized to [-1, 1] by dataset min/max; waveforms are
//! standardized to zero mean, unit variance. Files store raw physical
//! values; normalization happens at load time from the recorded stats, so
//! inference is self-contained.

use crate::error::{Error, Result};
use crate::exec;
use crate::io::{ensure_dir, read_tensor, write_atomic, write_tensor, KvFile};
use crate::rng::Streams;
use crate::wavesim::{
    generate_phantom, simulate, ArrayGeometry, ArrayLayout, PhantomSpec, SosMap, WaveformSet,
};
use rand::seq::SliceRandom;
use std::path::{Path, PathBuf};

/// Normalization statistics recorded alongside a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub sos_min: f64,
    pub sos_max: f64,
    pub wave_mean: f64,
    pub wave_std: f64,
}

impl NormStats {
    /// Physical map values -> [-1, 1].
    pub fn map_to_norm(&self, grid: &[f64]) -> Vec<f64> {
        let span = self.sos_max - self.sos_min;
        if span <= 0.0 {
            return vec![0.0; grid.len()];
        }
        grid.iter()
            .map(|&v| 2.0 * (v - self.sos_min) / span - 1.0)
            .collect()
    }

    /// [-1, 1] -> physical map values.
    pub fn norm_to_phys(&self, norm: &[f64]) -> Vec<f64> {
        let span = self.sos_max - self.sos_min;
        norm.iter()
            .map(|&v| self.sos_min + (v + 1.0) * 0.5 * span)
            .collect()
    }

    /// Raw waveform values -> standardized.
    pub fn wave_to_norm(&self, wave: &[f64]) -> Vec<f64> {
        if self.wave_std <= 0.0 {
            return vec![0.0; wave.len()];
        }
        wave.iter()
            .map(|&v| (v - self.wave_mean) / self.wave_std)
            .collect()
    }
}

/// Grid and acquisition metadata stored with the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub height: usize,
    pub width: usize,
    pub spacing: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub sources: usize,
    pub receivers: usize,
    pub time_samples: usize,
    pub dt: f64,
    pub center_freq_hz: f64,
    pub layout: ArrayLayout,
}

/// Everything `build_dataset` needs.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub sources: usize,
    pub receivers: usize,
    pub time_samples: usize,
    pub dt: f64,
    pub center_freq_hz: f64,
    pub layout: ArrayLayout,
}

impl DatasetConfig {
    pub fn geometry(&self) -> ArrayGeometry {
        match self.layout {
            ArrayLayout::OpposedLinear => ArrayGeometry::opposed_linear(
                self.phantom.height,
                self.phantom.width,
                self.sources,
                self.receivers,
                self.center_freq_hz,
                self.time_samples,
                self.dt,
            ),
            ArrayLayout::Ring => ArrayGeometry::ring(
                self.phantom.height,
                self.phantom.width,
                self.sources,
                self.receivers,
                self.center_freq_hz,
                self.time_samples,
                self.dt,
            ),
        }
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            height: self.phantom.height,
            width: self.phantom.width,
            spacing: self.phantom.spacing,
            c_min: self.phantom.c_min,
            c_max: self.phantom.c_max,
            sources: self.sources,
            receivers: self.receivers,
            time_samples: self.time_samples,
            dt: self.dt,
            center_freq_hz: self.center_freq_hz,
            layout: self.layout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::config("dataset.n", "need at least 3 samples"));
        }
        self.phantom.validate()?;
        self.geometry().validate(self.phantom.height, self.phantom.width)
    }
}

pub fn sample_id(i: usize) -> String {
    format!("{i:04}")
}

/// Deterministic 8:1:1 split: val and test each get floor(n/10).
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let test = n / 10;
    (n - val - test, val, test)
}

/// Generates `n` paired samples plus statistics and split manifests.
pub fn build_dataset(cfg: &DatasetConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            return Err(Error::io(
                parent.display().to_string(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory missing"),
            ));
        }
    }
    ensure_dir(out)?;
    ensure_dir(&out.join("sos"))?;
    ensure_dir(&out.join("wave"))?;
    ensure_dir(&out.join("splits"))?;

    let streams = Streams::new(cfg.seed);
    let geom = cfg.geometry();

    struct SampleStats {
        sos_min: f64,
        sos_max: f64,
        wave_sum: f64,
        wave_sumsq: f64,
        wave_count: usize,
    }

    let results = exec::ordered_map(cfg.n, |i| -> Result<SampleStats> {
        let mut rng = streams.stream("phantom", &[i as u64]);
        let map = generate_phantom(&cfg.phantom, &mut rng)?;
        let waves = simulate(&map, &geom)?;
        let id = sample_id(i);

        // Stats reflect the 32-bit values actually stored on disk.
        let q = |v: f64| v as f32 as f64;
        let sos_min = map.grid.iter().cloned().map(q).fold(f64::MAX, f64::min);
        let sos_max = map.grid.iter().cloned().map(q).fold(f64::MIN, f64::max);
        let wave_sum: f64 = waves.data.iter().map(|&v| q(v)).sum();
        let wave_sumsq: f64 = waves.data.iter().map(|&v| q(v) * q(v)).sum();

        write_tensor(&out.join("sos").join(format!("{id}.dsos")), &[map.height, map.width], &map.grid)?;
        write_tensor(
            &out.join("wave").join(format!("{id}.dsos")),
            &[waves.num_sources, waves.time_samples, waves.num_receivers],
            &waves.data,
        )?;
        Ok(SampleStats {
            sos_min,
            sos_max,
            wave_sum,
            wave_sumsq,
            wave_count: waves.data.len(),
        })
    });

    let mut sos_min = f64::MAX;
    let mut sos_max = f64::MIN;
    let mut wsum = 0.0;
    let mut wsumsq = 0.0;
    let mut wcount = 0usize;
    for r in results {
        let s = r?;
        sos_min = sos_min.min(s.sos_min);
        sos_max = sos_max.max(s.sos_max);
        wsum += s.wave_sum;
        wsumsq += s.wave_sumsq;
        wcount += s.wave_count;
    }
    let wave_mean = wsum / wcount as f64;
    let wave_std = (wsumsq / wcount as f64 - wave_mean * wave_mean).max(0.0).sqrt();

    let mut norm = KvFile::new();
    norm.set("sos", "min", format!("{sos_min:.17e}"));
    norm.set("sos", "max", format!("{sos_max:.17e}"));
    norm.set("waveform", "mean", format!("{wave_mean:.17e}"));
    norm.set("waveform", "std", format!("{wave_std:.17e}"));
    norm.save(&out.join("norm.txt"))?;

    let meta = cfg.meta();
    let mut g = KvFile::new();
    g.set("grid", "height", meta.height);
    g.set("grid", "width", meta.width);
    g.set("grid", "spacing", format!("{:.17e}", meta.spacing));
    g.set("grid", "c_min", format!("{:.17e}", meta.c_min));
    g.set("grid", "c_max", format!("{:.17e}", meta.c_max));
    g.set("acquisition", "layout", meta.layout.tag());
    g.set("acquisition", "sources", meta.sources);
    g.set("acquisition", "receivers", meta.receivers);
    g.set("acquisition", "time_samples", meta.time_samples);
    g.set("acquisition", "dt", format!("{:.17e}", meta.dt));
    g.set("acquisition", "center_freq", format!("{:.17e}", meta.center_freq_hz));
    g.save(&out.join("geometry.txt"))?;

    // Split by seeded shuffle.
    let mut ids: Vec<String> = (0..cfg.n).map(sample_id).collect();
    let mut rng = streams.stream("split", &[]);
    ids.shuffle(&mut rng);
    let (n_train, n_val, _) = split_sizes(cfg.n);
    let write_split = |name: &str, slice: &[String]| -> Result<()> {
        let mut text = slice.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        write_atomic(&out.join("splits").join(format!("{name}.txt")), text.as_bytes())
    };
    write_split("train", &ids[..n_train])?;
    write_split("val", &ids[n_train..n_train + n_val])?;
    write_split("test", &ids[n_train + n_val..])?;
    Ok(())
}

/// A dataset on disk, with its metadata loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    pub stats: NormStats,
    pub meta: DatasetMeta,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Dataset> {
        let norm = KvFile::load(&root.join("norm.txt"))?;
        let need = |kv: &KvFile, s: &str, k: &str| -> Result<f64> {
            kv.parse_field::<f64>(s, k)?
                .ok_or_else(|| Error::config(format!("{s}.{k}"), "missing in norm/geometry file"))
        };
        let stats = NormStats {
            sos_min: need(&norm, "sos", "min")?,
            sos_max: need(&norm, "sos", "max")?,
            wave_mean: need(&norm, "waveform", "mean")?,
            wave_std: need(&norm, "waveform", "std")?,
        };
        let g = KvFile::load(&root.join("geometry.txt"))?;
        let needu = |s: &str, k: &str| -> Result<usize> {
            g.parse_field::<usize>(s, k)?
                .ok_or_else(|| Error::config(format!("{s}.{k}"), "missing in geometry file"))
        };
        let meta = DatasetMeta {
            height: needu("grid", "height")?,
            width: needu("grid", "width")?,
            spacing: need(&g, "grid", "spacing")?,
            c_min: need(&g, "grid", "c_min")?,
            c_max: need(&g, "grid", "c_max")?,
            sources: needu("acquisition", "sources")?,
            receivers: needu("acquisition", "receivers")?,
            time_samples: needu("acquisition", "time_samples")?,
            dt: need(&g, "acquisition", "dt")?,
            center_freq_hz: need(&g, "acquisition", "center_freq")?,
            layout: g
                .get("acquisition", "layout")
                .unwrap_or("opposed_linear")
                .parse()?,
        };
        let read_split = |name: &str| -> Result<Vec<String>> {
            let p = root.join("splits").join(format!("{name}.txt"));
            let text = std::fs::read_to_string(&p)
                .map_err(|e| Error::io(p.display().to_string(), e))?;
            Ok(text.lines().map(str::to_string).collect())
        };
        Ok(Dataset {
            root: root.to_path_buf(),
            stats,
            meta,
            train: read_split("train")?,
            val: read_split("val")?,
            test: read_split("test")?,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn load_sos(&self, id: &str) -> Result<SosMap> {
        let (shape, grid) = read_tensor(&self.root.join("sos").join(format!("{id}.dsos")))?;
        if shape != [self.meta.height, self.meta.width] {
            return Err(Error::invalid(format!(
                "sample {id}: map shape {shape:?} does not match dataset {}x{}",
                self.meta.height, self.meta.width
            )));
        }
        Ok(SosMap {
            grid,
            height: self.meta.height,
            width: self.meta.width,
            spacing: self.meta.spacing,
            c_min: self.meta.c_min,
            c_max: self.meta.c_max,
        })
    }

    pub fn load_wave(&self, id: &str) -> Result<WaveformSet> {
        let (shape, data) = read_tensor(&self.root.join("wave").join(format!("{id}.dsos")))?;
        let want = [self.meta.sources, self.meta.time_samples, self.meta.receivers];
        if shape != want {
            return Err(Error::invalid(format!(
                "sample {id}: waveform shape {shape:?} does not match dataset {want:?}"
            )));
        }
        Ok(WaveformSet {
            data,
            num_sources: self.meta.sources,
            time_samples: self.meta.time_samples,
            num_receivers: self.meta.receivers,
            geometry_tag: self.meta.layout.tag().to_string(),
        })
    }

    /// Loads one sample normalized for training: map in [-1, 1], waveform
    /// standardized.
    pub fn load_norm_pair(&self, id: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let sos = self.load_sos(id)?;
        let wave = self.load_wave(id)?;
        Ok((
            self.stats.map_to_norm(&sos.grid),
            self.stats.wave_to_norm(&wave.data),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavesim::InclusionShape;

    pub(crate) fn tiny_config(n: usize, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n,
            seed,
            phantom: PhantomSpec {
                height: 16,
                width: 16,
                spacing: 1.5e-3,
                background: 1500.0,
                inclusion_count: (1, 2),
                inclusion_speed: (1440.0, 1560.0),
                shape: InclusionShape::Ellipse,
                smoothing_radius: 1,
                c_min: 1400.0,
                c_max: 1600.0,
            },
            sources: 2,
            receivers: 8,
            time_samples: 64,
            dt: 5e-7,
            center_freq_hz: 120e3,
            layout: ArrayLayout::OpposedLinear,
        }
    }

    #[test]
    fn split_sizes_match_ratio() {
        assert_eq!(split_sizes(10), (8, 1, 1));
        assert_eq!(split_sizes(200), (160, 20, 20));
        assert_eq!(split_sizes(1140), (912, 114, 114));
    }

    #[test]
    fn build_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(10, 5);
        build_dataset(&cfg, dir.path()).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.train.len(), 8);
        assert_eq!(ds.val.len(), 1);
        assert_eq!(ds.test.len(), 1);
        // disjoint and covering
        let mut all: Vec<&String> = ds.train.iter().chain(&ds.val).chain(&ds.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);

        let map = ds.load_sos(&ds.train[0]).unwrap();
        map.validate().unwrap();
        let wave = ds.load_wave(&ds.train[0]).unwrap();
        assert_eq!(wave.numel(), 2 * 64 * 8);

        let (x0, y) = ds.load_norm_pair(&ds.train[0]).unwrap();
        assert!(x0.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(y.len(), wave.numel());
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = tiny_config(4, 9);
        build_dataset(&cfg, d1.path()).unwrap();
        build_dataset(&cfg, d2.path()).unwrap();
        for rel in [
            "norm.txt",
            "geometry.txt",
            "splits/train.txt",
            "sos/0000.dsos",
            "wave/0003.dsos",
        ] {
            let a = std::fs::read(d1.path().join(rel)).unwrap();
            let b = std::fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between identical builds");
        }
    }

    #[test]
    fn missing_parent_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("no").join("such").join("dir");
        let err = build_dataset(&tiny_config(4, 1), &out).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }

    #[test]
    fn normalization_roundtrip() {
        let stats = NormStats {
            sos_min: 1400.0,
            sos_max: 1600.0,
            wave_mean: 0.5,
            wave_std: 2.0,
        };
        let grid = vec![1400.0, 1500.0, 1600.0];
        let norm = stats.map_to_norm(&grid);
        assert_eq!(norm, vec![-1.0, 0.0, 1.0]);
        let back = stats.norm_to_phys(&norm);
        for (a, b) in back.iter().zip(&grid) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
