//! Synthetic data generation: tissue-like speed-of-sound phantoms and a 2D
//! acoustic finite-difference solver that records the waveforms a linear
//! transducer array would measure through them.

mod fdtd;
mod phantom;

pub use fdtd::{simulate, simulate_shot_with_energy};
pub use phantom::{generate_phantom, InclusionShape, PhantomSpec};

use crate::error::{Error, Result};

/// Speed-of-sound field in physical units (meters/second) on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SosMap {
    /// Row-major H x W grid of wave speeds.
    pub grid: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Cell size in meters.
    pub spacing: f64,
    /// Physical bounds the grid is guaranteed to stay within.
    pub c_min: f64,
    pub c_max: f64,
}

impl SosMap {
    pub fn validate(&self) -> Result<()> {
        if self.spacing <= 0.0 {
            return Err(Error::config("dataset.spacing", "spacing must be positive"));
        }
        if self.grid.len() != self.height * self.width {
            return Err(Error::invalid(format!(
                "grid holds {} cells, expected {}x{}",
                self.grid.len(),
                self.height,
                self.width
            )));
        }
        if self
            .grid
            .iter()
            .any(|&c| !(self.c_min..=self.c_max).contains(&c))
        {
            return Err(Error::invalid(format!(
                "map cell outside physical bounds [{}, {}]",
                self.c_min, self.c_max
            )));
        }
        Ok(())
    }

    pub fn constant(height: usize, width: usize, spacing: f64, c: f64, bounds: (f64, f64)) -> Self {
        SosMap {
            grid: vec![c; height * width],
            height,
            width,
            spacing,
            c_min: bounds.0,
            c_max: bounds.1,
        }
    }
}

/// Transducer layout identifier carried with generated waveforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayLayout {
    /// Sources down the left edge, receivers down the right edge.
    OpposedLinear,
    /// Sources and receivers interleaved on a circle.
    Ring,
}

impl ArrayLayout {
    pub fn tag(&self) -> &'static str {
        match self {
            ArrayLayout::OpposedLinear => "opposed_linear",
            ArrayLayout::Ring => "ring",
        }
    }
}

impl std::str::FromStr for ArrayLayout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "opposed_linear" => Ok(ArrayLayout::OpposedLinear),
            "ring" => Ok(ArrayLayout::Ring),
            other => Err(Error::config(
                "dataset.layout",
                format!("unknown array layout '{other}'"),
            )),
        }
    }
}

/// Acquisition description: emitter/receiver grid positions, the source
/// pulse, and the time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub sources: Vec<(usize, usize)>,
    pub receivers: Vec<(usize, usize)>,
    /// Ricker wavelet center frequency in Hz.
    pub center_freq_hz: f64,
    pub source_amplitude: f64,
    pub time_samples: usize,
    /// Time step in seconds; must satisfy the 2D stability bound
    /// dt <= spacing / (c_max * sqrt(2)).
    pub dt: f64,
    pub layout: ArrayLayout,
}

impl ArrayGeometry {
    /// Opposed linear arrays one cell in from the left/right edges,
    /// evenly spread over the rows.
    pub fn opposed_linear(
        height: usize,
        width: usize,
        num_sources: usize,
        num_receivers: usize,
        center_freq_hz: f64,
        time_samples: usize,
        dt: f64,
    ) -> Self {
        let spread = |n: usize| -> Vec<usize> {
            (0..n)
                .map(|i| ((2 * i + 1) * height) / (2 * n))
                .map(|r| r.min(height - 1))
                .collect()
        };
        ArrayGeometry {
            sources: spread(num_sources).into_iter().map(|r| (r, 1)).collect(),
            receivers: spread(num_receivers)
                .into_iter()
                .map(|r| (r, width - 2))
                .collect(),
            center_freq_hz,
            source_amplitude: 1.0,
            time_samples,
            dt,
            layout: ArrayLayout::OpposedLinear,
        }
    }

    /// Alternating sources and receivers on a circle inscribed in the grid.
    pub fn ring(
        height: usize,
        width: usize,
        num_sources: usize,
        num_receivers: usize,
        center_freq_hz: f64,
        time_samples: usize,
        dt: f64,
    ) -> Self {
        let total = num_sources + num_receivers;
        let cy = (height - 1) as f64 / 2.0;
        let cx = (width - 1) as f64 / 2.0;
        let radius = (height.min(width) as f64 / 2.0) - 2.0;
        let pos = |i: usize| -> (usize, usize) {
            let ang = 2.0 * std::f64::consts::PI * i as f64 / total as f64;
            let r = (cy + radius * ang.sin()).round().clamp(0.0, (height - 1) as f64);
            let c = (cx + radius * ang.cos()).round().clamp(0.0, (width - 1) as f64);
            (r as usize, c as usize)
        };
        let sources = (0..num_sources).map(|i| pos(2 * i)).collect();
        let receivers = (0..num_receivers)
            .map(|i| pos(2 * i * num_sources / num_receivers.max(1) + 1))
            .collect();
        ArrayGeometry {
            sources,
            receivers,
            center_freq_hz,
            source_amplitude: 1.0,
            time_samples,
            dt,
            layout: ArrayLayout::Ring,
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.sources.is_empty() || self.receivers.is_empty() {
            return Err(Error::config(
                "dataset.geometry",
                "need at least one source and one receiver",
            ));
        }
        for &(r, c) in self.sources.iter().chain(&self.receivers) {
            if r >= height || c >= width {
                return Err(Error::config(
                    "dataset.geometry",
                    format!("position ({r},{c}) outside {height}x{width} grid"),
                ));
            }
        }
        if self.dt <= 0.0 || self.time_samples == 0 || self.center_freq_hz <= 0.0 {
            return Err(Error::config(
                "dataset.geometry",
                "dt, time_samples, and center frequency must be positive",
            ));
        }
        Ok(())
    }
}

/// Recorded pressure traces: sources x time samples x receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSet {
    pub data: Vec<f64>,
    pub num_sources: usize,
    pub time_samples: usize,
    pub num_receivers: usize,
    pub geometry_tag: String,
}

impl WaveformSet {
    pub fn numel(&self) -> usize {
        self.num_sources * self.time_samples * self.num_receivers
    }

    /// Trace of one (source, receiver) pair.
    pub fn trace(&self, source: usize, receiver: usize) -> Vec<f64> {
        (0..self.time_samples)
            .map(|t| {
                self.data[(source * self.time_samples + t) * self.num_receivers + receiver]
            })
            .collect()
    }
}

/// Ricker wavelet with unit peak amplitude, delayed so it starts near zero.
pub fn ricker(t: f64, f: f64) -> f64 {
    let tau = t - 1.0 / f;
    let u = (std::f64::consts::PI * f * tau).powi(2);
    (1.0 - 2.0 * u) * (-u).exp()
}
