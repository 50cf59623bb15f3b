//! Conditional-diffusion reconstruction of speed-of-sound maps from
//! simulated acoustic waveforms.
//!
//! The pipeline, end to end:
//!
//! 1. [`wavesim`] generates tissue-like speed-of-sound phantoms and solves
//!    the 2D acoustic wave equation to produce the conditioning waveforms.
//! 2. [`denoiser`] is a small U-Net noise predictor; the waveform enters
//!    through a parallel control branch coupled in by zero-initialized 1x1
//!    convolutions, so a fresh model is exactly unconditional.
//! 3. [`trainer`] optimizes the hybrid loss in [`loss`] (noise prediction +
//!    L1 reconstruction of the clean map + Fourier amplitude matching) with
//!    Adam, warmup + cosine learning rate, and EMA shadow weights.
//! 4. [`sampler`] reconstructs maps with stochastic DDIM steps and derives
//!    per-pixel uncertainty from Monte-Carlo ensembles.
//! 5. [`metrics`] scores reconstructions (MS-SSIM, PSNR, MAE, edge figure
//!    of merit).
//!
//! Everything is built on [`tensor`], a 64-bit reverse-mode autodiff array
//! type, and is deterministic given a seed: random streams are counter-based
//! ([`rng`]) and all parallel reductions run in a fixed order ([`exec`]).

pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod exec;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod trainer;
pub mod wavesim;

pub use error::{Error, Result};
pub use tensor::Tensor;
