//! Diagnostic grayscale renders. Tensors are authoritative; these are for
//! eyeballing. Each render gets a sidecar recording the normalization used.

use super::{io_err, write_atomic};
use crate::error::Result;
use std::path::Path;

/// 8-bit binary PGM with per-image min/max normalization, plus a `.txt`
/// sidecar recording that min/max.
pub fn write_pgm(path: &Path, grid: &[f64], h: usize, w: usize) -> Result<()> {
    let lo = grid.iter().cloned().fold(f64::MAX, f64::min);
    let hi = grid.iter().cloned().fold(f64::MIN, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(grid.iter().map(|&v| ((v - lo) * scale).round() as u8));
    std::fs::write(path, &bytes).map_err(|e| io_err(path, e))?;
    let sidecar = path.with_extension("txt");
    write_atomic(
        &sidecar,
        format!("min = {lo:.17e}\nmax = {hi:.17e}\n").as_bytes(),
    )
}
