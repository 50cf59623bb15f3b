//! On-disk formats: tensor files, key=value text, grayscale renders, and
//! training checkpoints.

mod checkpoint;
mod kv;
mod render;
mod tensorfile;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use kv::KvFile;
pub use render::write_pgm;
pub use tensorfile::{read_tensor, write_tensor, TENSOR_MAGIC, TENSOR_VERSION};

use crate::error::{Error, Result};
use std::path::Path;

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.display().to_string(), e)
}

/// Creates a directory (and parents) with path-carrying errors.
pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Writes a file atomically via a temp-and-rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
