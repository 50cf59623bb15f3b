//! Binary tensor file: magic "DSOS", version, rank, extents, then a
//! row-major little-endian f32 payload. 32-bit on disk keeps datasets
//! small; in-memory math stays 64-bit.

use super::io_err;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const TENSOR_MAGIC: &[u8; 4] = b"DSOS";
pub const TENSOR_VERSION: u32 = 1;

pub fn write_tensor(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != data.len() || shape.is_empty() {
        return Err(Error::invalid(format!(
            "tensor file {}: shape {shape:?} does not describe {} values",
            path.display(),
            data.len()
        )));
    }
    let mut bytes = Vec::with_capacity(16 + shape.len() * 8 + data.len() * 4);
    bytes.extend_from_slice(TENSOR_MAGIC);
    bytes.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in shape {
        bytes.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&bytes).map_err(|e| io_err(path, e))
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    let fail = |why: &str| {
        Error::invalid(format!("tensor file {}: {why}", path.display()))
    };
    if bytes.len() < 12 || &bytes[..4] != TENSOR_MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = 12 + rank * 8;
    if rank == 0 || rank > 8 || bytes.len() < header {
        return Err(fail("bad rank"));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 12 + i * 8;
        shape.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize);
    }
    let numel: usize = shape.iter().product();
    if bytes.len() != header + numel * 4 {
        return Err(fail(&format!(
            "payload is {} bytes, expected {}",
            bytes.len() - header,
            numel * 4
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.dsos");
        std::fs::write(&p, b"NOPE").unwrap();
        assert!(read_tensor(&p).is_err());
        write_tensor(&p, &[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_tensor(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_is_value_exact_at_f32(
            dims in prop::collection::vec(1usize..5, 1..=4),
            seed in any::<u32>(),
        ) {
            let numel: usize = dims.iter().product();
            let data: Vec<f64> = (0..numel)
                .map(|i| ((seed as f64) + i as f64 * 0.37).sin() as f32 as f64)
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.dsos");
            write_tensor(&p, &dims, &data).unwrap();
            let (shape, back) = read_tensor(&p).unwrap();
            prop_assert_eq!(shape, dims);
            // values already representable in f32 survive exactly
            prop_assert_eq!(back, data);
        }
    }
}
