//! Training checkpoint: resolved config text, raw and EMA weights at full
//! 64-bit precision, optimizer moments, the stream seed, and the best
//! validation record. Full precision plus counter-based noise streams is
//! what makes resume bit-exact.

use super::write_atomic;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_text: String,
    pub params: ParamStore,
    pub ema: ParamStore,
    /// First/second Adam moments, in `params` order.
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
    pub adam_step: u64,
    pub master_seed: u64,
    /// Next epoch to run; resuming re-derives all random streams from
    /// (master_seed, epoch, step) counters.
    pub epoch_next: u64,
    pub best_msssim: f64,
    pub best_epoch: u64,
}

struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn blob(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.bytes.extend_from_slice(b);
    }
    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
    fn store(&mut self, s: &ParamStore) {
        self.u64(s.len() as u64);
        for id in s.ids() {
            self.blob(s.name(id).as_bytes());
            let shape = s.shape(id);
            self.u32(shape.len() as u32);
            for &e in shape {
                self.u64(e as u64);
            }
            self.floats(s.value(id));
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn blob(&mut self) -> Result<Vec<u8>> {
        let n = self.u64()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn store(&mut self) -> Result<ParamStore> {
        let count = self.u64()? as usize;
        let mut s = ParamStore::new();
        for _ in 0..count {
            let name = String::from_utf8(self.blob()?)
                .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
            let rank = self.u32()? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("absurd rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u64()? as usize);
            }
            let value = self.floats()?;
            if shape.iter().product::<usize>() != value.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape/payload mismatch"
                )));
            }
            s.register(&name, shape, value);
        }
        Ok(s)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = Writer { bytes: Vec::new() };
    w.bytes.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.blob(ckpt.config_text.as_bytes());
    w.u64(ckpt.master_seed);
    w.u64(ckpt.epoch_next);
    w.u64(ckpt.adam_step);
    w.u64(ckpt.best_epoch);
    w.f64(ckpt.best_msssim);
    w.store(&ckpt.params);
    w.store(&ckpt.ema);
    w.u64(ckpt.adam_m.len() as u64);
    for (m, v) in ckpt.adam_m.iter().zip(&ckpt.adam_v) {
        w.floats(m);
        w.floats(v);
    }
    write_atomic(path, &w.bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic (not a checkpoint)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let config_text = String::from_utf8(r.blob()?)
        .map_err(|_| Error::Checkpoint("non-utf8 config echo".into()))?;
    let master_seed = r.u64()?;
    let epoch_next = r.u64()?;
    let adam_step = r.u64()?;
    let best_epoch = r.u64()?;
    let best_msssim = r.f64()?;
    let params = r.store()?;
    let ema = r.store()?;
    if !params.same_layout(&ema) {
        return Err(Error::Checkpoint("EMA layout differs from parameters".into()));
    }
    let n = r.u64()? as usize;
    if n != params.len() {
        return Err(Error::Checkpoint(format!(
            "optimizer state covers {n} parameters, model has {}",
            params.len()
        )));
    }
    let mut adam_m = Vec::with_capacity(n);
    let mut adam_v = Vec::with_capacity(n);
    for id in params.ids() {
        let m = r.floats()?;
        let v = r.floats()?;
        if m.len() != params.value(id).len() || v.len() != m.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer moments for {} have wrong size",
                params.name(id)
            )));
        }
        adam_m.push(m);
        adam_v.push(v);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        config_text,
        params,
        ema,
        adam_m,
        adam_v,
        adam_step,
        master_seed,
        epoch_next,
        best_msssim,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_ckpt() -> Checkpoint {
        let mut params = ParamStore::new();
        params.register("a.weight", vec![2, 2], vec![1.0, -2.0, 0.5, 4.035829765375675e-5]);
        params.register("a.bias", vec![2], vec![0.0, 1.0]);
        let ema = params.clone();
        Checkpoint {
            config_text: "[train]\nseed = 3\n".into(),
            adam_m: vec![vec![0.1; 4], vec![0.2; 2]],
            adam_v: vec![vec![0.3; 4], vec![0.4; 2]],
            adam_step: 17,
            master_seed: 42,
            epoch_next: 5,
            best_msssim: 0.83,
            best_epoch: 4,
            params,
            ema,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.dsck");
        let ck = sample_ckpt();
        save_checkpoint(&p, &ck).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.config_text, ck.config_text);
        assert_eq!(back.adam_step, 17);
        assert_eq!(back.best_msssim, 0.83);
        for id in ck.params.ids() {
            assert_eq!(back.params.value(id), ck.params.value(id));
            assert_eq!(back.params.name(id), ck.params.name(id));
        }
        assert_eq!(back.adam_m, ck.adam_m);
        assert_eq!(back.adam_v, ck.adam_v);
    }

    #[test]
    fn corrupt_files_are_diagnosed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.dsck");
        save_checkpoint(&p, &sample_ckpt()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&p, &bytes).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");

        std::fs::write(&p, b"garbage").unwrap();
        let err = load_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("magic") || err.contains("truncated"), "{err}");
    }
}
