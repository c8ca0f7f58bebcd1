//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "INKMCKP1"
//! arch      u32 length + UTF-8 architecture tag
//! count     u32 number of tensors
//! table     per tensor: u32 name length + UTF-8 name, u32 rank, rank × u64 dims
//! data      every tensor's elements as f64, in table order
//! ```
//!
//! Hyperparameters go in a JSON sidecar written by the caller.

use std::fs;
use std::path::Path;

use super::{NnError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"INKMCKP1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

pub fn save_checkpoint(path: &Path, arch: &str, tensors: &[(String, &Tensor)]) -> Result<(), NnError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_str(&mut buf, arch);
    put_u32(&mut buf, tensors.len());
    for (name, t) in tensors {
        put_str(&mut buf, name);
        put_u32(&mut buf, t.shape().len());
        for d in t.shape() {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
    }
    for (_, t) in tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| NnError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String, NnError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NnError::Checkpoint("invalid utf-8".into()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let buf = fs::read(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let arch = r.string()?;
    let count = r.u32()?;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        table.push((name, dims));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, dims) in table {
        let n: usize = dims.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::from_vec(&dims, data)?));
    }
    if r.pos != buf.len() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { arch, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let a = Tensor::randn(&[3, 4], &mut crate::seed::rng(1));
        let b = Tensor::vector(&[f64::MIN_POSITIVE, -0.0, 1e300]);
        save_checkpoint(&path, "test-arch", &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.arch, "test-arch");
        assert_eq!(ck.tensors, vec![("a".to_string(), a), ("b".to_string(), b)]);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        fs::write(&path, b"NOTACKPT").unwrap();
        assert!(load_checkpoint(&path).is_err());
        let t = Tensor::zeros(&[2]);
        save_checkpoint(&path, "x", &[("t".into(), &t)]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
