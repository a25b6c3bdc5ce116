//! Binary checkpoint: magic, version, config block, named f32 tensors and a
//! trailing CRC-32, all little-endian.

use std::path::Path;

use indexmap::IndexMap;

use crate::arch::{Model, UNeXtConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"UNXT";
pub const VERSION: u32 = 1;

fn ck_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// A loaded checkpoint: the rebuilt model plus the non-architectural
/// key=value entries stored alongside its config.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: IndexMap<String, String>,
}

impl Checkpoint {
    pub fn img_size(&self) -> Option<usize> {
        self.meta.get("img_size").and_then(|v| v.parse().ok())
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

/// Serializes parameters and BN buffers. `meta` lines are appended to the
/// config block.
pub fn to_bytes(model: &Model<f32>, meta: &[(&str, String)]) -> Vec<u8> {
    let mut config = model.config().to_kv();
    config.push_str("input_scaling=unit\n");
    for (k, v) in meta {
        config.push_str(&format!("{k}={v}\n"));
    }
    let tensors: Vec<(&String, &Tensor<f32>)> = model
        .params()
        .iter()
        .map(|(k, v)| (k, v.as_ref()))
        .chain(model.buffers().iter())
        .collect();

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_str(&mut buf, &config);
    put_u32(&mut buf, tensors.len() as u32);
    for (name, t) in tensors {
        put_str(&mut buf, name);
        put_u32(&mut buf, t.rank() as u32);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| ck_err("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ck_err("string is not UTF-8"))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(ck_err(format!("CRC check failed: file truncated to {} bytes", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(ck_err(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ck_err("bad magic bytes"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ck_err(format!("unsupported format version {version}")));
    }
    let config_text = r.string()?;
    let config = UNeXtConfig::from_kv(&config_text)?;
    let arch_keys: Vec<String> = config.to_kv().lines().filter_map(|l| l.split_once('=')).map(|(k, _)| k.to_string()).collect();
    let meta = config_text
        .lines()
        .filter_map(|l| l.split_once('='))
        .filter(|(k, _)| !arch_keys.iter().any(|a| a == k))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();

    let count = r.u32()? as usize;
    let mut tensors = IndexMap::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| ck_err("tensor too large"))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| ck_err("tensor too large"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| ck_err(format!("{name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(ck_err(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(ck_err("trailing bytes after the last tensor"));
    }
    Ok(Checkpoint { model: Model::from_tensors(&config, tensors)?, meta })
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    save_checkpoint_with(model, path, &[])
}

pub fn save_checkpoint_with(model: &Model<f32>, path: &Path, meta: &[(&str, String)]) -> Result<()> {
    std::fs::write(path, to_bytes(model, meta))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    Ok(read_checkpoint(path)?.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_model;

    #[test]
    fn round_trip_and_meta() {
        let m = build_model::<f32>(&UNeXtConfig::unext_s(), 5).unwrap();
        let bytes = to_bytes(&m, &[("img_size", "128".into())]);
        let ck = from_bytes(&bytes).unwrap();
        assert_eq!(ck.model.params(), m.params());
        assert_eq!(ck.model.buffers(), m.buffers());
        assert_eq!(ck.img_size(), Some(128));
        assert_eq!(ck.meta["input_scaling"], "unit");
    }

    #[test]
    fn corruption_is_detected() {
        let m = build_model::<f32>(&UNeXtConfig::unext_s(), 5).unwrap();
        let bytes = to_bytes(&m, &[]);
        let err = from_bytes(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(err.to_string().contains("CRC"), "{err}");
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(from_bytes(&flipped).unwrap_err().to_string().contains("CRC"));
        assert!(from_bytes(&bytes[..6]).unwrap_err().to_string().contains("CRC"));
    }

    #[test]
    fn unknown_version_rejected() {
        let m = build_model::<f32>(&UNeXtConfig::unext_s(), 5).unwrap();
        let mut bytes = to_bytes(&m, &[]);
        bytes[4] = 2;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(from_bytes(&bytes).unwrap_err().to_string().contains("version"));
    }
}
