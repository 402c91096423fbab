//! Binary checkpoint, all integers and floats little-endian:
//!
//! ```text
//! "MPXM" | u32 version | u32 len, config text (key=value lines)
//! u32 tensor count
//! per tensor: u32 len, name | u8 kind (0 param, 1 buffer) | u8 dtype (0 f32, 1 f64)
//!             u32 ndim | u64 dims... | raw values
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

use super::config::ModelConfig;
use super::network::MpoxMamba;

pub const MAGIC: &[u8; 4] = b"MPXM";
pub const VERSION: u32 = 1;

/// A trained model plus the class names it predicts.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: MpoxMamba<T>,
    pub class_names: Vec<String>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize, what: &str) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} too large: {n}")))?;
    put_u32(out, v);
    Ok(())
}

pub fn encode<T: Scalar>(model: &MpoxMamba<T>, class_names: &[String]) -> Result<Vec<u8>> {
    let mut text = String::new();
    for (k, v) in model.config.to_entries() {
        text.push_str(&format!("{k}={v}\n"));
    }
    text.push_str(&format!("data.classes={}\n", class_names.join(",")));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_len(&mut out, text.len(), "config")?;
    out.extend_from_slice(text.as_bytes());
    put_len(&mut out, model.store.len(), "tensor count")?;
    for (_, p) in model.store.iter() {
        put_len(&mut out, p.name.len(), "name")?;
        out.extend_from_slice(p.name.as_bytes());
        out.push(u8::from(!p.trainable));
        out.push(T::DTYPE.tag());
        put_len(&mut out, p.value.ndim(), "rank")?;
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn save<T: Scalar>(model: &MpoxMamba<T>, class_names: &[String], path: &Path) -> Result<()> {
    let bytes = encode(model, class_names)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("non-UTF-8 string".into()))
    }
}

fn read_values<T: Scalar>(r: &mut Reader<'_>, dtype: DType, count: usize) -> Result<Vec<T>> {
    let raw = r.take(count.checked_mul(dtype.size_of()).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
    Ok(match dtype {
        DType::F32 => raw.chunks_exact(4).map(|b| T::from_f64(f32::read_le(b) as f64)).collect(),
        DType::F64 => raw.chunks_exact(8).map(|b| T::from_f64(f64::read_le(b))).collect(),
    })
}

/// Parses a checkpoint; values stored in another precision are converted.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic bytes (not an MPXM checkpoint)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let text = r.string()?;
    let mut config = ModelConfig::default();
    let mut class_names = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
        if let Some(key) = k.strip_prefix("model.") {
            config.set(key, v).map_err(|e| Error::Checkpoint(e.to_string()))?;
        } else if k == "data.classes" {
            class_names = v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
        } else {
            return Err(Error::Checkpoint(format!("unknown config key {k:?}")));
        }
    }
    let mut model = MpoxMamba::<T>::build(config, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, model has {}",
            model.store.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let name = r.string()?;
        let kind = r.u8()?;
        let dtype = DType::from_tag(r.u8()?).ok_or_else(|| Error::Checkpoint(format!("{name}: bad dtype tag")))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let id = model
            .store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name:?}")))?;
        let p = model.store.get(id);
        if p.value.shape() != shape.as_slice() || kind != u8::from(!p.trainable) {
            return Err(Error::Checkpoint(format!(
                "{name}: stored shape {shape:?} kind {kind}, expected {:?}",
                p.value.shape()
            )));
        }
        let values = read_values::<T>(&mut r, dtype, p.value.len())?;
        model.store.set(id, Tensor::new(&shape, values)?)?;
        seen[id.index()] = true;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    debug_assert!(seen.iter().all(|&s| s));
    Ok(Checkpoint { model, class_names })
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    decode(&bytes)
}
