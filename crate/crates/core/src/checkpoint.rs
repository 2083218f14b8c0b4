//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DCLR"  u32 version
//! u64 header_len, header: UTF-8 `key=value` lines, sorted by key
//! u32 tensor_count
//! per tensor: u16 name_len, name, u8 dtype (1 = f64), u8 ndim, u64 dims[ndim],
//!             u64 offset (from start of payload section), u64 byte_len
//! payload section: row-major IEEE-754 f64 data
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::encoder::{Params, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::optim::Moments;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"DCLR";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab_digest: String,
    /// Number of optimizer steps already taken.
    pub step: u64,
    pub params: Params,
    pub moments: Moments,
    pub best_r1: Option<f64>,
    pub best_step: Option<u64>,
}

fn header(ckpt: &Checkpoint) -> BTreeMap<String, String> {
    let mut h: BTreeMap<String, String> = ckpt
        .config
        .to_kv()
        .into_iter()
        .map(|(k, v)| (format!("config.{k}"), v))
        .collect();
    h.insert("vocab.digest".into(), ckpt.vocab_digest.clone());
    h.insert("state.step".into(), ckpt.step.to_string());
    // Every random stream is a function of (seed, epoch, step, index); the
    // seed and step counter are the whole generator state.
    h.insert("rng.master".into(), ckpt.config.seed.to_string());
    h.insert("rng.step".into(), ckpt.step.to_string());
    if let Some(b) = ckpt.best_r1 {
        h.insert("state.best_r1".into(), format!("{b:?}"));
    }
    if let Some(s) = ckpt.best_step {
        h.insert("state.best_step".into(), s.to_string());
    }
    h
}

fn named_tensors(ckpt: &Checkpoint) -> Vec<(String, Vec<usize>, &[f64])> {
    let shapes = ckpt.params.shapes();
    let mut out = Vec::with_capacity(24);
    for (prefix, p) in [("", &ckpt.params), ("adam.m.", &ckpt.moments.first), ("adam.v.", &ckpt.moments.second)] {
        for ((name, shape), data) in TENSOR_NAMES.iter().zip(&shapes).zip(p.tensors()) {
            out.push((format!("{prefix}{name}"), shape.clone(), data));
        }
    }
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = String::new();
        for (k, v) in header(self) {
            text.push_str(&k);
            text.push('=');
            text.push_str(&v);
            text.push('\n');
        }
        let tensors = named_tensors(self);

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, shape, data) in &tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let bytes = (data.len() * 8) as u64;
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&bytes.to_le_bytes());
            offset += bytes;
        }
        for (_, _, data) in &tensors {
            for x in data.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(hlen)?).map_err(|_| Error::Corrupt("header is not UTF-8".into()))?;
        let mut header = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Corrupt(format!("malformed header line {line:?}")))?;
            header.insert(k.to_owned(), v.to_owned());
        }
        let get = |k: &str| header.get(k).ok_or_else(|| Error::Corrupt(format!("header lacks {k}")));
        let config_kv: BTreeMap<String, String> = header
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_owned(), v.clone())))
            .collect();
        let config = TrainConfig::from_kv(&config_kv)?;
        let step: u64 = get("state.step")?
            .parse()
            .map_err(|_| Error::Corrupt("bad state.step".into()))?;
        let best_r1 = header
            .get("state.best_r1")
            .map(|v| v.parse::<f64>().map_err(|_| Error::Corrupt("bad state.best_r1".into())))
            .transpose()?;
        let best_step = header
            .get("state.best_step")
            .map(|v| v.parse::<u64>().map_err(|_| Error::Corrupt("bad state.best_step".into())))
            .transpose()?;
        let vocab_digest = get("vocab.digest")?.clone();

        let count = r.u32()? as usize;
        let mut dir = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(Error::Corrupt(format!("tensor {name} has unsupported dtype {dtype}")));
            }
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            let bytes = r.u64()? as usize;
            dir.push((name, shape, offset, bytes));
        }
        let payload = &buf[r.pos..];

        let mut params = Params::zeros(config.encoder);
        let mut first = Params::zeros(config.encoder);
        let mut second = Params::zeros(config.encoder);
        let expected_shapes = params.shapes();
        let mut seen = 0;
        for (name, shape, offset, bytes) in dir {
            let (target, base) = if let Some(b) = name.strip_prefix("adam.m.") {
                (&mut first, b)
            } else if let Some(b) = name.strip_prefix("adam.v.") {
                (&mut second, b)
            } else {
                (&mut params, name.as_str())
            };
            let idx = TENSOR_NAMES
                .iter()
                .position(|n| *n == base)
                .ok_or_else(|| Error::Corrupt(format!("unknown tensor {name}")))?;
            if shape != expected_shapes[idx] {
                return Err(Error::Shape(format!(
                    "tensor {name} has shape {shape:?}, configuration implies {:?}",
                    expected_shapes[idx]
                )));
            }
            let dst = &mut target.tensors_mut()[idx];
            if bytes != dst.len() * 8 {
                return Err(Error::Corrupt(format!("tensor {name} byte length mismatch")));
            }
            let src = payload
                .get(offset..offset + bytes)
                .ok_or_else(|| Error::Corrupt(format!("truncated payload for tensor {name}")))?;
            for (x, chunk) in dst.iter_mut().zip(src.chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
            seen += 1;
        }
        if seen != 3 * TENSOR_NAMES.len() {
            return Err(Error::Corrupt(format!("expected {} tensors, found {seen}", 3 * TENSOR_NAMES.len())));
        }
        Ok(Checkpoint {
            config,
            vocab_digest,
            step,
            params,
            moments: Moments { first, second },
            best_r1,
            best_step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corrupt("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
