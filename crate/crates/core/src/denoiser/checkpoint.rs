//! Binary checkpoint container.
//!
//! Layout (little-endian):
//! `magic[8] | version u32 | arch_hash u64 | arch_json_len u32 | arch_json |
//! epochs_done u64 | adam_step u64 | n_records u32 | records | fnv1a64 u64`,
//! where each record is
//! `name_len u16 | name | ndim u8 | dims u32 * ndim | f32 payload`.
//! Optimizer moments are stored as records named `adam.m.<param>` and
//! `adam.v.<param>`. The trailing checksum covers every preceding byte.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::train::{AdamState, TrainState};
use super::unet::{ArchConfig, TinyUNet};
use crate::error::{Error, Result};
use crate::rng::fnv1a64;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AUTODCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: TinyUNet<f32>,
    pub state: TrainState,
}

fn put_record(buf: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f32]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(net: &TinyUNet<f32>, state: &TrainState) -> Vec<u8> {
    let arch_json = serde_json::to_string(net.arch()).expect("arch config serializes");
    let mut buf = Vec::with_capacity(16 + net.param_count() * 12);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&net.arch().hash().to_le_bytes());
    buf.extend_from_slice(&(arch_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(arch_json.as_bytes());
    buf.extend_from_slice(&state.epochs_done.to_le_bytes());
    buf.extend_from_slice(&state.adam.step.to_le_bytes());
    let tensors: Vec<_> = net.layout().collect();
    buf.extend_from_slice(&((tensors.len() * 3) as u32).to_le_bytes());
    for t in net.tensors() {
        put_record(&mut buf, t.name, t.shape, t.values);
    }
    for (prefix, moments) in [("adam.m.", &state.adam.m), ("adam.v.", &state.adam.v)] {
        for t in net.tensors() {
            let (_, _, offset) = tensors.iter().find(|(n, _, _)| *n == t.name).copied().expect("same layout");
            let len = t.values.len();
            put_record(&mut buf, &format!("{prefix}{}", t.name), t.shape, &moments[offset..offset + len]);
        }
    }
    let sum = fnv1a64(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

/// Writes via a temporary file and rename so a crash never leaves a
/// half-written checkpoint under `path`.
pub fn checkpoint_save(net: &TinyUNet<f32>, state: &TrainState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(net, state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::corrupt(self.path, "unexpected end of checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

/// Parses a checkpoint. With `expected`, the stored architecture must match it.
pub fn decode_checkpoint(bytes: &[u8], path: &Path, expected: Option<&ArchConfig>) -> Result<Checkpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 12 {
        return Err(Error::corrupt(path, "file too short"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::corrupt(path, "bad magic bytes"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    if fnv1a64(body).to_le_bytes() != tail {
        return Err(Error::corrupt(path, "checksum mismatch (truncated or modified file)"));
    }
    let mut r = Reader { bytes: body, pos: 12, path };
    let hash = r.u64()?;
    let json_len = r.u32()? as usize;
    let arch: ArchConfig = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| Error::corrupt(path, format!("architecture record: {e}")))?;
    if arch.hash() != hash {
        return Err(Error::corrupt(path, "architecture hash does not match its record"));
    }
    if let Some(exp) = expected {
        if exp.hash() != hash {
            return Err(Error::ArchitectureMismatch {
                expected: exp.hash(),
                found: hash,
            });
        }
    }
    let epochs_done = r.u64()?;
    let step = r.u64()?;
    let n_records = r.u32()? as usize;
    let mut records: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::with_capacity(n_records);
    for _ in 0..n_records {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::corrupt(path, "record name is not UTF-8"))?
            .to_string();
        let ndim = r.u8()? as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        let payload = r.take(len.checked_mul(4).ok_or_else(|| Error::corrupt(path, "record too large"))?)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if records.insert(name.clone(), (shape, values)).is_some() {
            return Err(Error::corrupt(path, format!("duplicate record {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::corrupt(path, "trailing bytes after records"));
    }

    let mut net = TinyUNet::<f32>::zeroed(&arch).map_err(|e| Error::corrupt(path, e.to_string()))?;
    let n = net.param_count();
    let mut adam = AdamState::new(n);
    adam.step = step;
    let entries: Vec<(String, Vec<usize>, usize)> =
        net.layout().map(|(n, s, o)| (n.to_string(), s.to_vec(), o)).collect();
    if records.len() != entries.len() * 3 {
        return Err(Error::corrupt(path, "record count does not match the architecture"));
    }
    for (name, shape, offset) in &entries {
        let len: usize = shape.iter().product();
        for (key, dst) in [
            (name.clone(), &mut net.params_mut()[*offset..offset + len]),
            (format!("adam.m.{name}"), &mut adam.m[*offset..offset + len]),
            (format!("adam.v.{name}"), &mut adam.v[*offset..offset + len]),
        ] {
            let (s, v) = records
                .get(&key)
                .ok_or_else(|| Error::corrupt(path, format!("missing record {key}")))?;
            if s != shape {
                return Err(Error::corrupt(path, format!("record {key} has shape {s:?}, expected {shape:?}")));
            }
            dst.copy_from_slice(v);
        }
    }
    if !net.is_finite() {
        return Err(Error::corrupt(path, "non-finite parameter values"));
    }
    Ok(Checkpoint {
        net,
        state: TrainState { epochs_done, adam },
    })
}

pub fn checkpoint_load(path: &Path, expected: Option<&ArchConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path, expected)
}
