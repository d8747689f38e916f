//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "DWDN"
//! version    u32      currently 1
//! config     u32 length + UTF-8 config text
//! directory  u32 count, then per array:
//!              u16 name length + UTF-8 name
//!              u8 rank, rank x u32 dims
//!              u8 dtype (0 = f32)
//!              u64 byte offset into the payload
//! payload    all arrays as f32, back to back
//! checksum   u32 CRC-32 of every preceding byte
//! ```
//!
//! Values are stored as f32; loading widens back to f64, so a
//! save→load→save cycle is byte-stable.

use std::path::Path;

use crate::config::FullConfig;
use crate::error::{Error, Result};
use crate::model::FullModelParams;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DWDN";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Serializes `config` and `params` into checkpoint bytes.
pub fn checkpoint_to_bytes(config: &FullConfig, params: &FullModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    let text = config.to_text();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());

    let tensors = params.collect_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(DTYPE_F32);
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.numel() as u64;
    }
    for (_, t) in &tensors {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&out);
    out.extend_from_slice(&hasher.finalize().to_le_bytes());
    out
}

pub fn save_checkpoint(
    path: &Path,
    config: &FullConfig,
    params: &FullModelParams,
) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(config, params)).map_err(|e| Error::io(path, e))
}

/// Sequential little-endian reader over the checkpoint bytes.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CheckpointFormat(format!(
                "unexpected end of file at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes back into the config and parameters.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(FullConfig, FullModelParams)> {
    if bytes.len() < 12 {
        return Err(Error::CheckpointFormat(format!(
            "{} bytes is too short for a checkpoint",
            bytes.len()
        )));
    }
    let (body, stored_crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(stored_crc.try_into().unwrap());
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body);
    let computed = hasher.finalize();
    if stored != computed {
        return Err(Error::CheckpointChecksum { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(version));
    }

    let text_len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(text_len)?)
        .map_err(|e| Error::CheckpointFormat(format!("config text is not UTF-8: {e}")))?;
    let config = FullConfig::parse(text)?;

    let count = r.u32()? as usize;
    let mut directory = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::CheckpointFormat(format!("array name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::CheckpointFormat(format!(
                "array `{name}` has unsupported dtype {dtype}"
            )));
        }
        let offset = r.u64()? as usize;
        directory.push((name, shape, offset));
    }

    let payload = &body[r.pos..];
    let mut params = FullModelParams::zeros(config.model.clone())?;
    let mut used = vec![false; directory.len()];
    let mut failure: Option<Error> = None;
    params.for_each_named_mut(&mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        let Some(idx) = directory.iter().position(|(n, _, _)| *n == name) else {
            failure = Some(Error::CheckpointFormat(format!("missing array `{name}`")));
            return;
        };
        used[idx] = true;
        let (_, shape, offset) = &directory[idx];
        if shape != tensor.shape() {
            failure = Some(Error::CheckpointShape {
                name,
                expected: tensor.shape().to_vec(),
                found: shape.clone(),
            });
            return;
        }
        let n = tensor.numel();
        if offset + 4 * n > payload.len() {
            failure = Some(Error::CheckpointFormat(format!(
                "array `{name}` extends past the payload"
            )));
            return;
        }
        for (i, v) in tensor.data_mut().iter_mut().enumerate() {
            let at = offset + 4 * i;
            *v = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()) as f64;
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(idx) = used.iter().position(|&u| !u) {
        return Err(Error::CheckpointFormat(format!(
            "unexpected extra array `{}`",
            directory[idx].0
        )));
    }
    Ok((config, params))
}

pub fn load_checkpoint(path: &Path) -> Result<(FullConfig, FullModelParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
