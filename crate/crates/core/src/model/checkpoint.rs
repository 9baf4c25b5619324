//! Checkpoint file format.
//!
//! Layout: magic `FFLC`, version u32, tensor count u32, then per tensor
//! a u16 name length + UTF-8 name, u8 rank, u32 dims and little-endian
//! f32 row-major data. A trailing UTF-8 `key=value` block (one pair per
//! line) carries the configuration and any training-state scalars.

use std::collections::BTreeMap;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::Tensor;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FFLC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("tensor: {0}")]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// Write named tensors plus a key=value block.
pub fn save_checkpoint(
    path: &Path,
    tensors: &[(String, Tensor<f32>)],
    kv: &[(String, String)],
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(CheckpointError::Format(format!("tensor name too long: {name}")));
        }
        if t.rank() > u8::MAX as usize {
            return Err(CheckpointError::Format(format!("tensor rank too large: {name}")));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for (k, v) in kv {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(CheckpointError::Format(format!("bad key=value pair: {k}")));
        }
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Read back tensors and the trailing key=value block.
#[allow(clippy::type_complexity)]
pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor<f32>)>, BTreeMap<String, String>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(CheckpointError::Format("unexpected end of file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(&shape, data)?));
    }
    let text = std::str::from_utf8(&bytes[pos..])
        .map_err(|_| CheckpointError::Format("trailing block is not UTF-8".into()))?;
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Format(format!("bad config line: {line}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    Ok((tensors, kv))
}

/// Load only the model parameters and configuration from a checkpoint,
/// ignoring any optimizer-state tensors (`adam.*`).
pub fn load_model_params(path: &Path) -> Result<super::ModelParams<f32>> {
    let (tensors, kv) = load_checkpoint(path)?;
    let config = super::config_from_kv(&kv)?;
    let entries: Vec<(String, Tensor<f32>)> = tensors
        .into_iter()
        .filter(|(n, _)| !n.starts_with("adam."))
        .collect();
    Ok(super::ModelParams::from_entries(config, entries)?)
}
