//! Binary checkpoint format.
//!
//! ```text
//! 8 bytes   magic "MIXSSM01"
//! 8 bytes   header length, u64 little-endian
//! n bytes   UTF-8 JSON header {version, config, tensors: [{name, shape, offset, length}]}
//! ...       payload: every tensor as contiguous f32 little-endian values
//! ```
//!
//! `offset` and `length` are byte positions relative to the payload start.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::MixSsmNet;
use crate::error::CheckpointError;
use crate::nn::Module;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MIXSSM01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: ModelConfig,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

/// Serializes `model` into `out`.
pub fn write_checkpoint<T: Real>(model: &MixSsmNet<T>, out: &mut impl Write) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    model.visit("", &mut |name, t| {
        let offset = payload.len() as u64;
        for v in t.data() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        tensors.push(Entry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            length: payload.len() as u64 - offset,
        });
    });
    let header = Header {
        version: FORMAT_VERSION,
        config: model.config.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let io = |e: std::io::Error| Error::Invalid(format!("writing checkpoint: {e}"));
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    out.write_all(&payload).map_err(io)?;
    Ok(())
}

/// Rebuilds a model from checkpoint bytes.
pub fn read_checkpoint<T: Real>(bytes: &[u8]) -> Result<MixSsmNet<T>> {
    let (header, payload) = parse(bytes)?;
    let mut model = MixSsmNet::new(&header.config)?;
    assign(&mut model, &header, payload)?;
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &MixSsmNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<MixSsmNet<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

impl<T: Real> MixSsmNet<T> {
    /// Overwrites this model's parameters from a checkpoint whose stored
    /// configuration must equal `self.config`.
    pub fn load_from(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, payload) = parse(&bytes)?;
        if header.config != self.config {
            return Err(CheckpointError::Mismatch("stored configuration differs from the model's".into()).into());
        }
        assign(self, &header, payload)
    }
}

fn parse(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let found = bytes.len() as u64;
    let magic_len = bytes.len().min(8);
    if bytes[..magic_len] != MAGIC[..magic_len] {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated { needed: 16, found }.into());
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = 16u64.saturating_add(header_len);
    if header_end > found {
        return Err(CheckpointError::Truncated {
            needed: header_end,
            found,
        }
        .into());
    }
    let raw = &bytes[16..header_end as usize];
    let value: serde_json::Value =
        serde_json::from_slice(raw).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CheckpointError::Header("missing version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(CheckpointError::Version(version.min(u64::from(u32::MAX)) as u32).into());
    }
    let header: Header = serde_json::from_value(value).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let payload = &bytes[header_end as usize..];
    for e in &header.tensors {
        let expected: usize = e.shape.iter().product();
        if expected as u64 * 4 != e.length {
            return Err(CheckpointError::ShapeLength {
                name: e.name.clone(),
                shape: e.shape.clone(),
                expected,
                actual: e.length as usize,
            }
            .into());
        }
        let end = e.offset.saturating_add(e.length);
        if end > payload.len() as u64 {
            return Err(CheckpointError::Truncated {
                needed: header_end + end,
                found,
            }
            .into());
        }
    }
    Ok((header, payload))
}

fn assign<T: Real>(model: &mut MixSsmNet<T>, header: &Header, payload: &[u8]) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(CheckpointError::Mismatch(format!(
            "model has {} tensors, file has {}",
            expected.len(),
            header.tensors.len()
        ))
        .into());
    }
    for ((name, shape), e) in expected.iter().zip(&header.tensors) {
        if *name != e.name || *shape != e.shape {
            return Err(CheckpointError::Mismatch(format!(
                "expected {name} {shape:?}, file has {} {:?}",
                e.name, e.shape
            ))
            .into());
        }
    }
    let mut values = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let raw = &payload[e.offset as usize..(e.offset + e.length) as usize];
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|b| T::of(f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")))))
            .collect();
        values.push(Tensor::param(&e.shape, data)?);
    }
    let mut it = values.into_iter();
    model.visit_mut("", &mut |_, t| {
        if let Some(v) = it.next() {
            *t = v;
        }
    });
    Ok(())
}
