//! `CKPT` files: magic, version, JSON descriptor, flat f32 parameters.
//!
//! ```text
//! "CKPT" | version u32 | descriptor length u32 | descriptor (UTF-8 JSON)
//!        | scalar count u64 | scalars f32...          (all little-endian)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Classifier, ModelError};
use crate::tensor::{ParamStore, Tensor};

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u32 = 1;

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
    pub dev_uar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Classifier,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    arch: Architecture,
    feature: String,
    params: Vec<(String, Vec<usize>)>,
    meta: CheckpointMeta,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let m = &ckpt.model;
    let desc = Descriptor {
        arch: *m.arch(),
        feature: m.feature().to_string(),
        params: m.params().shapes(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_vec(&desc).expect("descriptor serializes");
    let flat = m.params().flatten();
    let mut out = Vec::with_capacity(20 + json.len() + 4 * flat.len());
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &'static str) -> Result<&'a [u8], ModelError> {
    if bytes.len() < n {
        return Err(ModelError::Truncated(what));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let b = &mut bytes;
    if take(b, 4, "magic")? != CKPT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = u32::from_le_bytes(take(b, 4, "version")?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(ModelError::VersionMismatch(version));
    }
    let json_len = u32::from_le_bytes(take(b, 4, "descriptor length")?.try_into().unwrap()) as usize;
    let desc: Descriptor =
        serde_json::from_slice(take(b, json_len, "descriptor")?).map_err(|e| ModelError::Descriptor(e.to_string()))?;
    let n = u64::from_le_bytes(take(b, 8, "scalar count")?.try_into().unwrap()) as usize;
    let expected: usize = desc.params.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if n != expected {
        return Err(ModelError::Descriptor(format!(
            "payload holds {n} scalars, descriptor needs {expected}"
        )));
    }
    let payload = take(b, 4 * n, "parameters")?;
    if !b.is_empty() {
        return Err(ModelError::Descriptor(format!("{} trailing bytes", b.len())));
    }
    let mut flat = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut store = ParamStore::new();
    for (name, shape) in desc.params {
        let len = shape.iter().product();
        let data: Vec<f32> = flat.by_ref().take(len).collect();
        store.add(&name, Tensor::new(shape, data)?);
    }
    let model = Classifier::from_parts(desc.arch, &desc.feature, store)?;
    Ok(Checkpoint { model, meta: desc.meta })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    decode_checkpoint(&std::fs::read(path)?)
}
