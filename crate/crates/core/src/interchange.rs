//! Binary container for frame-feature matrices.
//!
//! Layout (all little-endian):
//!
//! | field          | type         |
//! |----------------|--------------|
//! | magic          | `b"FEAT"`    |
//! | version        | u32 (= 1)    |
//! | n_frames       | u32          |
//! | dim            | u32          |
//! | frame_shift_ms | f32          |
//! | tag length     | u8           |
//! | tag            | UTF-8 bytes  |
//! | payload        | n_frames·dim f32, row-major |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEAT_MAGIC: &[u8; 4] = b"FEAT";
pub const FEAT_VERSION: u32 = 1;

/// Registered dims for the built-in tags.
pub const BUILTIN_DIMS: [(&str, usize); 8] = [
    ("spectrogram", 257),
    ("mel", 80),
    ("mfcc", 39),
    ("fbank", 240),
    ("cpc", 256),
    ("pase+", 256),
    ("tera", 768),
    ("mockingjay", 768),
];

#[derive(Debug, Error)]
pub enum FeatError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("bad magic: expected FEAT")]
    BadMagic,
    #[error("version {found} not supported (expected {FEAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("tag '{tag}' requires dim {expected}, found {found}")]
    DimMismatch {
        tag: String,
        expected: usize,
        found: usize,
    },
    #[error("truncated: {0}")]
    Truncated(&'static str),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("sidecar error: {0}")]
    Sidecar(#[from] serde_json::Error),
}

/// A `T × d` row-major matrix of frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_frames: usize,
    dim: usize,
    frame_shift_ms: f32,
    data: Vec<f32>,
    source_tag: String,
}

impl FeatureMatrix {
    pub fn new(
        n_frames: usize,
        dim: usize,
        frame_shift_ms: f32,
        data: Vec<f32>,
        source_tag: &str,
    ) -> Result<Self, FeatError> {
        if n_frames == 0 || dim == 0 {
            return Err(FeatError::InvalidShape(format!(
                "n_frames={n_frames}, dim={dim}: both must be >= 1"
            )));
        }
        if data.len() != n_frames * dim {
            return Err(FeatError::InvalidShape(format!(
                "data has {} values, expected {}",
                data.len(),
                n_frames * dim
            )));
        }
        if source_tag.len() > u8::MAX as usize {
            return Err(FeatError::InvalidShape("tag longer than 255 bytes".into()));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatError::NonFiniteValue { index });
        }
        TagRegistry::default().check(source_tag, dim)?;
        Ok(Self {
            n_frames,
            dim,
            frame_shift_ms,
            data,
            source_tag: source_tag.to_string(),
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_shift_ms(&self) -> f32 {
        self.frame_shift_ms
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Tag → dim table used to validate files.
///
/// Unknown tags are accepted with a warning.
#[derive(Debug, Clone)]
pub struct TagRegistry {
    dims: BTreeMap<String, usize>,
}

impl Default for TagRegistry {
    fn default() -> Self {
        Self {
            dims: BUILTIN_DIMS
                .iter()
                .map(|&(t, d)| (t.to_string(), d))
                .collect(),
        }
    }
}

impl TagRegistry {
    pub fn register(&mut self, tag: &str, dim: usize) {
        self.dims.insert(tag.to_string(), dim);
    }

    pub fn dim_of(&self, tag: &str) -> Option<usize> {
        self.dims.get(tag).copied()
    }

    pub fn check(&self, tag: &str, dim: usize) -> Result<(), FeatError> {
        match self.dim_of(tag) {
            Some(expected) if expected != dim => Err(FeatError::DimMismatch {
                tag: tag.to_string(),
                expected,
                found: dim,
            }),
            Some(_) => Ok(()),
            None => {
                log::debug!("tag '{tag}' is not registered; dim check skipped");
                Ok(())
            }
        }
    }
}

pub fn encode_feat(m: &FeatureMatrix) -> Result<Vec<u8>, FeatError> {
    if let Some(index) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(FeatError::NonFiniteValue { index });
    }
    let tag = m.source_tag.as_bytes();
    let mut out = Vec::with_capacity(21 + tag.len() + m.data.len() * 4);
    out.extend_from_slice(FEAT_MAGIC);
    out.extend_from_slice(&FEAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    out.extend_from_slice(&m.frame_shift_ms.to_le_bytes());
    out.push(tag.len() as u8);
    out.extend_from_slice(tag);
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_feat(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), FeatError> {
    let bytes = encode_feat(m)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_feat(path: impl AsRef<Path>) -> Result<FeatureMatrix, FeatError> {
    read_feat_with(path, &TagRegistry::default())
}

pub fn read_feat_with(path: impl AsRef<Path>, registry: &TagRegistry) -> Result<FeatureMatrix, FeatError> {
    let bytes = fs::read(path)?;
    decode_feat(&bytes, registry)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FeatError> {
        let end = self.pos.checked_add(n).ok_or(FeatError::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(FeatError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FeatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_feat(bytes: &[u8], registry: &TagRegistry) -> Result<FeatureMatrix, FeatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != FEAT_MAGIC {
        return Err(FeatError::BadMagic);
    }
    let version = cur.u32("version")?;
    if version != FEAT_VERSION {
        return Err(FeatError::VersionMismatch { found: version });
    }
    let n_frames = cur.u32("n_frames")? as usize;
    let dim = cur.u32("dim")? as usize;
    let frame_shift_ms = f32::from_le_bytes(cur.take(4, "frame_shift_ms")?.try_into().unwrap());
    let tag_len = cur.take(1, "tag length")?[0] as usize;
    let tag = String::from_utf8_lossy(cur.take(tag_len, "tag")?).into_owned();
    registry.check(&tag, dim)?;

    let payload = &bytes[cur.pos..];
    let expected = n_frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or(FeatError::Truncated("payload"))?;
    if payload.len() < expected {
        return Err(FeatError::Truncated("payload"));
    }
    if payload.len() > expected {
        return Err(FeatError::InvalidShape(format!(
            "payload has {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(n_frames, dim, frame_shift_ms, data, &tag)
}

/// Provenance written next to a feature file as `<name>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatSidecar {
    pub extractor: String,
    pub extractor_version: String,
    pub source_wav: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn sidecar_path(feat_path: &Path) -> PathBuf {
    feat_path.with_extension("json")
}

pub fn write_sidecar(feat_path: &Path, sidecar: &FeatSidecar) -> Result<(), FeatError> {
    let text = serde_json::to_string_pretty(sidecar)?;
    fs::write(sidecar_path(feat_path), text)?;
    Ok(())
}

pub fn read_sidecar(feat_path: &Path) -> Result<FeatSidecar, FeatError> {
    let text = fs::read_to_string(sidecar_path(feat_path))?;
    Ok(serde_json::from_str(&text)?)
}
