//! Little-endian model checkpoint.
//!
//! ```text
//! "AHGM" | version u32 | header_len u32 | header JSON
//!        | params u32 | per param: name_len u32 | name | rank u32 | dims u64.. | f32 data
//! ```
//!
//! The JSON header echoes the model configuration, the path layout and any
//! caller-supplied run settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, ModelLayout, ModelParams};
use crate::autodiff::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AHGM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    layout: ModelLayout,
    #[serde(default)]
    echo: serde_json::Value,
}

/// A decoded checkpoint: the model in 32-bit precision plus the settings
/// echo written alongside it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub echo: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

pub fn encode_checkpoint<T: Real>(model: &Model<T>, echo: &serde_json::Value) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        model: model.config.clone(),
        layout: model.layout.clone(),
        echo: echo.clone(),
    })
    .expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, header.len());
    out.extend_from_slice(&header);
    let named = model.params.named();
    put_u32(&mut out, named.len());
    for (name, t) in named {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize, ModelError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| ModelError::Format("dimension overflow".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Format(
            "bad magic bytes, not an AHGM checkpoint".into(),
        ));
    }
    let version = u32::try_from(r.u32()?).expect("read from u32");
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header_len = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| ModelError::Format(format!("header: {e}")))?;
    let count = r.u32()?;
    let mut blobs = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ModelError::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| ModelError::Format(format!("`{name}`: implausible shape {shape:?}")))?;
        let data = r
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if blobs
            .insert(name.clone(), Tensor::new(shape, data))
            .is_some()
        {
            return Err(ModelError::Format(format!("duplicate parameter `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Format(
            "trailing bytes after last parameter".into(),
        ));
    }
    let mut params: ModelParams<Tensor<f32>> = ModelParams::init(&header.model, &header.layout, 0)?;
    let mut missing = Vec::new();
    let mut shape_errors = Vec::new();
    params.visit_mut(|name, t| match blobs.remove(name) {
        Some(b) if b.shape() == t.shape() => *t = b,
        Some(b) => shape_errors.push(format!("`{name}`: {:?} vs {:?}", b.shape(), t.shape())),
        None => missing.push(name.to_string()),
    });
    if !missing.is_empty() || !blobs.is_empty() {
        return Err(ModelError::LayoutMismatch {
            missing,
            unexpected: blobs.into_keys().collect(),
        });
    }
    if let Some(e) = shape_errors.first() {
        return Err(ModelError::Format(format!("parameter shape mismatch {e}")));
    }
    Ok(Checkpoint {
        model: Model {
            config: header.model,
            layout: header.layout,
            params,
        },
        echo: header.echo,
    })
}

pub fn write_checkpoint<T: Real>(
    model: &Model<T>,
    echo: &serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model, echo)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
