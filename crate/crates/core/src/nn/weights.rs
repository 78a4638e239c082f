//! Binary weight files.
//!
//! Layout: magic `RDOT`, format version as little-endian `u16`, manifest
//! length as little-endian `u64`, the JSON manifest, then every tensor's
//! values as little-endian `f64` in manifest order. Trainable tensors come
//! first, then fixed buffers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::gin::GraphEncoderParams;
use super::matrix::DenseMatrix;
use super::mlp::Parameterized;
use super::tree_encoder::TreeEncoderParams;

pub const MAGIC: &[u8; 4] = b"RDOT";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelMeta {
    GraphEncoder {
        input_dim: usize,
        hidden_dim: usize,
        frozen: bool,
    },
    TreeEncoder {
        input_dim: usize,
        hidden_dim: usize,
        height: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelMeta,
    pub tensors: Vec<TensorEntry>,
}

/// Anything that can be written to and restored from a weight file.
pub trait Persist: Parameterized + Sized {
    fn meta(&self) -> ModelMeta;
    fn restore(meta: &ModelMeta, tensors: &[(String, DenseMatrix)]) -> Result<Self>;
}

impl Persist for GraphEncoderParams {
    fn meta(&self) -> ModelMeta {
        ModelMeta::GraphEncoder {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            frozen: self.frozen,
        }
    }

    fn restore(meta: &ModelMeta, tensors: &[(String, DenseMatrix)]) -> Result<Self> {
        match *meta {
            ModelMeta::GraphEncoder {
                input_dim,
                hidden_dim,
                frozen,
            } => GraphEncoderParams::from_named(tensors, input_dim, hidden_dim, frozen),
            _ => Err(Error::Format("file does not hold a graph encoder".into())),
        }
    }
}

impl Persist for TreeEncoderParams {
    fn meta(&self) -> ModelMeta {
        ModelMeta::TreeEncoder {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            height: self.height(),
        }
    }

    fn restore(meta: &ModelMeta, tensors: &[(String, DenseMatrix)]) -> Result<Self> {
        match *meta {
            ModelMeta::TreeEncoder {
                input_dim,
                hidden_dim,
                height,
            } => TreeEncoderParams::from_named(tensors, input_dim, hidden_dim, height),
            _ => Err(Error::Format("file does not hold a tree encoder".into())),
        }
    }
}

pub fn encode_weights<P: Persist>(params: &P) -> Result<Vec<u8>> {
    let mut named = params.named_tensors();
    named.extend(params.named_buffers());
    let manifest = Manifest {
        model: params.meta(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: [t.rows(), t.cols()],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let payload: usize = named.iter().map(|(_, t)| t.data().len() * 8).sum();
    let mut out = Vec::with_capacity(4 + 2 + 8 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated weight file while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn decode_weights<P: Persist>(mut bytes: &[u8]) -> Result<P> {
    let cursor = &mut bytes;
    if take(cursor, 4, "magic")? != MAGIC {
        return Err(Error::Format("not a weight file (bad magic bytes)".into()));
    }
    let version = u16::from_le_bytes(take(cursor, 2, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(take(cursor, 8, "manifest length")?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| Error::Format("manifest length overflows".into()))?;
    let manifest: Manifest = serde_json::from_slice(take(cursor, len, "manifest")?)
        .map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let [rows, cols] = entry.shape;
        let raw = take(cursor, rows * cols * 8, &entry.name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry.name.clone(), DenseMatrix::from_vec(rows, cols, data)?));
    }
    if !cursor.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after payload", cursor.len())));
    }
    P::restore(&manifest.model, &tensors)
}

pub fn save_weights<P: Persist>(path: impl AsRef<Path>, params: &P) -> Result<()> {
    fs::write(path, encode_weights(params)?)?;
    Ok(())
}

pub fn load_weights<P: Persist>(path: impl AsRef<Path>) -> Result<P> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    decode_weights(&bytes)
}
