//! `SGV1` model container.
//!
//! Layout: the 4 magic bytes `SGV1`, a little-endian `u64` byte length, a
//! JSON metadata block of that length, then one little-endian `f32` array
//! per tensor in metadata order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;

pub const MAGIC: &[u8; 4] = b"SGV1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    version: u32,
    preset: String,
    tensors: Vec<TensorEntry>,
    preprocess: PreprocessConfig,
    #[serde(default)]
    config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub preset: String,
    pub preprocess: PreprocessConfig,
    /// Model-specific configuration, stored verbatim.
    pub config: serde_json::Value,
    pub params: ParamStore,
}

pub fn write_container<W: Write>(mut w: W, model: &ModelFile) -> Result<()> {
    let meta = Metadata {
        version: FORMAT_VERSION,
        preset: model.preset.clone(),
        tensors: model
            .params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        preprocess: model.preprocess.clone(),
        config: model.config.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in model.params.iter() {
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<ModelFile> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Container(format!("bad magic {magic:?}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 64 << 20 {
        return Err(Error::Container(format!("metadata block of {len} bytes")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let meta: Metadata = serde_json::from_slice(&json)?;
    if meta.version != FORMAT_VERSION {
        return Err(Error::Container(format!("unsupported version {}", meta.version)));
    }
    let mut params = ParamStore::new();
    let mut names = std::collections::HashSet::new();
    for entry in &meta.tensors {
        if !names.insert(entry.name.as_str()) {
            return Err(Error::Container(format!("tensor {} listed twice", entry.name)));
        }
        let n: usize = entry.shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        params.insert(entry.name.clone(), Tensor::from_vec(entry.shape.clone(), data)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Container(format!("{} trailing bytes", rest.len())));
    }
    Ok(ModelFile {
        preset: meta.preset,
        preprocess: meta.preprocess,
        config: meta.config,
        params,
    })
}

pub fn save_container(path: &Path, model: &ModelFile) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_container(std::io::BufWriter::new(f), model)
}

pub fn load_container(path: &Path) -> Result<ModelFile> {
    let f = std::fs::File::open(path)?;
    read_container(std::io::BufReader::new(f))
}
