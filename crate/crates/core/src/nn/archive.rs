//! Named-tensor archives in the safetensors layout (little-endian `u64` header
//! length, JSON header, raw little-endian payload), plus a JSON manifest that
//! records each tensor's shape and the producing configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{Params, Real};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "cardioseg-tensors";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub tensors: BTreeMap<String, ArrayD<f32>>,
    pub metadata: BTreeMap<String, String>,
}

/// Companion file listing tensor shapes and the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub tensors: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

impl TensorArchive {
    /// Captures parameters and buffers, converted to `f32`.
    pub fn from_model<T: Real, M: Params<T>>(model: &M) -> Self {
        let tensors = model
            .params()
            .into_iter()
            .chain(model.buffers())
            .map(|(name, v)| (name, v.mapv(|x| x.f64() as f32)))
            .collect();
        Self {
            tensors,
            metadata: BTreeMap::new(),
        }
    }

    /// Copies tensors into a model whose parameter names and shapes must match exactly.
    pub fn load_into<T: Real, M: Params<T>>(&self, model: &mut M) -> Result<()> {
        let mut expected = 0;
        let mut assign = |name: String, mut dst: ndarray::ArrayViewMutD<'_, T>| -> Result<()> {
            expected += 1;
            let src = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::validation(format!("tensor archive is missing {name}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::validation(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.zip_mut_with(src, |d, &s| *d = T::of(s as f64));
            Ok(())
        };
        for (name, dst) in model.params_mut() {
            assign(name, dst)?;
        }
        for (name, dst) in model.buffers_mut() {
            assign(name, dst)?;
        }
        if expected != self.tensors.len() {
            return Err(Error::validation(format!(
                "tensor archive holds {} tensors, model has {expected}",
                self.tensors.len()
            )));
        }
        Ok(())
    }

    pub fn manifest(&self, kind: &str, config: serde_json::Value) -> Manifest {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            kind: kind.into(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect(),
            config,
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        if !self.metadata.is_empty() {
            header.insert("__metadata__".into(), serde_json::to_value(&self.metadata).expect("string map"));
        }
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let len = t.len() * 4;
            let entry = Entry {
                dtype: "F32".into(),
                shape: t.shape().to_vec(),
                data_offsets: [offset, offset + len],
            };
            header.insert(name.clone(), serde_json::to_value(entry).expect("plain struct"));
            offset += len;
        }
        let mut json = serde_json::to_vec(&header).expect("json map");
        while !json.len().is_multiple_of(8) {
            json.push(b' ');
        }
        let mut out = Vec::with_capacity(8 + json.len() + offset);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in t.as_standard_layout().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::validation(format!("{}: {msg}", path.display()));
        if bytes.len() < 8 {
            return Err(bad("too short for a tensor archive".into()));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(8..8 + n).ok_or_else(|| bad("header length exceeds file size".into()))?;
        let header: serde_json::Map<String, serde_json::Value> =
            serde_json::from_slice(body).map_err(|e| bad(format!("bad header: {e}")))?;
        let data = &bytes[8 + n..];
        let mut archive = TensorArchive::default();
        for (name, value) in header {
            if name == "__metadata__" {
                archive.metadata = serde_json::from_value(value).map_err(|e| bad(format!("bad metadata: {e}")))?;
                continue;
            }
            let e: Entry = serde_json::from_value(value).map_err(|e| bad(format!("bad entry {name}: {e}")))?;
            if e.dtype != "F32" {
                return Err(bad(format!("tensor {name} has dtype {}, only F32 is supported", e.dtype)));
            }
            let [a, b] = e.data_offsets;
            let count: usize = e.shape.iter().product();
            if b < a || b - a != count * 4 || b > data.len() {
                return Err(bad(format!("tensor {name} has inconsistent offsets {a}..{b}")));
            }
            let values = data[a..b]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = ArrayD::from_shape_vec(e.shape, values).map_err(|e| bad(e.to_string()))?;
            archive.tensors.insert(name, t);
        }
        Ok(archive)
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` and the manifest next to it (same stem, `.json`).
pub fn write_archive(path: &Path, archive: &TensorArchive, manifest: &Manifest) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, archive.to_bytes()).map_err(|e| Error::io(path, e))?;
    let mp = manifest_path(path);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    fs::write(&mp, text + "\n").map_err(|e| Error::io(&mp, e))
}

/// Reads an archive and its manifest, checking that they describe the same tensors.
pub fn read_archive(path: &Path) -> Result<(TensorArchive, Manifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let archive = TensorArchive::from_bytes(&bytes, path)?;
    let mp = manifest_path(path);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", mp.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::validation(format!("{}: unknown manifest format {}", mp.display(), manifest.format)));
    }
    let shapes: BTreeMap<String, Vec<usize>> =
        archive.tensors.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect();
    if shapes != manifest.tensors {
        return Err(Error::validation(format!(
            "{} does not match its manifest {}",
            path.display(),
            mp.display()
        )));
    }
    Ok((archive, manifest))
}
