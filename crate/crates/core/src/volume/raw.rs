//! Header + payload raw array format.
//!
//! `<stem>.hdr` is UTF-8 text with one `key = value` pair per line; `#` starts a
//! comment. `<stem>.bin` holds the elements little-endian in row-major order
//! (last axis fastest). See `docs/raw-format.md`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use ndarray::{ArrayD, ArrayViewD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &str = "cardioseg-raw";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDtype {
    U8,
    I16,
    U16,
    I32,
    F32,
    F64,
}

impl RawDtype {
    pub fn name(self) -> &'static str {
        match self {
            RawDtype::U8 => "u8",
            RawDtype::I16 => "i16",
            RawDtype::U16 => "u16",
            RawDtype::I32 => "i32",
            RawDtype::F32 => "f32",
            RawDtype::F64 => "f64",
        }
    }

    pub fn size(self) -> usize {
        match self {
            RawDtype::U8 => 1,
            RawDtype::I16 | RawDtype::U16 => 2,
            RawDtype::I32 | RawDtype::F32 => 4,
            RawDtype::F64 => 8,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "u8" => RawDtype::U8,
            "i16" => RawDtype::I16,
            "u16" => RawDtype::U16,
            "i32" => RawDtype::I32,
            "f32" => RawDtype::F32,
            "f64" => RawDtype::F64,
            other => return Err(Error::validation(format!("unsupported raw dtype {other:?}"))),
        })
    }

    /// Decodes one little-endian element into `f64`; every supported dtype is exact in `f64`.
    pub(crate) fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            RawDtype::U8 => b[0] as f64,
            RawDtype::I16 => LittleEndian::read_i16(b) as f64,
            RawDtype::U16 => LittleEndian::read_u16(b) as f64,
            RawDtype::I32 => LittleEndian::read_i32(b) as f64,
            RawDtype::F32 => LittleEndian::read_f32(b) as f64,
            RawDtype::F64 => LittleEndian::read_f64(b),
        }
    }
}

/// Element types that can be stored in raw and NIfTI files.
pub trait RawElement: Copy + Default + 'static {
    const DTYPE: RawDtype;
    fn write_le(self, out: &mut Vec<u8>);
    /// Exact conversion; `None` when `v` is not representable.
    fn from_f64_exact(v: f64) -> Option<Self>;
}

impl RawElement for u8 {
    const DTYPE: RawDtype = RawDtype::U8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn from_f64_exact(v: f64) -> Option<Self> {
        (v.fract() == 0.0 && (0.0..=255.0).contains(&v)).then_some(v as u8)
    }
}

impl RawElement for f32 {
    const DTYPE: RawDtype = RawDtype::F32;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_f64_exact(v: f64) -> Option<Self> {
        let f = v as f32;
        (f as f64 == v || v.is_nan()).then_some(f)
    }
}

impl RawElement for f64 {
    const DTYPE: RawDtype = RawDtype::F64;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_f64_exact(v: f64) -> Option<Self> {
        Some(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawHeader {
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub dtype: RawDtype,
    pub id: Option<String>,
}

fn stem_paths(path: &Path) -> (PathBuf, PathBuf) {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let stem = name
        .strip_suffix(".hdr")
        .or_else(|| name.strip_suffix(".bin"))
        .unwrap_or(name);
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    (dir.join(format!("{stem}.hdr")), dir.join(format!("{stem}.bin")))
}

pub fn write_raw<T: RawElement>(
    path: &Path,
    data: ArrayViewD<'_, T>,
    spacing: &[f64],
    id: Option<&str>,
) -> Result<()> {
    let (hdr_path, bin_path) = stem_paths(path);
    let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(" ");
    let mut header = String::new();
    header.push_str(&format!("# {MAGIC} header\nformat = {MAGIC}\nversion = {VERSION}\n"));
    header.push_str(&format!(
        "shape = {}\n",
        join(&mut data.shape().iter().map(|d| d.to_string()))
    ));
    header.push_str(&format!(
        "spacing = {}\n",
        join(&mut spacing.iter().map(|s| format!("{s:?}")))
    ));
    header.push_str(&format!("dtype = {}\nbyte_order = little\norder = row-major\n", T::DTYPE.name()));
    if let Some(id) = id {
        header.push_str(&format!("id = {id}\n"));
    }
    if let Some(parent) = hdr_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(&hdr_path, header).map_err(|e| Error::io(&hdr_path, e))?;

    let mut payload = Vec::with_capacity(data.len() * T::DTYPE.size());
    // Iteration over a view is in logical row-major order regardless of memory layout.
    for &v in data.iter() {
        v.write_le(&mut payload);
    }
    let file = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&payload)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&bin_path, e))
}

pub fn read_raw_header(path: &Path) -> Result<RawHeader> {
    let (hdr_path, _) = stem_paths(path);
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let mut shape = None;
    let mut spacing = None;
    let mut dtype = None;
    let mut id = None;
    let mut format_ok = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::validation(format!("{}:{}: expected `key = value`", hdr_path.display(), lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| {
            Error::validation(format!("{}: malformed {what}: {value:?}", hdr_path.display()))
        };
        match key {
            "format" => format_ok = value == MAGIC,
            "version" => {
                if value.parse::<u32>().map_err(|_| bad("version"))? != VERSION {
                    return Err(bad("version"));
                }
            }
            "shape" => {
                shape = Some(
                    value
                        .split_whitespace()
                        .map(|t| t.parse::<usize>().map_err(|_| bad("shape")))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "spacing" => {
                spacing = Some(
                    value
                        .split_whitespace()
                        .map(|t| t.parse::<f64>().map_err(|_| bad("spacing")))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "dtype" => dtype = Some(RawDtype::parse(value)?),
            "byte_order" if value != "little" => return Err(bad("byte_order")),
            "order" if value != "row-major" => return Err(bad("order")),
            "id" => id = Some(value.to_string()),
            _ => {}
        }
    }
    if !format_ok {
        return Err(Error::validation(format!(
            "{} is not a {MAGIC} header",
            hdr_path.display()
        )));
    }
    let missing = |k: &str| Error::validation(format!("{} lacks `{k}`", hdr_path.display()));
    Ok(RawHeader {
        shape: shape.ok_or_else(|| missing("shape"))?,
        spacing: spacing.unwrap_or_default(),
        dtype: dtype.ok_or_else(|| missing("dtype"))?,
        id,
    })
}

/// Reads a raw array, converting exactly to `T` or failing.
pub fn read_raw<T: RawElement>(path: &Path) -> Result<(ArrayD<T>, RawHeader)> {
    let header = read_raw_header(path)?;
    let (_, bin_path) = stem_paths(path);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let n: usize = header.shape.iter().product();
    let size = header.dtype.size();
    if bytes.len() != n * size {
        return Err(Error::validation(format!(
            "{} holds {} bytes, header shape {:?} of {} needs {}",
            bin_path.display(),
            bytes.len(),
            header.shape,
            header.dtype.name(),
            n * size
        )));
    }
    let values = decode_exact::<T>(&bytes, header.dtype, &bin_path)?;
    let data = ArrayD::from_shape_vec(IxDyn(&header.shape), values)
        .map_err(|e| Error::validation(e.to_string()))?;
    Ok((data, header))
}

pub(crate) fn decode_exact<T: RawElement>(bytes: &[u8], dtype: RawDtype, what: &Path) -> Result<Vec<T>> {
    bytes
        .chunks_exact(dtype.size())
        .map(|b| {
            let v = dtype.decode_le(b);
            T::from_f64_exact(v).ok_or_else(|| {
                Error::validation(format!(
                    "{}: value {v} stored as {} is not representable as {} without loss",
                    what.display(),
                    dtype.name(),
                    T::DTYPE.name()
                ))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.hdr");
        let data = Array3::<f32>::zeros((4, 4, 4));
        write_raw(&path, data.view().into_dyn(), &[1.0, 1.0, 1.0], Some("zeros")).unwrap();
        let (back, header) = read_raw::<f32>(&path).unwrap();
        assert_eq!(back.len(), 64);
        assert!(back.iter().all(|&v| v == 0.0));
        assert_eq!(header.id.as_deref(), Some("zeros"));
    }

    #[test]
    fn lossy_conversion_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide");
        let data = ndarray::arr1(&[0.1f64, 0.5]).into_dyn();
        write_raw(&path, data.view(), &[1.0], None).unwrap();
        assert!(matches!(read_raw::<f32>(&path), Err(Error::Validation(_))));
        let halves = ndarray::arr1(&[0.25f64, 0.5]).into_dyn();
        write_raw(&path, halves.view(), &[1.0], None).unwrap();
        assert_eq!(read_raw::<f32>(&path).unwrap().0[0], 0.25);
    }

    #[test]
    fn truncated_payload_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.hdr");
        let data = Array3::<u8>::zeros((2, 2, 2));
        write_raw(&path, data.view().into_dyn(), &[1.0; 3], None).unwrap();
        fs::write(dir.path().join("t.bin"), [0u8; 7]).unwrap();
        assert!(read_raw::<u8>(&path).is_err());
    }

    #[test]
    fn header_is_plain_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h");
        let data = Array3::<u8>::zeros((2, 3, 4));
        write_raw(&path, data.view().into_dyn(), &[0.5, 1.0, 2.0], Some("case")).unwrap();
        let text = fs::read_to_string(dir.path().join("h.hdr")).unwrap();
        assert!(text.contains("shape = 2 3 4"));
        assert!(text.contains("spacing = 0.5 1.0 2.0"));
        assert!(text.contains("dtype = u8"));
    }
}
