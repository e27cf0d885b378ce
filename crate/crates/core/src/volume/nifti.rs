//! Minimal single-file NIfTI-1 support (`.nii`, `.nii.gz`) for scalar 3D images.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::{Compression, GzBuilder};
use ndarray::{Array3, ArrayView3, ShapeBuilder};

use super::raw::{RawDtype, RawElement};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

#[derive(Debug, Clone, Copy)]
enum NiftiType {
    U8,
    I8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl NiftiType {
    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => NiftiType::U8,
            4 => NiftiType::I16,
            8 => NiftiType::I32,
            16 => NiftiType::F32,
            64 => NiftiType::F64,
            256 => NiftiType::I8,
            512 => NiftiType::U16,
            768 => NiftiType::U32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            NiftiType::U8 | NiftiType::I8 => 1,
            NiftiType::I16 | NiftiType::U16 => 2,
            NiftiType::I32 | NiftiType::U32 | NiftiType::F32 => 4,
            NiftiType::F64 => 8,
        }
    }

    fn decode<B: ByteOrder>(self, b: &[u8]) -> f64 {
        match self {
            NiftiType::U8 => b[0] as f64,
            NiftiType::I8 => b[0] as i8 as f64,
            NiftiType::I16 => B::read_i16(b) as f64,
            NiftiType::U16 => B::read_u16(b) as f64,
            NiftiType::I32 => B::read_i32(b) as f64,
            NiftiType::U32 => B::read_u32(b) as f64,
            NiftiType::F32 => B::read_f32(b) as f64,
            NiftiType::F64 => B::read_f64(b),
        }
    }
}

fn write_code(dtype: RawDtype) -> (i16, i16) {
    match dtype {
        RawDtype::U8 => (2, 8),
        RawDtype::I16 => (4, 16),
        RawDtype::U16 => (512, 16),
        RawDtype::I32 => (8, 32),
        RawDtype::F32 => (16, 32),
        RawDtype::F64 => (64, 64),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Reads a 3D scalar NIfTI-1 image as `(x, y, z)` with its voxel spacing.
pub fn read_nifti<T: RawElement>(path: &Path) -> Result<(Array3<T>, [f64; 3])> {
    let bytes = read_bytes(path)?;
    let invalid = |msg: String| Error::validation(format!("{}: {msg}", path.display()));
    if bytes.len() < HEADER_SIZE {
        return Err(invalid(format!("file too small for a NIfTI-1 header ({} bytes)", bytes.len())));
    }
    if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse::<T, LittleEndian>(&bytes, path)
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse::<T, BigEndian>(&bytes, path)
    } else {
        Err(invalid("sizeof_hdr is not 348; not a NIfTI-1 file".into()))
    }
}

fn parse<T: RawElement, B: ByteOrder>(bytes: &[u8], path: &Path) -> Result<(Array3<T>, [f64; 3])> {
    let invalid = |msg: String| Error::validation(format!("{}: {msg}", path.display()));
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        return Err(invalid(format!(
            "magic {:?} is not single-file NIfTI-1 (`n+1`)",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = B::read_i16(&bytes[40 + 2 * i..]);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(invalid(format!("dim[0] = {ndim} out of range")));
    }
    let extent = |i: usize| -> usize {
        if i as i16 <= ndim {
            dim[i].max(0) as usize
        } else {
            1
        }
    };
    if (4..=7).any(|i| extent(i) > 1) {
        return Err(invalid(format!("only 3D scalar images are supported, dim = {:?}", &dim[..=ndim as usize])));
    }
    let shape = [extent(1), extent(2), extent(3)];
    let code = B::read_i16(&bytes[70..]);
    let ty = NiftiType::from_code(code).ok_or_else(|| invalid(format!("unsupported datatype code {code}")))?;
    let mut pixdim = [0f64; 3];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = B::read_f32(&bytes[80 + 4 * i..]).abs() as f64;
        if *p == 0.0 {
            *p = 1.0;
        }
    }
    let vox_offset = B::read_f32(&bytes[108..]) as usize;
    let slope = B::read_f32(&bytes[112..]) as f64;
    let inter = B::read_f32(&bytes[116..]) as f64;
    let scaled = slope != 0.0 && (slope != 1.0 || inter != 0.0);

    let n: usize = shape.iter().product();
    let start = vox_offset.max(HEADER_SIZE);
    let end = start + n * ty.size();
    if bytes.len() < end {
        return Err(invalid(format!("payload truncated: need {end} bytes, have {}", bytes.len())));
    }
    let values = bytes[start..end]
        .chunks_exact(ty.size())
        .map(|b| {
            let raw = ty.decode::<B>(b);
            let v = if scaled { slope * raw + inter } else { raw };
            T::from_f64_exact(v).ok_or_else(|| {
                invalid(format!(
                    "value {v} is not representable as {} without loss",
                    T::DTYPE.name()
                ))
            })
        })
        .collect::<Result<Vec<T>>>()?;
    // NIfTI stores x fastest, i.e. column-major for (x, y, z).
    let data = Array3::from_shape_vec((shape[0], shape[1], shape[2]).f(), values)
        .map_err(|e| invalid(e.to_string()))?;
    Ok((data.as_standard_layout().to_owned(), pixdim))
}

/// Writes a 3D image; `.gz` paths are gzip-compressed with a zeroed timestamp.
pub fn write_nifti<T: RawElement>(path: &Path, data: ArrayView3<'_, T>, spacing: [f64; 3]) -> Result<()> {
    let (code, bitpix) = write_code(T::DTYPE);
    let (x, y, z) = data.dim();
    let too_big = |d: usize| d > i16::MAX as usize;
    if too_big(x) || too_big(y) || too_big(z) {
        return Err(Error::validation("NIfTI-1 dimensions must fit in i16"));
    }
    let mut hdr = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut hdr[0..], HEADER_SIZE as i32);
    hdr[38] = b'r';
    for (i, d) in [3i16, x as i16, y as i16, z as i16, 1, 1, 1, 1].iter().enumerate() {
        LittleEndian::write_i16(&mut hdr[40 + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut hdr[70..], code);
    LittleEndian::write_i16(&mut hdr[72..], bitpix);
    let pixdim = [1.0f32, spacing[0] as f32, spacing[1] as f32, spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut hdr[76 + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut hdr[108..], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut hdr[112..], 1.0);
    hdr[123] = 2; // spatial units: mm
    LittleEndian::write_i16(&mut hdr[254..], 1); // sform_code: scanner
    for (row, s) in spacing.iter().enumerate() {
        LittleEndian::write_f32(&mut hdr[280 + 16 * row + 4 * row..], *s as f32);
    }
    hdr[344..348].copy_from_slice(b"n+1\0");

    let mut payload = hdr;
    payload.reserve(data.len() * T::DTYPE.size());
    for &v in data.t().iter() {
        v.write_le(&mut payload);
    }

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let gz = path.extension().is_some_and(|e| e == "gz");
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let result = if gz {
        let mut enc = GzBuilder::new().mtime(0).write(file, Compression::default());
        enc.write_all(&payload).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut file = file;
        file.write_all(&payload)
    };
    result.map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_plain_and_gz() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data = Array3::from_shape_fn((5, 6, 7), |_| rng.random_range(-100.0f32..100.0));
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.nii", "a.nii.gz"] {
            let path = dir.path().join(name);
            write_nifti(&path, data.view(), [0.5, 1.0, 1.5]).unwrap();
            let (back, spacing) = read_nifti::<f32>(&path).unwrap();
            assert_eq!(back, data);
            assert_eq!(spacing, [0.5, 1.0, 1.5]);
        }
    }

    #[test]
    fn x_is_the_fastest_axis_on_disk() {
        let data = Array3::from_shape_fn((2, 2, 2), |(x, y, z)| (x + 2 * y + 4 * z) as u8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.nii");
        write_nifti(&path, data.view(), [1.0; 3]).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[VOX_OFFSET..], &[0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn labels_read_from_float_file_must_be_integral() {
        let data = Array3::from_elem((2, 2, 2), 1.5f32);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nii");
        write_nifti(&path, data.view(), [1.0; 3]).unwrap();
        assert!(read_nifti::<u8>(&path).is_err());
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.nii");
        fs::write(&path, vec![7u8; 400]).unwrap();
        assert!(matches!(read_nifti::<f32>(&path), Err(Error::Validation(_))));
    }
}
