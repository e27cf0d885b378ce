//! Volumes, label volumes and tri-planar slice stacks.
//!
//! Array axes are `(x, y, z)`. Slicing conventions:
//!
//! | plane | normal | slice shape |
//! |-------|--------|-------------|
//! | `xy`  | z      | `(x, y)`    |
//! | `yz`  | x      | `(y, z)`    |
//! | `zx`  | y      | `(z, x)`    |

mod nifti;
pub mod phantom;
mod raw;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::nifti::{read_nifti, write_nifti};
pub use self::phantom::{generate_phantom, Domain, IntensityMap, PhantomSpec};
pub use self::raw::{read_raw, write_raw, RawDtype, RawElement, RawHeader};

pub const BACKGROUND: u8 = 0;
pub const MYOCARDIUM: u8 = 1;
pub const BLOOD_POOL: u8 = 2;
pub const NUM_CLASSES: usize = 3;

/// A 3D scalar intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: Array3<f32>,
    /// Voxel size in mm along x, y, z.
    pub spacing: [f64; 3],
    pub id: String,
}

impl Volume {
    pub fn new(data: Array3<f32>, spacing: [f64; 3], id: impl Into<String>) -> Result<Self> {
        if data.shape().contains(&0) {
            return Err(Error::validation(format!(
                "volume dimensions must be >= 1, got {:?}",
                data.shape()
            )));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::validation(format!(
                "voxel spacing must be positive, got {spacing:?}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "volume contains a non-finite intensity at flat index {pos}"
            )));
        }
        Ok(Self {
            data,
            spacing,
            id: id.into(),
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        dims3(self.data.dim())
    }

    /// Rescales intensities to `[0, 1]`. Constant volumes map to zero.
    pub fn min_max_normalized(&self) -> Volume {
        let (lo, hi) = min_max(self.data.iter().copied());
        let span = hi - lo;
        let data = if span > 0.0 {
            self.data.mapv(|v| (v - lo) / span)
        } else {
            Array3::zeros(self.data.dim())
        };
        Volume {
            data,
            spacing: self.spacing,
            id: self.id.clone(),
        }
    }
}

/// Integer label grid co-registered with a [`Volume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    pub data: Array3<u8>,
    pub id: String,
}

impl LabelVolume {
    pub fn new(data: Array3<u8>, id: impl Into<String>) -> Result<Self> {
        if let Some(v) = data.iter().find(|&&v| v as usize >= NUM_CLASSES) {
            return Err(Error::validation(format!(
                "label value {v} outside {{0,1,2}}"
            )));
        }
        Ok(Self {
            data,
            id: id.into(),
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        dims3(self.data.dim())
    }

    pub fn check_pairs_with(&self, v: &Volume) -> Result<()> {
        if self.shape() != v.shape() {
            return Err(Error::validation(format!(
                "label shape {:?} does not match volume shape {:?}",
                self.shape(),
                v.shape()
            )));
        }
        Ok(())
    }

    /// Binary mask of one label value.
    pub fn mask(&self, label: u8) -> Array3<bool> {
        self.data.mapv(|v| v == label)
    }
}

/// One of the three orthogonal slicing planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    Yz,
    Zx,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Yz, Plane::Zx];

    /// Axis index of the plane normal.
    pub fn normal_axis(self) -> usize {
        match self {
            Plane::Xy => 2,
            Plane::Yz => 0,
            Plane::Zx => 1,
        }
    }

    /// Shape of one slice cut from a volume of `shape`.
    pub fn slice_shape(self, shape: [usize; 3]) -> (usize, usize) {
        let [x, y, z] = shape;
        match self {
            Plane::Xy => (x, y),
            Plane::Yz => (y, z),
            Plane::Zx => (z, x),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Plane::Xy => "xy",
            Plane::Yz => "yz",
            Plane::Zx => "zx",
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(Plane::Xy),
            "yz" => Ok(Plane::Yz),
            "zx" => Ok(Plane::Zx),
            other => Err(Error::validation(format!("unknown plane {other:?}"))),
        }
    }
}

/// Ordered 2D cross-sections of a 3D array along one plane normal.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack<T = f32> {
    pub plane: Plane,
    pub slices: Vec<Array2<T>>,
    pub source_shape: [usize; 3],
    pub source_id: String,
    pub spacing: [f64; 3],
}

impl<T: Clone + Default> SliceStack<T> {
    pub fn from_array(
        data: ArrayView3<'_, T>,
        plane: Plane,
        source_id: impl Into<String>,
        spacing: [f64; 3],
    ) -> Self {
        Self {
            plane,
            slices: cut_slices(data, plane),
            source_shape: dims3(data.dim()),
            source_id: source_id.into(),
            spacing,
        }
    }

    pub fn to_array(&self) -> Result<Array3<T>> {
        assemble_slices(&self.slices, self.plane, self.source_shape)
    }
}

pub fn slice_volume(v: &Volume, plane: Plane) -> SliceStack<f32> {
    SliceStack::from_array(v.data.view(), plane, v.id.clone(), v.spacing)
}

pub fn slice_labels(l: &LabelVolume, plane: Plane, spacing: [f64; 3]) -> SliceStack<u8> {
    SliceStack::from_array(l.data.view(), plane, l.id.clone(), spacing)
}

/// Inverse of [`slice_volume`].
pub fn reassemble(stack: &SliceStack<f32>) -> Result<Volume> {
    let data = stack.to_array()?;
    Volume::new(data, stack.spacing, stack.source_id.clone())
}

/// Cuts every cross-section of `data` along the plane normal.
pub fn cut_slices<T: Clone>(data: ArrayView3<'_, T>, plane: Plane) -> Vec<Array2<T>> {
    let axis = Axis(plane.normal_axis());
    data.axis_iter(axis)
        .map(|s| match plane {
            // index_axis on y leaves (x, z); the slice is stored as (z, x).
            Plane::Zx => s.t().to_owned(),
            _ => s.to_owned(),
        })
        .collect()
}

/// Stacks slices back into a 3D array of `shape`.
pub fn assemble_slices<T: Clone + Default>(
    slices: &[Array2<T>],
    plane: Plane,
    shape: [usize; 3],
) -> Result<Array3<T>> {
    let extent = shape[plane.normal_axis()];
    if slices.len() != extent {
        return Err(Error::validation(format!(
            "{plane} stack has {} slices but the source extent along the normal is {extent}",
            slices.len()
        )));
    }
    let expected = plane.slice_shape(shape);
    let mut out = Array3::<T>::default(shape);
    for (i, s) in slices.iter().enumerate() {
        if s.dim() != expected {
            return Err(Error::validation(format!(
                "{plane} slice {i} has shape {:?}, expected {expected:?}",
                s.dim()
            )));
        }
        let mut dst = out.index_axis_mut(Axis(plane.normal_axis()), i);
        match plane {
            Plane::Zx => dst.assign(&s.t()),
            _ => dst.assign(s),
        }
    }
    Ok(out)
}

/// Reassembles per-slice channel maps `(c, h, w)` into a `(c, x, y, z)` array.
pub fn assemble_channel_slices<T: Clone + Default>(
    slices: &[ndarray::Array3<T>],
    plane: Plane,
    shape: [usize; 3],
) -> Result<Array4<T>> {
    let channels = slices.first().map(|s| s.dim().0).unwrap_or(0);
    let [x, y, z] = shape;
    let mut out = Array4::<T>::default((channels, x, y, z));
    for c in 0..channels {
        let per_channel: Vec<Array2<T>> = slices
            .iter()
            .map(|s| {
                if s.dim().0 != channels {
                    Err(Error::validation("slices disagree on channel count"))
                } else {
                    Ok(s.index_axis(Axis(0), c).to_owned())
                }
            })
            .collect::<Result<_>>()?;
        out.index_axis_mut(Axis(0), c)
            .assign(&assemble_slices(&per_channel, plane, shape)?);
    }
    Ok(out)
}

/// On-disk volume encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeFormat {
    Nifti,
    Raw,
}

impl VolumeFormat {
    pub fn infer(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?;
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            Some(VolumeFormat::Nifti)
        } else if name.ends_with(".hdr") || name.ends_with(".bin") {
            Some(VolumeFormat::Raw)
        } else {
            None
        }
    }

    /// File name used for a volume with the given stem.
    pub fn file_name(self, stem: &str) -> String {
        match self {
            VolumeFormat::Nifti => format!("{stem}.nii"),
            VolumeFormat::Raw => format!("{stem}.hdr"),
        }
    }
}

impl FromStr for VolumeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nifti" => Ok(VolumeFormat::Nifti),
            "raw" => Ok(VolumeFormat::Raw),
            other => Err(Error::validation(format!("unknown volume format {other:?}"))),
        }
    }
}

/// Splits a volume path into `(directory, stem, extension)`.
fn split_volume_path(path: &Path) -> (PathBuf, String, &'static str) {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    for ext in [".nii.gz", ".nii", ".hdr", ".bin"] {
        if let Some(stem) = name.strip_suffix(ext) {
            return (dir, stem.to_string(), ext);
        }
    }
    (dir, name.to_string(), "")
}

/// Path of the label sidecar belonging to a volume file:
/// `case.nii.gz` → `case.label.nii.gz`, `case.hdr` → `case.label.hdr`.
pub fn label_sidecar_path(path: &Path) -> PathBuf {
    let (dir, stem, ext) = split_volume_path(path);
    let ext = if ext == ".bin" { ".hdr" } else { ext };
    dir.join(format!("{stem}.label{ext}"))
}

fn id_from_path(path: &Path) -> String {
    split_volume_path(path).1
}

/// Loads a volume and, when a sidecar exists, its labels.
pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<(Volume, Option<LabelVolume>)> {
    let volume = load_intensities(path, format)?;
    let sidecar = label_sidecar_path(path);
    let sidecar_exists = match format {
        VolumeFormat::Nifti => sidecar.exists(),
        VolumeFormat::Raw => sidecar.exists() && sidecar.with_extension("bin").exists(),
    };
    let labels = if sidecar_exists {
        let labels = load_labels(&sidecar, format, &volume.id)?;
        labels.check_pairs_with(&volume)?;
        Some(labels)
    } else {
        None
    };
    Ok((volume, labels))
}

pub fn load_intensities(path: &Path, format: VolumeFormat) -> Result<Volume> {
    match format {
        VolumeFormat::Raw => {
            let (data, header) = read_raw::<f32>(path)?;
            let data = into_3d(data, path)?;
            let spacing = spacing3(&header.spacing, path)?;
            let id = header.id.clone().unwrap_or_else(|| id_from_path(path));
            Volume::new(data, spacing, id)
        }
        VolumeFormat::Nifti => {
            let (data, spacing) = read_nifti::<f32>(path)?;
            Volume::new(data, spacing, id_from_path(path))
        }
    }
}

pub fn load_labels(path: &Path, format: VolumeFormat, id: &str) -> Result<LabelVolume> {
    let data = match format {
        VolumeFormat::Raw => into_3d(read_raw::<u8>(path)?.0, path)?,
        VolumeFormat::Nifti => read_nifti::<u8>(path)?.0,
    };
    LabelVolume::new(data, id)
}

/// Writes a volume and, if given, its label sidecar.
pub fn save_volume(
    path: &Path,
    format: VolumeFormat,
    volume: &Volume,
    labels: Option<&LabelVolume>,
) -> Result<()> {
    match format {
        VolumeFormat::Raw => write_raw(
            path,
            volume.data.view().into_dyn(),
            &volume.spacing,
            Some(&volume.id),
        )?,
        VolumeFormat::Nifti => write_nifti(path, volume.data.view(), volume.spacing)?,
    }
    if let Some(labels) = labels {
        labels.check_pairs_with(volume)?;
        save_labels(&label_sidecar_path(path), format, labels, volume.spacing)?;
    }
    Ok(())
}

pub fn save_labels(
    path: &Path,
    format: VolumeFormat,
    labels: &LabelVolume,
    spacing: [f64; 3],
) -> Result<()> {
    match format {
        VolumeFormat::Raw => write_raw(path, labels.data.view().into_dyn(), &spacing, Some(&labels.id)),
        VolumeFormat::Nifti => write_nifti(path, labels.data.view(), spacing),
    }
}

fn into_3d<T>(data: ndarray::ArrayD<T>, path: &Path) -> Result<Array3<T>> {
    let shape = data.shape().to_vec();
    data.into_dimensionality().map_err(|_| {
        Error::validation(format!(
            "{} holds a {}-d array {shape:?}, expected 3-d",
            path.display(),
            shape.len()
        ))
    })
}

fn spacing3(spacing: &[f64], path: &Path) -> Result<[f64; 3]> {
    spacing.try_into().map_err(|_| {
        Error::validation(format!(
            "{} declares {} spacing values, expected 3",
            path.display(),
            spacing.len()
        ))
    })
}

pub(crate) fn dims3(d: (usize, usize, usize)) -> [usize; 3] {
    [d.0, d.1, d.2]
}

pub(crate) fn min_max(values: impl Iterator<Item = f32>) -> (f32, f32) {
    values.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}
