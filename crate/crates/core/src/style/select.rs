use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::domain::StyleLibrary;
use crate::error::{Error, Result};
use crate::volume::{Plane, NUM_CLASSES};

/// Shares of background, myocardium and blood pool within one slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelFractionVector(pub [f64; 3]);

impl LabelFractionVector {
    pub fn new(f: [f64; 3]) -> Result<Self> {
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("label fractions {f:?} must lie in [0,1] and sum to 1")));
        }
        Ok(Self(f))
    }

    pub fn from_labels(labels: ArrayView2<'_, u8>) -> Result<Self> {
        let mut counts = [0usize; NUM_CLASSES];
        for &l in labels {
            *counts
                .get_mut(l as usize)
                .ok_or_else(|| Error::validation(format!("label {l} out of range")))? += 1;
        }
        let n = labels.len().max(1) as f64;
        Self::new(counts.map(|c| c as f64 / n))
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0.iter().zip(other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// A slice of a library volume.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceKey {
    pub sample_id: String,
    pub plane: Plane,
    pub index: usize,
}

/// Library slice whose label fractions are closest (Euclidean) to the test
/// slice's; ties go to the smallest `(sample id, plane, index)`. With `plane`
/// set, only slices cut along that plane are considered.
pub fn select_style_target<'a>(
    test: &LabelFractionVector,
    library: &StyleLibrary,
    fractions: &'a BTreeMap<SliceKey, LabelFractionVector>,
    plane: Option<Plane>,
) -> Result<(&'a SliceKey, f64)> {
    let mut best: Option<(&SliceKey, f64)> = None;
    for (key, f) in fractions {
        if !library.contains(&key.sample_id) || plane.is_some_and(|p| p != key.plane) {
            continue;
        }
        let d = test.distance(f);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((key, d));
        }
    }
    best.ok_or_else(|| Error::validation("style library has no candidate slices"))
}
