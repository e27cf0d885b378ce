//! Per-voxel rescoring of class logits and the eight-way fusion vote.

use std::collections::BTreeMap;

use ndarray::{Array3, Array4, Axis, Zip};

use crate::error::{Error, Result};
use crate::segment::{LogitsMap, PlaneTag, Variant};
use crate::volume::NUM_CLASSES;

/// Labels after rescoring, optionally with the rescored values.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedLabelMap {
    pub labels: Array3<u8>,
    pub scores: Option<Array4<f32>>,
    pub plane: PlaneTag,
    pub variant: Variant,
}

/// `score_k = p_k * prod_{j != k} (1 - softmax(p)_j)` for one voxel.
pub fn adjusted_scores(p: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = p.map(|v| (v - max).exp());
    let total: f64 = e.iter().sum();
    let soft = e.map(|v| v / total);
    std::array::from_fn(|k| {
        (0..NUM_CLASSES)
            .filter(|&j| j != k)
            .fold(p[k], |acc, j| acc * (1.0 - soft[j]))
    })
}

/// Index of the largest value; ties go to the lowest index (background first).
pub fn argmax_lowest(v: &[f64]) -> u8 {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] > v[best] {
            best = k;
        }
    }
    best as u8
}

fn voxel(scores: &Array4<f32>, x: usize, y: usize, z: usize) -> [f64; NUM_CLASSES] {
    std::array::from_fn(|k| scores[[k, x, y, z]] as f64)
}

/// Rescores every voxel and takes the argmax.
pub fn adjust(logits: &LogitsMap, keep_scores: bool) -> Result<AdjustedLabelMap> {
    if logits.scores.dim().0 != NUM_CLASSES || logits.scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("adjustment needs finite 3-class logits"));
    }
    let [nx, ny, nz] = logits.shape();
    let mut labels = Array3::<u8>::zeros((nx, ny, nz));
    let mut kept = keep_scores.then(|| Array4::<f32>::zeros(logits.scores.dim()));
    Zip::indexed(&mut labels).for_each(|(x, y, z), l| {
        let s = adjusted_scores(voxel(&logits.scores, x, y, z));
        *l = argmax_lowest(&s);
        if let Some(k) = kept.as_mut() {
            for c in 0..NUM_CLASSES {
                k[[c, x, y, z]] = s[c] as f32;
            }
        }
    });
    Ok(AdjustedLabelMap {
        labels,
        scores: kept,
        plane: logits.plane,
        variant: logits.variant,
    })
}

/// Plain argmax of the logits (no rescoring).
pub fn argmax_labels(logits: &LogitsMap) -> Array3<u8> {
    logits
        .scores
        .map_axis(Axis(0), |v| argmax_lowest(&v.iter().map(|&x| x as f64).collect::<Vec<_>>()))
}

/// Voxelwise sum of the three per-plane maps.
pub fn sum_plane_logits(xy: &LogitsMap, yz: &LogitsMap, zx: &LogitsMap) -> Result<LogitsMap> {
    for m in [yz, zx] {
        if m.scores.dim() != xy.scores.dim() {
            return Err(Error::validation(format!(
                "cannot sum score maps of shapes {:?} and {:?}",
                xy.scores.dim(),
                m.scores.dim()
            )));
        }
        if m.variant != xy.variant {
            return Err(Error::validation("cannot sum score maps of different variants"));
        }
    }
    let scores = &xy.scores + &yz.scores + &zx.scores;
    LogitsMap::new(scores, PlaneTag::Sum, xy.variant, xy.scales.clone())
}

/// The eight label maps entering the vote, keyed by plane and variant.
#[derive(Debug, Clone, Default)]
pub struct EnsembleInput {
    maps: BTreeMap<(PlaneTag, Variant), Array3<u8>>,
}

impl EnsembleInput {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, plane: PlaneTag, variant: Variant, labels: Array3<u8>) -> Result<()> {
        if self.maps.insert((plane, variant), labels).is_some() {
            return Err(Error::validation(format!("duplicate label map for ({plane}, {variant})")));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(PlaneTag, Variant), &Array3<u8>)> {
        self.maps.iter()
    }

    pub fn missing(&self) -> Vec<(PlaneTag, Variant)> {
        PlaneTag::ALL
            .iter()
            .flat_map(|&p| Variant::ALL.iter().map(move |&v| (p, v)))
            .filter(|k| !self.maps.contains_key(k))
            .collect()
    }

    fn validate(&self) -> Result<[usize; 3]> {
        let missing = self.missing();
        if !missing.is_empty() {
            let list: Vec<String> = missing.iter().map(|(p, v)| format!("({p}, {v})")).collect();
            return Err(Error::validation(format!(
                "vote needs 8 label maps, {} present; missing {}",
                self.maps.len(),
                list.join(", ")
            )));
        }
        let dims: Vec<_> = self.maps.values().map(|m| m.dim()).collect();
        if dims.iter().any(|d| *d != dims[0]) {
            return Err(Error::validation(format!("label maps differ in shape: {dims:?}")));
        }
        if self.maps.values().any(|m| m.iter().any(|&l| l as usize >= NUM_CLASSES)) {
            return Err(Error::validation("label maps contain labels outside {0,1,2}"));
        }
        let (x, y, z) = dims[0];
        Ok([x, y, z])
    }
}

/// Maps consulted, in order, when the plurality is tied.
pub const DEFAULT_TIE_ORDER: [(PlaneTag, Variant); 2] =
    [(PlaneTag::Sum, Variant::Original), (PlaneTag::Sum, Variant::Transferred)];

/// Plurality over the eight maps. Ties go to the (sum, original) vote if it is
/// among the leaders, then to the (sum, transferred) vote, then to background.
pub fn vote(input: &EnsembleInput) -> Result<Array3<u8>> {
    vote_with(input, &DEFAULT_TIE_ORDER)
}

/// Plurality vote with an explicit tie order; background when no listed map
/// votes for one of the tied labels.
pub fn vote_with(input: &EnsembleInput, tie_order: &[(PlaneTag, Variant)]) -> Result<Array3<u8>> {
    let [x, y, z] = input.validate()?;
    let maps: Vec<&Array3<u8>> = input.maps.values().collect();
    let tie_maps: Vec<&Array3<u8>> = tie_order.iter().map(|k| &input.maps[k]).collect();
    Ok(Array3::from_shape_fn((x, y, z), |idx| {
        let mut counts = [0u8; NUM_CLASSES];
        for m in &maps {
            counts[m[idx] as usize] += 1;
        }
        let top = *counts.iter().max().expect("nonempty");
        let leaders: Vec<u8> = (0..NUM_CLASSES as u8).filter(|&l| counts[l as usize] == top).collect();
        if leaders.len() == 1 {
            return leaders[0];
        }
        tie_maps
            .iter()
            .map(|m| m[idx])
            .find(|l| leaders.contains(l))
            .unwrap_or(0)
    }))
}
