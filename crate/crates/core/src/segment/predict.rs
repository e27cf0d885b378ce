use std::fmt;

use ndarray::{s, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::augment::resize_image;
use super::model::SegNet;
use crate::error::{Error, Result};
use crate::nn::{softmax_channels, Resize};
use crate::volume::{assemble_channel_slices, Plane, SliceStack, NUM_CLASSES};

/// Which image a score map was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Transferred,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Original, Variant::Transferred];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Transferred => "transferred",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single plane or the sum over all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneTag {
    Xy,
    Yz,
    Zx,
    Sum,
}

impl PlaneTag {
    pub const ALL: [PlaneTag; 4] = [PlaneTag::Xy, PlaneTag::Yz, PlaneTag::Zx, PlaneTag::Sum];

    pub fn as_str(self) -> &'static str {
        match self {
            PlaneTag::Xy => "xy",
            PlaneTag::Yz => "yz",
            PlaneTag::Zx => "zx",
            PlaneTag::Sum => "sum",
        }
    }
}

impl From<Plane> for PlaneTag {
    fn from(p: Plane) -> Self {
        match p {
            Plane::Xy => PlaneTag::Xy,
            Plane::Yz => PlaneTag::Yz,
            Plane::Zx => PlaneTag::Zx,
        }
    }
}

impl fmt::Display for PlaneTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How per-scale outputs are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    #[default]
    Logits,
    Probabilities,
}

/// Per-voxel class scores `(class, x, y, z)` with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsMap {
    pub scores: Array4<f32>,
    pub plane: PlaneTag,
    pub variant: Variant,
    pub scales: Vec<f64>,
}

impl LogitsMap {
    pub fn new(scores: Array4<f32>, plane: PlaneTag, variant: Variant, scales: Vec<f64>) -> Result<Self> {
        if scores.dim().0 != NUM_CLASSES {
            return Err(Error::validation(format!(
                "score map has {} channels, expected {NUM_CLASSES}",
                scores.dim().0
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("score map contains non-finite values"));
        }
        Ok(Self {
            scores,
            plane,
            variant,
            scales,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        let (_, x, y, z) = self.scores.dim();
        [x, y, z]
    }
}

const BATCH: usize = 16;

/// Scores for each slice: every slice is resized by each scale, segmented,
/// resized back and accumulated in scale order.
pub fn predict_slices(model: &SegNet<f32>, slices: &[ndarray::Array2<f32>], scales: &[f64], mode: ScoreMode) -> Result<Vec<Array3<f32>>> {
    if scales.is_empty() {
        return Err(Error::validation("at least one inference scale is required"));
    }
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::validation(format!("inference scale {s} must be positive")));
    }
    let mut out: Vec<Array3<f32>> = slices
        .iter()
        .map(|s| Array3::zeros((NUM_CLASSES, s.dim().0, s.dim().1)))
        .collect();
    // Group equally sized slices into batches.
    let mut order: Vec<usize> = (0..slices.len()).collect();
    order.sort_by_key(|&i| slices[i].dim());
    let groups: Vec<Vec<usize>> = order
        .chunk_by(|&a, &b| slices[a].dim() == slices[b].dim())
        .flat_map(|g| g.chunks(BATCH).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect();
    for &scale in scales {
        for group in &groups {
            let (h, w) = slices[group[0]].dim();
            let size = (
                ((h as f64 * scale).round() as usize).max(1),
                ((w as f64 * scale).round() as usize).max(1),
            );
            let mut x = Array4::<f32>::zeros((group.len(), 1, size.0, size.1));
            for (k, &i) in group.iter().enumerate() {
                x.slice_mut(s![k, 0, .., ..]).assign(&resize_image(slices[i].view(), size));
            }
            let mut y = model.infer(&x);
            if mode == ScoreMode::Probabilities {
                y = softmax_channels(&y);
            }
            let y = Resize::new(size, (h, w)).forward(&y);
            for (k, &i) in group.iter().enumerate() {
                out[i] += &y.index_axis(Axis(0), k);
            }
        }
    }
    Ok(out)
}

/// Multi-scale scores for a whole stack, reassembled into volume space.
pub fn predict_multiscale(
    model: &SegNet<f32>,
    stack: &SliceStack<f32>,
    scales: &[f64],
    mode: ScoreMode,
    variant: Variant,
) -> Result<LogitsMap> {
    let per_slice = predict_slices(model, &stack.slices, scales, mode)?;
    let scores = assemble_channel_slices(&per_slice, stack.plane, stack.source_shape)?;
    LogitsMap::new(scores, stack.plane.into(), variant, scales.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::config::{AsppConfig, EncoderConfig};
    use crate::segment::model::build_backbone;
    use crate::volume::{generate_phantom, slice_volume, PhantomSpec, Plane};
    use ndarray::Array2;

    fn model() -> SegNet<f32> {
        let aspp = AsppConfig {
            rates: [1, 2, 3],
            branch_width: 4,
            head_widths: [6, 5],
            ..Default::default()
        };
        let enc = EncoderConfig { in_channels: 1, stem_width: 4, stage_widths: vec![6] };
        build_backbone(&aspp, &enc, [12, 12], 5).unwrap()
    }

    #[test]
    fn scale_accumulation_contract() {
        let m = model();
        let (v, _) = generate_phantom(&PhantomSpec::domain_a([12, 12, 12], 2)).unwrap();
        let stack = slice_volume(&v, Plane::Zx);
        let one = predict_multiscale(&m, &stack, &[1.0], ScoreMode::Logits, Variant::Original).unwrap();
        assert_eq!(one.shape(), [12, 12, 12]);
        assert_eq!(one.plane, PlaneTag::Zx);

        let direct = m.infer(&stack.slices[3].clone().insert_axis(Axis(0)).insert_axis(Axis(0)));
        let got = one.scores.index_axis(Axis(2), 3);
        for c in 0..NUM_CLASSES {
            for x in 0..12 {
                for z in 0..12 {
                    assert_eq!(got[[c, x, z]], direct[[0, c, z, x]]);
                }
            }
        }

        let twice = predict_multiscale(&m, &stack, &[1.0, 1.0], ScoreMode::Logits, Variant::Original).unwrap();
        assert_eq!(twice.scores, &one.scores * 2.0);

        let probs = predict_multiscale(&m, &stack, &[0.75, 1.5], ScoreMode::Probabilities, Variant::Original).unwrap();
        for s in probs.scores.sum_axis(Axis(0)).iter() {
            assert!((s - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn bad_scales_are_rejected() {
        let m = model();
        let slices = vec![Array2::<f32>::zeros((12, 12))];
        for scales in [vec![], vec![1.0, 0.0], vec![-0.5], vec![f64::NAN]] {
            assert!(matches!(predict_slices(&m, &slices, &scales, ScoreMode::Logits), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn mixed_slice_shapes_are_batched_separately() {
        let m = model();
        let slices = vec![Array2::<f32>::zeros((12, 10)), Array2::<f32>::ones((9, 12)), Array2::<f32>::zeros((12, 10))];
        let out = predict_slices(&m, &slices, &[1.0], ScoreMode::Logits).unwrap();
        assert_eq!(out[0].dim(), (3, 12, 10));
        assert_eq!(out[1].dim(), (3, 9, 12));
        assert_eq!(out[0], out[2]);
    }
}
