use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsppConfig {
    pub rates: [usize; 3],
    pub pointwise_branch: bool,
    pub image_pooling: bool,
    /// Output channels of every branch.
    pub branch_width: usize,
    /// Width of the first two head convolutions.
    pub head_widths: [usize; 2],
    pub dropout: [f64; 2],
    pub classes: usize,
}

impl Default for AsppConfig {
    fn default() -> Self {
        Self {
            rates: [6, 12, 18],
            pointwise_branch: true,
            image_pooling: true,
            branch_width: 64,
            head_widths: [64, 32],
            dropout: [0.5, 0.1],
            classes: 3,
        }
    }
}

impl AsppConfig {
    pub fn branch_count(&self) -> usize {
        3 + self.pointwise_branch as usize + self.image_pooling as usize
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.rates;
        if a == 0 || b == 0 || c == 0 || a == b || b == c || a == c {
            return Err(Error::Config(format!("atrous rates {:?} must be positive and distinct", self.rates)));
        }
        if self.branch_width == 0 || self.head_widths.contains(&0) || self.classes < 2 {
            return Err(Error::Config("ASPP widths must be positive and classes >= 2".into()));
        }
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config(format!("dropout rates {:?} must lie in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Residual encoder: a stem followed by one stride-2 stage per halving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stem_width: usize,
    /// Width of each downsampling stage; the output stride is `2^len`.
    pub stage_widths: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            stem_width: 16,
            stage_widths: vec![32, 64, 64],
        }
    }
}

impl EncoderConfig {
    pub fn output_stride(&self) -> usize {
        1 << self.stage_widths.len()
    }

    pub fn out_channels(&self) -> usize {
        self.stage_widths.last().copied().unwrap_or(self.stem_width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem_width == 0 || self.stage_widths.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub joint_epochs: usize,
    pub joint_lr: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            joint_epochs: 20,
            joint_lr: 0.01,
            finetune_epochs: 20,
            finetune_lr: 0.002,
            batch_size: 8,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.joint_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("joint epochs and batch size must be positive".into()));
        }
        if !(self.joint_lr > 0.0 && self.finetune_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1) and weight decay be >= 0".into()));
        }
        Ok(())
    }
}

/// Polynomial decay without exponent: `base * (1 - epoch / max_epoch)`.
pub fn poly_lr(base: f64, epoch: usize, max_epoch: usize) -> f64 {
    base * (1.0 - epoch as f64 / max_epoch as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub scale_range: [f64; 2],
    pub crop: [usize; 2],
    pub flip_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: [f64; 2],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            scale_range: [0.5, 2.0],
            crop: [480, 480],
            flip_prob: 0.5,
            blur_prob: 0.5,
            blur_sigma: [0.1, 1.0],
        }
    }
}

impl AugmentationConfig {
    /// No rescaling, flipping or blurring; crops of the given size.
    pub fn identity(crop: [usize; 2]) -> Self {
        Self {
            scale_range: [1.0, 1.0],
            crop,
            flip_prob: 0.0,
            blur_prob: 0.0,
            blur_sigma: [0.1, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("scale range {:?} must be positive and ordered", self.scale_range)));
        }
        if self.crop.contains(&0) {
            return Err(Error::Config("crop size must be positive".into()));
        }
        let p = |v: f64| (0.0..=1.0).contains(&v);
        if !p(self.flip_prob) || !p(self.blur_prob) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        let [s0, s1] = self.blur_sigma;
        if !(s0 > 0.0 && s0 <= s1) {
            return Err(Error::Config("blur sigma range must be positive and ordered".into()));
        }
        Ok(())
    }
}
