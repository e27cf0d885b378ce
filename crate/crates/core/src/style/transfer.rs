use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::extractor::{ExtractorConfig, FeatureExtractor};
use super::loss::{LossValue, Objective};
use crate::error::{Error, Result};
use crate::nn::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub content_weight: f64,
    pub style_weight: f64,
    pub epochs: usize,
    pub step_size: f64,
    pub extractor: ExtractorConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            content_weight: 1.0,
            style_weight: 1e6,
            epochs: 50,
            step_size: 1e-3,
            extractor: ExtractorConfig::default(),
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.content_weight) || !positive(self.style_weight) {
            return Err(Error::Config("content and style weights must be finite and positive".into()));
        }
        if !positive(self.step_size) {
            return Err(Error::Config("transfer step size must be finite and positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("transfer needs at least one epoch".into()));
        }
        self.extractor.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub image: Array2<f32>,
    /// Loss at the start of every epoch.
    pub trace: Vec<LossValue>,
    /// Loss of the last iterate, before the output clamp.
    pub final_loss: LossValue,
}

impl TransferOutcome {
    pub fn initial_loss(&self) -> LossValue {
        self.trace.first().copied().unwrap_or(self.final_loss)
    }
}

/// Plain gradient descent on the pixels of `content`, minimising
/// `content_weight * content loss + style_weight * style loss` against
/// `style`. The result is clamped to the content image's intensity range.
/// `cfg.epochs = 0` returns the content image unchanged.
pub fn transfer<T: Real>(
    content: ArrayView2<'_, f32>,
    style: ArrayView2<'_, f32>,
    fx: &FeatureExtractor<T>,
    cfg: &TransferConfig,
) -> Result<TransferOutcome> {
    let to_t = |a: ArrayView2<'_, f32>| a.mapv(|v| T::of(v as f64));
    let c = to_t(content);
    let s = to_t(style);
    let objective = Objective::new(fx, c.view(), s.view(), cfg.content_weight, cfg.style_weight)?;
    let step = T::of(cfg.step_size);
    let mut x = c.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let diverged = |epoch: usize, detail: String| Error::Divergence {
        epoch,
        step_size: cfg.step_size,
        detail,
    };
    for epoch in 0..cfg.epochs {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(diverged(epoch, "style transfer produced non-finite pixels".into()));
        }
        let (loss, grad) = objective.loss_and_grad(x.view())?;
        if !loss.total.is_finite() {
            return Err(diverged(epoch, format!("style transfer loss became {}", loss.total)));
        }
        trace.push(loss);
        x.zip_mut_with(&grad, |v, &g| *v -= step * g);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(diverged(cfg.epochs, "style transfer produced non-finite pixels".into()));
    }
    let final_loss = objective.loss(x.view())?;
    if !final_loss.total.is_finite() {
        return Err(diverged(cfg.epochs, format!("style transfer loss became {}", final_loss.total)));
    }
    let (lo, hi) = crate::volume::min_max(content.iter().copied());
    let image = x.mapv(|v| (v.f64() as f32).clamp(lo, hi));
    Ok(TransferOutcome { image, trace, final_loss })
}

/// Builds the extractor a config describes.
pub fn build_extractor<T: Real>(cfg: &TransferConfig) -> Result<FeatureExtractor<T>> {
    FeatureExtractor::new(&cfg.extractor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{distribution_of, wasserstein1};
    use crate::volume::{generate_phantom, slice_volume, PhantomSpec, Plane};

    fn slices(z: usize) -> (Array2<f32>, Array2<f32>) {
        let (b, _) = generate_phantom(&PhantomSpec::domain_b([32, 32, 32], 1)).unwrap();
        let (a, _) = generate_phantom(&PhantomSpec::domain_a([32, 32, 32], 2)).unwrap();
        let sb = slice_volume(&b, Plane::Xy).slices.swap_remove(z);
        let sa = slice_volume(&a, Plane::Xy).slices.swap_remove(z);
        (sb, sa)
    }

    #[test]
    fn identical_target_is_a_fixed_point() {
        let fx = FeatureExtractor::<f32>::new(&ExtractorConfig::default()).unwrap();
        let (img, _) = slices(16);
        let out = transfer(img.view(), img.view(), &fx, &TransferConfig::default()).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.trace.len(), 50);
        assert!(out.trace.iter().all(|l| l.total == 0.0));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let fx = FeatureExtractor::<f32>::new(&ExtractorConfig::default()).unwrap();
        let (c, s) = slices(16);
        let cfg = TransferConfig { epochs: 0, ..Default::default() };
        let out = transfer(c.view(), s.view(), &fx, &cfg).unwrap();
        assert_eq!(out.image, c);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn phantom_slice_moves_toward_the_target() {
        let fx = FeatureExtractor::<f32>::new(&ExtractorConfig::default()).unwrap();
        let (c, s) = slices(14);
        let out = transfer(c.view(), s.view(), &fx, &TransferConfig::default()).unwrap();
        assert!(out.final_loss.total < out.initial_loss().total);
        let increases = out.trace.windows(2).filter(|w| w[1].total > w[0].total).count();
        assert!(increases * 20 <= out.trace.len(), "{increases} increasing steps");
        let target = distribution_of(s.iter().copied(), "s").unwrap();
        let before = wasserstein1(&distribution_of(c.iter().copied(), "c").unwrap(), &target);
        let after = wasserstein1(&distribution_of(out.image.iter().copied(), "t").unwrap(), &target);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn huge_steps_report_divergence() {
        let fx = FeatureExtractor::<f32>::new(&ExtractorConfig::default()).unwrap();
        let (c, s) = slices(16);
        let cfg = TransferConfig { step_size: 1e30, ..Default::default() };
        match transfer(c.view(), s.view(), &fx, &cfg) {
            Err(Error::Divergence { step_size, .. }) => assert_eq!(step_size, 1e30),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
