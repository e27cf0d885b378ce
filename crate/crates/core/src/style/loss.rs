use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayView2, Zip};

use super::extractor::FeatureExtractor;
use crate::error::{Error, Result};
use crate::nn::Real;

/// Channel inner products normalised by `C * H * W`.
pub fn gram<T: Real>(f: &Array3<T>) -> Array2<T> {
    let (c, h, w) = f.dim();
    let f = f.as_standard_layout();
    let m = f.view().into_shape_with_order((c, h * w)).expect("contiguous");
    let mut g = Array2::zeros((c, c));
    general_mat_mul(T::of(1.0 / (c * h * w) as f64), &m, &m.t(), T::zero(), &mut g);
    g
}

fn sq_dist<T: Real>(a: impl IntoIterator<Item = T>, b: impl IntoIterator<Item = T>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum()
}

/// `sum_j |phi_j(a) - phi_j(b)|^2 / (C_j H_j W_j)`.
pub fn content_loss<T: Real>(generated: ArrayView2<'_, T>, content: ArrayView2<'_, T>, fx: &FeatureExtractor<T>) -> Result<f64> {
    if generated.dim() != content.dim() {
        return Err(Error::validation(format!(
            "content loss needs equal shapes, got {:?} and {:?}",
            generated.dim(),
            content.dim()
        )));
    }
    let a = fx.features(generated)?;
    let b = fx.features(content)?;
    Ok(a.iter().zip(&b).map(|(x, y)| sq_dist(x.iter().copied(), y.iter().copied()) / x.len() as f64).sum())
}

/// `sum_j |G_j(a) - G_j(b)|_F^2`; the two images may differ in size.
pub fn style_loss<T: Real>(generated: ArrayView2<'_, T>, style: ArrayView2<'_, T>, fx: &FeatureExtractor<T>) -> Result<f64> {
    let a = fx.features(generated)?;
    let b = fx.features(style)?;
    gram_distance(&a.iter().map(gram).collect::<Vec<_>>(), &b.iter().map(gram).collect::<Vec<_>>())
}

fn gram_distance<T: Real>(a: &[Array2<T>], b: &[Array2<T>]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.dim() != y.dim() {
            return Err(Error::validation(format!(
                "Gram matrices differ in size: {:?} vs {:?}",
                x.dim(),
                y.dim()
            )));
        }
        total += sq_dist(x.iter().copied(), y.iter().copied());
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossValue {
    pub content: f64,
    pub style: f64,
    pub total: f64,
}

/// Weighted content + style objective with precomputed targets.
pub struct Objective<'a, T> {
    fx: &'a FeatureExtractor<T>,
    content_features: Vec<Array3<T>>,
    style_grams: Vec<Array2<T>>,
    pub content_weight: f64,
    pub style_weight: f64,
}

impl<'a, T: Real> Objective<'a, T> {
    pub fn new(
        fx: &'a FeatureExtractor<T>,
        content: ArrayView2<'_, T>,
        style: ArrayView2<'_, T>,
        content_weight: f64,
        style_weight: f64,
    ) -> Result<Self> {
        Ok(Self {
            fx,
            content_features: fx.features(content)?,
            style_grams: fx.features(style)?.iter().map(gram).collect(),
            content_weight,
            style_weight,
        })
    }

    fn value(&self, feats: &[Array3<T>]) -> Result<LossValue> {
        let content = feats
            .iter()
            .zip(&self.content_features)
            .map(|(a, b)| {
                if a.dim() != b.dim() {
                    return Err(Error::validation("generated and content images differ in shape"));
                }
                Ok(sq_dist(a.iter().copied(), b.iter().copied()) / a.len() as f64)
            })
            .sum::<Result<f64>>()?;
        let style = gram_distance(&feats.iter().map(gram).collect::<Vec<_>>(), &self.style_grams)?;
        Ok(LossValue {
            content,
            style,
            total: self.content_weight * content + self.style_weight * style,
        })
    }

    pub fn loss(&self, image: ArrayView2<'_, T>) -> Result<LossValue> {
        self.value(&self.fx.features(image)?)
    }

    /// Loss and its gradient with respect to every pixel.
    pub fn loss_and_grad(&self, image: ArrayView2<'_, T>) -> Result<(LossValue, Array2<T>)> {
        let (feats, cache) = self.fx.forward(image)?;
        let value = self.value(&feats)?;
        let dtaps: Vec<Array3<T>> = feats
            .iter()
            .zip(&self.content_features)
            .zip(&self.style_grams)
            .map(|((f, fc), gs)| {
                let (c, h, w) = f.dim();
                let n = (c * h * w) as f64;
                // d/dF of alpha |F - Fc|^2 / n
                let mut d = (f - fc) * T::of(2.0 * self.content_weight / n);
                // d/dF of beta |F F^T / n - Gs|^2 = 4 beta / n (G - Gs) F
                let diff = gram(f) - gs;
                let fm = f.view().into_shape_with_order((c, h * w)).expect("contiguous");
                let mut ds = Array2::zeros((c, h * w));
                general_mat_mul(T::of(4.0 * self.style_weight / n), &diff, &fm, T::zero(), &mut ds);
                let ds = ds.into_shape_with_order((c, h, w)).expect("sizes agree");
                Zip::from(&mut d).and(&ds).for_each(|a, &b| *a += b);
                d
            })
            .collect();
        Ok((value, self.fx.backward(&cache, &dtaps)))
    }
}
