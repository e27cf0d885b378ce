use std::path::PathBuf;

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{read_archive, relu, relu_backward, scoped, Conv2d, ConvCache, MaxPool2d, Params, PoolCache, Real};

/// Convolutions per block in the VGG-16 layout.
const BLOCKS: [usize; 5] = [2, 2, 3, 3, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Channel width of each of the five blocks.
    pub widths: [usize; 5],
    /// 1-based indices of the convolutions whose (rectified) outputs are used.
    pub taps: Vec<usize>,
    /// Seed for the frozen random weights.
    pub seed: u64,
    pub in_channels: usize,
    /// Tensor archive with trained weights (`conv1.weight`, `conv1.bias`, ...)
    /// that replace the random ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            widths: [8, 16, 32, 32, 32],
            taps: vec![2, 4, 7, 10],
            seed: 1234,
            in_channels: 3,
            weights: None,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        let total: usize = BLOCKS.iter().sum();
        if self.taps.is_empty() || self.taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("extractor taps must be a nonempty increasing list".into()));
        }
        if self.taps[0] == 0 || *self.taps.last().unwrap() > total {
            return Err(Error::Config(format!("extractor taps must lie in 1..={total}")));
        }
        if self.widths.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("extractor widths must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen convolutional stack in the VGG pattern (conv-conv-pool-conv-conv-pool-...)
/// with ReLU after every convolution. Grayscale input is replicated across
/// `in_channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor<T> {
    convs: Vec<Conv2d<T>>,
    /// Whether a 2x2 max-pool follows convolution `i` (0-based).
    pool_after: Vec<bool>,
    taps: Vec<usize>,
    in_channels: usize,
}

pub struct ExtractorCache<T> {
    convs: Vec<ConvCache<T>>,
    outputs: Vec<Array4<T>>,
    pools: Vec<Option<PoolCache>>,
}

impl<T: Real> FeatureExtractor<T> {
    pub fn new(cfg: &ExtractorConfig) -> Result<Self> {
        cfg.validate()?;
        let depth = *cfg.taps.last().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut convs = Vec::with_capacity(depth);
        let mut pool_after = Vec::with_capacity(depth);
        let mut cin = cfg.in_channels;
        'outer: for (block, &n) in BLOCKS.iter().enumerate() {
            for i in 0..n {
                if convs.len() == depth {
                    break 'outer;
                }
                convs.push(Conv2d::same(cin, cfg.widths[block], 3, 1, &mut rng));
                cin = cfg.widths[block];
                pool_after.push(i + 1 == n);
            }
        }
        // Nothing after the last tap is evaluated, so its pool is dropped too.
        *pool_after.last_mut().unwrap() = false;
        let mut fx = Self {
            convs,
            pool_after,
            taps: cfg.taps.iter().map(|t| t - 1).collect(),
            in_channels: cfg.in_channels,
        };
        if let Some(path) = &cfg.weights {
            let (archive, _) = read_archive(path)?;
            archive.load_into(&mut fx)?;
        }
        Ok(fx)
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    /// Channel count of every tapped feature map.
    pub fn tap_channels(&self) -> Vec<usize> {
        self.taps.iter().map(|&t| self.convs[t].out_channels()).collect()
    }

    /// `(C, H, W)` of each tap for an `h x w` input.
    pub fn tap_shapes(&self, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = (h, w);
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            if self.taps.contains(&i) {
                out.push((conv.out_channels(), h, w));
            }
            if self.pool_after[i] {
                h /= 2;
                w /= 2;
            }
        }
        out
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let pools = self.pool_after.iter().filter(|p| **p).count();
        let min = 1usize << pools;
        if h < min || w < min {
            return Err(Error::validation(format!(
                "image {h}x{w} is too small for the feature extractor (needs at least {min}x{min})"
            )));
        }
        Ok(())
    }

    fn lift(&self, image: ArrayView2<'_, T>) -> Array4<T> {
        let (h, w) = image.dim();
        Array4::from_shape_fn((1, self.in_channels, h, w), |(_, _, i, j)| image[[i, j]])
    }

    /// Tapped feature maps, without keeping intermediate state.
    pub fn features(&self, image: ArrayView2<'_, T>) -> Result<Vec<Array3<T>>> {
        let (h, w) = image.dim();
        self.check_input(h, w)?;
        let mut x = self.lift(image);
        let mut taps = Vec::with_capacity(self.taps.len());
        for (i, conv) in self.convs.iter().enumerate() {
            x = relu(&conv.infer(&x));
            if self.taps.contains(&i) {
                taps.push(x.index_axis(Axis(0), 0).to_owned());
            }
            if self.pool_after[i] {
                x = MaxPool2d.forward(&x).0;
            }
        }
        Ok(taps)
    }

    pub fn forward(&self, image: ArrayView2<'_, T>) -> Result<(Vec<Array3<T>>, ExtractorCache<T>)> {
        let (h, w) = image.dim();
        self.check_input(h, w)?;
        let mut x = self.lift(image);
        let mut cache = ExtractorCache {
            convs: Vec::with_capacity(self.depth()),
            outputs: Vec::with_capacity(self.depth()),
            pools: Vec::with_capacity(self.depth()),
        };
        let mut taps = Vec::with_capacity(self.taps.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let (y, c) = conv.forward(&x);
            let y = relu(&y);
            cache.convs.push(c);
            if self.taps.contains(&i) {
                taps.push(y.index_axis(Axis(0), 0).to_owned());
            }
            if self.pool_after[i] {
                let (p, pc) = MaxPool2d.forward(&y);
                cache.pools.push(Some(pc));
                cache.outputs.push(y);
                x = p;
            } else {
                cache.pools.push(None);
                cache.outputs.push(y.clone());
                x = y;
            }
        }
        Ok((taps, cache))
    }

    /// Gradient of a scalar with respect to the input image, given its
    /// gradients with respect to each tapped map.
    pub fn backward(&self, cache: &ExtractorCache<T>, dtaps: &[Array3<T>]) -> Array2<T> {
        let mut g: Option<Array4<T>> = None;
        for i in (0..self.depth()).rev() {
            if let Some(pc) = &cache.pools[i] {
                g = g.map(|g| MaxPool2d.backward(pc, &g));
            }
            if let Some(t) = self.taps.iter().position(|&t| t == i) {
                let d = dtaps[t].view().insert_axis(Axis(0));
                g = Some(match g {
                    Some(g) => g + d,
                    None => d.to_owned(),
                });
            }
            let dy = relu_backward(&cache.outputs[i], g.as_ref().expect("last layer is tapped"));
            g = self.convs[i].backward(&cache.convs[i], &dy, None, true);
        }
        g.expect("at least one layer").index_axis(Axis(0), 0).sum_axis(Axis(0))
    }
}

impl<T: Real> Params<T> for FeatureExtractor<T> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        self.convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| scoped(&format!("conv{}", i + 1), c.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        self.convs
            .iter_mut()
            .enumerate()
            .flat_map(|(i, c)| scoped(&format!("conv{}", i + 1), c.params_mut()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_follows_the_vgg_pattern() {
        let fx = FeatureExtractor::<f32>::new(&ExtractorConfig::default()).unwrap();
        assert_eq!(fx.depth(), 10);
        assert_eq!(fx.tap_channels(), vec![8, 16, 32, 32]);
        assert_eq!(fx.tap_shapes(32, 24), vec![(8, 32, 24), (16, 16, 12), (32, 8, 6), (32, 4, 3)]);
        let feats = fx.features(Array2::zeros((32, 24)).view()).unwrap();
        let shapes: Vec<_> = feats.iter().map(|f| f.dim()).collect();
        assert_eq!(shapes, fx.tap_shapes(32, 24));
        assert!(fx.features(Array2::zeros((4, 32)).view()).is_err());
    }

    #[test]
    fn bad_taps_are_rejected() {
        for taps in [vec![], vec![0], vec![3, 2], vec![14]] {
            let cfg = ExtractorConfig { taps, ..Default::default() };
            assert!(FeatureExtractor::<f32>::new(&cfg).is_err());
        }
    }

    #[test]
    fn features_are_deterministic() {
        let fx = FeatureExtractor::<f32>::new(&ExtractorConfig::default()).unwrap();
        let img = Array2::from_shape_fn((16, 16), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 11.0);
        assert_eq!(fx.features(img.view()).unwrap(), fx.features(img.view()).unwrap());
        let again = FeatureExtractor::<f32>::new(&ExtractorConfig::default()).unwrap();
        assert_eq!(fx, again);
    }

    #[test]
    fn weights_file_replaces_the_random_initialisation() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("vgg.safetensors");
        let trained = FeatureExtractor::<f32>::new(&ExtractorConfig { seed: 99, ..Default::default() }).unwrap();
        let archive = crate::nn::TensorArchive::from_model(&trained);
        crate::nn::write_archive(&path, &archive, &archive.manifest("extractor", serde_json::Value::Null)).unwrap();

        let loaded = FeatureExtractor::<f32>::new(&ExtractorConfig { weights: Some(path.clone()), ..Default::default() }).unwrap();
        assert_eq!(loaded, trained);

        // A shallower stack does not match the archive.
        let shallow = ExtractorConfig { taps: vec![2], weights: Some(path), ..Default::default() };
        assert!(matches!(FeatureExtractor::<f32>::new(&shallow), Err(Error::Validation(_))));
    }
}
