use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Volume};

/// Which voxels a distribution was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelCondition {
    All,
    Label(u8),
}

#[derive(Debug, Clone, PartialEq)]
enum Support {
    /// Sorted values; `cum` holds normalised cumulative weights when weighted.
    Samples { values: Vec<f64>, cum: Option<Vec<f64>> },
    /// Mass spread uniformly inside each bin.
    Histogram { edges: Vec<f64>, cum: Vec<f64> },
}

/// Empirical 1D intensity distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityDistribution {
    support: Support,
    pub label_condition: LabelCondition,
    pub source_id: String,
}

impl IntensityDistribution {
    /// Equal-weight empirical distribution.
    pub fn from_samples(mut values: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("empty intensity distribution"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("intensity distribution has non-finite values"));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self {
            support: Support::Samples { values, cum: None },
            label_condition: LabelCondition::All,
            source_id: source_id.into(),
        })
    }

    /// Discrete distribution with point masses `(position, weight)`.
    pub fn from_weighted(mut points: Vec<(f64, f64)>, source_id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::validation("empty intensity distribution"));
        }
        if points
            .iter()
            .any(|(x, w)| !x.is_finite() || !w.is_finite() || *w < 0.0)
        {
            return Err(Error::validation("weighted points must be finite with weights >= 0"));
        }
        let total: f64 = points.iter().map(|p| p.1).sum();
        if total <= 0.0 {
            return Err(Error::validation("weights must have a positive sum"));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let cum = points
            .iter()
            .map(|(_, w)| {
                acc += w;
                acc / total
            })
            .collect();
        Ok(Self {
            support: Support::Samples {
                values: points.into_iter().map(|p| p.0).collect(),
                cum: Some(cum),
            },
            label_condition: LabelCondition::All,
            source_id: source_id.into(),
        })
    }

    pub fn from_histogram(edges: Vec<f64>, counts: &[f64], source_id: impl Into<String>) -> Result<Self> {
        if edges.len() != counts.len() + 1 || counts.is_empty() {
            return Err(Error::validation(format!(
                "histogram needs len(edges) == len(counts) + 1, got {} and {}",
                edges.len(),
                counts.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::validation("histogram bin edges must be strictly increasing"));
        }
        if counts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::validation("histogram counts must be >= 0"));
        }
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Err(Error::validation("histogram is empty"));
        }
        let mut acc = 0.0;
        let mut cum = Vec::with_capacity(edges.len());
        cum.push(0.0);
        for c in counts {
            acc += c;
            cum.push(acc / total);
        }
        Ok(Self {
            support: Support::Histogram { edges, cum },
            label_condition: LabelCondition::All,
            source_id: source_id.into(),
        })
    }

    pub fn with_condition(mut self, condition: LabelCondition) -> Self {
        self.label_condition = condition;
        self
    }

    fn breakpoints(&self) -> &[f64] {
        match &self.support {
            Support::Samples { values, .. } => values,
            Support::Histogram { edges, .. } => edges,
        }
    }

    /// CDF limits just inside `(a, b)`, which lies between consecutive breakpoints.
    fn interval_cdf(&self, a: f64, b: f64) -> (f64, f64) {
        match &self.support {
            Support::Samples { values, cum } => {
                let k = values.partition_point(|&v| v <= a);
                let f = match (k, cum) {
                    (0, _) => 0.0,
                    (k, Some(cum)) => cum[k - 1],
                    (k, None) => k as f64 / values.len() as f64,
                };
                (f, f)
            }
            Support::Histogram { edges, cum } => (hist_cdf(edges, cum, a), hist_cdf(edges, cum, b)),
        }
    }
}

fn hist_cdf(edges: &[f64], cum: &[f64], x: f64) -> f64 {
    if x <= edges[0] {
        return 0.0;
    }
    if x >= edges[edges.len() - 1] {
        return 1.0;
    }
    let i = edges.partition_point(|&e| e <= x) - 1;
    let t = (x - edges[i]) / (edges[i + 1] - edges[i]);
    cum[i] + t * (cum[i + 1] - cum[i])
}

/// 1-Wasserstein distance between two 1D distributions: the integral of
/// `|F_r - F_g|`, evaluated exactly on the union of breakpoints.
pub fn wasserstein1(r: &IntensityDistribution, g: &IntensityDistribution) -> f64 {
    if let (
        Support::Samples { values: a, cum: None },
        Support::Samples { values: b, cum: None },
    ) = (&r.support, &g.support)
    {
        if a.len() == b.len() {
            return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
        }
    }
    let mut points: Vec<f64> = r
        .breakpoints()
        .iter()
        .chain(g.breakpoints())
        .copied()
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    points
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (fa, fb) = r.interval_cdf(a, b);
            let (ga, gb) = g.interval_cdf(a, b);
            abs_linear_integral(fa - ga, fb - gb, b - a)
        })
        .sum()
}

/// Integral over an interval of width `w` of `|d|`, `d` linear from `dl` to `dr`.
fn abs_linear_integral(dl: f64, dr: f64, w: f64) -> f64 {
    if dl * dr >= 0.0 {
        0.5 * (dl.abs() + dr.abs()) * w
    } else {
        0.5 * (dl * dl + dr * dr) / (dl.abs() + dr.abs()) * w
    }
}

/// Draws at most `max_samples` voxel intensities (seeded, without replacement),
/// optionally restricted to one label.
pub fn sample_distribution(
    volume: &Volume,
    labels: Option<(&LabelVolume, u8)>,
    max_samples: usize,
    seed: u64,
) -> Result<IntensityDistribution> {
    let values: Vec<f64> = match labels {
        Some((l, label)) => {
            l.check_pairs_with(volume)?;
            volume
                .data
                .iter()
                .zip(l.data.iter())
                .filter(|(_, &lab)| lab == label)
                .map(|(&v, _)| v as f64)
                .collect()
        }
        None => volume.data.iter().map(|&v| v as f64).collect(),
    };
    let picked = subsample(values, max_samples, seed);
    let condition = match labels {
        Some((_, label)) => LabelCondition::Label(label),
        None => LabelCondition::All,
    };
    Ok(IntensityDistribution::from_samples(picked, volume.id.clone())?.with_condition(condition))
}

/// Intensities of a 2D/3D array as an equal-weight distribution.
pub fn distribution_of(values: impl IntoIterator<Item = f32>, id: &str) -> Result<IntensityDistribution> {
    IntensityDistribution::from_samples(values.into_iter().map(|v| v as f64).collect(), id)
}

fn subsample(values: Vec<f64>, max_samples: usize, seed: u64) -> Vec<f64> {
    if values.len() <= max_samples {
        return values;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, values.len(), max_samples).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| values[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use crate::oracles;

    fn samples(v: &[f64]) -> IntensityDistribution {
        IntensityDistribution::from_samples(v.to_vec(), "t").unwrap()
    }

    #[test]
    fn fixtures() {
        assert_eq!(wasserstein1(&samples(&[1.0, 2.0, 3.0]), &samples(&[1.0, 2.0, 3.0])), 0.0);
        assert_eq!(wasserstein1(&samples(&[0.0]), &samples(&[5.0])), 5.0);
        assert_abs_diff_eq!(wasserstein1(&samples(&[0.0, 2.0]), &samples(&[1.0, 3.0])), 1.0, epsilon = 1e-12);
        // Same fixture through the LP oracle.
        let lp = oracles::transport_lp(&[(0.0, 0.5), (2.0, 0.5)], &[(1.0, 0.5), (3.0, 0.5)]);
        assert_abs_diff_eq!(lp, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unequal_sizes_use_the_cdf_route() {
        // {0, 1} vs {0, 0, 3}: |F-G| is 1/6 on [0,1) and 1/3 on [1,3).
        let w = wasserstein1(&samples(&[0.0, 1.0]), &samples(&[0.0, 0.0, 3.0]));
        assert_abs_diff_eq!(w, 5.0 / 6.0, epsilon = 1e-12);
        let lp = oracles::transport_lp(&[(0.0, 0.5), (1.0, 0.5)], &[(0.0, 2.0 / 3.0), (3.0, 1.0 / 3.0)]);
        assert_abs_diff_eq!(lp, 5.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn histogram_against_uniform_samples() {
        // Uniform mass on [0,1] vs point mass at 0 → mean distance 0.5.
        let h = IntensityDistribution::from_histogram(vec![0.0, 1.0], &[4.0], "h").unwrap();
        assert_abs_diff_eq!(wasserstein1(&h, &samples(&[0.0])), 0.5, epsilon = 1e-12);
        // Two uniform bins shifted by 2 → 2.
        let g = IntensityDistribution::from_histogram(vec![2.0, 3.0], &[1.0], "g").unwrap();
        assert_abs_diff_eq!(wasserstein1(&h, &g), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(IntensityDistribution::from_samples(vec![], "e").is_err());
        assert!(IntensityDistribution::from_histogram(vec![0.0, 0.0], &[1.0], "e").is_err());
        assert!(IntensityDistribution::from_histogram(vec![0.0, 1.0], &[0.0], "e").is_err());
        assert!(IntensityDistribution::from_weighted(vec![(0.0, -1.0)], "e").is_err());
    }

    #[test]
    fn subsampling_is_seeded() {
        let data = Array3::from_shape_fn((10, 10, 10), |(x, y, z)| (x * 100 + y * 10 + z) as f32);
        let v = Volume::new(data, [1.0; 3], "v").unwrap();
        let a = sample_distribution(&v, None, 50, 7).unwrap();
        let b = sample_distribution(&v, None, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.breakpoints().len(), 50);
    }

    fn weighted_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-10.0f64..10.0, 0.01f64..1.0), 1..=6)
    }

    proptest! {
        #[test]
        fn matches_transport_lp(r in weighted_strategy(), g in weighted_strategy()) {
            let total = |p: &[(f64, f64)]| p.iter().map(|x| x.1).sum::<f64>();
            let norm = |p: &[(f64, f64)]| p.iter().map(|&(x, w)| (x, w / total(p))).collect::<Vec<_>>();
            let (rn, gn) = (norm(&r), norm(&g));
            let lp = oracles::transport_lp(&rn, &gn);
            let w = wasserstein1(
                &IntensityDistribution::from_weighted(r, "r").unwrap(),
                &IntensityDistribution::from_weighted(g, "g").unwrap(),
            );
            prop_assert!((lp - w).abs() <= 1e-9, "lp {lp} vs {w}");
        }

        #[test]
        fn scaling_is_homogeneous(a in prop::collection::vec(-5.0f64..5.0, 1..20),
                                  b in prop::collection::vec(-5.0f64..5.0, 1..20),
                                  c in 0.1f64..10.0) {
            let base = wasserstein1(&samples(&a), &samples(&b));
            let sa: Vec<f64> = a.iter().map(|v| v * c).collect();
            let sb: Vec<f64> = b.iter().map(|v| v * c).collect();
            let scaled = wasserstein1(&samples(&sa), &samples(&sb));
            prop_assert!((scaled - c * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
        }

        #[test]
        fn metric_axioms(a in prop::collection::vec(-5.0f64..5.0, 1..12),
                         b in prop::collection::vec(-5.0f64..5.0, 1..12),
                         c in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let (da, db, dc) = (samples(&a), samples(&b), samples(&c));
            let ab = wasserstein1(&da, &db);
            prop_assert!((ab - wasserstein1(&db, &da)).abs() <= 1e-12);
            prop_assert_eq!(wasserstein1(&da, &da), 0.0);
            prop_assert!(ab <= wasserstein1(&da, &dc) + wasserstein1(&dc, &db) + 1e-12);
        }
    }
}
