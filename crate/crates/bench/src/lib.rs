//! Seeded inputs shared by the benchmarks.

use cardioseg::domain::IntensityDistribution;
use cardioseg::segment::{LogitsMap, PlaneTag, Variant};
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn samples(n: usize, seed: u64) -> IntensityDistribution {
    let mut r = rng(seed);
    IntensityDistribution::from_samples((0..n).map(|_| r.random_range(0.0..1.0)).collect(), "bench").unwrap()
}

pub fn logits(shape: [usize; 3], seed: u64) -> LogitsMap {
    let mut r = rng(seed);
    let [x, y, z] = shape;
    let scores = Array4::from_shape_simple_fn((3, x, y, z), || r.random_range(-4.0f32..4.0));
    LogitsMap::new(scores, PlaneTag::Sum, Variant::Original, vec![1.0]).unwrap()
}

/// A solid ball, which gives boundary-distance code realistic surfaces.
pub fn ball(n: usize, radius: f64, offset: f64) -> Array3<bool> {
    let c = n as f64 / 2.0 + offset;
    Array3::from_shape_fn((n, n, n), |(x, y, z)| {
        let d = [x, y, z].map(|v| v as f64 - c);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() <= radius
    })
}

pub fn image(n: usize, seed: u64) -> Array2<f32> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((n, n), || r.random_range(0.0..1.0))
}
