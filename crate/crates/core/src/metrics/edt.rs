//! Exact Euclidean distance transform by separable lower envelopes of parabolas.

use ndarray::{Array3, ArrayViewMut1, Axis};

/// Squared distance from every voxel to the nearest `true` voxel, with
/// per-axis spacing. Infinite everywhere when the mask is empty.
pub fn squared_distance_transform(mask: &Array3<bool>, spacing: [f64; 3]) -> Array3<f64> {
    let mut d = mask.mapv(|v| if v { 0.0 } else { f64::INFINITY });
    for (axis, &s) in spacing.iter().enumerate() {
        let n = d.len_of(Axis(axis));
        let mut f = vec![0.0; n];
        let mut scratch = Envelope::new(n);
        for lane in d.lanes_mut(Axis(axis)) {
            transform_lane(lane, s * s, &mut f, &mut scratch);
        }
    }
    d
}

struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Self { v: vec![0; n], z: vec![0.0; n + 1] }
    }
}

fn transform_lane(mut lane: ArrayViewMut1<'_, f64>, w: f64, f: &mut [f64], env: &mut Envelope) {
    let n = lane.len();
    for (fi, v) in f.iter_mut().zip(lane.iter()) {
        *fi = *v;
    }
    // Parabolas rooted at infinite values never contribute.
    let finite: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if finite.is_empty() {
        return;
    }
    let intersect = |q: usize, p: usize| -> f64 {
        let (q, p) = (q as f64, p as f64);
        ((f[q as usize] + w * q * q) - (f[p as usize] + w * p * p)) / (2.0 * w * (q - p))
    };
    let mut k = 0;
    env.v[0] = finite[0];
    env.z[0] = f64::NEG_INFINITY;
    env.z[1] = f64::INFINITY;
    for &q in &finite[1..] {
        let mut s = intersect(q, env.v[k]);
        while s <= env.z[k] {
            k -= 1;
            s = intersect(q, env.v[k]);
        }
        k += 1;
        env.v[k] = q;
        env.z[k] = s;
        env.z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for q in 0..n {
        while env.z[k + 1] < q as f64 {
            k += 1;
        }
        let p = env.v[k];
        let dq = q as f64 - p as f64;
        lane[q] = w * dq * dq + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let spacing = [0.5, 1.25, 2.0];
        for _ in 0..10 {
            let m = Array3::from_shape_simple_fn((6, 7, 5), || rng.random_bool(0.08));
            let d = squared_distance_transform(&m, spacing);
            let pts: Vec<_> = m.indexed_iter().filter(|(_, &v)| v).map(|(i, _)| i).collect();
            for ((x, y, z), &got) in d.indexed_iter() {
                let want = pts
                    .iter()
                    .map(|&(a, b, c)| {
                        let dx = (x as f64 - a as f64) * spacing[0];
                        let dy = (y as f64 - b as f64) * spacing[1];
                        let dz = (z as f64 - c as f64) * spacing[2];
                        dx * dx + dy * dy + dz * dz
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!((got - want).abs() < 1e-9 || (got.is_infinite() && want.is_infinite()));
            }
        }
    }
}
