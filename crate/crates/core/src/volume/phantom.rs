//! Synthetic two-domain cardiac phantoms.
//!
//! Geometry (an ellipsoidal blood pool wrapped in a myocardium shell, plus an
//! outgoing vessel) depends only on `(seed, shape)`. Intensities depend on
//! `(seed, domain)`: domain A renders well-separated tissue levels, domain B
//! pushes them through a monotone remap that squeezes myocardium toward the
//! background and adds stronger noise.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabelVolume, Volume, BACKGROUND, BLOOD_POOL, MYOCARDIUM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

/// Monotone remap `gain * x^gamma + offset` applied to noise-free intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    pub gamma: f64,
    pub gain: f64,
    pub offset: f64,
}

impl IntensityMap {
    pub const IDENTITY: IntensityMap = IntensityMap {
        gamma: 1.0,
        gain: 1.0,
        offset: 0.0,
    };

    pub fn apply(&self, x: f64) -> f64 {
        self.gain * x.max(0.0).powf(self.gamma) + self.offset
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gain > 0.0 && self.offset.is_finite()) {
            return Err(Error::validation(format!(
                "intensity map must be monotone increasing (gamma > 0, gain > 0), got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub domain: Domain,
    pub seed: u64,
    pub noise_sigma: f64,
    pub intensity_map: IntensityMap,
    /// Noise-free background, myocardium and blood-pool levels before remapping.
    pub tissue_means: [f64; 3],
    /// Myocardium thickness as a fraction of the smallest dimension.
    pub shell_fraction: f64,
    pub spacing: [f64; 3],
}

impl PhantomSpec {
    pub fn domain_a(shape: [usize; 3], seed: u64) -> Self {
        Self {
            shape,
            domain: Domain::A,
            seed,
            noise_sigma: 0.03,
            intensity_map: IntensityMap::IDENTITY,
            tissue_means: [0.2, 0.5, 0.9],
            shell_fraction: 0.09,
            spacing: [1.0; 3],
        }
    }

    pub fn domain_b(shape: [usize; 3], seed: u64) -> Self {
        Self {
            domain: Domain::B,
            noise_sigma: 0.07,
            intensity_map: IntensityMap {
                gamma: 2.2,
                gain: 1.1,
                offset: 0.1,
            },
            ..Self::domain_a(shape, seed)
        }
    }

    pub fn shell_thickness(&self) -> f64 {
        self.shape.iter().copied().min().unwrap_or(0) as f64 * self.shell_fraction
    }

    pub fn id(&self) -> String {
        let d = match self.domain {
            Domain::A => "a",
            Domain::B => "b",
        };
        format!("phantom-{d}-{}", self.seed)
    }
}

struct Geometry {
    center: [f64; 3],
    axes: [f64; 3],
    thickness: f64,
    cos: f64,
    sin: f64,
    vessel_center: [f64; 2],
    vessel_radius: f64,
    vessel_up: bool,
}

impl Geometry {
    fn sample(spec: &PhantomSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let dims = spec.shape.map(|d| d as f64);
        let center = [0, 1, 2].map(|i| dims[i] / 2.0 + rng.random_range(-0.08..0.08) * dims[i]);
        let axes = [0, 1, 2].map(|i| dims[i] * rng.random_range(0.16..0.24));
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let vessel_center = [
            center[0] + rng.random_range(-0.3..0.3) * axes[0],
            center[1] + rng.random_range(-0.3..0.3) * axes[1],
        ];
        let min_dim = dims.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            center,
            axes,
            thickness: spec.shell_thickness(),
            cos: angle.cos(),
            sin: angle.sin(),
            vessel_center,
            vessel_radius: (0.07 * min_dim).max(1.5),
            vessel_up: rng.random_bool(0.5),
        }
    }

    fn label(&self, p: [f64; 3]) -> u8 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let q = [
            self.cos * d[0] + self.sin * d[1],
            -self.sin * d[0] + self.cos * d[1],
            d[2],
        ];
        let radial = |extra: f64| -> f64 {
            (0..3).map(|i| (q[i] / (self.axes[i] + extra)).powi(2)).sum()
        };
        let vx = p[0] - self.vessel_center[0];
        let vy = p[1] - self.vessel_center[1];
        let along = if self.vessel_up {
            p[2] >= self.center[2]
        } else {
            p[2] <= self.center[2]
        };
        if radial(0.0) <= 1.0 || (along && vx * vx + vy * vy <= self.vessel_radius.powi(2)) {
            BLOOD_POOL
        } else if radial(self.thickness) <= 1.0 {
            MYOCARDIUM
        } else {
            BACKGROUND
        }
    }
}

/// Renders one phantom volume and its labels.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, LabelVolume)> {
    if spec.shape.contains(&0) {
        return Err(Error::validation(format!("phantom shape {:?} has an empty axis", spec.shape)));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::validation("noise_sigma must be finite and >= 0"));
    }
    spec.intensity_map.validate()?;
    if spec.shell_thickness() < 1.0 {
        return Err(Error::validation(format!(
            "myocardium shell would be {:.2} voxels thick for shape {:?}; need >= 1",
            spec.shell_thickness(),
            spec.shape
        )));
    }

    let geometry = Geometry::sample(spec);
    let labels = Array3::from_shape_fn(spec.shape, |(x, y, z)| {
        geometry.label([x as f64, y as f64, z as f64])
    });

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(match spec.domain {
        Domain::A => 1,
        Domain::B => 2,
    });
    let gain = rng.random_range(0.95..1.05);
    let dir: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-9);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::validation(e.to_string()))?;
    let dims = spec.shape.map(|d| d.max(2) as f64 - 1.0);

    let mut data = Array3::<f32>::zeros(spec.shape);
    for ((x, y, z), v) in data.indexed_iter_mut() {
        let u = [x as f64 / dims[0], y as f64 / dims[1], z as f64 / dims[2]];
        let ramp = (0..3).map(|i| (2.0 * u[i] - 1.0) * dir[i]).sum::<f64>() / norm;
        let bias = 1.0 + 0.05 * ramp;
        let clean = spec.tissue_means[labels[[x, y, z]] as usize] * gain * bias;
        let sample = if spec.noise_sigma > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        *v = (spec.intensity_map.apply(clean) + sample) as f32;
    }

    let id = spec.id();
    let volume = Volume::new(data, spec.spacing, id.clone())?;
    Ok((volume, LabelVolume::new(labels, id)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label_means(v: &Volume, l: &LabelVolume) -> [f64; 3] {
        let mut sum = [0.0; 3];
        let mut n = [0usize; 3];
        for (x, &lab) in v.data.iter().zip(l.data.iter()) {
            sum[lab as usize] += *x as f64;
            n[lab as usize] += 1;
        }
        [0, 1, 2].map(|i| sum[i] / n[i].max(1) as f64)
    }

    #[test]
    fn geometry_is_shared_across_domains() {
        let (_, la) = generate_phantom(&PhantomSpec::domain_a([24, 24, 24], 5)).unwrap();
        let (_, lb) = generate_phantom(&PhantomSpec::domain_b([24, 24, 24], 5)).unwrap();
        assert_eq!(la.data, lb.data);
        for label in 0..3 {
            assert!(la.data.iter().any(|&v| v == label), "label {label} missing");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = PhantomSpec::domain_b([16, 16, 16], 9);
        assert_eq!(generate_phantom(&spec).unwrap(), generate_phantom(&spec).unwrap());
        let other = PhantomSpec { seed: 10, ..spec };
        assert_ne!(generate_phantom(&spec).unwrap().0.data, generate_phantom(&other).unwrap().0.data);
    }

    #[test]
    fn domain_a_levels_are_separated() {
        let spec = PhantomSpec::domain_a([32, 32, 32], 3);
        let (v, l) = generate_phantom(&spec).unwrap();
        let m = label_means(&v, &l);
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!((m[i] - m[j]).abs() > 3.0 * spec.noise_sigma, "{m:?}");
        }
    }

    #[test]
    fn domain_b_squeezes_myocardium_toward_background() {
        let (va, l) = generate_phantom(&PhantomSpec::domain_a([32, 32, 32], 3)).unwrap();
        let (vb, _) = generate_phantom(&PhantomSpec::domain_b([32, 32, 32], 3)).unwrap();
        let a = label_means(&va, &l);
        let b = label_means(&vb, &l);
        let rel = |m: [f64; 3]| (m[1] - m[0]) / (m[2] - m[0]);
        assert!(rel(b) < rel(a));
    }

    #[test]
    fn thin_shell_is_rejected() {
        let spec = PhantomSpec::domain_a([8, 8, 8], 1);
        assert!(matches!(generate_phantom(&spec), Err(Error::Validation(_))));
    }
}
