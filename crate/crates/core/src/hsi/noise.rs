use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::HsiCube;
use crate::error::{Error, Result};

/// Simulated additive Gaussian noise. `sigma_8bit` is expressed in 8-bit
/// intensity units; the standard deviation applied to a `[0, 1]` cube is
/// `sigma_8bit / 255`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_8bit: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma_8bit: f64, seed: u64) -> Self {
        Self { sigma_8bit, seed }
    }

    pub fn std_dev(&self) -> f64 {
        self.sigma_8bit / 255.0
    }

    /// Same noise level with an independent stream for `index`.
    pub fn reseeded(&self, index: u64) -> Self {
        Self {
            sigma_8bit: self.sigma_8bit,
            seed: derive_seed(self.seed, index),
        }
    }
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer) so that
/// neighbouring indices give unrelated streams.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Adds i.i.d. `N(0, (sigma/255)²)` noise to every voxel. The result is not
/// clipped back to `[0, 1]`.
pub fn add_gaussian_noise(cube: &HsiCube, spec: &NoiseSpec) -> Result<HsiCube> {
    if !(spec.sigma_8bit >= 0.0 && spec.sigma_8bit.is_finite()) {
        return Err(Error::invalid(
            "sigma",
            format!("{} must be finite and non-negative", spec.sigma_8bit),
        ));
    }
    if spec.sigma_8bit == 0.0 {
        return Ok(cube.clone());
    }
    let normal = Normal::new(0.0, spec.std_dev())
        .map_err(|e| Error::invalid("sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = cube
        .data()
        .iter()
        .map(|&v| v + normal.sample(&mut rng))
        .collect();
    cube.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(h: usize, w: usize, b: usize) -> HsiCube {
        HsiCube::from_fn(h, w, b, |y, x, band| ((y + x + band) % 5) as f64 / 4.0).unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let c = flat(4, 4, 2);
        assert_eq!(add_gaussian_noise(&c, &NoiseSpec::new(0.0, 1)).unwrap(), c);
    }

    #[test]
    fn deterministic_per_seed() {
        let c = flat(8, 8, 3);
        let a = add_gaussian_noise(&c, &NoiseSpec::new(25.0, 42)).unwrap();
        let b = add_gaussian_noise(&c, &NoiseSpec::new(25.0, 42)).unwrap();
        let d = add_gaussian_noise(&c, &NoiseSpec::new(25.0, 43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }

    #[test]
    fn not_clipped() {
        let c = HsiCube::new(16, 16, 1, vec![1.0; 256]).unwrap();
        let n = add_gaussian_noise(&c, &NoiseSpec::new(75.0, 3)).unwrap();
        assert!(n.data().iter().any(|&v| v > 1.0));
        assert!(n.data().iter().any(|&v| v < 1.0));
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(add_gaussian_noise(&flat(2, 2, 1), &NoiseSpec::new(-1.0, 0)).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let s = NoiseSpec::new(5.0, 9);
        assert_ne!(s.reseeded(0).seed, s.reseeded(1).seed);
        assert_eq!(s.reseeded(3), s.reseeded(3));
    }
}
