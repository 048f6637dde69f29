use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HsiCube;
use crate::error::{Error, Result};

/// Random square training patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub patch_size: usize,
    pub count: usize,
    pub seed: u64,
}

/// Top-left corners `(row, col)` drawn uniformly from
/// `[0, height − size] × [0, width − size]`.
pub fn patch_corners(height: usize, width: usize, spec: &PatchSpec) -> Result<Vec<(usize, usize)>> {
    if spec.patch_size == 0 || spec.patch_size > height.min(width) {
        return Err(Error::invalid(
            "patch_size",
            format!("{} does not fit in {height}x{width}", spec.patch_size),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (ymax, xmax) = (height - spec.patch_size, width - spec.patch_size);
    Ok((0..spec.count)
        .map(|_| (rng.random_range(0..=ymax), rng.random_range(0..=xmax)))
        .collect())
}

pub fn extract_patches(cube: &HsiCube, spec: &PatchSpec) -> Result<Vec<HsiCube>> {
    patch_corners(cube.height(), cube.width(), spec)?
        .into_iter()
        .map(|(y, x)| cube.crop(y, x, spec.patch_size, spec.patch_size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_extent_patch_is_the_cube() {
        let cube = HsiCube::from_fn(6, 6, 2, |y, x, b| (y * 6 + x + b) as f64).unwrap();
        let spec = PatchSpec { patch_size: 6, count: 3, seed: 1 };
        for p in extract_patches(&cube, &spec).unwrap() {
            assert_eq!(p, cube);
        }
    }

    #[test]
    fn oversized_patch_rejected() {
        let cube = HsiCube::new(4, 5, 1, vec![0.0; 20]).unwrap();
        let spec = PatchSpec { patch_size: 5, count: 1, seed: 1 };
        assert!(extract_patches(&cube, &spec).is_err());
    }

    #[test]
    fn seeded_sequence_repeats() {
        let spec = PatchSpec { patch_size: 8, count: 20, seed: 77 };
        assert_eq!(patch_corners(30, 40, &spec).unwrap(), patch_corners(30, 40, &spec).unwrap());
    }
}
