use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HsiCube;
use crate::error::{Error, Result};

/// Synthetic scene built by linear spectral mixing: a few smooth endmember
/// spectra weighted by smooth, normalized abundance maps (Gaussian blobs),
/// then min-max normalized per band to `[0, 1]`. Deterministic in `seed`.
pub fn synthetic_scene(height: usize, width: usize, bands: usize, seed: u64) -> Result<HsiCube> {
    if height == 0 || width == 0 || bands == 0 {
        return Err(Error::invalid("dimensions", "all extents must be positive"));
    }
    const MATERIALS: usize = 4;
    const BLOBS: usize = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectra: Vec<Vec<f64>> = (0..MATERIALS)
        .map(|_| {
            let (a, f, p) = (rng.random_range(0.2..0.8), rng.random_range(0.5..2.5), rng.random_range(0.0..6.3));
            (0..bands)
                .map(|b| a + 0.15 * (f * b as f64 / bands as f64 * std::f64::consts::TAU + p).sin())
                .collect()
        })
        .collect();
    let scale = height.max(width) as f64;
    let blobs: Vec<Vec<(f64, f64, f64)>> = (0..MATERIALS)
        .map(|_| {
            (0..BLOBS)
                .map(|_| {
                    (
                        rng.random_range(0.0..height as f64),
                        rng.random_range(0.0..width as f64),
                        rng.random_range(0.15..0.4) * scale,
                    )
                })
                .collect()
        })
        .collect();
    let mut abundance = vec![0.0; MATERIALS * height * width];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let mut total = 0.0;
            for (m, bl) in blobs.iter().enumerate() {
                let a: f64 = bl
                    .iter()
                    .map(|&(cy, cx, s)| {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        (-d2 / (2.0 * s * s)).exp()
                    })
                    .sum::<f64>()
                    + 1e-3;
                abundance[m * height * width + p] = a;
                total += a;
            }
            for m in 0..MATERIALS {
                abundance[m * height * width + p] /= total;
            }
        }
    }
    let plane = height * width;
    let cube = HsiCube::from_fn(height, width, bands, |y, x, b| {
        let p = y * width + x;
        (0..MATERIALS).map(|m| abundance[m * plane + p] * spectra[m][b]).sum()
    })?;
    let mut cube = cube.normalize();
    cube.set_band_scale(None)?;
    Ok(cube)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_and_deterministic() {
        let a = synthetic_scene(20, 16, 5, 3).unwrap();
        assert_eq!(a, synthetic_scene(20, 16, 5, 3).unwrap());
        assert_ne!(a, synthetic_scene(20, 16, 5, 4).unwrap());
        for b in 0..5 {
            let band = a.band(b);
            let lo = band.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = band.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }
}
