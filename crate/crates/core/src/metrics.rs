//! Full-reference quality measures for hyperspectral cubes: MPSNR, MSSIM,
//! SAM and ERGAS. Reference cubes are expected in `[0, 1]`.

use std::fmt;

use crate::error::{Error, Result};
use crate::hsi::HsiCube;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DATA_RANGE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Decibels; `f64::INFINITY` when the cubes are identical.
    pub mpsnr: f64,
    pub mssim: f64,
    /// Degrees.
    pub sam: f64,
    pub ergas: f64,
    /// Pixels left out of SAM because a spectrum had zero norm.
    pub sam_skipped: usize,
    /// Bands left out of ERGAS because the reference mean was zero.
    pub ergas_skipped: usize,
}

impl MetricsReport {
    /// Machine-readable `key = value` block with full precision.
    pub fn to_key_values(&self) -> String {
        format!(
            "mpsnr = {}\nmssim = {}\nsam = {}\nergas = {}\nsam_skipped = {}\nergas_skipped = {}\n",
            self.mpsnr, self.mssim, self.sam, self.ergas, self.sam_skipped, self.ergas_skipped
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MPSNR={:.4} MSSIM={:.4} SAM={:.4} ERGAS={:.4}",
            self.mpsnr, self.mssim, self.sam, self.ergas
        )
    }
}

/// Mean over bands of `10·log10(1 / MSE_b)` with peak value 1.
pub fn mpsnr(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    reference.same_dims(test)?;
    let total: f64 = (0..reference.bands())
        .map(|b| {
            let (r, t) = (reference.band(b), test.band(b));
            let mse = r.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r.len() as f64;
            if mse == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (DATA_RANGE * DATA_RANGE / mse).log10()
            }
        })
        .sum();
    Ok(total / reference.bands() as f64)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable "valid" filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..][..w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// SSIM of one band pair, averaged over all valid window positions.
pub fn ssim_band(reference: &[f64], test: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "spatial extent",
            format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"),
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * DATA_RANGE).powi(2);
    let c2 = (SSIM_K2 * DATA_RANGE).powi(2);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_x = filter_valid(reference, h, w, &taps);
    let mu_y = filter_valid(test, h, w, &taps);
    let xx = filter_valid(&prod(reference, reference), h, w, &taps);
    let yy = filter_valid(&prod(test, test), h, w, &taps);
    let xy = filter_valid(&prod(reference, test), h, w, &taps);
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean over bands of per-band SSIM (11×11 Gaussian window, σ = 1.5,
/// K1 = 0.01, K2 = 0.03, data range 1).
pub fn mssim(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    reference.same_dims(test)?;
    let (h, w, bands) = reference.dims();
    let mut total = 0.0;
    for b in 0..bands {
        total += ssim_band(reference.band(b), test.band(b), h, w)?;
    }
    Ok(total / bands as f64)
}

/// Mean spectral angle in degrees over pixels whose spectra are nonzero in
/// both cubes. Returns the angle and the number of skipped pixels.
pub fn sam(reference: &HsiCube, test: &HsiCube) -> Result<(f64, usize)> {
    reference.same_dims(test)?;
    let plane = reference.height() * reference.width();
    let mut nr = vec![0.0; plane];
    let mut nt = vec![0.0; plane];
    for b in 0..reference.bands() {
        for (p, (&r, &t)) in reference.band(b).iter().zip(test.band(b)).enumerate() {
            nr[p] += r * r;
            nt[p] += t * t;
        }
    }
    for n in nr.iter_mut().chain(nt.iter_mut()) {
        *n = n.sqrt();
    }
    // angle = 2·atan2(|r̂ − t̂|, |r̂ + t̂|) on unit spectra; exact at zero
    // angle where acos of a rounded cosine is not.
    let mut diff = vec![0.0; plane];
    let mut sum = vec![0.0; plane];
    for b in 0..reference.bands() {
        for (p, (&r, &t)) in reference.band(b).iter().zip(test.band(b)).enumerate() {
            if nr[p] == 0.0 || nt[p] == 0.0 {
                continue;
            }
            let (u, v) = (r / nr[p], t / nt[p]);
            diff[p] += (u - v) * (u - v);
            sum[p] += (u + v) * (u + v);
        }
    }
    let mut total = 0.0;
    let mut valid = 0usize;
    for p in 0..plane {
        if nr[p] == 0.0 || nt[p] == 0.0 {
            continue;
        }
        total += 2.0 * diff[p].sqrt().atan2(sum[p].sqrt());
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::invalid("sam", "every pixel has a zero spectrum"));
    }
    Ok((total / valid as f64 * 180.0 / std::f64::consts::PI, plane - valid))
}

/// `100 · sqrt(mean_b (RMSE_b / mean_b)²)` with resolution ratio 1, over
/// bands whose reference mean is nonzero. Returns the value and the number
/// of skipped bands.
pub fn ergas(reference: &HsiCube, test: &HsiCube) -> Result<(f64, usize)> {
    reference.same_dims(test)?;
    let mut acc = 0.0;
    let mut valid = 0usize;
    for b in 0..reference.bands() {
        let (r, t) = (reference.band(b), test.band(b));
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        if mean == 0.0 {
            continue;
        }
        let mse = r.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        acc += mse / (mean * mean);
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::invalid("ergas", "every band has a zero mean"));
    }
    Ok((100.0 * (acc / valid as f64).sqrt(), reference.bands() - valid))
}

pub fn evaluate_pair(reference: &HsiCube, test: &HsiCube) -> Result<MetricsReport> {
    let (sam, sam_skipped) = sam(reference, test)?;
    let (ergas, ergas_skipped) = ergas(reference, test)?;
    Ok(MetricsReport {
        mpsnr: mpsnr(reference, test)?,
        mssim: mssim(reference, test)?,
        sam,
        ergas,
        sam_skipped,
        ergas_skipped,
    })
}
