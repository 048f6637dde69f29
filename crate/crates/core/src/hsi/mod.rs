//! Hyperspectral cubes: storage, per-band normalization, spatial splitting,
//! patch sampling, simulated Gaussian noise and overlapping band groups.

mod format;
mod grouping;
mod noise;
mod patches;
mod synthetic;

pub use format::{load_any, load_cube, load_envi, load_envi_with_data, save_cube, CUBE_MAGIC};
pub use grouping::{make_band_groups, BandGroupingSpec, BandGroups};
pub use noise::{add_gaussian_noise, derive_seed, NoiseSpec};
pub use patches::{extract_patches, patch_corners, PatchSpec};
pub use synthetic::synthetic_scene;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// On-disk sample precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleType {
    F32,
    #[default]
    F64,
}

impl SampleType {
    pub fn code(self) -> u8 {
        match self {
            SampleType::F32 => 1,
            SampleType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(SampleType::F32),
            2 => Ok(SampleType::F64),
            other => Err(Error::Unsupported {
                what: "dtype code",
                value: other.to_string(),
            }),
        }
    }

    pub fn size(self) -> usize {
        match self {
            SampleType::F32 => 4,
            SampleType::F64 => 8,
        }
    }
}

/// A `height × width × bands` reflectance volume stored band-sequentially:
/// band-major, then row-major within each band.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
    band_scale: Option<Vec<(f64, f64)>>,
    sample_type: SampleType,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::invalid(
                "cube dimensions",
                format!("{height}x{width}x{bands} has a zero extent"),
            ));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(bands))
            .ok_or_else(|| Error::DimensionOverflow(format!("{height}x{width}x{bands}")))?;
        if data.len() != expected {
            return Err(Error::shape(
                "cube",
                "data length",
                format!("{height}x{width}x{bands} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
            band_scale: None,
            sample_type: SampleType::F64,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * bands);
        for b in 0..bands {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(y, x, b));
                }
            }
        }
        Self::new(height, width, bands, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn band_scale(&self) -> Option<&[(f64, f64)]> {
        self.band_scale.as_deref()
    }

    pub fn set_band_scale(&mut self, scale: Option<Vec<(f64, f64)>>) -> Result<()> {
        if let Some(s) = &scale {
            if s.len() != self.bands {
                return Err(Error::shape(
                    "band_scale",
                    "bands",
                    format!("{} entries for {} bands", s.len(), self.bands),
                ));
            }
        }
        self.band_scale = scale;
        Ok(())
    }

    pub fn sample_type(&self) -> SampleType {
        self.sample_type
    }

    pub fn set_sample_type(&mut self, sample_type: SampleType) {
        self.sample_type = sample_type;
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[b * plane..][..plane]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let plane = self.height * self.width;
        &mut self.data[b * plane..][..plane]
    }

    pub fn get(&self, y: usize, x: usize, b: usize) -> f64 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn same_dims(&self, other: &HsiCube) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                "cube pair",
                "dimensions",
                format!("{:?} vs {:?}", self.dims(), other.dims()),
            ));
        }
        Ok(())
    }

    /// Copies a spatial window, keeping all bands and any band scale.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<HsiCube> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::invalid(
                "crop",
                format!(
                    "window {h}x{w} at ({y0}, {x0}) does not fit in {}x{}",
                    self.height, self.width
                ),
            ));
        }
        let mut data = Vec::with_capacity(h * w * self.bands);
        for b in 0..self.bands {
            let band = self.band(b);
            for y in y0..y0 + h {
                data.extend_from_slice(&band[y * self.width + x0..][..w]);
            }
        }
        let mut out = HsiCube::new(h, w, self.bands, data)?;
        out.band_scale = self.band_scale.clone();
        out.sample_type = self.sample_type;
        Ok(out)
    }

    /// Splits rows `[0, train_rows)` from the remainder.
    pub fn split_spatial(&self, train_rows: usize) -> Result<(HsiCube, HsiCube)> {
        if train_rows == 0 || train_rows >= self.height {
            return Err(Error::invalid(
                "train_rows",
                format!("{train_rows} must lie strictly between 0 and {}", self.height),
            ));
        }
        Ok((
            self.crop(0, 0, train_rows, self.width)?,
            self.crop(train_rows, 0, self.height - train_rows, self.width)?,
        ))
    }

    /// Per-band min-max scaling into `[0, 1]`. A constant band maps to zeros
    /// with recorded scale `(v, v + 1)`. Scaling an already-normalized cube
    /// composes with the stored scale so `denormalize` still returns the
    /// original values.
    pub fn normalize(&self) -> HsiCube {
        let mut out = self.clone();
        let mut scale = Vec::with_capacity(self.bands);
        for b in 0..self.bands {
            let band = out.band_mut(b);
            let (lo, hi) = band
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let range = if hi > lo { hi - lo } else { 1.0 };
            band.iter_mut().for_each(|v| *v = (*v - lo) / range);
            scale.push((lo, lo + range));
        }
        if let Some(prev) = &self.band_scale {
            for ((lo, hi), &(plo, phi)) in scale.iter_mut().zip(prev) {
                let prange = phi - plo;
                let (nlo, nrange) = (plo + *lo * prange, (*hi - *lo) * prange);
                *lo = nlo;
                *hi = nlo + nrange;
            }
        }
        out.band_scale = Some(scale);
        out
    }

    pub fn denormalize(&self) -> Result<HsiCube> {
        let scale = self
            .band_scale
            .as_ref()
            .ok_or_else(|| Error::invalid("band_scale", "cube carries no normalization scale"))?;
        let mut out = self.clone();
        for (b, &(lo, hi)) in scale.iter().enumerate() {
            let range = hi - lo;
            out.band_mut(b).iter_mut().for_each(|v| *v = *v * range + lo);
        }
        out.band_scale = None;
        Ok(out)
    }

    /// Views the cube as a `[1, bands, height, width]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, self.bands, self.height, self.width],
            self.data.clone(),
        )
        .expect("cube length matches dims")
    }

    /// Stacks equally sized cubes into a `[N, bands, height, width]` batch.
    pub fn batch(cubes: &[&HsiCube]) -> Result<Tensor> {
        let first = cubes
            .first()
            .ok_or_else(|| Error::invalid("batch", "no cubes"))?;
        let mut data = Vec::with_capacity(first.data.len() * cubes.len());
        for c in cubes {
            first.same_dims(c)?;
            data.extend_from_slice(&c.data);
        }
        Tensor::new(
            vec![cubes.len(), first.bands, first.height, first.width],
            data,
        )
    }

    /// Rebuilds a cube from item `index` of a `[N, bands, height, width]`
    /// tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<HsiCube> {
        let &[n, b, h, w] = t.shape() else {
            return Err(Error::shape("from_tensor", "rank", format!("{:?}", t.shape())));
        };
        if index >= n {
            return Err(Error::invalid("index", format!("{index} out of batch {n}")));
        }
        let len = b * h * w;
        HsiCube::new(h, w, b, t.data()[index * len..][..len].to_vec())
    }

    /// Copy carrying `data` with this cube's dimensions and metadata.
    pub fn with_data(&self, data: Vec<f64>) -> Result<HsiCube> {
        let mut out = HsiCube::new(self.height, self.width, self.bands, data)?;
        out.band_scale = self.band_scale.clone();
        out.sample_type = self.sample_type;
        Ok(out)
    }
}
