use sscan_core::hsi::HsiCube;
use sscan_core::Error;

/// Comment line prefix that records the error value mapped to white.
pub const ANCHOR_COMMENT: &str = "# max-error-anchor ";

/// Per-pixel absolute error averaged over three bands.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ErrorMap {
    pub fn compute(clean: &HsiCube, test: &HsiCube, bands: [usize; 3]) -> Result<Self, Error> {
        clean.same_dims(test)?;
        if let Some(&b) = bands.iter().find(|&&b| b >= clean.bands()) {
            return Err(Error::InvalidArgument {
                field: "bands",
                reason: format!("band {b} out of range for a {}-band cube", clean.bands()),
            });
        }
        let plane = clean.height() * clean.width();
        let mut values = vec![0.0; plane];
        for b in bands {
            for ((v, c), t) in values.iter_mut().zip(clean.band(b)).zip(test.band(b)) {
                *v += (c - t).abs() / 3.0;
            }
        }
        Ok(Self {
            height: clean.height(),
            width: clean.width(),
            values,
        })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Binary PGM, errors scaled linearly so `anchor` maps to 255 (values
    /// above it saturate). An anchor of zero gives an all-black image.
    pub fn to_pgm(&self, anchor: f64) -> Result<Vec<u8>, Error> {
        if !(anchor >= 0.0 && anchor.is_finite()) {
            return Err(Error::InvalidArgument {
                field: "max_error",
                reason: format!("{anchor} must be finite and non-negative"),
            });
        }
        let mut out = format!("P5\n{ANCHOR_COMMENT}{anchor}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|&v| {
            if anchor == 0.0 {
                0
            } else {
                (v / anchor * 255.0).round().clamp(0.0, 255.0) as u8
            }
        }));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_len(pgm: &[u8]) -> usize {
        let mut newlines = 0;
        pgm.iter()
            .position(|&c| {
                newlines += usize::from(c == b'\n');
                newlines == 4
            })
            .unwrap()
            + 1
    }

    #[test]
    fn identical_is_black() {
        let c = HsiCube::from_fn(3, 4, 3, |y, x, b| (y + x + b) as f64 * 0.1).unwrap();
        let m = ErrorMap::compute(&c, &c, [0, 1, 2]).unwrap();
        let pgm = m.to_pgm(m.max()).unwrap();
        assert!(pgm.starts_with(b"P5\n# max-error-anchor 0\n4 3\n255\n"));
        assert!(pgm[header_len(&pgm)..].iter().all(|&p| p == 0));
    }

    #[test]
    fn single_pixel_error_is_single_bright_pixel() {
        let c = HsiCube::from_fn(3, 4, 3, |_, _, _| 0.5).unwrap();
        let mut t = c.clone();
        for b in 0..3 {
            t.band_mut(b)[4 + 2] += 0.3;
        }
        let m = ErrorMap::compute(&c, &t, [0, 1, 2]).unwrap();
        let pgm = m.to_pgm(m.max()).unwrap();
        let px = &pgm[header_len(&pgm)..];
        assert_eq!(px.len(), 12);
        for (i, &p) in px.iter().enumerate() {
            assert_eq!(p, if i == 6 { 255 } else { 0 });
        }
    }

    #[test]
    fn band_out_of_range() {
        let c = HsiCube::from_fn(2, 2, 3, |_, _, _| 0.5).unwrap();
        assert!(ErrorMap::compute(&c, &c, [0, 1, 3]).unwrap_err().to_string().contains("band 3"));
    }
}
