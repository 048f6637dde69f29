use super::model::SscanModel;
use crate::error::{Error, Result};
use crate::hsi::HsiCube;

pub const DEFAULT_MARGIN: usize = 16;

/// Denoises `cube` in square tiles of `tile` pixels. Each tile is run with
/// up to `margin` pixels of surrounding context and only its centre is
/// kept. A cube that fits in one tile is processed whole.
pub fn denoise_tiled(model: &SscanModel, cube: &HsiCube, tile: usize, margin: usize) -> Result<HsiCube> {
    if cube.bands() != model.config().bands {
        return Err(Error::invalid(
            "bands",
            format!(
                "checkpoint expects {} bands, cube has {}",
                model.config().bands,
                cube.bands()
            ),
        ));
    }
    if tile == 0 {
        return Err(Error::invalid("tile", "must be positive"));
    }
    let (h, w, bands) = cube.dims();
    if tile >= h && tile >= w {
        return model.denoise(cube);
    }
    let mut out = vec![0.0; cube.data().len()];
    for y0 in (0..h).step_by(tile) {
        for x0 in (0..w).step_by(tile) {
            let (th, tw) = (tile.min(h - y0), tile.min(w - x0));
            let (ry, rx) = (y0.saturating_sub(margin), x0.saturating_sub(margin));
            let ry1 = (y0 + th + margin).min(h);
            let rx1 = (x0 + tw + margin).min(w);
            let region = cube.crop(ry, rx, ry1 - ry, rx1 - rx)?;
            let den = model.denoise(&region)?;
            let rw = rx1 - rx;
            for b in 0..bands {
                let src = den.band(b);
                for y in 0..th {
                    let s = (y0 - ry + y) * rw + (x0 - rx);
                    let d = (b * h + y0 + y) * w + x0;
                    out[d..d + tw].copy_from_slice(&src[s..s + tw]);
                }
            }
        }
    }
    cube.with_data(out)
}
