//! `HSIC v1` cube files and plain-text sidecar header import.
//!
//! Layout of an `HSIC v1` file, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "HSICUBE1"
//! height     u32
//! width      u32
//! bands      u32
//! dtype      u8       1 = f32, 2 = f64
//! flags      u8       bit 0: band scale table present
//! [scale]    bands × (f64 min, f64 max)     when flag bit 0 is set
//! payload    height·width·bands samples, band-sequential
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{HsiCube, SampleType};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 8] = b"HSICUBE1";
const HEADER_LEN: usize = 8 + 12 + 2;
const FLAG_SCALE: u8 = 1;

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| Error::DimensionOverflow(format!("extent {v} exceeds u32")))
    };
    out.write_all(CUBE_MAGIC)?;
    for v in [cube.height(), cube.width(), cube.bands()] {
        out.write_all(&dim(v)?.to_le_bytes())?;
    }
    out.write_all(&[cube.sample_type().code()])?;
    out.write_all(&[if cube.band_scale().is_some() { FLAG_SCALE } else { 0 }])?;
    if let Some(scale) = cube.band_scale() {
        for &(lo, hi) in scale {
            out.write_all(&lo.to_le_bytes())?;
            out.write_all(&hi.to_le_bytes())?;
        }
    }
    match cube.sample_type() {
        SampleType::F32 => {
            for &v in cube.data() {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        SampleType::F64 => {
            for &v in cube.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let bytes = fs::read(path)?;
    parse_cube(&bytes)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn read_f64(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

pub(crate) fn parse_cube(bytes: &[u8]) -> Result<HsiCube> {
    if bytes.len() < CUBE_MAGIC.len() || &bytes[..8] != CUBE_MAGIC {
        let found = &bytes[..bytes.len().min(8)];
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CUBE_MAGIC).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            what: "cube header",
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let (h, w, b) = (
        read_u32(bytes, 8) as u64,
        read_u32(bytes, 12) as u64,
        read_u32(bytes, 16) as u64,
    );
    if h == 0 || w == 0 || b == 0 {
        return Err(Error::Header(format!("zero extent in {h}x{w}x{b}")));
    }
    let sample_type = SampleType::from_code(bytes[20])?;
    let flags = bytes[21];
    let scale_len = if flags & FLAG_SCALE != 0 { b * 16 } else { 0 };
    let payload_len = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(b))
        .and_then(|v| v.checked_mul(sample_type.size() as u64))
        .filter(|v| usize::try_from(*v).is_ok())
        .ok_or_else(|| Error::DimensionOverflow(format!("{h}x{w}x{b} payload")))?;
    let expected = HEADER_LEN as u64 + scale_len + payload_len;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated {
            what: "cube payload",
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::Header(format!(
            "{} trailing bytes after payload",
            found - expected
        )));
    }

    let mut at = HEADER_LEN;
    let scale = (scale_len > 0).then(|| {
        (0..b as usize)
            .map(|i| (read_f64(bytes, at + i * 16), read_f64(bytes, at + i * 16 + 8)))
            .collect::<Vec<_>>()
    });
    at += scale_len as usize;
    let payload = &bytes[at..];
    let data: Vec<f64> = match sample_type {
        SampleType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        SampleType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let mut cube = HsiCube::new(h as usize, w as usize, b as usize, data)?;
    cube.set_band_scale(scale)?;
    cube.set_sample_type(sample_type);
    Ok(cube)
}

/// Reads an `HSIC v1` file, or a raw band-sequential file described by a
/// sidecar header when `path` ends in `.hdr`.
pub fn load_any(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("hdr") => load_envi(path),
        _ => load_cube(path),
    }
}

fn parse_header(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') || line.eq_ignore_ascii_case("envi") {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Header(format!("expected `key = value`, got `{line}`")));
        };
        let mut value = value.trim().to_string();
        // Brace-delimited values may span lines.
        if value.starts_with('{') {
            while !value.contains('}') {
                let next = lines
                    .next()
                    .ok_or_else(|| Error::Header(format!("unterminated value for `{}`", key.trim())))?;
                value.push(' ');
                value.push_str(next.trim());
            }
        }
        map.insert(key.trim().to_ascii_lowercase(), value);
    }
    Ok(map)
}

fn header_count(map: &HashMap<String, String>, key: &'static str) -> Result<usize> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::Header(format!("missing `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Header(format!("`{key}` is not a count: `{raw}`")))
}

/// Data file next to a sidecar header: the header path without `.hdr`, or
/// with one of the usual raw extensions.
fn sidecar_data_path(header: &Path) -> Result<PathBuf> {
    let stem = header.with_extension("");
    let mut candidates = vec![stem.clone()];
    for ext in ["raw", "img", "dat", "bsq", "bin"] {
        candidates.push(stem.with_extension(ext));
    }
    candidates
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Header(format!("no data file found next to {}", header.display())))
}

pub fn load_envi(header: impl AsRef<Path>) -> Result<HsiCube> {
    let header = header.as_ref();
    let data = sidecar_data_path(header)?;
    load_envi_with_data(header, data)
}

/// Imports a raw band-sequential cube described by `key = value` lines:
/// `samples`, `lines`, `bands`, `data type`, optional `interleave` (must be
/// `bsq`), `byte order` and `header offset`.
pub fn load_envi_with_data(header: impl AsRef<Path>, data: impl AsRef<Path>) -> Result<HsiCube> {
    let map = parse_header(&fs::read_to_string(header)?)?;
    let width = header_count(&map, "samples")?;
    let height = header_count(&map, "lines")?;
    let bands = header_count(&map, "bands")?;
    let dtype = header_count(&map, "data type")?;
    if let Some(il) = map.get("interleave") {
        if !il.eq_ignore_ascii_case("bsq") {
            return Err(Error::Unsupported {
                what: "interleave",
                value: il.clone(),
            });
        }
    }
    let big_endian = map.get("byte order").map(|v| v.trim() == "1").unwrap_or(false);
    let offset = if map.contains_key("header offset") {
        header_count(&map, "header offset")?
    } else {
        0
    };
    let size = match dtype {
        1 => 1,
        2 | 12 => 2,
        3 | 4 => 4,
        5 => 8,
        other => {
            return Err(Error::Unsupported {
                what: "data type",
                value: other.to_string(),
            })
        }
    };
    let count = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(bands))
        .ok_or_else(|| Error::DimensionOverflow(format!("{height}x{width}x{bands}")))?;
    let bytes = fs::read(data)?;
    let needed = count
        .checked_mul(size)
        .and_then(|v| v.checked_add(offset))
        .ok_or_else(|| Error::DimensionOverflow(format!("{count} samples of {size} bytes")))?;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: "raw cube payload",
            expected: needed as u64,
            found: bytes.len() as u64,
        });
    }
    let raw = &bytes[offset..needed];
    macro_rules! decode {
        ($t:ty) => {
            raw.chunks_exact(size)
                .map(|c| {
                    let arr = c.try_into().expect("sample width");
                    (if big_endian {
                        <$t>::from_be_bytes(arr)
                    } else {
                        <$t>::from_le_bytes(arr)
                    }) as f64
                })
                .collect::<Vec<f64>>()
        };
    }
    let values = match dtype {
        1 => raw.iter().map(|&v| v as f64).collect(),
        2 => decode!(i16),
        12 => decode!(u16),
        3 => decode!(i32),
        4 => decode!(f32),
        _ => decode!(f64),
    };
    let mut cube = HsiCube::new(height, width, bands, values)?;
    if dtype == 4 {
        cube.set_sample_type(SampleType::F32);
    }
    Ok(cube)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> HsiCube {
        HsiCube::from_fn(4, 5, 3, |y, x, b| ((y * 31 + x * 17 + b * 7) % 13) as f64 / 13.0 - 0.2)
            .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        let cube = sample().normalize();
        save_cube(&cube, &path).unwrap();
        let back = load_cube(&path).unwrap();
        assert_eq!(back, cube);
        assert!(back
            .data()
            .iter()
            .zip(cube.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn f32_cubes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        let mut cube = sample();
        cube.set_sample_type(SampleType::F32);
        save_cube(&cube, &path).unwrap();
        let once = load_cube(&path).unwrap();
        save_cube(&once, &path).unwrap();
        assert_eq!(load_cube(&path).unwrap(), once);
        assert_eq!(once.sample_type(), SampleType::F32);
    }

    #[test]
    fn distinct_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        save_cube(&sample(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();

        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_cube(&bytes), Err(Error::Truncated { .. })));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_cube(&bad), Err(Error::BadMagic { .. })));

        let mut huge = fs::read(&path).unwrap();
        huge[8..20].fill(0xff);
        huge[20] = 2;
        let err = parse_cube(&huge).unwrap_err();
        assert!(
            matches!(err, Error::DimensionOverflow(_) | Error::Truncated { .. }),
            "{err}"
        );

        let mut code = fs::read(&path).unwrap();
        code[20] = 9;
        assert!(matches!(parse_cube(&code), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn header_advertising_more_payload_is_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        save_cube(&sample(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[16..20].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(parse_cube(&bytes), Err(Error::Truncated { .. })));
    }

    #[test]
    fn envi_sidecar_import() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("scene.raw");
        let hdr = dir.path().join("scene.hdr");
        let values: Vec<u16> = (0..2 * 3 * 2).map(|v| v * 100).collect();
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&raw, bytes).unwrap();
        fs::write(
            &hdr,
            "ENVI\ndescription = {\n  test scene }\nsamples = 3\nlines = 2\nbands = 2\n\
             header offset = 0\nfile type = ENVI Standard\ndata type = 12\ninterleave = bsq\n\
             byte order = 0\n",
        )
        .unwrap();
        let cube = load_any(&hdr).unwrap();
        assert_eq!(cube.dims(), (2, 3, 2));
        assert_eq!(cube.get(1, 2, 1), 1100.0);

        fs::write(&hdr, "samples = 3\nlines = 2\nbands = 2\ndata type = 12\ninterleave = bil\n").unwrap();
        assert!(matches!(load_envi(&hdr), Err(Error::Unsupported { .. })));
        fs::write(&hdr, "samples = 3\nbands = 2\ndata type = 12\n").unwrap();
        assert!(matches!(load_envi(&hdr), Err(Error::Header(_))));
    }
}
