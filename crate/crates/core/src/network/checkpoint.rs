//! `SSCK v1` checkpoints. Little-endian throughout:
//!
//! ```text
//! magic    "SSCKPT01"
//! version  u32
//! config   u32 × 9 (k, o, n_ssab, fusion_ssab, trunk_channels,
//!          group_channels, reduction, spatial_kernel, bands), u64 seed,
//!          u8 trunk activation, u8 ssab trunk flag
//! count    u32
//! records  count × (u32 name length, name bytes, u32 rank,
//!          u32 × rank extents, f64 payload)
//! checksum u64, CRC-64/XZ of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use super::config::{ModelConfig, TrunkActivation};
use super::model::SscanModel;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::DimensionOverflow(format!("{v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &SscanModel) -> Result<Vec<u8>> {
    let c = model.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        c.group_size,
        c.overlap,
        c.n_ssab,
        c.fusion_ssab,
        c.trunk_channels,
        c.group_channels,
        c.reduction,
        c.spatial_kernel,
        c.bands,
    ] {
        put_u32(&mut buf, v)?;
    }
    buf.extend_from_slice(&c.seed.to_le_bytes());
    buf.push(c.trunk_activation.code());
    buf.push(u8::from(c.ssab_trunk));
    put_u32(&mut buf, model.params().len())?;
    for (_, p) in model.params().iter() {
        put_u32(&mut buf, p.name.len())?;
        buf.extend_from_slice(p.name.as_bytes());
        put_u32(&mut buf, p.tensor.shape().len())?;
        for &e in p.tensor.shape() {
            put_u32(&mut buf, e)?;
        }
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = CHECKSUM.checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(
            Error::Truncated {
                what,
                expected: (self.at as u64).saturating_add(n as u64),
                found: self.bytes.len() as u64,
            },
        )?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SscanModel> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
        });
    }
    let mut r = Reader { bytes, at: 8 };
    let version = r.u32("checkpoint version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    if bytes.len() < 20 {
        return Err(Error::Truncated {
            what: "checkpoint",
            expected: 20,
            found: bytes.len() as u64,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = CHECKSUM.checksum(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: body, at: 12 };
    let mut dims = [0usize; 9];
    for d in &mut dims {
        *d = r.u32("checkpoint config")?;
    }
    let config = ModelConfig {
        group_size: dims[0],
        overlap: dims[1],
        n_ssab: dims[2],
        fusion_ssab: dims[3],
        trunk_channels: dims[4],
        group_channels: dims[5],
        reduction: dims[6],
        spatial_kernel: dims[7],
        bands: dims[8],
        seed: r.u64("checkpoint config")?,
        trunk_activation: TrunkActivation::from_code(r.u8("checkpoint config")?)?,
        ssab_trunk: r.u8("checkpoint config")? != 0,
    };
    let count = r.u32("parameter count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u32("parameter name")?;
        let name = String::from_utf8(r.take(len, "parameter name")?.to_vec())
            .map_err(|_| Error::Header("parameter name is not UTF-8".into()))?;
        let rank = r.u32("parameter rank")?;
        let shape = (0..rank)
            .map(|_| r.u32("parameter extents"))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::DimensionOverflow(format!("`{name}` shape {shape:?}")))?;
        let data = r
            .take(numel, "parameter payload")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.register(name, Tensor::new(shape, data)?)?;
    }
    if r.at != body.len() {
        return Err(Error::Header(format!(
            "{} unexpected bytes after parameter records",
            body.len() - r.at
        )));
    }
    SscanModel::from_parts(config, params)
}

pub fn save_checkpoint(model: &SscanModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SscanModel> {
    decode_checkpoint(&fs::read(path)?)
}
