//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SAOC"  version:u32
//! grid_res feature_dim encoder_hidden pointnet_blocks unet_depth decoder_blocks decoder_hidden : u32 x 7
//! tensor_count:u32
//! per tensor: name_len:u32 name:utf8 rank:u32 dims:u64 x rank data:f64 x prod(dims)
//! ```

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::network::{ConvOccNet, NetConfig};

pub const MAGIC: &[u8; 4] = b"SAOC";
pub const VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &ConvOccNet) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        c.grid_res,
        c.feature_dim,
        c.encoder_hidden,
        c.pointnet_blocks,
        c.unet_depth,
        c.decoder_blocks,
        c.decoder_hidden,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.named() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &ConvOccNet, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ConvOccNet> {
    parse_checkpoint(&std::fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Schema {
            name: "<file>".into(),
            message: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<ConvOccNet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Version("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version(format!("unsupported version {version}, expected {VERSION}")));
    }
    let mut c = [0usize; 7];
    for v in &mut c {
        *v = r.u32()? as usize;
    }
    let config = NetConfig {
        grid_res: c[0],
        feature_dim: c[1],
        encoder_hidden: c[2],
        pointnet_blocks: c[3],
        unet_depth: c[4],
        decoder_blocks: c[5],
        decoder_hidden: c[6],
    };
    config.validate()?;
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Schema {
                name: "<name>".into(),
                message: "tensor name is not utf-8".into(),
            })?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or_else(|| Error::Schema {
            name: name.clone(),
            message: "shape overflows".into(),
        })?;
        let raw = r.take(n.checked_mul(8).unwrap_or(usize::MAX))?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Schema {
            name: name.clone(),
            message: e.to_string(),
        })?;
        named.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Schema {
            name: "<file>".into(),
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    ConvOccNet::from_named(config, named)
}
