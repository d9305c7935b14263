//! Binary checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "WPFMCKPT"
//! 8       4     format version, u32 LE (currently 1)
//! 12      8     header length H in bytes, u64 LE
//! 20      H     UTF-8 JSON header (CheckpointHeader)
//! 20+H    8     parameter count P, u64 LE
//! 28+H    8*P   parameters, f64 LE, in layout declaration order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, VelocityField};
use crate::flowmatch::TimeConvention;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WPFMCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub parameters: Vec<ParamShape>,
    pub step_count: u64,
    /// Hex SHA-256 of the resolved training config, or empty.
    pub config_hash: String,
    pub time_convention: TimeConvention,
    /// Free-form resolved config snapshot.
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub net: VelocityField,
}

impl Checkpoint {
    pub fn new(net: VelocityField, step_count: u64, config_hash: String, time_convention: TimeConvention, config: serde_json::Value) -> Self {
        let header = CheckpointHeader {
            architecture: net.architecture().clone(),
            parameters: net
                .layout()
                .iter()
                .map(|s| ParamShape {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                })
                .collect(),
            step_count,
            config_hash,
            time_convention,
            config,
        };
        Self { header, net }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let header = serde_json::to_vec(&ckpt.header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let params = ckpt.net.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, not a checkpoint"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::format(8, format!("unsupported checkpoint version {version}")));
    }
    let header_len = c.u64("header length")?;
    let header_at = c.pos as u64;
    let header_len = usize::try_from(header_len).map_err(|_| Error::format(12, "header length overflows"))?;
    let header: CheckpointHeader = serde_json::from_slice(c.take(header_len, "header")?)
        .map_err(|e| Error::format(header_at, format!("bad header JSON: {e}")))?;
    let count_at = c.pos as u64;
    let count = c.u64("parameter count")?;
    let count = usize::try_from(count).map_err(|_| Error::format(count_at, "parameter count overflows"))?;
    let raw = c.take(count.checked_mul(8).ok_or_else(|| Error::format(count_at, "parameter count overflows"))?, "parameters")?;
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos as u64, "trailing bytes after parameters"));
    }
    let params: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    let net = VelocityField::from_params(header.architecture.clone(), params).map_err(|e| match e {
        Error::DimensionMismatch { expected, got } => Error::format(count_at, format!("parameter count {got} does not match architecture ({expected})")),
        other => other,
    })?;
    let shapes_match = net.layout().len() == header.parameters.len()
        && net
            .layout()
            .iter()
            .zip(&header.parameters)
            .all(|(a, b)| a.name == b.name && a.shape == b.shape);
    if !shapes_match {
        return Err(Error::format(header_at, "parameter shapes disagree with architecture"));
    }
    Ok(Checkpoint { header, net })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(std::fs::File::open(path)?)
}
