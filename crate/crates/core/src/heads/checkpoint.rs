//! Versioned binary checkpoint.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     8 bytes  "RTGNSVDD"
//! version   u32      FORMAT_VERSION
//! dims      6 × u64  d_m, d_t, p, f, K, hidden
//! head      u8       0 = hypersphere, 1 = gaussian
//! blocks    u32      count, then per block:
//!   tag     u8       0 = f64 tensor, 1 = UTF-8 text
//!   name    u32 length + UTF-8 bytes
//!   tensor: u32 rank, rank × u64 extents, then f64 values
//!   text:   u32 length + UTF-8 bytes
//! ```
//!
//! Blocks: every encoder parameter under its `EncoderParams::blocks` name,
//! `center`, optionally `scaler.mean`/`scaler.std`, and the `config` text
//! echo of the run that produced the model.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::{Center, LossRecord, Model};
use crate::data::Scaler;
use crate::diffcore::Value;
use crate::encoder::{EncoderDims, EncoderParams, HeadKind};

pub const MAGIC: &[u8; 8] = b"RTGNSVDD";
pub const FORMAT_VERSION: u32 = 1;

const TAG_TENSOR: u8 = 0;
const TAG_TEXT: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Trained model plus the feature scaler and a text echo of its config.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub scaler: Option<Scaler>,
    pub config: String,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.push(TAG_TENSOR);
    put_str(out, name);
    put_u32(out, shape.len() as u32);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Malformed("extent overflows usize".into()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(self.pos))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

enum Block {
    Tensor(Value),
    Text(String),
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.model.params;
        let d = p.dims;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        for v in [d.memory, d.time, d.embed, d.features, d.neighbors, d.hidden] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(match p.head {
            HeadKind::Svdd => 0,
            HeadKind::Gaussian => 1,
        });
        let blocks = p.blocks();
        let count = blocks.len() + 1 + if self.scaler.is_some() { 2 } else { 0 } + 1;
        put_u32(&mut out, count as u32);
        for (name, v) in blocks {
            put_tensor(&mut out, name, v.shape(), v.data());
        }
        let c = &self.model.center.0;
        put_tensor(&mut out, "center", c.shape(), c.data());
        if let Some(s) = &self.scaler {
            put_tensor(&mut out, "scaler.mean", &[s.mean.len()], &s.mean);
            put_tensor(&mut out, "scaler.std", &[s.std.len()], &s.std);
        }
        out.push(TAG_TEXT);
        put_str(&mut out, "config");
        put_str(&mut out, &self.config);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let dims = EncoderDims {
            memory: r.usize()?,
            time: r.usize()?,
            embed: r.usize()?,
            features: r.usize()?,
            neighbors: r.usize()?,
            hidden: r.usize()?,
        };
        let head = match r.u8()? {
            0 => HeadKind::Svdd,
            1 => HeadKind::Gaussian,
            other => return Err(CheckpointError::Malformed(format!("unknown head tag {other}"))),
        };
        let count = r.u32()?;
        let mut blocks = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let tag = r.u8()?;
            let name = r.string()?;
            let block = match tag {
                TAG_TENSOR => {
                    let rank = r.u32()? as usize;
                    let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
                    let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                    let len = len.ok_or_else(|| CheckpointError::Malformed(format!("{name}: extent overflow")))?;
                    let data = r.f64s(len)?;
                    Block::Tensor(
                        Value::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?,
                    )
                }
                TAG_TEXT => Block::Text(r.string()?),
                other => return Err(CheckpointError::Malformed(format!("{name}: unknown block tag {other}"))),
            };
            blocks.push((name, block));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }

        let mut params = EncoderParams::init(dims, head, 0);
        let expected: Vec<&'static str> = params.blocks().iter().map(|(n, _)| *n).collect();
        let (mut center, mut mean, mut std, mut config) = (None, None, None, None);
        let mut seen = Vec::new();
        for (name, block) in blocks {
            match (name.as_str(), block) {
                ("config", Block::Text(t)) => config = Some(t),
                ("center", Block::Tensor(v)) => center = Some(v),
                ("scaler.mean", Block::Tensor(v)) => mean = Some(v.data().to_vec()),
                ("scaler.std", Block::Tensor(v)) => std = Some(v.data().to_vec()),
                (n, Block::Tensor(v)) => {
                    let slot = params
                        .block_mut(n)
                        .ok_or_else(|| CheckpointError::Malformed(format!("unknown block `{n}`")))?;
                    if slot.shape() != v.shape() {
                        return Err(CheckpointError::Malformed(format!(
                            "block `{n}` has shape {:?}, dims imply {:?}",
                            v.shape(),
                            slot.shape()
                        )));
                    }
                    *slot = v;
                    seen.push(name);
                }
                (n, Block::Text(_)) => return Err(CheckpointError::Malformed(format!("unexpected text block `{n}`"))),
            }
        }
        if let Some(missing) = expected.iter().find(|n| !seen.iter().any(|s| s == *n)) {
            return Err(CheckpointError::Malformed(format!("missing block `{missing}`")));
        }
        let center = center.ok_or_else(|| CheckpointError::Malformed("missing block `center`".into()))?;
        if center.len() != dims.event_dim() {
            return Err(CheckpointError::Malformed(format!(
                "center has {} entries, dims imply {}",
                center.len(),
                dims.event_dim()
            )));
        }
        let scaler = match (mean, std) {
            (Some(mean), Some(std)) if mean.len() == std.len() => Some(Scaler { mean, std }),
            (None, None) => None,
            _ => return Err(CheckpointError::Malformed("incomplete scaler".into())),
        };
        Ok(Self {
            model: Model {
                params,
                center: Center(center),
            },
            scaler,
            config: config.unwrap_or_default(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Loss trace as CSV: `epoch,positive_loss,negative_loss`.
pub fn write_loss_csv<W: Write>(mut out: W, trace: &[LossRecord]) -> std::io::Result<()> {
    writeln!(out, "epoch,positive_loss,negative_loss")?;
    for r in trace {
        writeln!(out, "{},{},{}", r.epoch, r.positive, r.negative)?;
    }
    Ok(())
}
