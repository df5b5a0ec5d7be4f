//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "RQADCKPT"
//! version    u32
//! header     u32 length + JSON {config, stage, meta, head}
//! blocks     u32 count, then per block:
//!              u16 name length + UTF-8 name, u8 decay flag,
//!              u8 rank + rank × u64 dims, numel × f64 values
//! digest     32-byte SHA-256 of everything above
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encoder::EncoderParams;
use super::heads::{HeadKind, TaskHead};
use super::{EncoderConfig, ModelError, ParamSet};
use crate::tensor::{numel, Tensor};
use crate::Scalar;

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: &[u8; 8] = b"RQADCKPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrained,
    Adapted,
    Finetuned,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrained => "pretrained",
            Stage::Adapted => "adapted",
            Stage::Finetuned => "finetuned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub final_val_loss: Option<f64>,
    /// Free-form provenance such as the task or vocabulary size.
    #[serde(default)]
    pub notes: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar = f64> {
    pub stage: Stage,
    pub meta: CheckpointMeta,
    pub encoder: EncoderParams<T>,
    pub head: Option<TaskHead<T>>,
}

/// A checkpoint whose stage differs from what the caller expected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageWarning {
    pub found: Stage,
    pub expected: Vec<Stage>,
}

impl fmt::Display for StageWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let expected: Vec<String> = self.expected.iter().map(Stage::to_string).collect();
        write!(
            f,
            "checkpoint stage is {} but {} was expected",
            self.found,
            expected.join(" or ")
        )
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn check_stage(&self, expected: &[Stage]) -> Option<StageWarning> {
        (!expected.contains(&self.stage)).then(|| StageWarning {
            found: self.stage,
            expected: expected.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let header = Header {
            config: self.encoder.config.clone(),
            stage: self.stage,
            meta: self.meta.clone(),
            head: self.head.as_ref().map(|h| h.kind),
        };
        let json = serde_json::to_vec(&header).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let blocks: Vec<_> = self
            .encoder
            .set
            .blocks
            .iter()
            .chain(self.head.iter().flat_map(|h| &h.params.blocks))
            .collect();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for b in blocks {
            out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.push(b.decay as u8);
            out.push(b.tensor.shape().len() as u8);
            for &d in b.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in b.tensor.data() {
                out.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(ModelError::Corrupt("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(ModelError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 12 + 32 {
            return Err(ModelError::Corrupt("truncated file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ModelError::Corrupt("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| ModelError::Corrupt(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut all = ParamSet::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| ModelError::Corrupt("block name is not UTF-8".into()))?
                .to_string();
            let decay = r.u8()? != 0;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n = numel(&shape);
            let raw = r.take(n.checked_mul(8).ok_or_else(|| ModelError::Corrupt("block too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            all.push(name, Tensor::new(shape, data)?, decay);
        }
        if r.pos != body.len() {
            return Err(ModelError::Corrupt("trailing bytes after parameter blocks".into()));
        }
        let n_head = match header.head {
            None => 0,
            Some(HeadKind::Mlm { tied: true }) => 1,
            Some(_) => 2,
        };
        if all.blocks.len() < n_head {
            return Err(ModelError::Corrupt("missing head blocks".into()));
        }
        let head_blocks = all.blocks.split_off(all.blocks.len() - n_head);
        let encoder = EncoderParams {
            config: header.config,
            set: all,
        };
        encoder.validate()?;
        let head = header.head.map(|kind| TaskHead {
            kind,
            params: ParamSet {
                blocks: head_blocks,
            },
        });
        if let Some(h) = &head {
            h.validate(&encoder)?;
        }
        Ok(Self {
            stage: header.stage,
            meta: header.meta,
            encoder,
            head,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: EncoderConfig,
    stage: Stage,
    meta: CheckpointMeta,
    head: Option<HeadKind>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::Corrupt("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint<T: Scalar>(checkpoint: &Checkpoint<T>, path: &Path) -> Result<(), ModelError> {
    fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

/// Loads a checkpoint and logs a warning when its stage is not one of `expected`.
/// An empty `expected` accepts any stage.
pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    expected: &[Stage],
) -> Result<(Checkpoint<T>, Option<StageWarning>), ModelError> {
    let ckpt = Checkpoint::from_bytes(&fs::read(path)?)?;
    let warning = if expected.is_empty() {
        None
    } else {
        ckpt.check_stage(expected)
    };
    if let Some(w) = &warning {
        log::warn!("{}: {w}", path.display());
    }
    Ok((ckpt, warning))
}
