//! Versioned little-endian checkpoint container.
//!
//! ```text
//! "MSIL"                       4 bytes
//! format version               u32
//! config JSON length, bytes    u64, UTF-8
//! block count                  u32
//! per block:
//!   name length, name          u32, UTF-8
//!   rank                       u32
//!   dims                       rank x u64
//!   payload                    prod(dims) x f32
//! step                         u64
//! ```
//!
//! Parameter blocks come first in lexicographic order, followed by the
//! optimizer moments named `<param>.m` / `<param>.v`, also lexicographic.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::nn::{ParamStore, Tensor2};

use super::adam::AdamState;
use super::TrainConfig;

pub const MAGIC: &[u8; 4] = b"MSIL";
pub const FORMAT_VERSION: u32 = 1;

/// The JSON snapshot stored in the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub params: ParamStore<f32>,
    /// Empty (`t == 0`, no moments) for inference-only checkpoints.
    pub optimizer: AdamState<f32>,
    pub step: u64,
}

struct Block<'a> {
    name: String,
    rank: u32,
    value: &'a Tensor2<f32>,
}

fn dims_of(rank: u32, t: &Tensor2<f32>) -> Vec<u64> {
    if rank == 1 {
        vec![t.len() as u64]
    } else {
        vec![t.rows as u64, t.cols as u64]
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let json = serde_json::to_string(&ck.config).map_err(|e| Error::Config(e.to_string()))?;
    let mut blocks: Vec<Block> = ck
        .params
        .iter()
        .map(|(n, p)| Block {
            name: n.clone(),
            rank: p.rank,
            value: &p.value,
        })
        .collect();
    let mut moments = Vec::new();
    for (suffix, table) in [("m", &ck.optimizer.m), ("v", &ck.optimizer.v)] {
        for (n, t) in table {
            let rank = ck
                .params
                .get(n)
                .map(|p| p.rank)
                .ok_or_else(|| Error::ShapeMismatch(format!("moment for unknown parameter {n}")))?;
            moments.push(Block {
                name: format!("{n}.{suffix}"),
                rank,
                value: t,
            });
        }
    }
    moments.sort_by(|a, b| a.name.cmp(&b.name));
    blocks.extend(moments);

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    out.write_u64::<LittleEndian>(json.len() as u64)?;
    out.extend_from_slice(json.as_bytes());
    out.write_u32::<LittleEndian>(blocks.len() as u32)?;
    for b in &blocks {
        out.write_u32::<LittleEndian>(b.name.len() as u32)?;
        out.extend_from_slice(b.name.as_bytes());
        let dims = dims_of(b.rank, b.value);
        out.write_u32::<LittleEndian>(dims.len() as u32)?;
        for d in dims {
            out.write_u64::<LittleEndian>(d)?;
        }
        for &v in &b.value.data {
            out.write_f32::<LittleEndian>(v)?;
        }
    }
    out.write_u64::<LittleEndian>(ck.step)?;
    Ok(out)
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::CorruptBlock(what.into())
}

fn read_exact_vec(cur: &mut Cursor<&[u8]>, n: u64, what: &str) -> Result<Vec<u8>> {
    let remaining = cur.get_ref().len() as u64 - cur.position();
    if n > remaining {
        return Err(corrupt(format!("{what}: need {n} bytes, {remaining} left")));
    }
    let mut buf = vec![0u8; n as usize];
    cur.read_exact(&mut buf)
        .map_err(|_| corrupt(format!("{what}: short read")))?;
    Ok(buf)
}

fn u32_at(cur: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    cur.read_u32::<LittleEndian>()
        .map_err(|_| corrupt(format!("{what}: truncated")))
}

fn u64_at(cur: &mut Cursor<&[u8]>, what: &str) -> Result<u64> {
    cur.read_u64::<LittleEndian>()
        .map_err(|_| corrupt(format!("{what}: truncated")))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::BadMagic(format!("expected \"MSIL\", found {found:?}")));
    }
    let mut cur = Cursor::new(bytes);
    cur.set_position(4);
    let version = u32_at(&mut cur, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let json_len = u64_at(&mut cur, "config length")?;
    let json = read_exact_vec(&mut cur, json_len, "config")?;
    let config: CheckpointConfig = serde_json::from_slice(&json).map_err(|e| corrupt(format!("config json: {e}")))?;

    let count = u32_at(&mut cur, "block count")?;
    let mut raw: Vec<(String, u32, Tensor2<f32>)> = Vec::new();
    for i in 0..count {
        let nlen = u32_at(&mut cur, "name length")?;
        let name = String::from_utf8(read_exact_vec(&mut cur, nlen as u64, "name")?)
            .map_err(|_| corrupt(format!("block {i}: name is not UTF-8")))?;
        let rank = u32_at(&mut cur, &name)?;
        let (rows, cols) = match rank {
            1 => (1, u64_at(&mut cur, &name)?),
            2 => (u64_at(&mut cur, &name)?, u64_at(&mut cur, &name)?),
            r => return Err(corrupt(format!("{name}: unsupported rank {r}"))),
        };
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt(format!("{name}: dims overflow")))?;
        let payload = read_exact_vec(&mut cur, n, &name)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        raw.push((name, rank, Tensor2::new(rows as usize, cols as usize, data)?));
    }
    let step = u64_at(&mut cur, "step")?;
    if cur.position() as usize != bytes.len() {
        return Err(corrupt(format!(
            "{} trailing bytes after step counter",
            bytes.len() - cur.position() as usize
        )));
    }

    let mut params = ParamStore::new();
    let mut moments: Vec<(String, Tensor2<f32>)> = Vec::new();
    for (name, rank, t) in raw {
        let is_moment = [".m", ".v"]
            .iter()
            .any(|s| name.strip_suffix(s).is_some_and(|base| params.contains(base)));
        if is_moment {
            moments.push((name, t));
        } else if !moments.is_empty() {
            return Err(corrupt(format!("parameter block {name} after moment blocks")));
        } else {
            params.insert(name, t, rank);
        }
    }
    let mut optimizer = AdamState {
        m: BTreeMap::new(),
        v: BTreeMap::new(),
        t: if moments.is_empty() { 0 } else { step },
    };
    for (name, t) in moments {
        let (base, table) = match name.strip_suffix(".m") {
            Some(b) => (b, &mut optimizer.m),
            None => (name.strip_suffix(".v").unwrap_or(&name), &mut optimizer.v),
        };
        if params.get(base).map(|p| p.value.shape()) != Some(t.shape()) {
            return Err(corrupt(format!(
                "{name}: moment shape {:?} differs from parameter",
                t.shape()
            )));
        }
        table.insert(base.to_string(), t);
    }
    Ok(Checkpoint {
        config,
        params,
        optimizer,
        step,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io_at(path.as_ref(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io_at(path.as_ref(), e))?;
    decode_checkpoint(&bytes)
}
