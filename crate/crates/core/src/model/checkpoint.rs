//! Binary checkpoint format.
//!
//! Layout (all little-endian): magic `WSCK`, u32 version, the arch block
//! (eight u32 fields, then six f64 bounds), a named-tensor table (u32
//! count; per tensor a u16 name length, the UTF-8 name, u8 ndim, u32 dims,
//! and the f64 payload), a u8 optimizer flag (if 1: u64 step, f64 lr, then
//! first/second moment payloads in table order), and a metadata block
//! (u64 seed, u64 steps, f64 final loss). Round-trips are bit-exact.

use std::io::Read;
use std::path::Path;

use super::{ArchConfig, WorldStringModel};
use crate::error::{Error, Result};
use crate::geo::Aabb;
use crate::numerics::{AdamState, ParamSet, Tensor};

const CKPT_MAGIC: &[u8; 4] = b"WSCK";
const CKPT_VERSION: u32 = 1;

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub steps: u64,
    pub final_loss: f64,
}

/// A loaded checkpoint.
pub struct Checkpoint {
    pub model: WorldStringModel,
    pub optimizer: Option<AdamState>,
    pub meta: CheckpointMeta,
    /// Size of the checkpoint file in bytes (the baselines' storage budget).
    pub bytes: u64,
}

pub fn checkpoint_bytes(
    model: &WorldStringModel,
    optimizer: Option<&AdamState>,
    meta: &CheckpointMeta,
) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    for v in [
        c.tokens,
        c.token_dim,
        c.state_dim,
        c.object_dim,
        c.layers,
        c.pe_frequencies,
        c.keypoints,
        c.train_res,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in c.bounds.min.iter().chain(c.bounds.max.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match optimizer {
        Some(adam) => {
            out.push(1);
            out.extend_from_slice(&adam.step.to_le_bytes());
            out.extend_from_slice(&adam.lr.to_le_bytes());
            for (m, v) in adam.moments() {
                for x in m {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        None => out.push(0),
    }
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&meta.steps.to_le_bytes());
    out.extend_from_slice(&meta.final_loss.to_le_bytes());
    out
}

/// Write a checkpoint; returns the file size in bytes.
pub fn save_checkpoint(
    path: &Path,
    model: &WorldStringModel,
    optimizer: Option<&AdamState>,
    meta: &CheckpointMeta,
) -> Result<u64> {
    let bytes = checkpoint_bytes(model, optimizer, meta);
    std::fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let total = bytes.len() as u64;
    let mut cur = std::io::Cursor::new(bytes.as_slice());

    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::format("checkpoint: truncated header"))?;
    if &magic != CKPT_MAGIC {
        return Err(Error::format(format!("checkpoint: bad magic {magic:?}")));
    }
    let version = read_u32(&mut cur)?;
    if version != CKPT_VERSION {
        return Err(Error::format(format!(
            "checkpoint: unsupported version {version}"
        )));
    }
    let mut arch_u = [0usize; 8];
    for v in &mut arch_u {
        *v = read_u32(&mut cur)? as usize;
    }
    let mut b = [0.0f64; 6];
    for v in &mut b {
        *v = read_f64(&mut cur)?;
    }
    let config = ArchConfig {
        tokens: arch_u[0],
        token_dim: arch_u[1],
        state_dim: arch_u[2],
        object_dim: arch_u[3],
        layers: arch_u[4],
        pe_frequencies: arch_u[5],
        keypoints: arch_u[6],
        train_res: arch_u[7],
        bounds: Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]])
            .map_err(|e| Error::format(format!("checkpoint: {e}")))?,
    };

    let count = read_u32(&mut cur)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u16(&mut cur)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name)
            .map_err(|_| Error::format("checkpoint: truncated name"))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format("checkpoint: non-UTF8 name"))?;
        let ndim = read_u8(&mut cur)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut cur)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(read_f64(&mut cur)?);
        }
        params.insert(
            name,
            Tensor::new(shape, data).map_err(|e| Error::format(format!("checkpoint: {e}")))?,
        )?;
    }
    let model = WorldStringModel::from_parts(config, params)?;

    let optimizer = match read_u8(&mut cur)? {
        0 => None,
        1 => {
            let step = read_u64(&mut cur)?;
            let lr = read_f64(&mut cur)?;
            let mut moments = Vec::with_capacity(model.params().len());
            for (_, t) in model.params().iter() {
                let n = t.numel();
                let mut m = Vec::with_capacity(n);
                for _ in 0..n {
                    m.push(read_f64(&mut cur)?);
                }
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(read_f64(&mut cur)?);
                }
                moments.push((m, v));
            }
            Some(AdamState::restore(step, lr, moments))
        }
        other => {
            return Err(Error::format(format!(
                "checkpoint: bad optimizer flag {other}"
            )))
        }
    };

    let meta = CheckpointMeta {
        seed: read_u64(&mut cur)?,
        steps: read_u64(&mut cur)?,
        final_loss: read_f64(&mut cur)?,
    };
    if cur.position() as usize != cur.get_ref().len() {
        return Err(Error::format("checkpoint: trailing bytes"));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        meta,
        bytes: total,
    })
}

fn read_u8(cur: &mut std::io::Cursor<&[u8]>) -> Result<u8> {
    let mut b = [0u8; 1];
    cur.read_exact(&mut b)
        .map_err(|_| Error::format("checkpoint: truncated"))?;
    Ok(b[0])
}

fn read_u16(cur: &mut std::io::Cursor<&[u8]>) -> Result<u16> {
    let mut b = [0u8; 2];
    cur.read_exact(&mut b)
        .map_err(|_| Error::format("checkpoint: truncated"))?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(cur: &mut std::io::Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)
        .map_err(|_| Error::format("checkpoint: truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut std::io::Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b)
        .map_err(|_| Error::format("checkpoint: truncated"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(cur: &mut std::io::Cursor<&[u8]>) -> Result<f64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b)
        .map_err(|_| Error::format("checkpoint: truncated"))?;
    Ok(f64::from_le_bytes(b))
}
