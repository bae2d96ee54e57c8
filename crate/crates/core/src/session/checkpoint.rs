//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! ```text
//! "HCRL" | u32 format_version
//! u32 env code | u32 obs_dim | u32 action_count | u32 max_level | u32 max_episode_steps
//! u32 hidden layer count | u32 width ...
//! u64 params version | u64 param count | f64 params ...
//! u8 has_optimizer [ u64 timestep | f64 lr, beta1, beta2, epsilon | f64 m ... | f64 v ... ]
//! u32 crc32 of every preceding byte
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::env::{EnvDescriptor, EnvId};
use crate::nn::{AdamState, MlpSpec, PolicyParams};

pub const MAGIC: &[u8; 4] = b"HCRL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    VersionUnsupported(u32),
    #[error("checksum mismatch (corrupt or truncated file)")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: EnvDescriptor,
    pub spec: MlpSpec,
    pub params: PolicyParams,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(descriptor: EnvDescriptor, spec: MlpSpec, params: PolicyParams, optimizer: Option<AdamState>) -> Self {
        Self { descriptor, spec, params, optimizer }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(checkpoint: &Checkpoint) -> Vec<u8> {
    let Checkpoint { descriptor: d, spec, params, optimizer } = checkpoint;
    let mut out = Vec::with_capacity(64 + params.values.len() * 8 * 3);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, d.env_id.code());
    put_u32(&mut out, d.obs_dim as u32);
    put_u32(&mut out, d.action_count as u32);
    put_u32(&mut out, d.max_level);
    put_u32(&mut out, d.max_episode_steps);
    put_u32(&mut out, spec.hidden.len() as u32);
    for &w in &spec.hidden {
        put_u32(&mut out, w as u32);
    }
    put_u64(&mut out, params.version);
    put_u64(&mut out, params.values.len() as u64);
    put_f64s(&mut out, &params.values);
    match optimizer {
        None => out.push(0),
        Some(adam) => {
            out.push(1);
            put_u64(&mut out, adam.timestep);
            put_f64s(&mut out, &[adam.lr, adam.beta1, adam.beta2, adam.epsilon]);
            put_f64s(&mut out, &adam.first_moment);
            put_f64s(&mut out, &adam.second_moment);
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Malformed(format!("unexpected end at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let len = n.checked_mul(8).ok_or_else(|| CheckpointError::Malformed("length overflow".into()))?;
        let raw = self.take(len)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

/// Checks magic, then checksum, then format version.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionUnsupported(version));
    }

    let code = r.u32()?;
    let env_id = EnvId::from_code(code).ok_or_else(|| CheckpointError::Malformed(format!("unknown env code {code}")))?;
    let descriptor = EnvDescriptor {
        env_id,
        obs_dim: r.u32()? as usize,
        action_count: r.u32()? as usize,
        max_level: r.u32()?,
        max_episode_steps: r.u32()?,
    };
    let layers = r.u32()? as usize;
    if layers > 64 {
        return Err(CheckpointError::Malformed(format!("{layers} hidden layers")));
    }
    let hidden = (0..layers).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>, _>>()?;
    let spec = MlpSpec::new(descriptor.obs_dim, hidden, descriptor.action_count)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;

    let params_version = r.u64()?;
    let count = r.u64()? as usize;
    if count != spec.param_count() {
        return Err(CheckpointError::Malformed(format!(
            "{count} parameters stored, architecture needs {}",
            spec.param_count()
        )));
    }
    let values = r.f64s(count)?;
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let timestep = r.u64()?;
            let hyper = r.f64s(4)?;
            Some(AdamState {
                first_moment: r.f64s(count)?,
                second_moment: r.f64s(count)?,
                timestep,
                lr: hyper[0],
                beta1: hyper[1],
                beta2: hyper[2],
                epsilon: hyper[3],
            })
        }
        flag => return Err(CheckpointError::Malformed(format!("optimizer flag {flag}"))),
    };
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint { descriptor, spec, params: PolicyParams { values, version: params_version }, optimizer })
}

/// Writes atomically (temp file + rename) and returns the path.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<PathBuf, CheckpointError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(checkpoint))?;
    fs::rename(&tmp, path)?;
    Ok(path.to_path_buf())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&fs::read(path)?)
}
