//! Parameter checkpoints.
//!
//! Layout (version 1), all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "AUGCKPT\0"
//! 8       4     u32 format version (1)
//! 12      4     byte order tag "LE\0\0"
//! 16      20    u32 x 5: height, width, conv1, conv2, classes
//! 36      48    f64 x 6: normalization mean[3], std[3]
//! 84      8     u64 parameter count P
//! 92      8*P   f64 parameters in model layout order
//! ```
//!
//! Momentum buffers are not stored; a loaded model starts with zero velocity.

use std::fs;
use std::path::Path;

use super::{Arch, ModelParams, Normalization};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AUGCKPT\0";
const VERSION: u32 = 1;
const BYTE_ORDER: &[u8; 4] = b"LE\0\0";
const HEADER_LEN: usize = 92;

pub fn encode_checkpoint(params: &ModelParams, norm: &Normalization) -> Vec<u8> {
    let a = &params.arch;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.weights.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(BYTE_ORDER);
    for v in [a.height, a.width, a.conv1, a.conv2, a.classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in norm.mean.iter().chain(&norm.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(params.weights.len() as u64).to_le_bytes());
    for w in &params.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<(ModelParams, Normalization)> {
    let bad = |reason: String| Error::format(origin, reason);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("checkpoint shorter than {HEADER_LEN}-byte header")));
    }
    if &bytes[0..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    if &bytes[12..16] != BYTE_ORDER {
        return Err(bad("unsupported byte order tag".into()));
    }
    let dims: Vec<usize> = (0..5).map(|i| u32_at(16 + 4 * i) as usize).collect();
    let arch = Arch {
        height: dims[0],
        width: dims[1],
        conv1: dims[2],
        conv2: dims[3],
        classes: dims[4],
    };
    arch.validate()?;
    let mut norm = Normalization::identity();
    for c in 0..3 {
        norm.mean[c] = f64_at(36 + 8 * c);
        norm.std[c] = f64_at(60 + 8 * c);
    }
    let count = u64::from_le_bytes(bytes[84..92].try_into().unwrap()) as usize;
    if count != arch.param_count() {
        return Err(bad(format!(
            "header declares {count} parameters, architecture needs {}",
            arch.param_count()
        )));
    }
    if bytes.len() != HEADER_LEN + 8 * count {
        return Err(bad(format!(
            "expected {} bytes, found {}",
            HEADER_LEN + 8 * count,
            bytes.len()
        )));
    }
    let weights = (0..count).map(|i| f64_at(HEADER_LEN + 8 * i)).collect();
    Ok((ModelParams::with_weights(arch, weights)?, norm))
}

pub fn write_checkpoint(path: &Path, params: &ModelParams, norm: &Normalization) -> Result<()> {
    fs::write(path, encode_checkpoint(params, norm)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelParams, Normalization)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
