//! Parameter checkpoint (`.mczp`).
//!
//! ```text
//! magic    "MCZP"
//! version  u32 = 1
//! count    u32              number of tensors
//! shapes   count × (u32 rows, u32 cols)
//! params   f32 × Σ rows·cols, flatten order
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::ModelParams;
use crate::binio::{to_u32, Reader, Writer};
use crate::error::{FormatError, Result};
use crate::numerics::Real;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MCZP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub(crate) fn encode<T: Real>(params: &ModelParams<T>) -> Result<Vec<u8>> {
    let shapes = params.arch.shape_table();
    let mut w = Writer::new();
    w.bytes(&CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(to_u32(shapes.len(), "tensor count")?);
    for (r, c) in &shapes {
        w.u32(to_u32(*r, "rows")?);
        w.u32(to_u32(*c, "cols")?);
    }
    let flat: Vec<f32> = params.flatten().iter().map(|v| v.to_f32().unwrap()).collect();
    w.f32s(&flat);
    Ok(w.finish())
}

/// Loads a checkpoint into `params`, whose architecture must match the stored shape table.
pub(crate) fn decode_into<T: Real>(bytes: &[u8], params: &mut ModelParams<T>) -> Result<()> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let count = r.u32()? as usize;
    let expected = params.arch.shape_table();
    let mut shapes = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        shapes.push((r.u32()? as usize, r.u32()? as usize));
    }
    if shapes != expected {
        return Err(FormatError::Invariant(format!(
            "checkpoint shape table {shapes:?} does not match the configured model {expected:?}"
        ))
        .into());
    }
    let total: usize = shapes.iter().map(|(a, b)| a * b).sum();
    let flat = r.f32s(total)?;
    r.finish()?;
    let flat: Vec<T> = flat.into_iter().map(|v| T::lit(v as f64)).collect();
    params.unflatten(&flat)
}

pub fn write_checkpoint<T: Real>(params: &ModelParams<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(params)?)?;
    Ok(())
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>, params: &mut ModelParams<T>) -> Result<()> {
    let bytes = fs::read(path)?;
    decode_into(&bytes, params)
}
