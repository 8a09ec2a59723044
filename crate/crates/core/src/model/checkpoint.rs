//! Model checkpoint file.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 4    | magic `b"SMCK"`                               |
//! | 4      | 4    | format version (`u32`, currently 1)           |
//! | 8      | 4    | model kind (`u32`: 0 linear, 1 embedding)     |
//! | 12     | 4    | activation (`u32`: 0 identity, 1 relu, 2 tanh)|
//! | 16     | 8    | input dimension (`u64`)                       |
//! | 24     | 8    | embedding dimension (`u64`)                   |
//! | 32     | 8    | number of classes (`u64`)                     |
//! | 40     | 8    | parameter count `p` (`u64`)                   |
//! | 48     | 4p   | parameters as `f32`                           |
//!
//! Parameters are stored in the model's flat order. Reading back yields the
//! `f32`-rounded values.

use std::io::{Read, Write};

use super::{Activation, EmbeddingSoftmax, LinearSoftmax, Model, ModelKind};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &dyn Model, out: &mut W) -> std::io::Result<()> {
    let (kind, activation) = match model.kind() {
        ModelKind::Linear => (0u32, Activation::Identity),
        ModelKind::Embedding { activation, .. } => (1u32, activation),
    };
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&kind.to_le_bytes())?;
    out.write_all(&activation.tag().to_le_bytes())?;
    for v in [
        model.input_dim(),
        model.embed_dim(),
        model.num_classes(),
        model.params().len(),
    ] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    for &p in model.params() {
        out.write_all(&(p as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Box<dyn Model>> {
    let bad = |msg: &str| Error::Parse {
        line: 0,
        msg: format!("checkpoint: {msg}"),
    };
    let mut header = [0u8; 48];
    input
        .read_exact(&mut header)
        .map_err(|_| bad("truncated header"))?;
    if header[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap()) as usize;
    if u32_at(4) != CHECKPOINT_VERSION {
        return Err(bad("unsupported version"));
    }
    let activation = Activation::from_tag(u32_at(12)).ok_or_else(|| bad("unknown activation"))?;
    let (d, m, c, p) = (u64_at(16), u64_at(24), u64_at(32), u64_at(40));
    let mut blob = Vec::new();
    input
        .read_to_end(&mut blob)
        .map_err(|_| bad("unreadable parameters"))?;
    if blob.len() != p.checked_mul(4).ok_or_else(|| bad("parameter count overflow"))? {
        return Err(bad("parameter blob length does not match header"));
    }
    let params: Vec<f64> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let model: Box<dyn Model> = match u32_at(8) {
        0 => Box::new(LinearSoftmax::from_params(d, c, params).ok_or_else(|| bad("shape mismatch"))?),
        1 => Box::new(
            EmbeddingSoftmax::from_params(d, m, c, activation, params)
                .ok_or_else(|| bad("shape mismatch"))?,
        ),
        _ => return Err(bad("unknown model kind")),
    };
    Ok(model)
}
