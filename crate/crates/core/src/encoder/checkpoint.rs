//! Binary checkpoint format.
//!
//! ```text
//! "CSNT"                 4 bytes magic
//! version                u32 LE
//! metadata length        u32 LE, byte count of the JSON block
//! metadata               UTF-8 JSON (CheckpointMeta)
//! parameters             f32 LE, tensor after tensor:
//!                        embedding, forward LSTM (w_input, w_hidden, bias),
//!                        backward LSTM (same), then each head (w1, b1, w2, b2)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderParams, HeadParams, Model, Params};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSNT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub head_dim: usize,
    pub num_heads: usize,
    /// Task served by each head, in head order.
    pub head_tasks: Vec<String>,
    pub vocab_hash: String,
    pub task: String,
    pub k: usize,
    pub config_hash: String,
}

impl CheckpointMeta {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig::new(self.vocab_size, self.embed_dim, self.hidden_dim)
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    let enc = &model.encoder;
    if meta.vocab_size != enc.vocab_size()
        || meta.embed_dim != enc.embed_dim()
        || meta.hidden_dim != enc.hidden_dim()
        || meta.num_heads != model.heads.len()
    {
        return Err(Error::format(
            "checkpoint metadata",
            "does not describe the model",
        ));
    }
    let json = serde_json::to_vec(meta)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for tensor in model.tensors() {
        for &v in tensor {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Model, CheckpointMeta)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)?;
    if meta.hidden_dim == 0 || meta.embed_dim == 0 || meta.vocab_size == 0 {
        return Err(Error::format("checkpoint", "zero dimension"));
    }
    let encoder = EncoderParams::zeros(&meta.encoder_config());
    let heads = (0..meta.num_heads)
        .map(|_| HeadParams::zeros(2 * meta.hidden_dim, meta.head_dim))
        .collect();
    let mut model = Model { encoder, heads };
    let mut buf = [0u8; 4];
    for tensor in model.tensors_mut() {
        for v in tensor.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| Error::format("checkpoint", "truncated parameter block"))?;
            *v = f32::from_le_bytes(buf) as f64;
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok((model, meta))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, meta)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointMeta)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
