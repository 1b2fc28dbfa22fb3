//! Model checkpoints: magic `NSLM`, version `u32`, the encoded
//! [`ModelConfig`], then every parameter tensor in declaration order as
//! little-endian `f32`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{tensor_shapes, Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NSLM";
const VERSION: u32 = 1;
const KIND: &str = "checkpoint";

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&model.config().to_bytes())?;
    let mut buf = Vec::with_capacity(model.num_params() * 4);
    for &p in model.params() {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    write_checkpoint(BufWriter::new(fs::File::create(path)?), model)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() < 4 || &raw[..4] != MAGIC {
        return Err(Error::BadMagic { kind: KIND });
    }
    let header = 8 + ModelConfig::ENCODED_LEN;
    if raw.len() < header {
        return Err(Error::Truncated { kind: KIND });
    }
    let version = u32::from_le_bytes(raw[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version {
            kind: KIND,
            found: version,
            expected: VERSION,
        });
    }
    let config = ModelConfig::from_bytes(&raw[8..header]).ok_or(Error::Truncated { kind: KIND })?;
    config.validate()?;
    let expected: usize = tensor_shapes(&config).iter().map(|(_, r, c)| r * c).sum();
    let body = &raw[header..];
    if body.len() < expected * 4 {
        return Err(Error::Truncated { kind: KIND });
    }
    if body.len() > expected * 4 {
        return Err(Error::Shape(format!(
            "{} trailing bytes after parameters",
            body.len() - expected * 4
        )));
    }
    let params = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Model::from_params(config, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(fs::File::open(path)?)
}
