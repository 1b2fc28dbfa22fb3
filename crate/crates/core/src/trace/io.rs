//! Binary trace files.
//!
//! Layout (little-endian):
//! - magic `NSTR`, version `u32`
//! - SHA-256 digest of the model config encoding (32 bytes)
//! - `n_layers: u32`, `d_ff: u32`
//! - records until end of file: `sample_id: u64`, `label: u16`,
//!   `token_count: u16`, then `n_layers` matrices of
//!   `token_count × d_ff` `f32` values, row-major

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::ActivationTrace;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::tinylm::ModelConfig;

const MAGIC: &[u8; 4] = b"NSTR";
const VERSION: u32 = 1;
const KIND: &str = "trace";
const HEADER_LEN: usize = 4 + 4 + 32 + 4 + 4;

/// Decoded contents of a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub config_digest: [u8; 32],
    pub n_layers: usize,
    pub d_ff: usize,
    pub records: Vec<(ActivationTrace, Label)>,
}

impl TraceFile {
    /// Errors unless the traces were captured from a model with `config`.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.config_digest != config.digest()
            || self.n_layers != config.n_layers
            || self.d_ff != config.d_ff
        {
            return Err(Error::ConfigMismatch { kind: KIND });
        }
        Ok(())
    }
}

pub fn write_traces<W: Write>(
    mut w: W,
    config: &ModelConfig,
    traces: &[(ActivationTrace, Label)],
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&config.digest())?;
    w.write_all(&(config.n_layers as u32).to_le_bytes())?;
    w.write_all(&(config.d_ff as u32).to_le_bytes())?;
    let mut buf = Vec::new();
    for (t, label) in traces {
        if t.n_layers() != config.n_layers || t.d_ff() != config.d_ff {
            return Err(Error::Shape(format!(
                "trace {} does not match the model configuration",
                t.sample_id
            )));
        }
        let tokens = u16::try_from(t.token_count())
            .map_err(|_| Error::Shape(format!("trace {} too long", t.sample_id)))?;
        buf.clear();
        buf.extend_from_slice(&t.sample_id.to_le_bytes());
        buf.extend_from_slice(&label.code().to_le_bytes());
        buf.extend_from_slice(&tokens.to_le_bytes());
        for l in 0..t.n_layers() {
            for v in t.layer(l) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_traces(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    traces: &[(ActivationTrace, Label)],
) -> Result<()> {
    write_traces(BufWriter::new(fs::File::create(path)?), config, traces)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Truncated { kind: KIND });
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn u32_at(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().unwrap())
}

pub fn read_traces<R: Read>(mut r: R) -> Result<TraceFile> {
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    let mut bytes = raw.as_slice();
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { kind: KIND });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { kind: KIND });
    }
    take(&mut bytes, 4)?;
    let version = u32_at(take(&mut bytes, 4)?);
    if version != VERSION {
        return Err(Error::Version {
            kind: KIND,
            found: version,
            expected: VERSION,
        });
    }
    let config_digest: [u8; 32] = take(&mut bytes, 32)?.try_into().unwrap();
    let n_layers = u32_at(take(&mut bytes, 4)?) as usize;
    let d_ff = u32_at(take(&mut bytes, 4)?) as usize;

    let mut records = Vec::new();
    while !bytes.is_empty() {
        let head = take(&mut bytes, 12)?;
        let sample_id = u64::from_le_bytes(head[..8].try_into().unwrap());
        let code = u16::from_le_bytes([head[8], head[9]]);
        let tokens = u16::from_le_bytes([head[10], head[11]]) as usize;
        let label = Label::from_code(code)
            .ok_or_else(|| Error::InvalidInput(format!("unknown label code {code}")))?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let body = take(&mut bytes, tokens * d_ff * 4)?;
            layers.push(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        records.push((
            ActivationTrace::from_layers(sample_id, tokens, d_ff, layers),
            label,
        ));
    }
    Ok(TraceFile {
        config_digest,
        n_layers,
        d_ff,
        records,
    })
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<TraceFile> {
    read_traces(fs::File::open(path)?)
}
