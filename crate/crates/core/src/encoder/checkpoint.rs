//! Encoder checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! | field        | type     |
//! |--------------|----------|
//! | magic        | `b"UVAR"`|
//! | version      | u32      |
//! | feature_dim  | u32      |
//! | hidden_dim   | u32      |
//! | embed_dim    | u32      |
//! | hash_seed    | u64      |
//! | ngram mask   | u32 (bit n set = order n) |
//!
//! followed by W1, b1, W2, b2 as little-endian f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Encoder, EncoderConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UVAR";
pub const FORMAT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Format(format!("checkpoint i/o: {e}"))
}

pub fn write_encoder<W: Write>(mut w: W, encoder: &Encoder) -> Result<()> {
    let c = encoder.config();
    w.write_all(MAGIC).map_err(io_err)?;
    for v in [
        FORMAT_VERSION,
        c.feature_dim as u32,
        c.hidden_dim as u32,
        c.embed_dim as u32,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&c.hash_seed.to_le_bytes()).map_err(io_err)?;
    w.write_all(&c.ngram_mask().to_le_bytes()).map_err(io_err)?;
    for v in encoder.params() {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_encoder<R: Read>(mut r: R) -> Result<Encoder> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let feature_dim = read_u32(&mut r)? as usize;
    let hidden_dim = read_u32(&mut r)? as usize;
    let embed_dim = read_u32(&mut r)? as usize;
    let mut seed = [0u8; 8];
    r.read_exact(&mut seed)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    let mask = read_u32(&mut r)?;
    let config = EncoderConfig {
        feature_dim,
        hidden_dim,
        embed_dim,
        hash_seed: u64::from_le_bytes(seed),
        ngram_orders: EncoderConfig::orders_from_mask(mask),
    };
    config.validate()?;

    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(io_err)?;
    let expected = config.layout().len() * 4;
    if body.len() != expected {
        return Err(Error::Dimension(format!(
            "checkpoint body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let params = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Encoder::from_parts(config, params)
}

pub fn save_encoder(encoder: &Encoder, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_encoder(BufWriter::new(f), encoder)
}

pub fn load_encoder(path: &Path) -> Result<Encoder> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_encoder(BufReader::new(f))
}
