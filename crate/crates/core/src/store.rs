//! Binary embedding store.
//!
//! `<path>` holds the matrix (little-endian):
//!
//! | field   | type      |
//! |---------|-----------|
//! | magic   | `b"UVEM"` |
//! | version | u32       |
//! | count N | u64       |
//! | dim d   | u32       |
//!
//! followed by N rows of d f32. `<path>.json` is a JSON array whose entry i
//! describes row i.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusTag, ValueId};
use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::evalharness::EvalItem;

pub const MAGIC: &[u8; 4] = b"UVEM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreRecord {
    pub qa_id: String,
    pub value_id: ValueId,
    pub corpus_tag: CorpusTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    rows: Vec<f32>,
    records: Vec<StoreRecord>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, rows: Vec<f32>, records: Vec<StoreRecord>) -> Result<Self> {
        if dim == 0 || !rows.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "{} values do not form rows of dimension {dim}",
                rows.len()
            )));
        }
        if rows.len() / dim != records.len() {
            return Err(Error::SidecarMismatch {
                rows: rows.len() / dim,
                sidecar: records.len(),
            });
        }
        Ok(EmbeddingStore { dim, rows, records })
    }

    /// Stores embeddings rounded to f32.
    pub fn from_embeddings(embeddings: &[Embedding], records: Vec<StoreRecord>) -> Result<Self> {
        let dim = embeddings.first().map_or(0, Embedding::dim);
        if embeddings.iter().any(|e| e.dim() != dim) {
            return Err(Error::Dimension("embeddings differ in dimension".into()));
        }
        let rows = embeddings
            .iter()
            .flat_map(|e| e.values.iter().map(|&v| v as f32))
            .collect();
        if embeddings.is_empty() {
            return EmbeddingStore::new(1, rows, records).map(|s| EmbeddingStore { dim: 0, ..s });
        }
        EmbeddingStore::new(dim, rows, records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    pub fn embedding(&self, i: usize) -> Embedding {
        Embedding::new(self.row(i).iter().map(|&v| v as f64).collect())
    }

    pub fn eval_items(&self) -> Vec<EvalItem> {
        (0..self.len())
            .map(|i| {
                let r = &self.records[i];
                EvalItem::new(self.embedding(i), r.value_id.clone(), r.corpus_tag)
            })
            .collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = Vec::with_capacity(20);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.len() as u64).to_le_bytes());
        header.extend_from_slice(&(self.dim as u32).to_le_bytes());
        w.write_all(&header).map_err(io_err)?;
        for v in &self.rows {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    /// Reads the matrix; records are left empty and must be attached.
    fn read_matrix<R: Read>(mut r: R) -> Result<(usize, usize, Vec<f32>)> {
        let mut header = [0u8; 20];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("truncated store header".into()))?;
        if &header[..4] != MAGIC {
            return Err(Error::Format(format!("bad store magic {:?}", &header[..4])));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported store version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let n = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
        let d = u32::from_le_bytes(header[16..20].try_into().expect("4 bytes")) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body).map_err(io_err)?;
        if Some(body.len()) != n.checked_mul(d).and_then(|x| x.checked_mul(4)) {
            return Err(Error::Format(format!(
                "store body has {} bytes, header implies {n}x{d} f32",
                body.len()
            )));
        }
        let rows = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((n, d, rows))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(f))?;
        let sp = sidecar_path(path);
        let mut text = serde_json::to_string_pretty(&self.records).expect("records serialize");
        text.push('\n');
        std::fs::write(&sp, text).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let (n, dim, rows) = Self::read_matrix(BufReader::new(f))?;
        let sp = sidecar_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let records: Vec<StoreRecord> = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", sp.display())))?;
        if records.len() != n {
            return Err(Error::SidecarMismatch {
                rows: n,
                sidecar: records.len(),
            });
        }
        Ok(EmbeddingStore { dim, rows, records })
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Format(format!("store i/o: {e}"))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
