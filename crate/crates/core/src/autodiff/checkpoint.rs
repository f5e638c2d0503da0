//! Binary tensor container used by checkpoints.
//!
//! Layout: magic `SSCKPT01`, little-endian `u32` header length, a JSON
//! header, then each tensor's values as raw little-endian `f64` in header
//! order. The header carries arbitrary JSON metadata (network specs, step,
//! schedule) plus the shape table the payload is decoded against.

use super::tensor::Tensor;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SSCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

/// Named tensors plus free-form JSON metadata.
#[derive(Debug, Clone)]
pub struct TensorFile {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl TensorFile {
    pub fn new(meta: serde_json::Value) -> TensorFile {
        TensorFile { tensors: Vec::new(), meta }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// All tensors under a `prefix/` namespace, in file order.
    pub fn group(&self, prefix: &str) -> Vec<Tensor> {
        let key = format!("{prefix}/");
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with(&key))
            .map(|(_, t)| t.clone())
            .collect()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = Header {
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for (_, t) in &self.tensors {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<TensorFile> {
        let mut magic = [0u8; 8];
        read_exact_at(r, &mut magic, 0)?;
        if &magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic {:?}, expected {:?}", magic, MAGIC),
            });
        }
        let mut len_bytes = [0u8; 4];
        read_exact_at(r, &mut len_bytes, 8)?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        read_exact_at(r, &mut header_bytes, 12)?;
        let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| Error::Format {
            offset: 12,
            msg: format!("header JSON: {e}"),
        })?;
        let mut offset = 12 + header_len as u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n = entry.rows * entry.cols;
            let mut data = vec![0.0f64; n];
            let mut buf = vec![0u8; n * 8];
            read_exact_at(r, &mut buf, offset)?;
            for (i, chunk) in buf.chunks_exact(8).enumerate() {
                data[i] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            offset += (n * 8) as u64;
            tensors.push((entry.name.clone(), Tensor::from_vec(entry.rows, entry.cols, data)));
        }
        Ok(TensorFile { tensors, meta: header.meta })
    }

    /// Atomic save: write to a sibling temp file, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TensorFile> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        TensorFile::read_from(&mut f)
    }
}

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Format {
        offset,
        msg: format!("truncated: {e}"),
    })
}
