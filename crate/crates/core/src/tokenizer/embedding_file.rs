//! Precomputed text-embedding container.
//!
//! ```text
//! protdat-emb-1
//! d_text <width>
//! records <count>
//! <record id>\t<byte offset>\t<token count>     (one line per record)
//! data
//! <row-major little-endian f32 blocks>
//! ```
//!
//! Offsets are relative to the first byte after the `data` line.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::numerics::Matrix;

pub const EMBEDDING_FORMAT: &str = "protdat-emb-1";

#[derive(Debug, Error)]
pub enum EmbeddingFileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding file header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("record {id:?}: block at {offset}+{len} exceeds {available} data bytes")]
    OutOfBounds { id: String, offset: usize, len: usize, available: usize },
    #[error("duplicate record id {0:?}")]
    Duplicate(String),
    #[error("invalid record id {0:?}")]
    InvalidId(String),
    #[error("non-finite value in record {0:?}")]
    NonFinite(String),
}

/// Embedding matrices keyed by record id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    d_text: usize,
    order: Vec<String>,
    rows: HashMap<String, Matrix>,
}

fn header_err(line: usize, msg: impl Into<String>) -> EmbeddingFileError {
    EmbeddingFileError::Header { line, msg: msg.into() }
}

fn keyed_number(line: &str, key: &str, lineno: usize) -> Result<usize, EmbeddingFileError> {
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| header_err(lineno, format!("expected `{key} <n>`")))?;
    rest.trim().parse().map_err(|_| header_err(lineno, format!("bad {key} value {rest:?}")))
}

impl EmbeddingStore {
    pub fn new(d_text: usize) -> Self {
        Self { d_text, order: Vec::new(), rows: HashMap::new() }
    }

    pub fn d_text(&self) -> usize {
        self.d_text
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.order
    }

    pub fn get(&self, id: &str) -> Option<&Matrix> {
        self.rows.get(id)
    }

    /// Adds a record. Values are rounded to `f32`, matching what the file stores.
    pub fn insert(&mut self, id: &str, embeddings: &Matrix) -> Result<(), EmbeddingFileError> {
        if id.is_empty() || id.contains(['\t', '\n', '\r']) {
            return Err(EmbeddingFileError::InvalidId(id.to_string()));
        }
        if embeddings.cols() != self.d_text || embeddings.rows() == 0 {
            return Err(header_err(0, format!("record {id:?} has shape {:?}", embeddings.shape())));
        }
        if self.rows.contains_key(id) {
            return Err(EmbeddingFileError::Duplicate(id.to_string()));
        }
        let data = embeddings.data().iter().map(|&v| v as f32 as f64).collect();
        self.rows.insert(id.to_string(), Matrix::from_vec(embeddings.rows(), self.d_text, data));
        self.order.push(id.to_string());
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{EMBEDDING_FORMAT}\nd_text {}\nrecords {}\n", self.d_text, self.order.len());
        let mut offset = 0usize;
        for id in &self.order {
            let m = &self.rows[id];
            header.push_str(&format!("{id}\t{offset}\t{}\n", m.rows()));
            offset += m.len() * 4;
        }
        header.push_str("data\n");
        let mut out = header.into_bytes();
        out.reserve(offset);
        for id in &self.order {
            for &v in self.rows[id].data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), EmbeddingFileError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, EmbeddingFileError> {
        Self::parse(&std::fs::read(path)?)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, EmbeddingFileError> {
        let mut pos = 0usize;
        let mut lineno = 0usize;
        let mut next_line = |pos: &mut usize| -> Result<(usize, &str), EmbeddingFileError> {
            lineno += 1;
            let rest = &bytes[*pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| header_err(lineno, "unterminated header"))?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| header_err(lineno, "header is not UTF-8"))?;
            *pos += end + 1;
            Ok((lineno, line))
        };

        let (n, magic) = next_line(&mut pos)?;
        if magic != EMBEDDING_FORMAT {
            return Err(header_err(n, format!("unsupported format {magic:?}")));
        }
        let (n, line) = next_line(&mut pos)?;
        let d_text = keyed_number(line, "d_text", n)?;
        if d_text == 0 {
            return Err(header_err(n, "d_text must be positive"));
        }
        let (n, line) = next_line(&mut pos)?;
        let count = keyed_number(line, "records", n)?;

        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let (n, line) = next_line(&mut pos)?;
            let mut parts = line.split('\t');
            let (Some(id), Some(off), Some(tok), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(header_err(n, "expected `<id>\\t<offset>\\t<tokens>`"));
            };
            let offset: usize = off.parse().map_err(|_| header_err(n, format!("bad offset {off:?}")))?;
            let tokens: usize = tok.parse().map_err(|_| header_err(n, format!("bad token count {tok:?}")))?;
            if tokens == 0 {
                return Err(header_err(n, "zero-token record"));
            }
            entries.push((id.to_string(), offset, tokens));
        }
        let (n, line) = next_line(&mut pos)?;
        if line != "data" {
            return Err(header_err(n, "expected `data`"));
        }
        let data = &bytes[pos..];

        let mut store = EmbeddingStore::new(d_text);
        for (id, offset, tokens) in entries {
            let len = tokens
                .checked_mul(d_text)
                .and_then(|v| v.checked_mul(4))
                .ok_or_else(|| header_err(0, format!("record {id:?} size overflows")))?;
            let end = offset.checked_add(len).filter(|&e| e <= data.len()).ok_or_else(|| {
                EmbeddingFileError::OutOfBounds { id: id.clone(), offset, len, available: data.len() }
            })?;
            let values: Vec<f64> = data[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingFileError::NonFinite(id));
            }
            store.insert(&id, &Matrix::from_vec(tokens, d_text, values))?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_written_fixture_returns_stored_rows() {
        // two tokens of width 3, written byte by byte
        let mut bytes = b"protdat-emb-1\nd_text 3\nrecords 1\nP1\t0\t2\ndata\n".to_vec();
        for v in [1.0f32, -2.5, 0.25, 3.0, 0.0, -0.125] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let store = EmbeddingStore::parse(&bytes).unwrap();
        let m = store.get("P1").unwrap();
        assert_eq!(m, &Matrix::from_rows(&[vec![1.0, -2.5, 0.25], vec![3.0, 0.0, -0.125]]));
        assert_eq!(store.to_bytes(), bytes);
    }

    #[test]
    fn round_trip_through_bytes() {
        let mut store = EmbeddingStore::new(2);
        store.insert("a", &Matrix::from_rows(&[vec![0.1, 0.2]])).unwrap();
        store.insert("b", &Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let parsed = EmbeddingStore::parse(&store.to_bytes()).unwrap();
        assert_eq!(parsed, store);
        assert_eq!(parsed.ids(), ["a", "b"]);
    }

    #[test]
    fn rejects_corrupt_input() {
        let mut store = EmbeddingStore::new(2);
        store.insert("a", &Matrix::from_rows(&[vec![0.1, 0.2]])).unwrap();
        let bytes = store.to_bytes();
        assert!(matches!(
            EmbeddingStore::parse(&bytes[..bytes.len() - 1]),
            Err(EmbeddingFileError::OutOfBounds { .. })
        ));
        assert!(EmbeddingStore::parse(b"protdat-emb-2\n").is_err());
        assert!(EmbeddingStore::parse(b"protdat-emb-1\nd_text 2\nrecords 1\na\t0\n").is_err());
        assert!(EmbeddingStore::parse(b"protdat-emb-1\nd_text 99999999999999999\nrecords 1\na\t0\t99999999999\ndata\n").is_err());
        assert!(EmbeddingStore::parse(b"").is_err());
        assert!(matches!(store.insert("a", &Matrix::zeros(1, 2)), Err(EmbeddingFileError::Duplicate(_))));
    }
}
