//! SMEM v1 binary embedding tables.
//!
//! Layout (all integers little-endian `u32`):
//! `"SMEM" | version | count | dim | metadata_len | metadata | count*dim f32`.

use super::FormatError;
use crate::embedding::Embedding;

const MAGIC: &[u8; 4] = b"SMEM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    /// Free-form UTF-8, records e.g. the pooling method.
    pub metadata: String,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingFile {
    pub fn new(metadata: impl Into<String>, dim: usize, values: Vec<f32>) -> Result<Self, FormatError> {
        if dim == 0 {
            return Err(FormatError::ZeroDim);
        }
        if !values.len().is_multiple_of(dim) {
            return Err(FormatError::EmbeddingShape(format!(
                "{} values is not a multiple of dim {dim}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFiniteValue { index });
        }
        Ok(Self {
            metadata: metadata.into(),
            dim,
            values,
        })
    }

    /// Stores the embeddings as `f32`.
    pub fn from_embeddings(metadata: impl Into<String>, rows: &[Embedding]) -> Result<Self, FormatError> {
        let dim = rows.first().map(Embedding::dim).ok_or(FormatError::ZeroDim)?;
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.dim() != dim {
                return Err(FormatError::EmbeddingShape(format!(
                    "row {i} has dim {}, expected {dim}",
                    row.dim()
                )));
            }
            values.extend(row.values().iter().map(|&v| v as f32));
        }
        Self::new(metadata, dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, index: usize) -> Option<&[f32]> {
        self.values.get(index * self.dim..(index + 1) * self.dim)
    }

    pub fn embedding(&self, index: usize) -> Option<Embedding> {
        // values are validated finite and dim > 0
        self.row(index).map(|r| Embedding::from_f32(r).expect("validated row"))
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = self.metadata.as_bytes();
        let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.count() as u32, self.dim as u32, meta.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(meta);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let have = bytes.len() as u64;
        let need = |expected: u64| FormatError::Truncated {
            expected,
            actual: have,
        };
        if bytes.len() < 4 {
            return Err(if MAGIC.starts_with(bytes) {
                need(HEADER_LEN as u64)
            } else {
                FormatError::BadMagic
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(need(HEADER_LEN as u64));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != VERSION {
            return Err(FormatError::EmbeddingVersion(version));
        }
        let count = u128::from(word(8));
        let dim = word(12);
        let meta_len = word(16);
        if dim == 0 {
            return Err(FormatError::ZeroDim);
        }
        let expected = HEADER_LEN as u128 + u128::from(meta_len) + 4 * count * u128::from(dim);
        if u128::from(have) < expected {
            return Err(need(u64::try_from(expected).unwrap_or(u64::MAX)));
        }
        if u128::from(have) > expected {
            return Err(FormatError::TrailingBytes {
                extra: have - expected as u64,
            });
        }
        let meta_end = HEADER_LEN + meta_len as usize;
        let metadata = std::str::from_utf8(&bytes[HEADER_LEN..meta_end])
            .map_err(|_| FormatError::MetadataEncoding)?
            .to_owned();
        let values: Vec<f32> = bytes[meta_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::new(metadata, dim as usize, values)
    }
}
