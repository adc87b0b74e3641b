//! On-disk interchange formats: SMRL run-length masks, SMEM embedding
//! tables, sequence manifests, pipeline configs and metric CSVs.

mod config;
mod manifest;
mod results;
mod smem;
mod smrl;

pub use config::{config_to_text, parse_config, read_config, write_config};
pub use manifest::{ProposalKey, SequenceManifest};
pub use results::{write_results_csv, RESULTS_HEADER};
pub use smem::EmbeddingFile;
pub use smrl::{decode_mask, encode_mask, MaskFrame};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mask::ObjectMask;

/// Upper bound on pixels per decoded mask, guarding allocations on hostile input.
pub const MAX_MASK_PIXELS: usize = 1 << 24;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("input is not valid UTF-8")]
    Encoding,

    #[error("malformed SMRL header: {0}")]
    MaskHeader(String),
    #[error("unsupported SMRL version {0:?}")]
    MaskVersion(String),
    #[error("SMRL header declares {declared} objects, found {found}")]
    MaskObjectCount { declared: usize, found: usize },
    #[error("malformed SMRL line {line}: {reason}")]
    MaskLine { line: usize, reason: String },
    #[error("SMRL line {line}: runs are not ascending and separated")]
    MaskRunOrder { line: usize },
    #[error("SMRL line {line}: run exceeds {pixels} pixels")]
    MaskRunBounds { line: usize, pixels: usize },
    #[error("SMRL line {line}: object overlaps an earlier object")]
    MaskObjectsOverlap { line: usize },
    #[error("SMRL object id {0} appears twice")]
    MaskDuplicateObject(u32),
    #[error("mask shape {actual:?} does not match {expected:?}")]
    MaskShape {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("bad SMEM magic bytes")]
    BadMagic,
    #[error("unsupported SMEM version {0}")]
    EmbeddingVersion(u32),
    #[error("truncated SMEM data: need {expected} bytes, have {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("SMEM data has {extra} trailing bytes")]
    TrailingBytes { extra: u64 },
    #[error("SMEM dimension must be positive")]
    ZeroDim,
    #[error("SMEM metadata is not valid UTF-8")]
    MetadataEncoding,
    #[error("SMEM value {index} is not finite")]
    NonFiniteValue { index: usize },
    #[error("inconsistent embedding table: {0}")]
    EmbeddingShape(String),

    #[error("manifest line {line}: {reason}")]
    ManifestLine { line: usize, reason: String },
    #[error("manifest is missing required key {0:?}")]
    ManifestMissingKey(&'static str),
    #[error("manifest references missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("manifest inconsistency in {}: {reason}", path.display())]
    ManifestInconsistent { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),
    #[error("mask directory {}: {reason}", dir.display())]
    MaskDir { dir: PathBuf, reason: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(io_err(path))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Strict decimal parse: ASCII digits only, no sign, no leading zeros.
pub(crate) fn parse_canonical_u64(token: &str) -> Option<u64> {
    let bytes = token.as_bytes();
    if bytes.is_empty() || !bytes.iter().all(u8::is_ascii_digit) {
        return None;
    }
    if bytes.len() > 1 && bytes[0] == b'0' {
        return None;
    }
    token.parse().ok()
}

pub(crate) fn parse_canonical_usize(token: &str) -> Option<usize> {
    parse_canonical_u64(token).and_then(|v| usize::try_from(v).ok())
}

/// File name used for frame `index` in a mask directory.
pub fn mask_file_name(index: usize) -> String {
    format!("{index:05}.smrl")
}

pub fn read_mask_file(path: &Path) -> Result<MaskFrame, FormatError> {
    decode_mask(&read_file(path)?)
}

pub fn write_mask_file(path: &Path, frame: &MaskFrame) -> Result<(), FormatError> {
    let objects: Vec<(u32, &ObjectMask)> = frame.objects.iter().map(|(id, m)| (*id, m)).collect();
    let text = encode_mask(frame.height, frame.width, &objects)?;
    write_atomic(path, text.as_bytes())
}

/// Reads `00000.smrl, 00001.smrl, ...` from `dir`. Frames must be contiguous
/// from zero and share one shape and object id list.
pub fn read_mask_dir(dir: &Path) -> Result<Vec<MaskFrame>, FormatError> {
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".smrl") {
            let index = stem.parse::<usize>().map_err(|_| FormatError::MaskDir {
                dir: dir.to_path_buf(),
                reason: format!("unexpected mask file name {name:?}"),
            })?;
            indices.push(index);
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(FormatError::MaskDir {
            dir: dir.to_path_buf(),
            reason: "no .smrl files".into(),
        });
    }
    if let Some((pos, &idx)) = indices.iter().enumerate().find(|(p, &i)| *p != i) {
        return Err(FormatError::MaskDir {
            dir: dir.to_path_buf(),
            reason: format!("frame {pos} missing (next file is frame {idx})"),
        });
    }
    let frames = indices
        .iter()
        .map(|&i| read_mask_file(&dir.join(mask_file_name(i))))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &frames[0];
    let ids: Vec<u32> = first.objects.iter().map(|(id, _)| *id).collect();
    for (t, f) in frames.iter().enumerate() {
        if (f.height, f.width) != (first.height, first.width) {
            return Err(FormatError::MaskDir {
                dir: dir.to_path_buf(),
                reason: format!("frame {t} has a different shape"),
            });
        }
        if !f.objects.iter().map(|(id, _)| *id).eq(ids.iter().copied()) {
            return Err(FormatError::MaskDir {
                dir: dir.to_path_buf(),
                reason: format!("frame {t} has a different object id list"),
            });
        }
    }
    Ok(frames)
}
