//! Line-oriented `key = value` sequence manifests.
//!
//! ```text
//! sequence = shift-200
//! frames = 200
//! height = 64
//! width = 64
//! objects = 1
//! keys = keys.smem
//! features = features.smem
//! scene = shift-200
//! scene_seed = 0
//! gt.0 = gt/00000.smrl
//! vos.1 = vos/00001.smrl
//! proposal.1.0.2 = proposals/00001_0_2.smrl
//! ```
//!
//! Paths are relative to the manifest's directory. `#` starts a comment line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{parse_canonical_u64, parse_canonical_usize, read_file, read_mask_file, EmbeddingFile, FormatError};

/// `(frame, object, rank)` with rank in `1..=3`.
pub type ProposalKey = (usize, usize, u8);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SequenceManifest {
    pub sequence: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub objects: usize,
    /// SMEM table with one frame key per frame.
    pub keys: Option<String>,
    /// SMEM table with `frames * height * width` per-pixel features, frame-major.
    pub features: Option<String>,
    /// Name of a synthetic benchmark scene this sequence regenerates from.
    pub scene: Option<String>,
    pub scene_seed: Option<u64>,
    pub gt: BTreeMap<usize, String>,
    pub vos: BTreeMap<usize, String>,
    pub proposals: BTreeMap<ProposalKey, String>,
}

impl SequenceManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: &str| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        };
        line("sequence", &self.sequence);
        line("frames", &self.frames.to_string());
        line("height", &self.height.to_string());
        line("width", &self.width.to_string());
        line("objects", &self.objects.to_string());
        if let Some(p) = &self.keys {
            line("keys", p);
        }
        if let Some(p) = &self.features {
            line("features", p);
        }
        if let Some(s) = &self.scene {
            line("scene", s);
        }
        if let Some(s) = self.scene_seed {
            line("scene_seed", &s.to_string());
        }
        for (t, p) in &self.gt {
            line(&format!("gt.{t}"), p);
        }
        for (t, p) in &self.vos {
            line(&format!("vos.{t}"), p);
        }
        for ((t, o, r), p) in &self.proposals {
            line(&format!("proposal.{t}.{o}.{r}"), p);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut m = SequenceManifest::default();
        let (mut sequence, mut frames, mut height, mut width, mut objects) = (None, None, None, None, None);
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |reason: String| FormatError::ManifestLine { line, reason };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(err(format!("empty value for {key:?}")));
            }
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            let number = |v: &str| {
                parse_canonical_usize(v).ok_or_else(|| err(format!("invalid number {v:?} for {key:?}")))
            };
            match key {
                "sequence" => sequence = Some(value.to_string()),
                "frames" => frames = Some(number(value)?),
                "height" => height = Some(number(value)?),
                "width" => width = Some(number(value)?),
                "objects" => objects = Some(number(value)?),
                "keys" => m.keys = Some(value.to_string()),
                "features" => m.features = Some(value.to_string()),
                "scene" => m.scene = Some(value.to_string()),
                "scene_seed" => {
                    m.scene_seed = Some(
                        parse_canonical_u64(value).ok_or_else(|| err(format!("invalid seed {value:?}")))?,
                    )
                }
                _ => {
                    let parts: Vec<&str> = key.split('.').collect();
                    match parts.as_slice() {
                        ["gt", t] => {
                            m.gt.insert(number(t)?, value.to_string());
                        }
                        ["vos", t] => {
                            m.vos.insert(number(t)?, value.to_string());
                        }
                        ["proposal", t, o, r] => {
                            let rank = number(r)?;
                            if !(1..=3).contains(&rank) {
                                return Err(err(format!("proposal rank {rank} outside 1..=3")));
                            }
                            m.proposals.insert((number(t)?, number(o)?, rank as u8), value.to_string());
                        }
                        _ => return Err(err(format!("unknown key {key:?}"))),
                    }
                }
            }
        }
        m.sequence = sequence.ok_or(FormatError::ManifestMissingKey("sequence"))?;
        m.frames = frames.ok_or(FormatError::ManifestMissingKey("frames"))?;
        m.height = height.ok_or(FormatError::ManifestMissingKey("height"))?;
        m.width = width.ok_or(FormatError::ManifestMissingKey("width"))?;
        m.objects = objects.ok_or(FormatError::ManifestMissingKey("objects"))?;
        m.check_ranges()?;
        Ok(m)
    }

    fn check_ranges(&self) -> Result<(), FormatError> {
        let bad = |reason: String| FormatError::ManifestLine { line: 0, reason };
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.objects == 0 {
            return Err(bad("frames, height, width and objects must be positive".into()));
        }
        let out_of_range = self
            .gt
            .keys()
            .chain(self.vos.keys())
            .chain(self.proposals.keys().map(|(t, _, _)| t))
            .find(|&&t| t >= self.frames);
        if let Some(t) = out_of_range {
            return Err(bad(format!("frame {t} outside 0..{}", self.frames)));
        }
        if let Some((_, o, _)) = self.proposals.keys().find(|(_, o, _)| *o >= self.objects) {
            return Err(bad(format!("proposal object {o} outside 0..{}", self.objects)));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| FormatError::Encoding)?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        super::write_atomic(path, self.to_text().as_bytes())
    }

    fn resolve(base: &Path, rel: &str) -> PathBuf {
        base.join(rel)
    }

    fn inconsistent(path: &Path, reason: String) -> FormatError {
        FormatError::ManifestInconsistent {
            path: path.to_path_buf(),
            reason,
        }
    }

    /// Checks every referenced file exists and agrees with the declared
    /// frame count, shape and object count.
    pub fn validate(&self, base: &Path) -> Result<(), FormatError> {
        let all_paths = self
            .keys
            .iter()
            .chain(&self.features)
            .chain(self.gt.values())
            .chain(self.vos.values())
            .chain(self.proposals.values());
        for rel in all_paths {
            let path = Self::resolve(base, rel);
            if !path.is_file() {
                return Err(FormatError::MissingFile(path));
            }
        }
        for rel in self.gt.values().chain(self.vos.values()) {
            let path = Self::resolve(base, rel);
            let frame = read_mask_file(&path)?;
            if (frame.height, frame.width) != (self.height, self.width) {
                return Err(Self::inconsistent(
                    &path,
                    format!("shape {}x{}, expected {}x{}", frame.height, frame.width, self.height, self.width),
                ));
            }
            if frame.objects.len() != self.objects {
                return Err(Self::inconsistent(
                    &path,
                    format!("{} objects, expected {}", frame.objects.len(), self.objects),
                ));
            }
        }
        for rel in self.proposals.values() {
            let path = Self::resolve(base, rel);
            let frame = read_mask_file(&path)?;
            if (frame.height, frame.width) != (self.height, self.width) || frame.objects.len() != 1 {
                return Err(Self::inconsistent(&path, "proposal files hold one mask of the sequence shape".into()));
            }
        }
        let mut key_dim = None;
        if let Some(rel) = &self.keys {
            let path = Self::resolve(base, rel);
            let table = EmbeddingFile::decode(&read_file(&path)?)?;
            if table.count() != self.frames {
                return Err(Self::inconsistent(
                    &path,
                    format!("{} keys, expected one per frame ({})", table.count(), self.frames),
                ));
            }
            key_dim = Some(table.dim());
        }
        if let Some(rel) = &self.features {
            let path = Self::resolve(base, rel);
            let table = EmbeddingFile::decode(&read_file(&path)?)?;
            let expected = self.frames * self.height * self.width;
            if table.count() != expected {
                return Err(Self::inconsistent(
                    &path,
                    format!("{} feature vectors, expected {expected}", table.count()),
                ));
            }
            if key_dim.is_some_and(|d| d != table.dim()) {
                return Err(Self::inconsistent(&path, "feature dim differs from key dim".into()));
            }
        }
        Ok(())
    }
}
