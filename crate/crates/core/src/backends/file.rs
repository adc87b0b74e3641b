//! Replay backends over precomputed files referenced by a sequence manifest.

use std::collections::BTreeMap;
use std::path::Path;

use super::{
    check_box, check_mask_shape, BackendDescriptor, BackendError, BackendKind, Embedder, FrameRef, MaskTriple,
    MemoryView, Refiner, Segmenter,
};
use crate::embedding::Embedding;
use crate::formats::{read_file, read_mask_file, EmbeddingFile, FormatError, SequenceManifest};
use crate::mask::{BoundingBox, ObjectMask};

fn check_frame(manifest: &SequenceManifest, frame: &FrameRef) -> Result<(), BackendError> {
    if frame.sequence_id != manifest.sequence
        || frame.frame_index >= manifest.frames
        || (frame.height, frame.width) != (manifest.height, manifest.width)
    {
        return Err(BackendError::UnknownFrame {
            sequence: frame.sequence_id.clone(),
            frame: frame.frame_index,
        });
    }
    Ok(())
}

fn load_table(base: &Path, rel: &str) -> Result<EmbeddingFile, FormatError> {
    EmbeddingFile::decode(&read_file(&base.join(rel))?)
}

fn load_masks(base: &Path, rel: &str, manifest: &SequenceManifest) -> Result<Vec<ObjectMask>, BackendError> {
    let path = base.join(rel);
    let frame = read_mask_file(&path)?;
    if (frame.height, frame.width) != (manifest.height, manifest.width) {
        return Err(FormatError::ManifestInconsistent {
            path,
            reason: format!("shape {}x{} differs from the manifest", frame.height, frame.width),
        }
        .into());
    }
    Ok(frame.masks())
}

/// Frame keys from one SMEM table (one row per frame) and object appearance
/// by masked mean pooling over an optional per-pixel feature table.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    manifest: SequenceManifest,
    keys: EmbeddingFile,
    features: Option<EmbeddingFile>,
}

impl FileEmbedder {
    pub fn load(manifest: &SequenceManifest, base: &Path) -> Result<Self, BackendError> {
        let rel = manifest
            .keys
            .as_deref()
            .ok_or_else(|| BackendError::MissingData(format!("manifest of {:?} names no keys file", manifest.sequence)))?;
        let keys = load_table(base, rel)?;
        let features = manifest.features.as_deref().map(|f| load_table(base, f)).transpose()?;
        if let Some(f) = &features {
            if f.dim() != keys.dim() {
                return Err(BackendError::MissingData(format!(
                    "feature dim {} differs from key dim {}",
                    f.dim(),
                    keys.dim()
                )));
            }
        }
        Ok(Self {
            manifest: manifest.clone(),
            keys,
            features,
        })
    }
}

impl Embedder for FileEmbedder {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::File,
            embedding_dim: self.keys.dim(),
            deterministic: true,
            concurrent_safe: true,
        }
    }

    fn frame_key(&self, frame: &FrameRef) -> Result<Embedding, BackendError> {
        check_frame(&self.manifest, frame)?;
        self.keys.embedding(frame.frame_index).ok_or_else(|| {
            BackendError::MissingData(format!("no key for frame {} in the keys file", frame.frame_index))
        })
    }

    fn object_appearance(&self, frame: &FrameRef, mask: &ObjectMask) -> Result<Embedding, BackendError> {
        check_frame(&self.manifest, frame)?;
        check_mask_shape(frame, mask)?;
        let features = self
            .features
            .as_ref()
            .ok_or_else(|| BackendError::MissingData("object appearance needs a features file".into()))?;
        let pixels = frame.height * frame.width;
        let offset = frame.frame_index * pixels;
        if features.count() < offset + pixels {
            return Err(BackendError::MissingData(format!(
                "features file has no field for frame {}",
                frame.frame_index
            )));
        }
        let mut sum = vec![0.0f64; features.dim()];
        let mut n = 0usize;
        for (i, _) in mask.bits().iter().enumerate().filter(|(_, &b)| b) {
            let row = features.row(offset + i).expect("count checked");
            for (s, &v) in sum.iter_mut().zip(row) {
                *s += f64::from(v);
            }
            n += 1;
        }
        if n > 0 {
            sum.iter_mut().for_each(|s| *s /= n as f64);
        }
        Ok(Embedding::new(sum)?)
    }
}

/// Replays the manifest's `vos.<t>` mask files.
#[derive(Debug, Clone)]
pub struct FileSegmenter {
    manifest: SequenceManifest,
    frames: BTreeMap<usize, Vec<ObjectMask>>,
}

impl FileSegmenter {
    pub fn load(manifest: &SequenceManifest, base: &Path) -> Result<Self, BackendError> {
        let frames = manifest
            .vos
            .iter()
            .map(|(&t, rel)| Ok((t, load_masks(base, rel, manifest)?)))
            .collect::<Result<_, BackendError>>()?;
        Ok(Self {
            manifest: manifest.clone(),
            frames,
        })
    }
}

impl Segmenter for FileSegmenter {
    fn step(
        &self,
        frame: &FrameRef,
        _memory: MemoryView<'_>,
        prior: Option<&[ObjectMask]>,
    ) -> Result<Vec<ObjectMask>, BackendError> {
        check_frame(&self.manifest, frame)?;
        if frame.frame_index == 0 {
            return prior.map(<[ObjectMask]>::to_vec).ok_or(BackendError::MissingPrior);
        }
        let masks = self
            .frames
            .get(&frame.frame_index)
            .ok_or_else(|| BackendError::MissingData(format!("no vos masks for frame {}", frame.frame_index)))?;
        if masks.len() != self.manifest.objects {
            return Err(BackendError::ObjectCount {
                expected: self.manifest.objects,
                actual: masks.len(),
            });
        }
        Ok(masks.clone())
    }
}

/// Replays `proposal.<t>.<object>.<rank>` files; the box only gets bounds-checked.
#[derive(Debug, Clone)]
pub struct FileRefiner {
    manifest: SequenceManifest,
    proposals: BTreeMap<(usize, usize, u8), ObjectMask>,
}

impl FileRefiner {
    pub fn load(manifest: &SequenceManifest, base: &Path) -> Result<Self, BackendError> {
        let mut proposals = BTreeMap::new();
        for (&key, rel) in &manifest.proposals {
            let mut masks = load_masks(base, rel, manifest)?;
            if masks.len() != 1 {
                return Err(FormatError::ManifestInconsistent {
                    path: base.join(rel),
                    reason: format!("proposal files hold one mask, found {}", masks.len()),
                }
                .into());
            }
            proposals.insert(key, masks.remove(0));
        }
        Ok(Self {
            manifest: manifest.clone(),
            proposals,
        })
    }
}

impl Refiner for FileRefiner {
    fn propose(&self, frame: &FrameRef, object: usize, bbox: &BoundingBox) -> Result<MaskTriple, BackendError> {
        check_frame(&self.manifest, frame)?;
        check_box(frame, bbox)?;
        let get = |rank: u8| {
            self.proposals.get(&(frame.frame_index, object, rank)).cloned().ok_or_else(|| {
                BackendError::MissingData(format!(
                    "no rank {rank} proposal for object {object} at frame {}",
                    frame.frame_index
                ))
            })
        };
        Ok([get(1)?, get(2)?, get(3)?])
    }
}
