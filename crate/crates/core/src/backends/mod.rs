//! Backend contracts for the frame encoder / appearance embedder, the
//! memory-conditioned segmenter and the box-prompted mask refiner, plus the
//! synthetic and file-replay implementations.

mod file;
mod registry;
mod synthetic;

pub use file::{FileEmbedder, FileRefiner, FileSegmenter};
pub use registry::{BackendFactory, BackendRegistry, BackendRequest, LoadedSequence};
pub use synthetic::{SyntheticEmbedder, SyntheticNoise, SyntheticRefiner, SyntheticSegmenter};

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::embedding::{Embedding, EmbeddingError};
use crate::formats::FormatError;
use crate::mask::{BoundingBox, MaskError, ObjectMask};
use crate::memory::{MemoryBank, PayloadHandle};
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unknown frame {frame} of sequence {sequence:?}")]
    UnknownFrame { sequence: String, frame: usize },
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("a prior mask list is required at frame 0")]
    MissingPrior,
    #[error("expected {expected} objects, got {actual}")]
    ObjectCount { expected: usize, actual: usize },
    #[error("box {bbox:?} exceeds the {height}x{width} frame")]
    BoxOutOfBounds {
        bbox: BoundingBox,
        height: usize,
        width: usize,
    },
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Identifies one frame of one sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrameRef {
    pub sequence_id: String,
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
}

/// Identity and geometry of one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceDescriptor {
    pub sequence_id: String,
    pub len: usize,
    pub height: usize,
    pub width: usize,
}

impl SequenceDescriptor {
    pub fn frame(&self, frame_index: usize) -> FrameRef {
        FrameRef {
            sequence_id: self.sequence_id.clone(),
            frame_index,
            height: self.height,
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Synthetic,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub embedding_dim: usize,
    pub deterministic: bool,
    pub concurrent_safe: bool,
}

/// Decoder state recorded at memory insertion frames: the (fused) masks of
/// that frame, keyed by the payload handle stored in the bank.
pub type PayloadStore = BTreeMap<PayloadHandle, Vec<ObjectMask>>;

/// What the segmenter may read from memory.
#[derive(Debug, Clone, Copy)]
pub struct MemoryView<'a> {
    pub bank: &'a MemoryBank,
    pub payloads: &'a PayloadStore,
}

/// Three candidate masks for one box prompt, in the refiner's rank order.
pub type MaskTriple = [ObjectMask; 3];

pub trait Embedder: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Key of the whole frame, used for memory relevance.
    fn frame_key(&self, frame: &FrameRef) -> Result<Embedding, BackendError>;

    /// Masked mean of the per-pixel feature field; zero vector for an empty mask.
    fn object_appearance(&self, frame: &FrameRef, mask: &ObjectMask) -> Result<Embedding, BackendError>;
}

pub trait Segmenter: Send + Sync {
    /// One mask per tracked object for `frame`, conditioned on memory and
    /// the previous frame's masks.
    fn step(
        &self,
        frame: &FrameRef,
        memory: MemoryView<'_>,
        prior: Option<&[ObjectMask]>,
    ) -> Result<Vec<ObjectMask>, BackendError>;
}

pub trait Refiner: Send + Sync {
    /// Three proposals for the object prompted by `bbox`.
    fn propose(&self, frame: &FrameRef, object: usize, bbox: &BoundingBox) -> Result<MaskTriple, BackendError>;
}

/// The three backends driving one sequence.
#[derive(Clone)]
pub struct Backends {
    pub embedder: Arc<dyn Embedder>,
    pub segmenter: Arc<dyn Segmenter>,
    pub refiner: Arc<dyn Refiner>,
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends")
            .field("embedder", &self.embedder.descriptor())
            .finish_non_exhaustive()
    }
}

pub(crate) fn check_box(frame: &FrameRef, bbox: &BoundingBox) -> Result<(), BackendError> {
    let ok = bbox.row_min <= bbox.row_max
        && bbox.col_min <= bbox.col_max
        && bbox.row_max < frame.height
        && bbox.col_max < frame.width;
    if ok {
        Ok(())
    } else {
        Err(BackendError::BoxOutOfBounds {
            bbox: *bbox,
            height: frame.height,
            width: frame.width,
        })
    }
}

pub(crate) fn check_mask_shape(frame: &FrameRef, mask: &ObjectMask) -> Result<(), BackendError> {
    if mask.shape() != (frame.height, frame.width) {
        return Err(MaskError::ShapeMismatch {
            left: mask.shape(),
            right: (frame.height, frame.width),
        }
        .into());
    }
    Ok(())
}
