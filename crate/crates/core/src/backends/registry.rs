//! Backend families registered by name and selected at runtime.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use super::{
    BackendError, Backends, FileEmbedder, FileRefiner, FileSegmenter, SyntheticEmbedder, SyntheticNoise,
    SequenceDescriptor, SyntheticRefiner, SyntheticSegmenter,
};
use crate::formats::{read_mask_file, SequenceManifest};
use crate::mask::ObjectMask;
use crate::metrics::SequenceMasks;
use crate::synth::{generate, suite_scene, SyntheticDataset};

/// Everything a factory may need to build the backends of one sequence.
#[derive(Debug, Clone)]
pub struct BackendRequest {
    pub manifest: SequenceManifest,
    /// Directory the manifest's relative paths resolve against.
    pub base_dir: PathBuf,
    pub noise: SyntheticNoise,
    pub seed: u64,
}

/// A sequence ready to run: its ground truth where known, plus backends.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub descriptor: SequenceDescriptor,
    pub object_ids: Vec<u32>,
    pub gt_first: Vec<ObjectMask>,
    /// Ground truth for every frame when available, for evaluation.
    pub gt_all: Option<SequenceMasks>,
    pub backends: Backends,
}

impl LoadedSequence {
    /// Synthetic backends over an already generated dataset.
    pub fn synthetic(ds: Arc<SyntheticDataset>, noise: SyntheticNoise, seed: u64) -> Self {
        let (height, width) = ds.shape();
        let gt_all: SequenceMasks = (0..ds.len()).map(|t| ds.gt_masks(t)).collect();
        Self {
            descriptor: SequenceDescriptor {
                sequence_id: ds.name().to_string(),
                len: ds.len(),
                height,
                width,
            },
            object_ids: (1..=ds.num_objects() as u32).collect(),
            gt_first: gt_all[0].clone(),
            gt_all: Some(gt_all),
            backends: Backends {
                embedder: Arc::new(SyntheticEmbedder::new(ds.clone())),
                segmenter: Arc::new(SyntheticSegmenter::new(ds.clone(), noise, seed)),
                refiner: Arc::new(SyntheticRefiner::new(ds, seed)),
            },
        }
    }
}

pub type BackendFactory = fn(&BackendRequest) -> Result<LoadedSequence, BackendError>;

fn mismatch(what: &str, manifest: usize, actual: usize) -> BackendError {
    BackendError::MissingData(format!("manifest declares {what} {manifest}, the data has {actual}"))
}

fn synthetic_factory(req: &BackendRequest) -> Result<LoadedSequence, BackendError> {
    let m = &req.manifest;
    let scene = m
        .scene
        .as_deref()
        .ok_or_else(|| BackendError::MissingData(format!("manifest of {:?} names no synthetic scene", m.sequence)))?;
    let spec = suite_scene(scene, m.scene_seed.unwrap_or(0))?;
    let ds = generate(&spec)?;
    if ds.len() != m.frames {
        return Err(mismatch("frames", m.frames, ds.len()));
    }
    if ds.shape() != (m.height, m.width) {
        return Err(mismatch("height", m.height, ds.shape().0));
    }
    if ds.num_objects() != m.objects {
        return Err(mismatch("objects", m.objects, ds.num_objects()));
    }
    let mut seq = LoadedSequence::synthetic(Arc::new(ds), req.noise, req.seed);
    seq.descriptor.sequence_id = m.sequence.clone();
    Ok(seq)
}

fn file_factory(req: &BackendRequest) -> Result<LoadedSequence, BackendError> {
    let m = &req.manifest;
    m.validate(&req.base_dir)?;
    let first = m
        .gt
        .get(&0)
        .ok_or_else(|| BackendError::MissingData("manifest has no frame 0 ground truth".into()))?;
    let first = read_mask_file(&req.base_dir.join(first))?;
    let gt_all = if m.gt.len() == m.frames {
        Some(
            m.gt.values()
                .map(|rel| read_mask_file(&req.base_dir.join(rel)).map(|f| f.masks()))
                .collect::<Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };
    Ok(LoadedSequence {
        descriptor: SequenceDescriptor {
            sequence_id: m.sequence.clone(),
            len: m.frames,
            height: m.height,
            width: m.width,
        },
        object_ids: first.ids(),
        gt_first: first.masks(),
        gt_all,
        backends: Backends {
            embedder: Arc::new(FileEmbedder::load(m, &req.base_dir)?),
            segmenter: Arc::new(FileSegmenter::load(m, &req.base_dir)?),
            refiner: Arc::new(FileRefiner::load(m, &req.base_dir)?),
        },
    })
}

/// Name to factory table; `default()` holds `synthetic` and `file`.
#[derive(Debug, Clone)]
pub struct BackendRegistry {
    factories: BTreeMap<&'static str, BackendFactory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("synthetic", synthetic_factory);
        r.register("file", file_factory);
        r
    }
}

impl BackendRegistry {
    pub fn register(&mut self, name: &'static str, factory: BackendFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn load(&self, name: &str, req: &BackendRequest) -> Result<LoadedSequence, BackendError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| BackendError::UnknownBackend(name.to_string()))?;
        factory(req)
    }
}
