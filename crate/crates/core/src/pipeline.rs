//! Per-sequence tracking loop: encode, decode with memory and prior, fuse,
//! feed the fused masks forward, and update memory on cadence frames.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, Backends, Embedder, FrameRef, LoadedSequence, MemoryView, PayloadStore, SequenceDescriptor,
    SyntheticNoise,
};
use crate::embedding::Embedding;
use crate::fusion::{fuse_frame, FusionError};
use crate::mask::ObjectMask;
use crate::memory::{
    MemoryBank, MemoryError, MemoryPolicy, PayloadHandle, PolicyRegistry, DEFAULT_LAMBDA, DEFAULT_TAU_MEM,
};
use crate::metrics::{vots_bundle, MetricBundle, MetricOptions, MetricsError, SequenceMasks};

pub const DEFAULT_TAU_FUSE: f64 = 0.8;

/// How often a frame is offered to the memory bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cadence {
    /// Every `k`-th frame.
    EveryK(usize),
    /// Every `max(1, floor(L / d))` frames for a sequence of length `L`.
    FractionOfLength(usize),
}

impl Cadence {
    pub fn interval(&self, len: usize) -> usize {
        match *self {
            Cadence::EveryK(k) => k,
            Cadence::FractionOfLength(d) => (len / d).max(1),
        }
    }

    /// Frame 0 holds the protected entry and is never a cadence frame.
    pub fn inserts_at(&self, frame: usize, len: usize) -> bool {
        frame > 0 && frame.is_multiple_of(self.interval(len))
    }
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence::FractionOfLength(30)
    }
}

impl fmt::Display for Cadence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cadence::EveryK(k) => write!(f, "every:{k}"),
            Cadence::FractionOfLength(d) => write!(f, "fraction:{d}"),
        }
    }
}

impl FromStr for Cadence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, n) = s
            .split_once(':')
            .ok_or_else(|| format!("cadence {s:?} is not `every:<k>` or `fraction:<d>`"))?;
        let n: usize = n.parse().map_err(|_| format!("invalid cadence count {n:?}"))?;
        if n == 0 {
            return Err("cadence count must be positive".into());
        }
        match kind {
            "every" => Ok(Cadence::EveryK(n)),
            "fraction" => Ok(Cadence::FractionOfLength(n)),
            _ => Err(format!("unknown cadence kind {kind:?}")),
        }
    }
}

impl Serialize for Cadence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cadence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub lambda: f64,
    pub tau_mem: f64,
    pub tau_fuse: f64,
    pub cadence: Cadence,
    pub enable_smem: bool,
    pub enable_hqtf: bool,
    pub capacity_limit: Option<usize>,
    /// Separate banks per object. Not implemented; must stay `false`.
    pub object_wise_memory: bool,
    pub seed: u64,
    /// Error model of the synthetic segmenter; other backends ignore it.
    pub synthetic: SyntheticNoise,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            tau_mem: DEFAULT_TAU_MEM,
            tau_fuse: DEFAULT_TAU_FUSE,
            cadence: Cadence::default(),
            enable_smem: true,
            enable_hqtf: true,
            capacity_limit: None,
            object_wise_memory: false,
            seed: 0,
            synthetic: SyntheticNoise::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineFailure> {
        let bad = |m: String| Err(PipelineFailure::Config(m));
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad(format!("lambda {} must be finite and non-negative", self.lambda));
        }
        for (name, v) in [("tau_mem", self.tau_mem), ("tau_fuse", self.tau_fuse)] {
            if !(-1.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [-1, 1]"));
            }
        }
        if let Cadence::EveryK(0) | Cadence::FractionOfLength(0) = self.cadence {
            return bad("cadence count must be positive".into());
        }
        if self.capacity_limit == Some(0) {
            return bad("capacity_limit must be positive".into());
        }
        if self.object_wise_memory {
            return Err(PipelineFailure::Unsupported("object-wise memory banks"));
        }
        Ok(())
    }

    fn policy_name(&self) -> &'static str {
        if self.enable_smem {
            "smart"
        } else {
            "append"
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineFailure {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} are not supported")]
    Unsupported(&'static str),
    #[error("frame {frame}: {source}")]
    Backend { frame: usize, source: BackendError },
    #[error("frame {frame}: {source}")]
    Memory { frame: usize, source: MemoryError },
    #[error("frame {frame}: {source}")]
    Fusion { frame: usize, source: FusionError },
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A failed run together with everything computed before the failure.
#[derive(Debug, Error)]
#[error("sequence {:?} failed after {} frames: {failure}", partial.sequence_id, partial.masks.len())]
pub struct PipelineError {
    pub failure: PipelineFailure,
    pub partial: Box<SequenceResult>,
}

/// A refinement that failed and fell back to the VOS mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionFallback {
    pub frame: usize,
    pub object: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceResult {
    pub sequence_id: String,
    /// Output masks, `[frame][object]`.
    pub masks: SequenceMasks,
    /// Raw segmenter masks before fusion; frame 0 holds the initial masks.
    pub vos_masks: SequenceMasks,
    /// `|M_t|` after each frame.
    pub memory_trace: Vec<usize>,
    /// Per-frame, per-object fusion acceptance.
    pub accepted: Vec<Vec<bool>>,
    pub fusion_fallbacks: Vec<FusionFallback>,
    /// Wall-clock seconds per frame. Not deterministic.
    pub frame_seconds: Vec<f64>,
}

impl SequenceResult {
    pub fn final_memory_size(&self) -> Option<usize> {
        self.memory_trace.last().copied()
    }
}

/// Frame key for memory relevance, checked against the bank's dimension.
pub fn frame_key_of(frame: &FrameRef, embedder: &dyn Embedder, bank: &MemoryBank) -> Result<Embedding, PipelineFailure> {
    let key = embedder.frame_key(frame).map_err(|source| PipelineFailure::Backend {
        frame: frame.frame_index,
        source,
    })?;
    bank.check_dim(&key).map_err(|source| PipelineFailure::Memory {
        frame: frame.frame_index,
        source,
    })?;
    Ok(key)
}

fn check_masks(masks: &[ObjectMask], objects: usize, seq: &SequenceDescriptor, frame: usize) -> Result<(), PipelineFailure> {
    if masks.len() != objects {
        return Err(PipelineFailure::Backend {
            frame,
            source: BackendError::ObjectCount {
                expected: objects,
                actual: masks.len(),
            },
        });
    }
    if let Some(m) = masks.iter().find(|m| m.shape() != (seq.height, seq.width)) {
        return Err(PipelineFailure::Input(format!(
            "frame {frame}: mask shape {:?} differs from the sequence shape {}x{}",
            m.shape(),
            seq.height,
            seq.width
        )));
    }
    Ok(())
}

/// Runs one sequence. Frame 0 outputs `gt_first` and seeds a protected
/// memory entry; later frames are decoded, optionally fused, and offered to
/// memory on cadence frames.
pub fn run_sequence(
    seq: &SequenceDescriptor,
    gt_first: &[ObjectMask],
    cfg: &PipelineConfig,
    backends: &Backends,
) -> Result<SequenceResult, PipelineError> {
    let mut result = SequenceResult {
        sequence_id: seq.sequence_id.clone(),
        ..Default::default()
    };
    match drive(seq, gt_first, cfg, backends, &mut result) {
        Ok(()) => Ok(result),
        Err(failure) => Err(PipelineError {
            failure,
            partial: Box::new(result),
        }),
    }
}

fn drive(
    seq: &SequenceDescriptor,
    gt_first: &[ObjectMask],
    cfg: &PipelineConfig,
    backends: &Backends,
    out: &mut SequenceResult,
) -> Result<(), PipelineFailure> {
    cfg.validate()?;
    if seq.len == 0 {
        return Err(PipelineFailure::Input("sequence has no frames".into()));
    }
    if gt_first.is_empty() {
        return Err(PipelineFailure::Input("no objects in the first frame".into()));
    }
    let objects = gt_first.len();
    check_masks(gt_first, objects, seq, 0)?;

    let policy: Box<dyn MemoryPolicy> = PolicyRegistry::default()
        .create(cfg.policy_name())
        .expect("built-in policy");
    let memory_err = |frame| move |source| PipelineFailure::Memory { frame, source };
    let backend_err = |frame| move |source| PipelineFailure::Backend { frame, source };

    let mut bank = MemoryBank::new(cfg.lambda, cfg.tau_mem, cfg.capacity_limit).map_err(memory_err(0))?;
    let mut payloads = PayloadStore::new();
    let dim = backends.embedder.descriptor().embedding_dim;

    let start = Instant::now();
    let frame0 = seq.frame(0);
    let key = frame_key_of(&frame0, backends.embedder.as_ref(), &bank)?;
    if key.dim() != dim {
        return Err(PipelineFailure::Input(format!(
            "embedder reports dim {dim} but produced {}",
            key.dim()
        )));
    }
    bank.insert_protected(0, key, PayloadHandle(0)).map_err(memory_err(0))?;
    payloads.insert(PayloadHandle(0), gt_first.to_vec());
    out.masks.push(gt_first.to_vec());
    out.vos_masks.push(gt_first.to_vec());
    out.accepted.push(vec![false; objects]);
    out.memory_trace.push(bank.len());
    out.frame_seconds.push(start.elapsed().as_secs_f64());

    let mut prior = gt_first.to_vec();
    for t in 1..seq.len {
        let start = Instant::now();
        let frame = seq.frame(t);
        let key = frame_key_of(&frame, backends.embedder.as_ref(), &bank)?;
        let view = MemoryView {
            bank: &bank,
            payloads: &payloads,
        };
        let vos = backends.segmenter.step(&frame, view, Some(&prior)).map_err(backend_err(t))?;
        check_masks(&vos, objects, seq, t)?;

        let (masks, accepted) = if cfg.enable_hqtf {
            let fused = fuse_frame(&vos, backends.refiner.as_ref(), backends.embedder.as_ref(), &frame, cfg.tau_fuse)
                .map_err(|source| PipelineFailure::Fusion { frame: t, source })?;
            let mut masks = Vec::with_capacity(objects);
            let mut accepted = Vec::with_capacity(objects);
            for (object, f) in fused.into_iter().enumerate() {
                if let Some(e) = f.error {
                    out.fusion_fallbacks.push(FusionFallback {
                        frame: t,
                        object,
                        message: e.to_string(),
                    });
                }
                accepted.push(f.outcome.accepted);
                masks.push(f.outcome.mask);
            }
            (masks, accepted)
        } else {
            (vos.clone(), vec![false; objects])
        };

        if cfg.cadence.inserts_at(t, seq.len) {
            let handle = PayloadHandle(t as u64);
            let report = bank
                .update_with(policy.as_ref(), key, t, handle)
                .map_err(memory_err(t))?;
            if let Some(removed) = &report.removed {
                payloads.remove(&removed.payload);
            }
            payloads.insert(handle, masks.clone());
        }

        prior = masks.clone();
        out.masks.push(masks);
        out.vos_masks.push(vos);
        out.accepted.push(accepted);
        out.memory_trace.push(bank.len());
        out.frame_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(())
}

/// Runs a loaded sequence with `cfg`.
pub fn run_loaded(seq: &LoadedSequence, cfg: &PipelineConfig) -> Result<SequenceResult, PipelineError> {
    run_sequence(&seq.descriptor, &seq.gt_first, cfg, &seq.backends)
}

/// The four component toggles of the ablation table, in row order.
pub const ABLATION_ROWS: [(&str, bool, bool); 4] = [
    ("base", false, false),
    ("base+smem", true, false),
    ("base+hqtf", false, true),
    ("full", true, true),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub enable_smem: bool,
    pub enable_hqtf: bool,
    pub bundle: MetricBundle,
    /// Mean over sequences of the final bank size.
    pub mean_final_memory: f64,
}

/// Runs every sequence under the four toggle combinations of `base_cfg`
/// and scores each combination over all sequences. Sequences run in
/// parallel; results keep input order.
pub fn ablate(
    seqs: &[LoadedSequence],
    base_cfg: &PipelineConfig,
    opts: &MetricOptions,
) -> Result<Vec<AblationRow>, PipelineError> {
    let fail = |failure| PipelineError {
        failure,
        partial: Box::default(),
    };
    if seqs.is_empty() {
        return Err(fail(PipelineFailure::Input("ablation needs at least one sequence".into())));
    }
    let gts = seqs
        .iter()
        .map(|s| {
            s.gt_all.clone().ok_or_else(|| {
                fail(PipelineFailure::Input(format!(
                    "sequence {:?} has no full ground truth",
                    s.descriptor.sequence_id
                )))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    ABLATION_ROWS
        .iter()
        .map(|&(name, enable_smem, enable_hqtf)| {
            let cfg = PipelineConfig {
                enable_smem,
                enable_hqtf,
                ..base_cfg.clone()
            };
            let results = seqs
                .par_iter()
                .map(|s| run_loaded(s, &cfg))
                .collect::<Result<Vec<_>, _>>()?;
            let preds: Vec<SequenceMasks> = results.iter().map(|r| r.masks.clone()).collect();
            let bundle = vots_bundle(&preds, &gts, opts).map_err(|e| fail(e.into()))?;
            let mean_final_memory = results
                .iter()
                .map(|r| r.final_memory_size().unwrap_or(0) as f64)
                .sum::<f64>()
                / results.len() as f64;
            Ok(AblationRow {
                name,
                enable_smem,
                enable_hqtf,
                bundle,
                mean_final_memory,
            })
        })
        .collect()
}
