//! Proposal selection by appearance similarity and the accept/reject
//! decision between a refined proposal and the tracker's own mask.

use thiserror::Error;

use crate::backends::{BackendError, Embedder, FrameRef, Refiner};
use crate::embedding::{cosine, Embedding, EmbeddingError};
use crate::mask::{BoundingBox, MaskError, ObjectMask};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("proposal rank {0} outside 1..=3")]
    Rank(u8),
    #[error("fusion needs at least one object")]
    NoObjects,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub mask: ObjectMask,
    pub appearance: Embedding,
    /// 1-based rank assigned by the refiner.
    pub source_rank: u8,
}

/// Exactly three proposals with equal mask shapes and appearance dims.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    proposals: [Proposal; 3],
}

impl ProposalSet {
    pub fn new(proposals: [Proposal; 3]) -> Result<Self, FusionError> {
        for p in &proposals {
            if !(1..=3).contains(&p.source_rank) {
                return Err(FusionError::Rank(p.source_rank));
            }
            p.mask.ensure_same_shape(&proposals[0].mask)?;
            p.appearance.ensure_same_dim(&proposals[0].appearance)?;
        }
        Ok(Self { proposals })
    }

    pub fn proposals(&self) -> &[Proposal; 3] {
        &self.proposals
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub mask: ObjectMask,
    pub accepted: bool,
    /// `None` when refinement was skipped.
    pub best_similarity: Option<f64>,
    pub chosen_rank: Option<u8>,
}

impl FusionOutcome {
    fn passthrough(vos_mask: &ObjectMask) -> Self {
        Self {
            mask: vos_mask.clone(),
            accepted: false,
            best_similarity: None,
            chosen_rank: None,
        }
    }
}

/// The proposal whose appearance is most similar to `vos_appearance`.
/// Ties go to the smallest rank.
pub fn select_proposal<'a>(
    set: &'a ProposalSet,
    vos_appearance: &Embedding,
) -> Result<(&'a Proposal, f64), FusionError> {
    let mut best: Option<(&Proposal, f64)> = None;
    for p in set.proposals() {
        let sim = cosine(&p.appearance, vos_appearance)?;
        let better = match best {
            None => true,
            Some((b, s)) => sim > s || (sim == s && p.source_rank < b.source_rank),
        };
        if better {
            best = Some((p, sim));
        }
    }
    Ok(best.expect("three proposals"))
}

/// Keeps `best.mask` only when `best_similarity` exceeds `tau_fuse`.
pub fn verify(
    best: &Proposal,
    best_similarity: f64,
    vos_mask: &ObjectMask,
    tau_fuse: f64,
) -> Result<FusionOutcome, FusionError> {
    best.mask.ensure_same_shape(vos_mask)?;
    let accepted = best_similarity > tau_fuse;
    Ok(FusionOutcome {
        mask: if accepted { best.mask.clone() } else { vos_mask.clone() },
        accepted,
        best_similarity: Some(best_similarity),
        chosen_rank: Some(best.source_rank),
    })
}

/// Tight inclusive bounding box, the only prompt type used.
pub fn mask_to_box_prompt(mask: &ObjectMask) -> Option<BoundingBox> {
    mask.bounding_box()
}

/// Refines one object: prompt, propose, embed, select, verify.
pub fn fuse_object(
    vos_mask: &ObjectMask,
    object: usize,
    refiner: &dyn Refiner,
    embedder: &dyn Embedder,
    frame: &FrameRef,
    tau_fuse: f64,
) -> Result<FusionOutcome, FusionError> {
    let Some(bbox) = mask_to_box_prompt(vos_mask) else {
        return Ok(FusionOutcome::passthrough(vos_mask));
    };
    let masks = refiner.propose(frame, object, &bbox)?;
    let vos_appearance = embedder.object_appearance(frame, vos_mask)?;
    let mut ranked = Vec::with_capacity(3);
    for (rank, mask) in (1u8..).zip(masks) {
        let appearance = embedder.object_appearance(frame, &mask)?;
        ranked.push(Proposal {
            mask,
            appearance,
            source_rank: rank,
        });
    }
    let set = ProposalSet::new(ranked.try_into().expect("three proposals"))?;
    let (best, sim) = select_proposal(&set, &vos_appearance)?;
    verify(best, sim, vos_mask, tau_fuse)
}

/// Per-object fusion result. A failed object keeps its VOS mask and carries the error.
#[derive(Debug)]
pub struct ObjectFusion {
    pub outcome: FusionOutcome,
    pub error: Option<FusionError>,
}

/// Fuses every object of one frame, in object order. Backend failures fall
/// back to the VOS mask for that object.
pub fn fuse_frame(
    vos_masks: &[ObjectMask],
    refiner: &dyn Refiner,
    embedder: &dyn Embedder,
    frame: &FrameRef,
    tau_fuse: f64,
) -> Result<Vec<ObjectFusion>, FusionError> {
    if vos_masks.is_empty() {
        return Err(FusionError::NoObjects);
    }
    Ok(vos_masks
        .iter()
        .enumerate()
        .map(|(i, m)| match fuse_object(m, i, refiner, embedder, frame, tau_fuse) {
            Ok(outcome) => ObjectFusion { outcome, error: None },
            Err(e) => ObjectFusion {
                outcome: FusionOutcome::passthrough(m),
                error: Some(e),
            },
        })
        .collect())
}
