//! Deterministic backends over a [`SyntheticDataset`].
//!
//! The segmenter returns ground truth corrupted along the object boundary.
//! Its error for a frame combines
//!   * error carried over from the prior mask (`carry * (1 - IoU(prior, gt))`),
//!   * fresh noise scaled by `base_noise`, multiplied by `1 + memory_penalty`
//!     when no bank key reaches `relevance_floor` against the current key, and
//!     by `1 + dilution * (1 - share)` where `share` is the fraction of bank
//!     keys that do reach it.
//!
//! so better priors and better memory both measurably reduce error.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_box, check_mask_shape, BackendDescriptor, BackendError, BackendKind, Embedder, FrameRef, MaskTriple,
    MemoryView, Refiner, Segmenter,
};
use crate::embedding::{cosine, Embedding};
use crate::mask::{BoundingBox, ObjectMask};
use crate::metrics::iou;
use crate::synth::SyntheticDataset;

/// Error model of [`SyntheticSegmenter`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticNoise {
    /// Fresh error per frame, as a fraction of object area flipped.
    pub base_noise: f64,
    /// Extra noise factor when memory holds no relevant key.
    pub memory_penalty: f64,
    /// Relevance a bank key needs to count as matching the current frame.
    pub relevance_floor: f64,
    /// Extra noise factor scaled by the share of non-matching bank keys.
    pub dilution: f64,
    /// Fraction of the prior's error inherited by the next prediction.
    pub carry: f64,
    /// Cap on the per-frame error fraction.
    pub max_error: f64,
}

impl Default for SyntheticNoise {
    fn default() -> Self {
        Self {
            base_noise: 0.08,
            memory_penalty: 1.5,
            relevance_floor: 0.9,
            dilution: 0.5,
            carry: 0.6,
            max_error: 0.5,
        }
    }
}

impl SyntheticNoise {
    pub fn noiseless() -> Self {
        Self {
            base_noise: 0.0,
            ..Self::default()
        }
    }
}

/// SplitMix64 over the given words; seeds per-(frame, object) RNG streams.
pub(crate) fn stream_seed(words: &[u64]) -> u64 {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    for &w in words {
        state = state.wrapping_add(w).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}

fn check_frame(ds: &SyntheticDataset, frame: &FrameRef) -> Result<(), BackendError> {
    if frame.sequence_id != ds.name() || frame.frame_index >= ds.len() || (frame.height, frame.width) != ds.shape() {
        return Err(BackendError::UnknownFrame {
            sequence: frame.sequence_id.clone(),
            frame: frame.frame_index,
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SyntheticEmbedder {
    ds: Arc<SyntheticDataset>,
}

impl SyntheticEmbedder {
    pub fn new(ds: Arc<SyntheticDataset>) -> Self {
        Self { ds }
    }
}

impl Embedder for SyntheticEmbedder {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Synthetic,
            embedding_dim: self.ds.dim(),
            deterministic: true,
            concurrent_safe: true,
        }
    }

    fn frame_key(&self, frame: &FrameRef) -> Result<Embedding, BackendError> {
        check_frame(&self.ds, frame)?;
        Ok(self.ds.frame_key(frame.frame_index).clone())
    }

    fn object_appearance(&self, frame: &FrameRef, mask: &ObjectMask) -> Result<Embedding, BackendError> {
        check_frame(&self.ds, frame)?;
        check_mask_shape(frame, mask)?;
        Ok(self.ds.pooled(frame.frame_index, Some(mask)))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSegmenter {
    ds: Arc<SyntheticDataset>,
    noise: SyntheticNoise,
    seed: u64,
}

impl SyntheticSegmenter {
    pub fn new(ds: Arc<SyntheticDataset>, noise: SyntheticNoise, seed: u64) -> Self {
        Self { ds, noise, seed }
    }

    /// Noise multiplier implied by the memory contents for key `current`.
    pub fn memory_factor(&self, memory: &MemoryView<'_>, current: &Embedding) -> Result<f64, BackendError> {
        let entries = memory.bank.entries();
        let mut best = f64::NEG_INFINITY;
        let mut matching = 0usize;
        for e in entries {
            let rel = cosine(&e.key, current)?;
            best = best.max(rel);
            matching += usize::from(rel >= self.noise.relevance_floor);
        }
        let share = if entries.is_empty() {
            0.0
        } else {
            matching as f64 / entries.len() as f64
        };
        let penalty = if best < self.noise.relevance_floor {
            1.0 + self.noise.memory_penalty
        } else {
            1.0
        };
        Ok(penalty * (1.0 + self.noise.dilution * (1.0 - share)))
    }
}

impl Segmenter for SyntheticSegmenter {
    fn step(
        &self,
        frame: &FrameRef,
        memory: MemoryView<'_>,
        prior: Option<&[ObjectMask]>,
    ) -> Result<Vec<ObjectMask>, BackendError> {
        check_frame(&self.ds, frame)?;
        let objects = self.ds.num_objects();
        if let Some(p) = prior {
            if p.len() != objects {
                return Err(BackendError::ObjectCount {
                    expected: objects,
                    actual: p.len(),
                });
            }
            for m in p {
                check_mask_shape(frame, m)?;
            }
        }
        let t = frame.frame_index;
        if t == 0 {
            return prior.map(<[ObjectMask]>::to_vec).ok_or(BackendError::MissingPrior);
        }
        let key = self.ds.frame_key(t);
        let amplitude = self.noise.base_noise * self.memory_factor(&memory, key)?;
        (0..objects)
            .map(|i| {
                let gt = self.ds.gt_mask(t, i);
                if gt.is_empty() {
                    return Ok(gt);
                }
                let prior_error = match prior {
                    Some(p) => 1.0 - iou(&p[i], &self.ds.gt_mask(t - 1, i)).expect("shapes checked"),
                    None => 0.0,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[self.seed, t as u64, i as u64, 1]));
                let fresh = amplitude * (0.5 + 0.5 * rng.gen::<f64>());
                let error = (self.noise.carry * prior_error + fresh).min(self.noise.max_error);
                let flips = (error * gt.area() as f64).round() as usize;
                Ok(perturb(&gt, flips, &mut rng))
            })
            .collect()
    }
}

/// Flips `flips` pixels nearest the boundary of `gt`: some removed from the
/// innermost layers, the rest added from the outermost. Never empties the mask.
fn perturb(gt: &ObjectMask, flips: usize, rng: &mut ChaCha8Rng) -> ObjectMask {
    let area = gt.area();
    if flips == 0 || area == 0 {
        return gt.clone();
    }
    let removals = ((flips as f64 * rng.gen::<f64>()).round() as usize).min(area - 1);
    let additions = flips - removals;

    let n = gt.bits().len();
    let (h, w) = gt.shape();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for (i, d) in dist.iter_mut().enumerate() {
        let (r, c) = (i / w, i % w);
        let on_border = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
        let inside = gt.bits()[i];
        let touches_other = gt.neighbors4(i).any(|j| gt.bits()[j] != inside);
        if touches_other || (inside && on_border) {
            *d = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let inside = gt.bits()[i];
        for j in gt.neighbors4(i) {
            if gt.bits()[j] == inside && dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let ties: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
    let ranked = |inside: bool| {
        let mut v: Vec<usize> = (0..n).filter(|&i| gt.bits()[i] == inside).collect();
        v.sort_by_key(|&i| (dist[i], ties[i]));
        v
    };
    let mut out = gt.clone();
    for i in ranked(true).into_iter().take(removals) {
        out.set(i / w, i % w, false);
    }
    for i in ranked(false).into_iter().take(additions) {
        out.set(i / w, i % w, true);
    }
    out
}

/// Faithful box-prompted refiner. Rank 1 is the object's ground truth inside
/// the box; rank 2 the part of another object inside the box (or, with no
/// other object there, the box minus the target); rank 3 a random
/// sub-rectangle of the box minus the target. Ranks 2 and 3 never touch the
/// target.
#[derive(Debug, Clone)]
pub struct SyntheticRefiner {
    ds: Arc<SyntheticDataset>,
    seed: u64,
}

impl SyntheticRefiner {
    pub fn new(ds: Arc<SyntheticDataset>, seed: u64) -> Self {
        Self { ds, seed }
    }
}

impl Refiner for SyntheticRefiner {
    fn propose(&self, frame: &FrameRef, object: usize, bbox: &BoundingBox) -> Result<MaskTriple, BackendError> {
        check_frame(&self.ds, frame)?;
        check_box(frame, bbox)?;
        let objects = self.ds.num_objects();
        if object >= objects {
            return Err(BackendError::ObjectCount {
                expected: objects,
                actual: object + 1,
            });
        }
        let t = frame.frame_index;
        let (h, w) = self.ds.shape();
        let target = self.ds.gt_mask(t, object);
        let in_box = ObjectMask::from_fn(h, w, |r, c| bbox.contains(r, c))?;

        let restricted = target.restrict_to(bbox);
        let distractor = (1..objects)
            .map(|k| (object + k) % objects)
            .map(|j| self.ds.gt_mask(t, j).restrict_to(bbox))
            .find(|m| !m.is_empty())
            .map_or_else(|| in_box.difference(&target), Ok)?;

        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[self.seed, t as u64, object as u64, 3]));
        let bh = bbox.row_max - bbox.row_min + 1;
        let bw = bbox.col_max - bbox.col_min + 1;
        let (rh, rw) = (rng.gen_range(1..=bh), rng.gen_range(1..=bw));
        let r0 = bbox.row_min + rng.gen_range(0..=bh - rh);
        let c0 = bbox.col_min + rng.gen_range(0..=bw - rw);
        let blob = ObjectMask::from_fn(h, w, |r, c| {
            (r0..r0 + rh).contains(&r) && (c0..c0 + rw).contains(&c)
        })?
        .difference(&target)?;

        Ok([restricted, distractor, blob])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{MemoryBank, PayloadHandle};
    use crate::synth::{benchmark_suite, generate};
    use crate::backends::PayloadStore;

    fn dataset(name: &str) -> Arc<SyntheticDataset> {
        let spec = benchmark_suite(0).into_iter().find(|s| s.name == name).unwrap();
        Arc::new(generate(&spec).unwrap())
    }

    fn frame(ds: &SyntheticDataset, t: usize) -> FrameRef {
        FrameRef {
            sequence_id: ds.name().to_string(),
            frame_index: t,
            height: ds.shape().0,
            width: ds.shape().1,
        }
    }

    #[test]
    fn embedder_is_deterministic_and_pools() {
        let ds = dataset("occlude-100");
        let emb = SyntheticEmbedder::new(ds.clone());
        let f = frame(&ds, 3);
        assert_eq!(emb.frame_key(&f).unwrap(), emb.frame_key(&f).unwrap());
        let m = ds.gt_mask(3, 1);
        assert_eq!(emb.object_appearance(&f, &m).unwrap(), ds.appearance(3, 1).clone());
        let empty = ObjectMask::empty(64, 64).unwrap();
        assert_eq!(emb.object_appearance(&f, &empty).unwrap().norm(), 0.0);
        assert!(emb.frame_key(&frame(&ds, 100)).is_err());
        assert!(emb.object_appearance(&f, &ObjectMask::empty(2, 2).unwrap()).is_err());
        assert_eq!(emb.descriptor().embedding_dim, emb.frame_key(&f).unwrap().dim());
    }

    #[test]
    fn noiseless_segmenter_returns_gt() {
        let ds = dataset("split-100");
        let seg = SyntheticSegmenter::new(ds.clone(), SyntheticNoise::noiseless(), 1);
        let bank = MemoryBank::default();
        let payloads = PayloadStore::new();
        let view = MemoryView { bank: &bank, payloads: &payloads };
        let prior = ds.gt_masks(9);
        assert_eq!(seg.step(&frame(&ds, 10), view, Some(&prior)).unwrap(), ds.gt_masks(10));
        assert!(matches!(seg.step(&frame(&ds, 0), view, None), Err(BackendError::MissingPrior)));
    }

    #[test]
    fn stale_memory_hurts_at_appearance_shift() {
        let ds = dataset("shift-200");
        let seg = SyntheticSegmenter::new(ds.clone(), SyntheticNoise::default(), 4);
        let payloads = PayloadStore::new();
        let t = 40;
        let prior = ds.gt_masks(t - 1);

        let mut stale = MemoryBank::default();
        stale.insert_protected(0, ds.frame_key(0).clone(), PayloadHandle(0)).unwrap();
        stale.update(ds.frame_key(30).clone(), 30, PayloadHandle(30)).unwrap();
        let mut fresh = stale.clone();
        fresh.update(ds.frame_key(t).clone(), t - 1, PayloadHandle(39)).unwrap();

        let run = |bank: &MemoryBank| {
            let view = MemoryView { bank, payloads: &payloads };
            let out = seg.step(&frame(&ds, t), view, Some(&prior)).unwrap();
            iou(&out[0], &ds.gt_mask(t, 0)).unwrap()
        };
        assert!(run(&stale) < run(&fresh));
    }

    #[test]
    fn perturb_flips_exact_count() {
        let gt = ObjectMask::from_fn(20, 20, |r, c| (5..15).contains(&r) && (5..15).contains(&c)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = perturb(&gt, 30, &mut rng);
        let (inter, union) = gt.overlap_counts(&out).unwrap();
        assert_eq!(union - inter, 30);
    }

    #[test]
    fn refiner_first_proposal_is_gt_in_box() {
        let ds = dataset("shift-200");
        let refiner = SyntheticRefiner::new(ds.clone(), 0);
        let f = frame(&ds, 12);
        let gt = ds.gt_mask(12, 0);
        let bbox = gt.bounding_box().unwrap();
        let [p1, p2, p3] = refiner.propose(&f, 0, &bbox).unwrap();
        assert_eq!(iou(&p1, &gt).unwrap(), 1.0);
        assert_eq!(p2.intersection(&gt).unwrap().area(), 0);
        assert_eq!(p3.intersection(&gt).unwrap().area(), 0);
    }

    #[test]
    fn refiner_handles_single_pixel_box() {
        let ds = dataset("twin-100");
        let refiner = SyntheticRefiner::new(ds.clone(), 0);
        let bbox = BoundingBox { row_min: 5, col_min: 5, row_max: 5, col_max: 5 };
        let props = refiner.propose(&frame(&ds, 0), 0, &bbox).unwrap();
        assert!(props.iter().all(|p| p.area() <= 1));
        let outside = BoundingBox { row_min: 0, col_min: 0, row_max: 64, col_max: 3 };
        assert!(matches!(
            refiner.propose(&frame(&ds, 0), 0, &outside),
            Err(BackendError::BoxOutOfBounds { .. })
        ));
    }
}
