//! Smart memory bank: relevance/freshness scoring, eviction and
//! threshold-gated insertion of frame keys.
//!
//! Each stored frame is scored against the incoming key with
//! `rel * (1 + lambda * fr)` where `rel` is cosine similarity and `fr` the
//! inverse age. The highest-scoring unprotected entry is the eviction
//! candidate; it is replaced by the incoming frame only when its relevance
//! reaches `tau_mem`, otherwise the bank grows.

mod policy;

pub use policy::{AppendOnly, MemoryPolicy, PolicyRegistry, SmartEviction};

use thiserror::Error;

use crate::embedding::{cosine, Embedding, EmbeddingError};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_TAU_MEM: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("frame {entry_frame} is not older than current frame {current_frame}")]
    NotInPast {
        entry_frame: usize,
        current_frame: usize,
    },
    #[error("frame {0} is already stored in the memory bank")]
    DuplicateFrame(usize),
    #[error("frame {frame} precedes the newest stored frame {newest}")]
    OutOfOrder { frame: usize, newest: usize },
    #[error("capacity limit {0} reached and every stored entry is protected")]
    CapacityExhausted(usize),
    #[error("invalid memory parameter: {0}")]
    InvalidParameter(String),
}

/// Opaque reference to decoder state recorded for a memory frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PayloadHandle(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub frame_index: usize,
    pub key: Embedding,
    pub payload: PayloadHandle,
    /// Protected entries are never eviction candidates.
    pub protected: bool,
}

/// Cosine similarity between a stored key and the current key.
pub fn relevance(stored: &Embedding, current: &Embedding) -> Result<f64, MemoryError> {
    Ok(cosine(stored, current)?)
}

/// Inverse age `1 / (current - entry)`.
pub fn freshness(entry_frame: usize, current_frame: usize) -> Result<f64, MemoryError> {
    if entry_frame >= current_frame {
        return Err(MemoryError::NotInPast {
            entry_frame,
            current_frame,
        });
    }
    Ok(1.0 / (current_frame - entry_frame) as f64)
}

/// Relative tolerance under which two removal scores are treated as equal.
pub const SCORE_TIE_EPSILON: f64 = 1e-12;

/// Whether `score` ties with `max` under [`SCORE_TIE_EPSILON`].
pub fn scores_tie(score: f64, max: f64) -> bool {
    max - score <= SCORE_TIE_EPSILON * max.abs().max(1.0)
}

pub fn removal_score(rel: f64, fr: f64, lambda: f64) -> f64 {
    rel * (1.0 + lambda * fr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvictionCandidate {
    /// Position in [`MemoryBank::entries`].
    pub index: usize,
    pub frame_index: usize,
    pub relevance: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateBranch {
    /// The candidate was similar enough and got replaced.
    Replaced,
    /// Plain growth.
    Appended,
    /// Growth would have exceeded the capacity limit, so a victim was dropped.
    CapacityEvicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub branch: UpdateBranch,
    pub removed: Option<MemoryEntry>,
    pub size_after: usize,
}

impl UpdateReport {
    pub fn removed_frame(&self) -> Option<usize> {
        self.removed.as_ref().map(|e| e.frame_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    entries: Vec<MemoryEntry>,
    lambda: f64,
    tau_mem: f64,
    capacity_limit: Option<usize>,
}

impl Default for MemoryBank {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            lambda: DEFAULT_LAMBDA,
            tau_mem: DEFAULT_TAU_MEM,
            capacity_limit: None,
        }
    }
}

impl MemoryBank {
    pub fn new(
        lambda: f64,
        tau_mem: f64,
        capacity_limit: Option<usize>,
    ) -> Result<Self, MemoryError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(MemoryError::InvalidParameter(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        if !(-1.0..=1.0).contains(&tau_mem) {
            return Err(MemoryError::InvalidParameter(format!(
                "tau_mem must lie in [-1, 1], got {tau_mem}"
            )));
        }
        if capacity_limit == Some(0) {
            return Err(MemoryError::InvalidParameter(
                "capacity_limit must be positive".into(),
            ));
        }
        Ok(Self {
            entries: Vec::new(),
            lambda,
            tau_mem,
            capacity_limit,
        })
    }

    /// Rebuilds a bank from stored entries, checking order, uniqueness,
    /// dimension and capacity.
    pub fn from_entries(
        lambda: f64,
        tau_mem: f64,
        capacity_limit: Option<usize>,
        entries: Vec<MemoryEntry>,
    ) -> Result<Self, MemoryError> {
        let mut bank = Self::new(lambda, tau_mem, capacity_limit)?;
        if let Some(cap) = capacity_limit {
            if entries.len() > cap {
                return Err(MemoryError::CapacityExhausted(cap));
            }
        }
        for entry in entries {
            bank.check_next_frame(entry.frame_index)?;
            bank.check_dim(&entry.key)?;
            bank.entries.push(entry);
        }
        Ok(bank)
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau_mem(&self) -> f64 {
        self.tau_mem
    }

    pub fn capacity_limit(&self) -> Option<usize> {
        self.capacity_limit
    }

    /// Key dimension shared by all entries, if any are stored.
    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.key.dim())
    }

    pub fn newest_frame(&self) -> Option<usize> {
        self.entries.last().map(|e| e.frame_index)
    }

    pub fn protected_count(&self) -> usize {
        self.entries.iter().filter(|e| e.protected).count()
    }

    /// Fails if `key` cannot be compared against the stored keys.
    pub fn check_dim(&self, key: &Embedding) -> Result<(), MemoryError> {
        if let Some(first) = self.entries.first() {
            first.key.ensure_same_dim(key)?;
        }
        Ok(())
    }

    fn check_next_frame(&self, frame: usize) -> Result<(), MemoryError> {
        if self.entries.iter().any(|e| e.frame_index == frame) {
            return Err(MemoryError::DuplicateFrame(frame));
        }
        match self.newest_frame() {
            Some(newest) if newest > frame => Err(MemoryError::OutOfOrder { frame, newest }),
            _ => Ok(()),
        }
    }

    /// Stores the ground-truth initialised entry, exempt from eviction.
    pub fn insert_protected(
        &mut self,
        frame_index: usize,
        key: Embedding,
        payload: PayloadHandle,
    ) -> Result<(), MemoryError> {
        self.check_next_frame(frame_index)?;
        self.check_dim(&key)?;
        if let Some(cap) = self.capacity_limit {
            if self.entries.len() >= cap {
                return Err(MemoryError::CapacityExhausted(cap));
            }
        }
        self.entries.push(MemoryEntry {
            frame_index,
            key,
            payload,
            protected: true,
        });
        Ok(())
    }

    /// The unprotected entry with the highest removal score. Scores within
    /// [`SCORE_TIE_EPSILON`] (relative) of the maximum count as tied and the
    /// oldest tied frame wins.
    pub fn evict_candidate(
        &self,
        current: &Embedding,
        current_frame: usize,
    ) -> Result<Option<EvictionCandidate>, MemoryError> {
        self.check_dim(current)?;
        let mut scored = Vec::with_capacity(self.entries.len());
        for (index, entry) in self.entries.iter().enumerate() {
            let fr = freshness(entry.frame_index, current_frame)?;
            if entry.protected {
                continue;
            }
            let rel = relevance(&entry.key, current)?;
            scored.push(EvictionCandidate {
                index,
                frame_index: entry.frame_index,
                relevance: rel,
                score: removal_score(rel, fr, self.lambda),
            });
        }
        let max = scored.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
        // entries are ascending by frame, so the first tied one is the oldest
        Ok(scored.into_iter().find(|c| scores_tie(c.score, max)))
    }

    /// Smart update: replace the eviction candidate when its relevance to the
    /// incoming key is at least `tau_mem`, otherwise grow.
    pub fn update(
        &mut self,
        current: Embedding,
        current_frame: usize,
        payload: PayloadHandle,
    ) -> Result<UpdateReport, MemoryError> {
        self.update_with(&SmartEviction, current, current_frame, payload)
    }

    /// Inserts `current` using `policy` to pick what, if anything, it replaces.
    pub fn update_with(
        &mut self,
        policy: &dyn MemoryPolicy,
        current: Embedding,
        current_frame: usize,
        payload: PayloadHandle,
    ) -> Result<UpdateReport, MemoryError> {
        self.check_next_frame(current_frame)?;
        self.check_dim(&current)?;

        let entry = MemoryEntry {
            frame_index: current_frame,
            key: current,
            payload,
            protected: false,
        };

        if let Some(index) = policy.replacement(self, &entry.key, current_frame)? {
            let removed = self.entries.remove(index);
            self.entries.push(entry);
            return Ok(UpdateReport {
                branch: UpdateBranch::Replaced,
                removed: Some(removed),
                size_after: self.entries.len(),
            });
        }

        match self.capacity_limit {
            Some(cap) if self.entries.len() >= cap => {
                let index = policy
                    .capacity_victim(self, &entry.key, current_frame)?
                    .ok_or(MemoryError::CapacityExhausted(cap))?;
                let removed = self.entries.remove(index);
                self.entries.push(entry);
                Ok(UpdateReport {
                    branch: UpdateBranch::CapacityEvicted,
                    removed: Some(removed),
                    size_after: self.entries.len(),
                })
            }
            _ => {
                self.entries.push(entry);
                Ok(UpdateReport {
                    branch: UpdateBranch::Appended,
                    removed: None,
                    size_after: self.entries.len(),
                })
            }
        }
    }
}
