use std::collections::BTreeMap;
use std::fmt::Debug;

use super::{MemoryBank, MemoryError};
use crate::embedding::Embedding;

/// Decides how an incoming frame key enters a [`MemoryBank`].
pub trait MemoryPolicy: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Position of the entry the incoming key replaces, or `None` to append.
    fn replacement(
        &self,
        bank: &MemoryBank,
        current: &Embedding,
        current_frame: usize,
    ) -> Result<Option<usize>, MemoryError>;

    /// Position of the entry dropped when appending would exceed the
    /// capacity limit. Must never name a protected entry.
    fn capacity_victim(
        &self,
        bank: &MemoryBank,
        current: &Embedding,
        current_frame: usize,
    ) -> Result<Option<usize>, MemoryError>;
}

/// Relevance/freshness gated replacement.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmartEviction;

impl MemoryPolicy for SmartEviction {
    fn name(&self) -> &'static str {
        "smart"
    }

    fn replacement(
        &self,
        bank: &MemoryBank,
        current: &Embedding,
        current_frame: usize,
    ) -> Result<Option<usize>, MemoryError> {
        Ok(bank
            .evict_candidate(current, current_frame)?
            .filter(|c| c.relevance >= bank.tau_mem())
            .map(|c| c.index))
    }

    fn capacity_victim(
        &self,
        bank: &MemoryBank,
        current: &Embedding,
        current_frame: usize,
    ) -> Result<Option<usize>, MemoryError> {
        Ok(bank
            .evict_candidate(current, current_frame)?
            .map(|c| c.index))
    }
}

/// Linear baseline memory: every offered frame is kept. Under a capacity
/// limit the oldest unprotected entry goes.
#[derive(Debug, Clone, Copy, Default)]
pub struct AppendOnly;

impl MemoryPolicy for AppendOnly {
    fn name(&self) -> &'static str {
        "append"
    }

    fn replacement(
        &self,
        _bank: &MemoryBank,
        _current: &Embedding,
        _current_frame: usize,
    ) -> Result<Option<usize>, MemoryError> {
        Ok(None)
    }

    fn capacity_victim(
        &self,
        bank: &MemoryBank,
        _current: &Embedding,
        _current_frame: usize,
    ) -> Result<Option<usize>, MemoryError> {
        Ok(bank.entries().iter().position(|e| !e.protected))
    }
}

type PolicyFactory = fn() -> Box<dyn MemoryPolicy>;

/// Named memory policies, selectable from configuration.
#[derive(Debug, Clone)]
pub struct PolicyRegistry {
    factories: BTreeMap<&'static str, PolicyFactory>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut registry = Self {
            factories: BTreeMap::new(),
        };
        registry.register("smart", || Box::new(SmartEviction));
        registry.register("append", || Box::new(AppendOnly));
        registry
    }
}

impl PolicyRegistry {
    pub fn register(&mut self, name: &'static str, factory: PolicyFactory) {
        self.factories.insert(name, factory);
    }

    pub fn create(&self, name: &str) -> Option<Box<dyn MemoryPolicy>> {
        self.factories.get(name).map(|f| f())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{PayloadHandle, UpdateBranch};

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn registry_resolves_builtins() {
        let registry = PolicyRegistry::default();
        assert_eq!(registry.names().collect::<Vec<_>>(), vec!["append", "smart"]);
        assert_eq!(registry.create("smart").unwrap().name(), "smart");
        assert!(registry.create("lru").is_none());
    }

    #[test]
    fn append_only_grows_linearly() {
        let mut bank = MemoryBank::default();
        bank.insert_protected(0, e(&[1.0]), PayloadHandle(0)).unwrap();
        for f in 1..=10 {
            let r = bank
                .update_with(&AppendOnly, e(&[1.0]), f, PayloadHandle(f as u64))
                .unwrap();
            assert_eq!(r.branch, UpdateBranch::Appended);
            assert_eq!(bank.len(), f + 1);
        }
    }

    #[test]
    fn append_only_capacity_drops_oldest_unprotected() {
        let mut bank = MemoryBank::new(1.0, 0.85, Some(3)).unwrap();
        bank.insert_protected(0, e(&[1.0]), PayloadHandle(0)).unwrap();
        for f in 1..=5 {
            bank.update_with(&AppendOnly, e(&[1.0]), f, PayloadHandle(f as u64))
                .unwrap();
        }
        let frames: Vec<_> = bank.entries().iter().map(|e| e.frame_index).collect();
        assert_eq!(frames, vec![0, 4, 5]);
    }
}
