use std::collections::BTreeMap;

use crate::call::CallSpec;
use crate::pending::{PendingAction, PendingStatus};

struct Entry {
    pending: PendingAction,
    generation: usize,
}

/// Map from call specifier to the pending action pre-launched for it.
///
/// `generation` is the step whose speculation window produced the entry; the
/// entry is meant to be consumed at `generation + 1`.
#[derive(Default)]
pub struct SpeculationCache {
    entries: BTreeMap<CallSpec, Entry>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Eviction {
    pub evicted: usize,
    /// Entries whose in-flight call was cancelled.
    pub cancelled: usize,
    /// Entries dropped without cancellation: already settled, or the handler
    /// cannot be cancelled and keeps running detached.
    pub detached: usize,
}

impl SpeculationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, spec: &CallSpec) -> bool {
        self.entries.contains_key(spec)
    }

    pub fn generation_of(&self, spec: &CallSpec) -> Option<usize> {
        self.entries.get(spec).map(|e| e.generation)
    }

    /// Insert unless an entry for the same call already exists. Returns the
    /// action back when it was not inserted.
    #[allow(clippy::result_large_err)]
    pub fn insert(&mut self, pending: PendingAction, generation: usize) -> Result<(), PendingAction> {
        if self.entries.contains_key(pending.spec()) {
            return Err(pending);
        }
        self.entries.insert(pending.spec().clone(), Entry { pending, generation });
        Ok(())
    }

    pub fn take(&mut self, spec: &CallSpec) -> Option<(PendingAction, usize)> {
        self.entries.remove(spec).map(|e| (e.pending, e.generation))
    }

    /// Remove entries with `generation < current_step - 1`, cancelling their
    /// calls where possible.
    pub fn evict_stale(&mut self, current_step: usize, now: f64) -> Eviction {
        let Some(cutoff) = current_step.checked_sub(1) else {
            return Eviction::default();
        };
        let stale: Vec<CallSpec> =
            self.entries.iter().filter(|(_, e)| e.generation < cutoff).map(|(k, _)| k.clone()).collect();
        let mut out = Eviction::default();
        for key in stale {
            let mut entry = self.entries.remove(&key).expect("key collected from map");
            out.evicted += 1;
            if entry.pending.cancel(now) {
                out.cancelled += 1;
            } else {
                out.detached += 1;
            }
        }
        out
    }

    /// Drain everything (end of run), cancelling what can be cancelled.
    pub fn clear(&mut self, now: f64) -> Eviction {
        let mut out = Eviction::default();
        for (_, mut e) in std::mem::take(&mut self.entries) {
            out.evicted += 1;
            if e.pending.status() == PendingStatus::InFlight && e.pending.cancel(now) {
                out.cancelled += 1;
            } else {
                out.detached += 1;
            }
        }
        out
    }

    pub fn min_generation(&self) -> Option<usize> {
        self.entries.values().map(|e| e.generation).min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn pa(name: &str, cancellable: bool) -> PendingAction {
        PendingAction::scheduled(CallSpec::new(name, &json!({})), 0.0, 10.0, cancellable, Ok("v".into()))
    }

    #[test]
    fn evicts_only_older_generations() {
        let mut c = SpeculationCache::new();
        c.insert(pa("a", true), 3).unwrap();
        c.insert(pa("b", true), 3).unwrap();
        c.insert(pa("c", true), 4).unwrap();
        let ev = c.evict_stale(5, 1.0);
        assert_eq!(ev.evicted, 2);
        assert_eq!(ev.cancelled, 2);
        assert_eq!(c.len(), 1);
        assert!(c.min_generation().unwrap() + 1 >= 5);
    }

    #[test]
    fn empty_cache_evicts_nothing() {
        let mut c = SpeculationCache::new();
        assert_eq!(c.evict_stale(5, 0.0).evicted, 0);
        assert_eq!(c.evict_stale(0, 0.0).evicted, 0);
    }

    #[test]
    fn non_cancellable_entries_are_detached() {
        let mut c = SpeculationCache::new();
        c.insert(pa("a", false), 0).unwrap();
        let ev = c.evict_stale(2, 1.0);
        assert_eq!(ev, Eviction { evicted: 1, cancelled: 0, detached: 1 });
    }

    #[test]
    fn one_entry_per_call() {
        let mut c = SpeculationCache::new();
        c.insert(pa("a", true), 0).unwrap();
        assert!(c.insert(pa("a", true), 0).is_err());
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn siblings_of_a_hit_are_evicted_next_step() {
        // k=3 window at step 4; hit at step 5 consumes rank 1; step 6 evicts the rest.
        let mut c = SpeculationCache::new();
        for n in ["r0", "r1", "r2"] {
            c.insert(pa(n, true), 4).unwrap();
        }
        assert_eq!(c.evict_stale(5, 0.0).evicted, 0);
        assert!(c.take(&CallSpec::new("r1", &json!({}))).is_some());
        assert_eq!(c.evict_stale(6, 0.0).evicted, 2);
        assert!(c.is_empty());
    }
}
