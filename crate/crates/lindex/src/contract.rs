//! The shared behavioral contract all index implementations satisfy,
//! and the per-operation instrumentation counters.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::dataset::{Key, Payload};

/// Per-index instrumentation. Increments are relaxed single-word
/// atomics; exactness under concurrency is best-effort.
#[derive(Debug, Default)]
pub struct Counters {
    pub nodes_traversed: AtomicU64,
    pub keys_shifted: AtomicU64,
    pub smo_count: AtomicU64,
    pub retrain_count: AtomicU64,
    pub nodes_created: AtomicU64,
    pub lookups: AtomicU64,
    pub inserts: AtomicU64,
}

impl Counters {
    pub fn snapshot(&self) -> CountersSnapshot {
        CountersSnapshot {
            nodes_traversed: self.nodes_traversed.load(Ordering::Relaxed),
            keys_shifted: self.keys_shifted.load(Ordering::Relaxed),
            smo_count: self.smo_count.load(Ordering::Relaxed),
            retrain_count: self.retrain_count.load(Ordering::Relaxed),
            nodes_created: self.nodes_created.load(Ordering::Relaxed),
            lookups: self.lookups.load(Ordering::Relaxed),
            inserts: self.inserts.load(Ordering::Relaxed),
        }
    }

    #[inline]
    pub fn add(&self, counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CountersSnapshot {
    pub nodes_traversed: u64,
    pub keys_shifted: u64,
    pub smo_count: u64,
    pub retrain_count: u64,
    pub nodes_created: u64,
    pub lookups: u64,
    pub inserts: u64,
}

impl CountersSnapshot {
    pub fn delta(&self, earlier: &CountersSnapshot) -> CountersSnapshot {
        CountersSnapshot {
            nodes_traversed: self.nodes_traversed - earlier.nodes_traversed,
            keys_shifted: self.keys_shifted - earlier.keys_shifted,
            smo_count: self.smo_count - earlier.smo_count,
            retrain_count: self.retrain_count - earlier.retrain_count,
            nodes_created: self.nodes_created - earlier.nodes_created,
            lookups: self.lookups - earlier.lookups,
            inserts: self.inserts - earlier.inserts,
        }
    }
}

/// Ordered key→payload map contract. All implementations are safe to
/// share across threads; after any operation sequence the observable
/// mapping must equal a reference sorted map driven by the same ops.
pub trait OrderedIndex: Send + Sync {
    /// Point lookup. Absent key → `None`.
    fn lookup(&self, key: Key) -> Option<Payload>;

    /// Inserts or overwrites. Returns `true` iff the key was absent.
    fn insert(&self, key: Key, payload: Payload) -> bool;

    /// Removes a key. Returns `false` if absent.
    fn remove(&self, key: Key) -> bool;

    /// The `count` smallest keys ≥ `start`, in ascending order. Returns
    /// fewer when the index runs out of keys.
    fn range_scan(&self, start: Key, count: usize) -> Vec<(Key, Payload)>;

    /// End-to-end allocated size: slots, bitmaps, headers, child arrays.
    fn size_in_bytes(&self) -> usize;

    /// Consistent snapshot of the instrumentation counters.
    fn op_stats(&self) -> CountersSnapshot;
}
