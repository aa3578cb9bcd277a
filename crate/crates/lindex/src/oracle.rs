//! Reference ordered map used for differential testing. Correctness
//! only; performance is irrelevant. Single-threaded.

use std::collections::BTreeMap;
use std::ops::Bound;

use crate::contract::OrderedIndex;
use crate::dataset::{Key, Payload};

/// One logical index operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Insert(Key, Payload),
    Lookup(Key),
    Remove(Key),
    RangeScan(Key, usize),
}

/// The observable result of one operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpResult {
    Inserted(bool),
    Found(Payload),
    NotFound,
    Removed(bool),
    Scan(Vec<(Key, Payload)>),
}

#[derive(Debug, Default)]
pub struct Oracle {
    map: BTreeMap<Key, Payload>,
}

impl Oracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: &[(Key, Payload)]) -> Self {
        Oracle {
            map: pairs.iter().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = Key> + '_ {
        self.map.keys().copied()
    }

    pub fn apply(&mut self, op: Op) -> OpResult {
        match op {
            Op::Insert(k, v) => OpResult::Inserted(self.map.insert(k, v).is_none()),
            Op::Lookup(k) => match self.map.get(&k) {
                Some(&v) => OpResult::Found(v),
                None => OpResult::NotFound,
            },
            Op::Remove(k) => OpResult::Removed(self.map.remove(&k).is_some()),
            Op::RangeScan(start, count) => OpResult::Scan(
                self.map
                    .range((Bound::Included(start), Bound::Unbounded))
                    .take(count)
                    .map(|(&k, &v)| (k, v))
                    .collect(),
            ),
        }
    }

    /// Applies a whole sequence and returns per-op results.
    pub fn apply_all(&mut self, ops: &[Op]) -> Vec<OpResult> {
        ops.iter().map(|&op| self.apply(op)).collect()
    }
}

/// Runs `op` against any [`OrderedIndex`], producing the comparable
/// [`OpResult`].
pub fn apply_to_index(index: &dyn OrderedIndex, op: Op) -> OpResult {
    match op {
        Op::Insert(k, v) => OpResult::Inserted(index.insert(k, v)),
        Op::Lookup(k) => match index.lookup(k) {
            Some(v) => OpResult::Found(v),
            None => OpResult::NotFound,
        },
        Op::Remove(k) => OpResult::Removed(index.remove(k)),
        Op::RangeScan(start, count) => OpResult::Scan(index.range_scan(start, count)),
    }
}
