//! Collision-chain learned index: every node routes a key to exactly
//! one entry by model computation (no intra-array search). A key
//! landing on an occupied entry allocates exactly one child node
//! holding both keys; chains of such children are compacted by
//! conflict-ratio-driven subtree rebuilds.
//!
//! Concurrency: item-level optimistic locks. Readers validate a
//! per-entry version word; writers lock only the target entry. A
//! subtree rebuild locks the subtree's reference in the parent, then
//! every entry below it (in global DFS order, so rebuilds of nested
//! subtrees cannot deadlock), swaps in the rebuilt subtree, and
//! retires the old nodes through the epoch scheme.

use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU64, AtomicU8, Ordering};

use crate::contract::{Counters, CountersSnapshot, OrderedIndex};
use crate::dataset::{Key, Payload};
use crate::pla::LinearModel;
use crate::sync::{EpochManager, ReadToken, VersionedLock};

#[derive(Debug, Clone)]
pub struct ChainConfig {
    /// Keys per entry slot at construction.
    pub density: f64,
    /// Rebuild when node_inserts ≥ factor × build_size ...
    pub rebuild_inserts_factor: f64,
    /// ... and node_conflicts / node_inserts ≥ this ratio.
    pub rebuild_conflict_ratio: f64,
    /// Entry-array byte cap per node.
    pub max_node_bytes: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            density: 0.5,
            rebuild_inserts_factor: 2.0,
            rebuild_conflict_ratio: 0.1,
            max_node_bytes: 16 << 20,
        }
    }
}

impl ChainConfig {
    /// Thresholds high enough that rebuilds never fire; used by tests
    /// asserting per-insert allocation bounds.
    pub fn without_rebuilds() -> Self {
        ChainConfig {
            rebuild_inserts_factor: f64::INFINITY,
            ..Default::default()
        }
    }

    fn max_entries(&self) -> usize {
        (self.max_node_bytes / std::mem::size_of::<Entry>()).max(2)
    }
}

const KIND_EMPTY: u8 = 0;
const KIND_DATA: u8 = 1;
const KIND_CHILD: u8 = 2;

struct Entry {
    lock: VersionedLock,
    kind: AtomicU8,
    key: AtomicU64,
    val: AtomicU64,
    child: AtomicPtr<ChainNode>,
}

impl Entry {
    fn empty() -> Entry {
        Entry {
            lock: VersionedLock::new(),
            kind: AtomicU8::new(KIND_EMPTY),
            key: AtomicU64::new(0),
            val: AtomicU64::new(0),
            child: AtomicPtr::new(std::ptr::null_mut()),
        }
    }
}

/// Slot routing. `Boundary` is the degenerate fallback when no f64
/// linear model separates the keys (adjacent keys beyond 2^52).
enum Routing {
    Model(LinearModel),
    Boundary(Key),
}

pub(crate) struct ChainNode {
    routing: Routing,
    entries: Box<[Entry]>,
    node_inserts: AtomicU64,
    node_conflicts: AtomicU64,
    node_size: AtomicU64,
    build_size: u64,
    dead: AtomicBool,
}

impl ChainNode {
    #[inline]
    fn route(&self, key: Key) -> usize {
        match &self.routing {
            Routing::Model(m) => {
                let f = m.predict(key).floor();
                let last = self.entries.len() - 1;
                if f <= 0.0 {
                    0
                } else if f >= last as f64 {
                    last
                } else {
                    f as usize
                }
            }
            Routing::Boundary(b) => usize::from(key >= *b),
        }
    }

    fn size_bytes(&self) -> usize {
        std::mem::size_of::<ChainNode>() + self.entries.len() * std::mem::size_of::<Entry>()
    }
}

/// Builds a node for sorted unique pairs; collisions under the chosen
/// model recursively become child nodes. Returns the node and how many
/// nodes the subtree allocated.
fn build_node(pairs: &[(Key, Payload)], cfg: &ChainConfig) -> (*mut ChainNode, u64) {
    let n = pairs.len();
    let target_len = ((n as f64 / cfg.density).ceil() as usize).max(2);
    let len = target_len.min(cfg.max_entries());
    let (len, routing) = match choose_routing(pairs, len, cfg.max_entries()) {
        Some(lr) => lr,
        None => (2, Routing::Boundary(pairs[n / 2].0)),
    };
    let node = Box::into_raw(Box::new(ChainNode {
        routing,
        entries: (0..len).map(|_| Entry::empty()).collect(),
        node_inserts: AtomicU64::new(0),
        node_conflicts: AtomicU64::new(0),
        node_size: AtomicU64::new(n as u64),
        build_size: n as u64,
        dead: AtomicBool::new(false),
    }));
    let node_ref = unsafe { &*node };
    let mut created = 1;
    let mut i = 0;
    while i < n {
        let slot = node_ref.route(pairs[i].0);
        let mut j = i + 1;
        while j < n && node_ref.route(pairs[j].0) == slot {
            j += 1;
        }
        let e = &node_ref.entries[slot];
        if j - i == 1 {
            e.key.store(pairs[i].0, Ordering::Relaxed);
            e.val.store(pairs[i].1, Ordering::Relaxed);
            e.kind.store(KIND_DATA, Ordering::Relaxed);
        } else {
            let (child, c) = build_node(&pairs[i..j], cfg);
            e.child.store(child, Ordering::Relaxed);
            e.kind.store(KIND_CHILD, Ordering::Relaxed);
            created += c;
        }
        i = j;
    }
    (node, created)
}

/// Picks a monotone model whose slot assignment makes progress
/// (strictly fewer keys per slot than the whole node), or `None` when
/// float rounding defeats every linear model.
fn choose_routing(
    pairs: &[(Key, Payload)],
    mut len: usize,
    max_len: usize,
) -> Option<(usize, Routing)> {
    let n = pairs.len();
    if n == 0 {
        return Some((len, Routing::Model(LinearModel { slope: 1e-18, intercept: 0.0 })));
    }
    if n == 1 {
        let k = pairs[0].0 as f64;
        return Some((len, Routing::Model(LinearModel { slope: 1e-9, intercept: -k * 1e-9 })));
    }
    let lo = pairs[0].0;
    let hi = pairs[n - 1].0;
    // least-squares over the CDF, scaled to the slot range
    let rank = LinearModel::least_squares(
        pairs.iter().enumerate().map(|(r, &(k, _))| (k as f64, r as f64)),
    );
    loop {
        let scale = len as f64 / n as f64;
        let fitted = LinearModel { slope: rank.slope * scale, intercept: rank.intercept * scale };
        // endpoint spread as fallback: min key → slot 0, max key → last
        let spread_slope = (len - 1) as f64 / (hi - lo) as f64;
        let spread = LinearModel {
            slope: spread_slope,
            intercept: -(lo as f64) * spread_slope,
        };
        for m in [fitted, spread] {
            if m.slope > 0.0 && m.slope.is_finite() && separates(&m, lo, hi, len) {
                return Some((len, Routing::Model(m)));
            }
        }
        // degenerate: double the array until the endpoints separate,
        // up to the node byte cap
        if len >= max_len {
            return None;
        }
        len = (len * 2).min(max_len);
    }
}

fn separates(m: &LinearModel, lo: Key, hi: Key, len: usize) -> bool {
    let clamp = |k: Key| -> usize {
        let f = m.predict(k).floor();
        let last = len - 1;
        if f <= 0.0 {
            0
        } else if f >= last as f64 {
            last
        } else {
            f as usize
        }
    };
    clamp(lo) < clamp(hi)
}

/// LIPP-style updatable learned index.
pub struct ChainIndex {
    root: AtomicPtr<ChainNode>,
    root_lock: VersionedLock,
    epochs: EpochManager,
    counters: Counters,
    key_comparisons: AtomicU64,
    config: ChainConfig,
}

unsafe impl Send for ChainIndex {}
unsafe impl Sync for ChainIndex {}

enum EntryRead {
    Empty,
    Data(Key, Payload),
    Child(*mut ChainNode),
}

impl ChainIndex {
    pub fn empty(config: ChainConfig) -> Self {
        let (root, _) = build_node(&[], &config);
        ChainIndex {
            root: AtomicPtr::new(root),
            root_lock: VersionedLock::new(),
            epochs: EpochManager::new(),
            counters: Counters::default(),
            key_comparisons: AtomicU64::new(0),
            config,
        }
    }

    pub fn bulk_load(pairs: &[(Key, Payload)], config: ChainConfig) -> Result<Self, &'static str> {
        if pairs.is_empty() {
            return Err("bulk_load: empty input");
        }
        debug_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0));
        let (root, created) = build_node(pairs, &config);
        let index = ChainIndex {
            root: AtomicPtr::new(root),
            root_lock: VersionedLock::new(),
            epochs: EpochManager::new(),
            counters: Counters::default(),
            key_comparisons: AtomicU64::new(0),
            config,
        };
        index.counters.add(&index.counters.nodes_created, created);
        Ok(index)
    }

    /// Consistent snapshot of one entry.
    fn read_entry(&self, e: &Entry) -> EntryRead {
        loop {
            match e.lock.read_begin() {
                ReadToken::Version(v) => {
                    let kind = e.kind.load(Ordering::Relaxed);
                    let out = match kind {
                        KIND_EMPTY => EntryRead::Empty,
                        KIND_DATA => EntryRead::Data(
                            e.key.load(Ordering::Relaxed),
                            e.val.load(Ordering::Relaxed),
                        ),
                        _ => EntryRead::Child(e.child.load(Ordering::Relaxed)),
                    };
                    if e.lock.read_validate(v) {
                        return out;
                    }
                }
                ReadToken::Busy => std::hint::spin_loop(),
            }
        }
    }

    fn lookup_impl(&self, key: Key) -> Option<Payload> {
        let _guard = self.epochs.pin();
        'restart: loop {
            let mut node = unsafe { &*self.root.load(Ordering::Acquire) };
            loop {
                self.counters.add(&self.counters.nodes_traversed, 1);
                let e = &node.entries[node.route(key)];
                match self.read_entry(e) {
                    EntryRead::Empty => {
                        if node.dead.load(Ordering::Acquire) {
                            continue 'restart;
                        }
                        return None;
                    }
                    EntryRead::Data(k, v) => {
                        if node.dead.load(Ordering::Acquire) {
                            continue 'restart;
                        }
                        // the single per-node key comparison
                        self.key_comparisons.fetch_add(1, Ordering::Relaxed);
                        return (k == key).then_some(v);
                    }
                    EntryRead::Child(c) => {
                        if node.dead.load(Ordering::Acquire) {
                            continue 'restart;
                        }
                        node = unsafe { &*c };
                    }
                }
            }
        }
    }

    fn insert_impl(&self, key: Key, payload: Payload) -> bool {
        let _guard = self.epochs.pin();
        'restart: loop {
            // (node, slot taken) pairs root-first
            let mut path: Vec<(*mut ChainNode, usize)> = Vec::with_capacity(8);
            let mut node_ptr = self.root.load(Ordering::Acquire);
            let conflict_node;
            loop {
                let node = unsafe { &*node_ptr };
                let slot = node.route(key);
                let e = &node.entries[slot];
                e.lock.lock_exclusive();
                if node.dead.load(Ordering::Acquire) {
                    e.lock.unlock_exclusive();
                    continue 'restart;
                }
                path.push((node_ptr, slot));
                match e.kind.load(Ordering::Relaxed) {
                    KIND_EMPTY => {
                        e.key.store(key, Ordering::Relaxed);
                        e.val.store(payload, Ordering::Relaxed);
                        e.kind.store(KIND_DATA, Ordering::Relaxed);
                        e.lock.unlock_exclusive();
                        conflict_node = None;
                        break;
                    }
                    KIND_DATA => {
                        let k2 = e.key.load(Ordering::Relaxed);
                        if k2 == key {
                            e.val.store(payload, Ordering::Relaxed);
                            e.lock.unlock_exclusive();
                            return false;
                        }
                        // collision: exactly one new node for both keys
                        let v2 = e.val.load(Ordering::Relaxed);
                        let both = if key < k2 {
                            [(key, payload), (k2, v2)]
                        } else {
                            [(k2, v2), (key, payload)]
                        };
                        let (child, created) = build_node(&both, &self.config);
                        debug_assert_eq!(created, 1);
                        e.child.store(child, Ordering::Relaxed);
                        e.kind.store(KIND_CHILD, Ordering::Relaxed);
                        e.lock.unlock_exclusive();
                        self.counters.add(&self.counters.nodes_created, 1);
                        conflict_node = Some(node_ptr);
                        break;
                    }
                    _ => {
                        let c = e.child.load(Ordering::Relaxed);
                        e.lock.unlock_exclusive();
                        node_ptr = c;
                    }
                }
            }
            // path statistics: every node on the insertion path
            for &(p, _) in &path {
                let n = unsafe { &*p };
                n.node_inserts.fetch_add(1, Ordering::Relaxed);
                n.node_size.fetch_add(1, Ordering::Relaxed);
            }
            if let Some(p) = conflict_node {
                unsafe { &*p }.node_conflicts.fetch_add(1, Ordering::Relaxed);
            }
            self.maybe_rebuild(&path);
            return true;
        }
    }

    /// Rebuilds the topmost path node whose statistics cross both
    /// thresholds.
    fn maybe_rebuild(&self, path: &[(*mut ChainNode, usize)]) {
        let cfg = &self.config;
        for (i, &(p, _)) in path.iter().enumerate() {
            let n = unsafe { &*p };
            let ins = n.node_inserts.load(Ordering::Relaxed);
            let conf = n.node_conflicts.load(Ordering::Relaxed);
            if (ins as f64) < cfg.rebuild_inserts_factor * n.build_size.max(1) as f64 {
                continue;
            }
            if (conf as f64) < cfg.rebuild_conflict_ratio * ins as f64 {
                continue;
            }
            let parent = if i == 0 { None } else { Some(path[i - 1]) };
            self.rebuild_subtree(p, parent);
            return;
        }
    }

    fn rebuild_subtree(&self, target: *mut ChainNode, parent: Option<(*mut ChainNode, usize)>) {
        // lock the reference to the subtree
        let parent_entry = match parent {
            None => {
                self.root_lock.lock_exclusive();
                if self.root.load(Ordering::Acquire) != target {
                    self.root_lock.unlock_exclusive();
                    return; // someone else already rebuilt
                }
                None
            }
            Some((p, slot)) => {
                let pn = unsafe { &*p };
                let e = &pn.entries[slot];
                e.lock.lock_exclusive();
                let stale = pn.dead.load(Ordering::Acquire)
                    || e.kind.load(Ordering::Relaxed) != KIND_CHILD
                    || e.child.load(Ordering::Relaxed) != target;
                if stale {
                    e.lock.unlock_exclusive();
                    return;
                }
                Some(e)
            }
        };
        // lock every entry below, DFS order, collecting pairs and nodes
        let mut pairs: Vec<(Key, Payload)> =
            Vec::with_capacity(unsafe { &*target }.node_size.load(Ordering::Relaxed) as usize);
        let mut old_nodes: Vec<*mut ChainNode> = Vec::new();
        fn lock_and_collect(
            p: *mut ChainNode,
            pairs: &mut Vec<(Key, Payload)>,
            old: &mut Vec<*mut ChainNode>,
        ) {
            old.push(p);
            let n = unsafe { &*p };
            for e in n.entries.iter() {
                e.lock.lock_exclusive();
                match e.kind.load(Ordering::Relaxed) {
                    KIND_DATA => pairs.push((
                        e.key.load(Ordering::Relaxed),
                        e.val.load(Ordering::Relaxed),
                    )),
                    KIND_CHILD => {
                        lock_and_collect(e.child.load(Ordering::Relaxed), pairs, old)
                    }
                    _ => {}
                }
            }
        }
        lock_and_collect(target, &mut pairs, &mut old_nodes);
        debug_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0));

        let (fresh, created) = build_node(&pairs, &self.config);
        self.counters.add(&self.counters.nodes_created, created);
        self.counters.add(&self.counters.retrain_count, 1);
        self.counters.add(&self.counters.smo_count, 1);
        match parent_entry {
            None => {
                self.root.store(fresh, Ordering::Release);
                self.root_lock.unlock_exclusive();
            }
            Some(e) => {
                e.child.store(fresh, Ordering::Relaxed);
                e.lock.unlock_exclusive();
            }
        }
        for &p in &old_nodes {
            let n = unsafe { &*p };
            n.dead.store(true, Ordering::Release);
        }
        for &p in &old_nodes {
            let n = unsafe { &*p };
            for e in n.entries.iter() {
                e.lock.unlock_exclusive();
            }
            unsafe { self.epochs.retire(p) };
        }
    }

    fn remove_impl(&self, key: Key) -> bool {
        let _guard = self.epochs.pin();
        'restart: loop {
            let mut path: Vec<*mut ChainNode> = Vec::with_capacity(8);
            let mut node_ptr = self.root.load(Ordering::Acquire);
            loop {
                let node = unsafe { &*node_ptr };
                let e = &node.entries[node.route(key)];
                e.lock.lock_exclusive();
                if node.dead.load(Ordering::Acquire) {
                    e.lock.unlock_exclusive();
                    continue 'restart;
                }
                path.push(node_ptr);
                match e.kind.load(Ordering::Relaxed) {
                    KIND_EMPTY => {
                        e.lock.unlock_exclusive();
                        return false;
                    }
                    KIND_DATA => {
                        let hit = e.key.load(Ordering::Relaxed) == key;
                        if hit {
                            // entry goes back to Empty; build_size is
                            // untouched so models stay meaningful
                            e.kind.store(KIND_EMPTY, Ordering::Relaxed);
                        }
                        e.lock.unlock_exclusive();
                        if hit {
                            for &p in &path {
                                unsafe { &*p }.node_size.fetch_sub(1, Ordering::Relaxed);
                            }
                        }
                        return hit;
                    }
                    _ => {
                        let c = e.child.load(Ordering::Relaxed);
                        e.lock.unlock_exclusive();
                        node_ptr = c;
                    }
                }
            }
        }
    }

    fn range_scan_impl(&self, start: Key, count: usize) -> Vec<(Key, Payload)> {
        let mut out = Vec::with_capacity(count.min(1024));
        if count == 0 {
            return out;
        }
        let _guard = self.epochs.pin();
        let mut cursor = start;
        'restart: loop {
            let from = out.len();
            let root = unsafe { &*self.root.load(Ordering::Acquire) };
            match self.scan_node(root, cursor, count, &mut out) {
                Ok(()) => return out,
                Err(()) => {
                    // raced a rebuild: keep what we have and resume
                    // past the last emitted key
                    if let Some(&(k, _)) = out.last() {
                        match k.checked_add(1) {
                            Some(c) => cursor = c,
                            None => return out,
                        }
                    }
                    let _ = from;
                    continue 'restart;
                }
            }
        }
    }

    /// In-order walk; `Err` means a dead node was observed and the
    /// caller must restart from the root.
    fn scan_node(
        &self,
        node: &ChainNode,
        start: Key,
        count: usize,
        out: &mut Vec<(Key, Payload)>,
    ) -> Result<(), ()> {
        let first = node.route(start);
        for slot in first..node.entries.len() {
            if out.len() >= count {
                return Ok(());
            }
            let snap = self.read_entry(&node.entries[slot]);
            if node.dead.load(Ordering::Acquire) {
                return Err(());
            }
            match snap {
                EntryRead::Empty => {}
                EntryRead::Data(k, v) => {
                    if k >= start {
                        out.push((k, v));
                    }
                }
                EntryRead::Child(c) => {
                    self.scan_node(unsafe { &*c }, start, count, out)?;
                }
            }
        }
        Ok(())
    }

    fn size_in_bytes_impl(&self) -> usize {
        let _guard = self.epochs.pin();
        fn walk(p: *const ChainNode) -> usize {
            let n = unsafe { &*p };
            let mut sum = n.size_bytes();
            for e in n.entries.iter() {
                if e.kind.load(Ordering::Relaxed) == KIND_CHILD {
                    sum += walk(e.child.load(Ordering::Relaxed));
                }
            }
            sum
        }
        walk(self.root.load(Ordering::Acquire))
    }

    /// Total key comparisons performed by lookups; at most one per
    /// visited node by construction.
    #[doc(hidden)]
    pub fn key_comparisons(&self) -> u64 {
        self.key_comparisons.load(Ordering::Relaxed)
    }

    /// Test hook: in-order walk must be strictly increasing and every
    /// data key must route to its slot. Quiescent callers only.
    #[doc(hidden)]
    pub fn check_invariants(&self) {
        let _guard = self.epochs.pin();
        fn walk(p: *const ChainNode, last: &mut Option<Key>) {
            let n = unsafe { &*p };
            for (slot, e) in n.entries.iter().enumerate() {
                match e.kind.load(Ordering::Relaxed) {
                    KIND_DATA => {
                        let k = e.key.load(Ordering::Relaxed);
                        assert_eq!(n.route(k), slot, "key {k} does not route to its slot");
                        assert!(last.is_none_or(|l| l < k), "in-order walk not sorted");
                        *last = Some(k);
                    }
                    KIND_CHILD => walk(e.child.load(Ordering::Relaxed), last),
                    _ => {}
                }
            }
        }
        walk(self.root.load(Ordering::Acquire), &mut None);
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }
}

impl OrderedIndex for ChainIndex {
    fn lookup(&self, key: Key) -> Option<Payload> {
        self.counters.add(&self.counters.lookups, 1);
        self.lookup_impl(key)
    }

    fn insert(&self, key: Key, payload: Payload) -> bool {
        self.counters.add(&self.counters.inserts, 1);
        self.insert_impl(key, payload)
    }

    fn remove(&self, key: Key) -> bool {
        self.remove_impl(key)
    }

    fn range_scan(&self, start: Key, count: usize) -> Vec<(Key, Payload)> {
        self.range_scan_impl(start, count)
    }

    fn size_in_bytes(&self) -> usize {
        self.size_in_bytes_impl()
    }

    fn op_stats(&self) -> CountersSnapshot {
        self.counters.snapshot()
    }
}

impl Drop for ChainIndex {
    fn drop(&mut self) {
        fn free(p: *mut ChainNode) {
            let n = unsafe { &*p };
            for e in n.entries.iter() {
                if e.kind.load(Ordering::Relaxed) == KIND_CHILD {
                    free(e.child.load(Ordering::Relaxed));
                }
            }
            unsafe { drop(Box::from_raw(p)) };
        }
        free(self.root.load(Ordering::Relaxed));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{apply_to_index, Op, Oracle};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn pairs(n: u64) -> Vec<(Key, Payload)> {
        (0..n).map(|i| (i * 11 + 3, i)).collect()
    }

    #[test]
    fn bulk_load_all_retrievable() {
        let p = pairs(1000);
        let idx = ChainIndex::bulk_load(&p, ChainConfig::default()).unwrap();
        for &(k, v) in &p {
            assert_eq!(idx.lookup(k), Some(v));
        }
        assert_eq!(idx.lookup(4), None);
        idx.check_invariants();
    }

    #[test]
    fn root_density_is_half() {
        let p = pairs(10_000);
        let idx = ChainIndex::bulk_load(&p, ChainConfig::default()).unwrap();
        let root = unsafe { &*idx.root.load(Ordering::Relaxed) };
        let density = p.len() as f64 / root.entries.len() as f64;
        assert!((density - 0.5).abs() < 0.01, "density {density}");
    }

    #[test]
    fn empty_bulk_load_rejected() {
        assert!(ChainIndex::bulk_load(&[], ChainConfig::default()).is_err());
    }

    #[test]
    fn collision_insert_creates_exactly_one_node() {
        let idx = ChainIndex::bulk_load(&pairs(1000), ChainConfig::without_rebuilds()).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20_000 {
            let k = rng.random_range(0..100_000u64);
            let before = idx.op_stats().nodes_created;
            let was_new = idx.insert(k, k);
            let delta = idx.op_stats().nodes_created - before;
            assert!(delta <= 1, "insert allocated {delta} nodes");
            if !was_new {
                assert_eq!(delta, 0);
            }
        }
        idx.check_invariants();
    }

    #[test]
    fn lookup_does_one_comparison_per_data_entry() {
        let idx = ChainIndex::bulk_load(&pairs(10_000), ChainConfig::default()).unwrap();
        let c0 = idx.key_comparisons();
        let t0 = idx.op_stats().nodes_traversed;
        for i in 0..1000u64 {
            idx.lookup(i * 11 + 3);
        }
        let comparisons = idx.key_comparisons() - c0;
        let visited = idx.op_stats().nodes_traversed - t0;
        assert!(comparisons <= visited, "{comparisons} cmps over {visited} nodes");
        assert!(comparisons >= 1000);
    }

    #[test]
    fn rebuild_resets_conflicts_and_density() {
        let idx = ChainIndex::bulk_load(&pairs(256), ChainConfig::default()).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let mut oracle = Oracle::from_pairs(&pairs(256));
        for _ in 0..30_000u64 {
            let k = rng.random_range(0..1_000_000u64);
            idx.insert(k, k);
            oracle.apply(Op::Insert(k, k));
        }
        assert!(idx.op_stats().smo_count > 0, "no rebuild fired");
        idx.check_invariants();
        let keys: Vec<Key> = oracle.keys().collect();
        for k in keys.iter().step_by(17) {
            assert_eq!(
                apply_to_index(&idx, Op::Lookup(*k)),
                oracle.apply(Op::Lookup(*k))
            );
        }
        let root = unsafe { &*idx.root.load(Ordering::Relaxed) };
        if root.node_inserts.load(Ordering::Relaxed) == 0 {
            // root itself was rebuilt: fresh statistics and density
            assert_eq!(root.node_conflicts.load(Ordering::Relaxed), 0);
            let density = root.build_size as f64 / root.entries.len() as f64;
            assert!((density - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn insert_remove_roundtrip() {
        let idx = ChainIndex::empty(ChainConfig::default());
        assert!(idx.insert(42, 1));
        assert!(!idx.insert(42, 2));
        assert_eq!(idx.lookup(42), Some(2));
        assert!(idx.remove(42));
        assert_eq!(idx.lookup(42), None);
        assert!(!idx.remove(42));
    }

    #[test]
    fn scan_across_child_boundary() {
        // force a collision chain, then scan through it
        let idx = ChainIndex::bulk_load(&pairs(100), ChainConfig::without_rebuilds()).unwrap();
        let mut oracle = Oracle::from_pairs(&pairs(100));
        for k in [500u64, 501, 502, 503, 504] {
            idx.insert(k, k * 2);
            oracle.apply(Op::Insert(k, k * 2));
        }
        for start in [0u64, 499, 500, 505, 1200] {
            assert_eq!(
                apply_to_index(&idx, Op::RangeScan(start, 30)),
                oracle.apply(Op::RangeScan(start, 30)),
                "start {start}"
            );
        }
        idx.check_invariants();
    }

    #[test]
    fn differential_vs_oracle() {
        let p = pairs(5_000);
        let idx = ChainIndex::bulk_load(&p, ChainConfig::default()).unwrap();
        let mut oracle = Oracle::from_pairs(&p);
        let mut rng = StdRng::seed_from_u64(9);
        for step in 0..100_000u64 {
            let k = rng.random_range(0..80_000u64);
            let op = match rng.random_range(0..10) {
                0..=3 => Op::Insert(k, k ^ step),
                4..=6 => Op::Lookup(k),
                7..=8 => Op::Remove(k),
                _ => Op::RangeScan(k, rng.random_range(0..40)),
            };
            assert_eq!(apply_to_index(&idx, op), oracle.apply(op), "step {step}");
        }
        idx.check_invariants();
    }

    #[test]
    fn size_reflects_entry_arrays() {
        let p = pairs(10_000);
        let idx = ChainIndex::bulk_load(&p, ChainConfig::default()).unwrap();
        let min = 2 * p.len() * std::mem::size_of::<Entry>();
        assert!(idx.size_in_bytes() >= min);
    }

    #[test]
    fn concurrent_disjoint_inserts_with_readers() {
        let idx = std::sync::Arc::new(
            ChainIndex::bulk_load(&pairs(4_000), ChainConfig::default()).unwrap(),
        );
        let threads = 8u64;
        let per = 15_000u64;
        let writers: Vec<_> = (0..threads)
            .map(|t| {
                let idx = std::sync::Arc::clone(&idx);
                std::thread::spawn(move || {
                    for i in 0..per {
                        let k = 10_000_000 + t * per + i;
                        idx.insert(k, k.wrapping_mul(0x51ab));
                    }
                })
            })
            .collect();
        let stop = std::sync::Arc::new(AtomicBool::new(false));
        let readers: Vec<_> = (0..2)
            .map(|_| {
                let idx = std::sync::Arc::clone(&idx);
                let stop = std::sync::Arc::clone(&stop);
                std::thread::spawn(move || {
                    let mut rng = StdRng::seed_from_u64(17);
                    while !stop.load(Ordering::Relaxed) {
                        let k = 10_000_000 + rng.random_range(0..threads * per);
                        if let Some(v) = idx.lookup(k) {
                            assert_eq!(v, k.wrapping_mul(0x51ab), "torn read at {k}");
                        }
                    }
                })
            })
            .collect();
        for h in writers {
            h.join().unwrap();
        }
        stop.store(true, Ordering::Relaxed);
        for r in readers {
            r.join().unwrap();
        }
        for t in 0..threads {
            for i in (0..per).step_by(101) {
                let k = 10_000_000 + t * per + i;
                assert_eq!(idx.lookup(k), Some(k.wrapping_mul(0x51ab)));
            }
        }
        idx.check_invariants();
    }
}
