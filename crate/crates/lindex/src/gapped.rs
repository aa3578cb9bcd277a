//! Gapped-array learned index: inner nodes route by model computation,
//! data nodes keep gaps at model-predicted slots and absorb inserts by
//! shifting toward the nearest gap. Structure modifications (expand,
//! split) are out-of-place: a replacement node is built and swapped
//! into the parent, the old node is retired through the epoch scheme.
//!
//! Concurrency: one versioned optimistic lock per data node. Readers
//! traverse without locks and validate the node version after reading;
//! writers hold the target data node's lock exclusively; SMOs
//! additionally lock the parent (exclusive) and the predecessor leaf
//! (to repair its next-leaf link), with try-lock + full backout to
//! stay deadlock free.

use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU64, AtomicUsize, Ordering};

use crate::contract::{Counters, CountersSnapshot, OrderedIndex};
use crate::dataset::{Key, Payload};
use crate::pla::{HullFitter, LinearModel};
use crate::sync::{EpochManager, ReadToken, SharedExclusiveLock, VersionedLock};

#[derive(Debug, Clone)]
pub struct GappedConfig {
    pub min_density: f64,
    pub avg_density: f64,
    pub max_density: f64,
    /// Slot cap per data node (512KB at 16 bytes per slot).
    pub max_data_slots: usize,
    /// Power-of-two fanout cap for inner nodes.
    pub max_fanout: usize,
    /// Mean shift distance since the last SMO above which a full node
    /// splits instead of expanding.
    pub shift_split_threshold: f64,
    /// Optimistic read retries before falling back to the lock.
    pub optimistic_retries: u32,
    /// Rebuild a data node that falls below min_density after removes.
    pub contract_on_underflow: bool,
}

impl Default for GappedConfig {
    fn default() -> Self {
        GappedConfig {
            min_density: 0.6,
            avg_density: 0.7,
            max_density: 0.8,
            max_data_slots: 32_768,
            max_fanout: 1 << 14,
            shift_split_threshold: 32.0,
            optimistic_retries: 64,
            contract_on_underflow: false,
        }
    }
}

impl GappedConfig {
    /// The low fill-factor variant used for memory experiments.
    pub fn with_density(avg: f64) -> Self {
        GappedConfig {
            min_density: (avg - 0.1).max(0.05),
            avg_density: avg,
            max_density: (avg + 0.1).min(0.95),
            ..Default::default()
        }
    }

    fn max_leaf_keys(&self) -> usize {
        (self.max_data_slots as f64 * self.avg_density) as usize
    }
}

const NO_KEY: u64 = u64::MAX;
const MIN_CAPACITY: usize = 16;

enum Node {
    Inner(InnerNode),
    Data(DataNode),
}

struct InnerNode {
    model: LinearModel,
    children: Vec<AtomicPtr<Node>>,
    lock: SharedExclusiveLock,
    dead: AtomicBool,
}

struct DataNode {
    model: LinearModel,
    keys: Box<[AtomicU64]>,
    payloads: Box<[AtomicU64]>,
    occupied: Box<[AtomicU64]>,
    num_keys: AtomicUsize,
    lock: VersionedLock,
    dead: AtomicBool,
    next: AtomicPtr<Node>,
    /// Inclusive lower bound of the key range routed here; used to
    /// locate the predecessor leaf during SMOs.
    range_lo: Key,
    shifts_since_smo: AtomicU64,
    inserts_since_smo: AtomicU64,
}

impl InnerNode {
    #[inline]
    fn route(&self, key: Key) -> usize {
        let f = self.model.predict(key).floor();
        let last = self.children.len() - 1;
        if f <= 0.0 {
            0
        } else if f >= last as f64 {
            last
        } else {
            f as usize
        }
    }

    fn size_bytes(&self) -> usize {
        std::mem::size_of::<InnerNode>() + self.children.len() * 8
    }
}

impl DataNode {
    fn with_capacity(capacity: usize, model: LinearModel, range_lo: Key) -> DataNode {
        let capacity = capacity.max(MIN_CAPACITY);
        DataNode {
            model,
            keys: (0..capacity).map(|_| AtomicU64::new(NO_KEY)).collect(),
            payloads: (0..capacity).map(|_| AtomicU64::new(0)).collect(),
            occupied: (0..capacity.div_ceil(64)).map(|_| AtomicU64::new(0)).collect(),
            num_keys: AtomicUsize::new(0),
            lock: VersionedLock::new(),
            dead: AtomicBool::new(false),
            next: AtomicPtr::new(std::ptr::null_mut()),
            range_lo,
            shifts_since_smo: AtomicU64::new(0),
            inserts_since_smo: AtomicU64::new(0),
        }
    }

    #[inline]
    fn capacity(&self) -> usize {
        self.keys.len()
    }

    #[inline]
    fn key_at(&self, i: usize) -> u64 {
        self.keys[i].load(Ordering::Relaxed)
    }

    #[inline]
    fn is_occupied(&self, i: usize) -> bool {
        self.occupied[i / 64].load(Ordering::Relaxed) & (1 << (i % 64)) != 0
    }

    #[inline]
    fn set_occupied(&self, i: usize, v: bool) {
        let mask = 1u64 << (i % 64);
        let w = &self.occupied[i / 64];
        if v {
            w.fetch_or(mask, Ordering::Relaxed);
        } else {
            w.fetch_and(!mask, Ordering::Relaxed);
        }
    }

    #[inline]
    fn predict_slot(&self, key: Key) -> usize {
        let p = self.model.predict(key);
        let last = self.capacity() - 1;
        if p <= 0.0 {
            0
        } else if p >= last as f64 {
            last
        } else {
            p as usize
        }
    }

    /// First slot whose stored key is ≥ `key`, found by exponential
    /// search around the model prediction. The key array (gaps hold
    /// the key of the nearest occupied slot to their right, trailing
    /// gaps hold `NO_KEY`) is non-decreasing, which makes this a plain
    /// lower bound.
    fn lower_bound(&self, key: Key) -> usize {
        let n = self.capacity();
        let p = self.predict_slot(key);
        let (mut lo, mut hi);
        if self.key_at(p) >= key {
            // answer in [0, p]
            let mut step = 1;
            hi = p;
            loop {
                if step > hi {
                    lo = 0;
                    break;
                }
                if self.key_at(hi - step) < key {
                    lo = hi - step + 1;
                    hi += 1;
                    break;
                }
                step *= 2;
            }
            if lo == 0 {
                hi = p + 1;
            }
        } else {
            // answer in (p, n]
            let mut step = 1;
            lo = p + 1;
            loop {
                if p + step >= n {
                    hi = n;
                    break;
                }
                if self.key_at(p + step) >= key {
                    hi = p + step + 1;
                    lo = p + step / 2;
                    break;
                }
                step *= 2;
            }
        }
        let (mut lo, mut hi) = (lo.min(n), hi.min(n));
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.key_at(mid) >= key {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    /// Slot of `key` if present.
    fn find(&self, key: Key) -> Option<usize> {
        let mut i = self.lower_bound(key);
        let n = self.capacity();
        if i == n || self.key_at(i) != key {
            return None;
        }
        while i < n && !self.is_occupied(i) && self.key_at(i) == key {
            i += 1;
        }
        (i < n && self.is_occupied(i) && self.key_at(i) == key).then_some(i)
    }

    fn size_bytes(&self) -> usize {
        std::mem::size_of::<DataNode>()
            + self.capacity() * 16
            + self.occupied.len() * 8
    }

    /// Writer-side insert; caller holds the node lock and has ruled
    /// out the density trigger. Returns shift distance, or None for a
    /// duplicate (payload overwritten).
    fn insert_locked(&self, key: Key, payload: Payload) -> Option<u64> {
        let n = self.capacity();
        let i = self.lower_bound(key);
        if i < n && self.key_at(i) == key {
            // the first slot holding `key` is either the occupied slot
            // itself or a gap duplicating it from the left
            if let Some(j) = self.find(key) {
                self.payloads[j].store(payload, Ordering::Relaxed);
                return None;
            }
        }
        let shifts;
        if i < n && !self.is_occupied(i) {
            // free gap right at the insertion point
            self.payloads[i].store(payload, Ordering::Relaxed);
            self.keys[i].store(key, Ordering::Relaxed);
            self.set_occupied(i, true);
            self.fix_gap_run_left_of(i, key);
            shifts = 0;
        } else {
            // nearest gap to the left and right of i
            let left_gap = (0..i).rev().find(|&t| !self.is_occupied(t));
            let right_gap = (i..n).find(|&t| !self.is_occupied(t));
            match (left_gap, right_gap) {
                (Some(l), Some(r)) if i - l <= r - i + 1 => shifts = self.shift_left(l, i, key, payload),
                (Some(l), None) => shifts = self.shift_left(l, i, key, payload),
                (_, Some(r)) => shifts = self.shift_right(i, r, key, payload),
                (None, None) => unreachable!("insert_locked on a full node"),
            }
        }
        self.num_keys.fetch_add(1, Ordering::Relaxed);
        Some(shifts)
    }

    /// Opens slot i-1 by moving [l+1, i-1] one slot left into gap l,
    /// then stores the new pair there.
    fn shift_left(&self, l: usize, i: usize, key: Key, payload: Payload) -> u64 {
        for t in l..i - 1 {
            self.keys[t].store(self.key_at(t + 1), Ordering::Relaxed);
            self.payloads[t].store(self.payloads[t + 1].load(Ordering::Relaxed), Ordering::Relaxed);
            self.set_occupied(t, true);
        }
        self.keys[i - 1].store(key, Ordering::Relaxed);
        self.payloads[i - 1].store(payload, Ordering::Relaxed);
        self.set_occupied(i - 1, true);
        self.fix_gap_run_left_of(i - 1, key);
        (i - 1 - l) as u64
    }

    /// Opens slot i by moving [i, r-1] one slot right into gap r, then
    /// stores the new pair at i.
    fn shift_right(&self, i: usize, r: usize, key: Key, payload: Payload) -> u64 {
        for t in (i..r).rev() {
            self.keys[t + 1].store(self.key_at(t), Ordering::Relaxed);
            self.payloads[t + 1].store(self.payloads[t].load(Ordering::Relaxed), Ordering::Relaxed);
            self.set_occupied(t + 1, true);
        }
        self.keys[i].store(key, Ordering::Relaxed);
        self.payloads[i].store(payload, Ordering::Relaxed);
        self.set_occupied(i, true);
        self.fix_gap_run_left_of(i, key);
        (r - i) as u64
    }

    /// Gaps left of a newly filled slot must duplicate its key (they
    /// point at their nearest occupied right neighbor).
    fn fix_gap_run_left_of(&self, i: usize, key: Key) {
        let mut t = i;
        while t > 0 && !self.is_occupied(t - 1) {
            t -= 1;
            self.keys[t].store(key, Ordering::Relaxed);
        }
    }

    /// Writer-side remove; caller holds the lock. The slot becomes a
    /// gap and the model is never retrained.
    fn remove_locked(&self, key: Key) -> bool {
        let Some(j) = self.find(key) else { return false };
        self.set_occupied(j, false);
        let n = self.capacity();
        let right = ((j + 1)..n)
            .find(|&t| self.is_occupied(t))
            .map_or(NO_KEY, |t| self.key_at(t));
        let mut t = j + 1;
        // j and the gap run ending at j now duplicate the next
        // occupied key to the right
        loop {
            t -= 1;
            self.keys[t].store(right, Ordering::Relaxed);
            if t == 0 || self.is_occupied(t - 1) {
                break;
            }
        }
        self.num_keys.fetch_sub(1, Ordering::Relaxed);
        true
    }

    /// Occupied (key, payload) pairs in slot order.
    fn collect_pairs(&self) -> Vec<(Key, Payload)> {
        let mut out = Vec::with_capacity(self.num_keys.load(Ordering::Relaxed));
        for i in 0..self.capacity() {
            if self.is_occupied(i) {
                out.push((self.key_at(i), self.payloads[i].load(Ordering::Relaxed)));
            }
        }
        out
    }

    fn density(&self) -> f64 {
        self.num_keys.load(Ordering::Relaxed) as f64 / self.capacity() as f64
    }
}

/// Builds a fresh data node holding `pairs` at the target density,
/// model retrained by least squares and keys placed at their predicted
/// slots (order preserving).
fn build_data_node(
    pairs: &[(Key, Payload)],
    density: f64,
    max_slots: usize,
    range_lo: Key,
) -> DataNode {
    let n = pairs.len();
    // capacity honors the slot cap when possible but never leaves the
    // node without room for one more insert
    let capacity = ((n as f64 / density).ceil() as usize)
        .clamp(MIN_CAPACITY, max_slots.max(MIN_CAPACITY))
        .max(n + 1);
    let rank_model = LinearModel::least_squares(
        pairs.iter().map(|&(k, _)| k as f64).zip((0..n).map(|r| r as f64)).map(|(k, r)| (k, r)),
    );
    let scale = capacity as f64 / n.max(1) as f64;
    let model = LinearModel {
        slope: rank_model.slope * scale,
        intercept: rank_model.intercept * scale,
    };
    let node = DataNode::with_capacity(capacity, model, range_lo);
    // desired slots, then force strict increase and in-bounds
    let mut pos: Vec<usize> = Vec::with_capacity(n);
    for &(k, _) in pairs {
        let want = node.predict_slot(k);
        let min_next = pos.last().map_or(0, |&p| p + 1);
        pos.push(want.max(min_next));
    }
    for t in (0..n).rev() {
        let cap = capacity - 1 - (n - 1 - t);
        if pos[t] > cap {
            pos[t] = cap;
        } else {
            break;
        }
    }
    for (t, &(k, v)) in pairs.iter().enumerate() {
        node.keys[pos[t]].store(k, Ordering::Relaxed);
        node.payloads[pos[t]].store(v, Ordering::Relaxed);
        node.set_occupied(pos[t], true);
    }
    // gaps duplicate the nearest occupied key to their right
    let mut right = NO_KEY;
    for i in (0..capacity).rev() {
        if node.is_occupied(i) {
            right = node.key_at(i);
        } else {
            node.keys[i].store(right, Ordering::Relaxed);
        }
    }
    node.num_keys.store(n, Ordering::Relaxed);
    node
}

/// Monotone linear model sending keys below `split_key` to slot 0 and
/// the rest to slot 1, or `None` when f64 rounding cannot represent
/// the boundary (adjacent huge keys).
fn two_slot_router(range_lo: Key, split_key: Key) -> Option<LinearModel> {
    debug_assert!(split_key > range_lo);
    let slope = 1.0 / (split_key - range_lo) as f64;
    let p_hi = slope * split_key as f64;
    let p_lo = slope * (split_key - 1) as f64;
    if p_lo >= p_hi {
        return None;
    }
    let mut intercept = 1.0 - p_hi;
    for _ in 0..128 {
        let hi = slope * split_key as f64 + intercept;
        if hi < 1.0 {
            intercept = intercept.next_up().max(intercept + (1.0 - hi));
            continue;
        }
        let lo = slope * (split_key - 1) as f64 + intercept;
        if lo >= 1.0 {
            intercept = intercept.next_down().min(intercept - (lo - 1.0));
            continue;
        }
        return Some(LinearModel { slope, intercept });
    }
    None
}

/// ALEX-style updatable learned index.
pub struct GappedIndex {
    root: AtomicPtr<Node>,
    root_lock: SharedExclusiveLock,
    epochs: EpochManager,
    counters: Counters,
    config: GappedConfig,
}

enum ParentRef<'a> {
    Root,
    Inner(&'a InnerNode),
}

impl GappedIndex {
    /// An index with no keys.
    pub fn empty(config: GappedConfig) -> Self {
        let model = LinearModel { slope: 1e-9, intercept: 0.0 };
        let node = Box::into_raw(Box::new(Node::Data(DataNode::with_capacity(
            MIN_CAPACITY,
            model,
            0,
        ))));
        GappedIndex {
            root: AtomicPtr::new(node),
            root_lock: SharedExclusiveLock::new(),
            epochs: EpochManager::new(),
            counters: Counters::default(),
            config,
        }
    }

    /// Bulk loads sorted unique pairs: leaves are cut where a linear
    /// model stops predicting within a fraction of the node capacity
    /// (PLA-guided), inner nodes route by model over power-of-two
    /// child arrays with repeated slots covering uneven partitions.
    pub fn bulk_load(pairs: &[(Key, Payload)], config: GappedConfig) -> Result<Self, &'static str> {
        if pairs.is_empty() {
            return Err("bulk_load: empty input");
        }
        debug_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0));
        let index = GappedIndex {
            root: AtomicPtr::new(std::ptr::null_mut()),
            root_lock: SharedExclusiveLock::new(),
            epochs: EpochManager::new(),
            counters: Counters::default(),
            config,
        };
        let root = index.build_subtree(pairs, 0);
        index.root.store(root, Ordering::Release);
        index.link_leaves();
        Ok(index)
    }

    fn build_subtree(&self, pairs: &[(Key, Payload)], range_lo: Key) -> *mut Node {
        let cfg = &self.config;
        let n = pairs.len();
        if n <= cfg.max_leaf_keys() && self.fits_one_leaf(pairs) {
            self.counters.add(&self.counters.nodes_created, 1);
            return Box::into_raw(Box::new(Node::Data(build_data_node(
                pairs,
                cfg.avg_density,
                cfg.max_data_slots,
                range_lo,
            ))));
        }
        // inner node: model over the slice CDF scaled to the fanout
        let target = (cfg.max_leaf_keys() / 4).max(MIN_CAPACITY);
        let fanout = (n.div_ceil(target).max(2))
            .next_power_of_two()
            .min(cfg.max_fanout);
        let rank_model = LinearModel::least_squares(
            pairs.iter().enumerate().map(|(r, &(k, _))| (k as f64, r as f64)),
        );
        let scale = fanout as f64 / n as f64;
        let mut model = LinearModel {
            slope: rank_model.slope * scale,
            intercept: rank_model.intercept * scale,
        };
        let partition = |model: &LinearModel| -> Vec<(usize, usize, usize)> {
            // (slot_from, slot_to, pair_end); routing is monotone in key
            let slot_of = |k: Key| -> usize {
                let f = model.predict(k).floor();
                if f <= 0.0 {
                    0
                } else {
                    (f as usize).min(fanout - 1)
                }
            };
            let mut groups = Vec::new();
            let mut start = 0usize;
            let mut cur_slot = 0usize;
            for (t, &(k, _)) in pairs.iter().enumerate() {
                let s = slot_of(k);
                if s != cur_slot && t > start {
                    groups.push((cur_slot, s - 1, t));
                    start = t;
                }
                if t == start {
                    cur_slot = s;
                }
            }
            groups.push((cur_slot, fanout - 1, n));
            groups
        };
        let mut groups = partition(&model);
        if groups.len() == 1 {
            // degenerate fit routed every key to one slot; spread the
            // key range across the fanout instead so recursion shrinks
            let lo = pairs[0].0 as f64;
            let hi = pairs[n - 1].0 as f64;
            model = LinearModel {
                slope: fanout as f64 / (hi - lo + 1.0),
                intercept: -lo * fanout as f64 / (hi - lo + 1.0),
            };
            groups = partition(&model);
            debug_assert!(groups.len() > 1);
        }
        let inner = InnerNode {
            model,
            children: (0..fanout).map(|_| AtomicPtr::new(std::ptr::null_mut())).collect(),
            lock: SharedExclusiveLock::new(),
            dead: AtomicBool::new(false),
        };
        // leading slots before the first group's slot belong to it
        let mut prev_end = 0usize;
        let mut prev_slot_end = 0usize;
        for (gi, &(s_from, s_to, pair_end)) in groups.iter().enumerate() {
            let s_from = if gi == 0 { 0 } else { s_from.max(prev_slot_end) };
            let child_lo = if gi == 0 {
                range_lo
            } else {
                pairs[prev_end].0.min(self.slot_boundary_key(&inner, s_from))
            };
            let child = self.build_subtree(&pairs[prev_end..pair_end], child_lo);
            for s in s_from..=s_to {
                inner.children[s].store(child, Ordering::Relaxed);
            }
            prev_end = pair_end;
            prev_slot_end = s_to + 1;
        }
        self.counters.add(&self.counters.nodes_created, 1);
        Box::into_raw(Box::new(Node::Inner(inner)))
    }

    /// Smallest key routing to slot ≥ s under the inner model.
    fn slot_boundary_key(&self, inner: &InnerNode, s: usize) -> Key {
        if inner.model.slope <= 0.0 {
            return 0;
        }
        let guess = ((s as f64 - inner.model.intercept) / inner.model.slope).ceil();
        let mut k = if guess <= 0.0 { 0u64 } else { guess as u64 };
        while k > 0 && inner.model.predict(k - 1).floor() >= s as f64 {
            k -= 1;
        }
        while inner.model.predict(k).floor() < s as f64 && k < u64::MAX {
            k += 1;
        }
        k
    }

    /// Model residual must stay within a fraction of the would-be node
    /// capacity for a slice to become a single leaf.
    fn fits_one_leaf(&self, pairs: &[(Key, Payload)]) -> bool {
        let n = pairs.len();
        if n <= MIN_CAPACITY * 4 {
            return true;
        }
        let capacity = (n as f64 / self.config.avg_density).ceil();
        let epsilon = (capacity / 8.0) as u64;
        let mut hull = HullFitter::new();
        for (r, &(k, _)) in pairs.iter().enumerate() {
            hull.push(k, r as u64);
        }
        hull.feasible(epsilon)
    }

    /// Wires up the next-leaf chain after bulk load.
    fn link_leaves(&self) {
        let mut leaves: Vec<*mut Node> = Vec::new();
        fn walk(p: *mut Node, out: &mut Vec<*mut Node>) {
            match unsafe { &*p } {
                Node::Inner(inner) => {
                    let mut prev = std::ptr::null_mut();
                    for c in &inner.children {
                        let cp = c.load(Ordering::Relaxed);
                        if cp != prev {
                            walk(cp, out);
                            prev = cp;
                        }
                    }
                }
                Node::Data(_) => {
                    if out.last() != Some(&p) {
                        out.push(p);
                    }
                }
            }
        }
        walk(self.root.load(Ordering::Acquire), &mut leaves);
        for w in leaves.windows(2) {
            let Node::Data(d) = (unsafe { &*w[0] }) else { unreachable!() };
            d.next.store(w[1], Ordering::Release);
        }
    }

    /// Descends to the data node currently routing `key`. Returns the
    /// leaf and its parent. Lock free; caller must be pinned.
    fn descend(&self, key: Key) -> (*mut Node, ParentRef<'_>) {
        let mut parent = ParentRef::Root;
        let mut p = self.root.load(Ordering::Acquire);
        loop {
            match unsafe { &*p } {
                Node::Inner(inner) => {
                    let c = inner.children[inner.route(key)].load(Ordering::Acquire);
                    parent = ParentRef::Inner(inner);
                    p = c;
                }
                Node::Data(_) => return (p, parent),
            }
        }
    }

    fn data(&self, p: *mut Node) -> &DataNode {
        match unsafe { &*p } {
            Node::Data(d) => d,
            Node::Inner(_) => unreachable!("expected data node"),
        }
    }

    /// Structure modification for a full (or underfull) node. Caller
    /// holds `node`'s lock; on return the lock is released either way.
    /// Returns false when locks could not be acquired and the caller
    /// must retry from the top.
    fn run_smo(
        &self,
        node_ptr: *mut Node,
        parent: ParentRef<'_>,
        extra: Option<(Key, Payload)>,
        rebuild_only: bool,
    ) -> bool {
        let cfg = &self.config;
        let node = self.data(node_ptr);
        let mut pairs = node.collect_pairs();
        if let Some((k, v)) = extra {
            let at = pairs.partition_point(|&(pk, _)| pk < k);
            pairs.insert(at, (k, v));
        }
        let n = pairs.len();
        let can_expand = node.capacity() * 2 <= cfg.max_data_slots
            && (n as f64 / (node.capacity() * 2) as f64) <= cfg.max_density;
        let shift_heavy = {
            let ins = node.inserts_since_smo.load(Ordering::Relaxed).max(1);
            node.shifts_since_smo.load(Ordering::Relaxed) as f64 / ins as f64
                > cfg.shift_split_threshold
        };
        let split = !rebuild_only && (!can_expand || (shift_heavy && n > 4 * MIN_CAPACITY));

        // lock the predecessor leaf (to repair its next link) and the
        // parent; try-lock with full backout to avoid deadlock
        let pred_ptr = if node.range_lo == 0 {
            std::ptr::null_mut()
        } else {
            let (p, _) = self.descend(node.range_lo - 1);
            p
        };
        let pred = if pred_ptr.is_null() { None } else { Some(self.data(pred_ptr)) };
        if let Some(pred) = pred {
            if !pred.lock.try_lock_exclusive() {
                node.lock.unlock_exclusive();
                return false;
            }
            if pred.dead.load(Ordering::Acquire) || pred.next.load(Ordering::Acquire) != node_ptr {
                pred.lock.unlock_exclusive();
                node.lock.unlock_exclusive();
                return false;
            }
        }
        let parent_locked = match &parent {
            ParentRef::Root => {
                self.root_lock.lock_exclusive();
                true
            }
            ParentRef::Inner(inner) => {
                inner.lock.lock_exclusive();
                if inner.dead.load(Ordering::Acquire) {
                    inner.lock.unlock_exclusive();
                    false
                } else {
                    true
                }
            }
        };
        if !parent_locked {
            if let Some(pred) = pred {
                pred.lock.unlock_exclusive();
            }
            node.lock.unlock_exclusive();
            return false;
        }

        let next_ptr = node.next.load(Ordering::Acquire);
        let replacement_head: *mut Node;
        // plan the cut before building anything: sideways when the
        // parent has a slot boundary near the key median, downward
        // otherwise, single-node rebuild when no float-representable
        // boundary exists
        enum Plan {
            Rebuild,
            Sideways { a: usize, b: usize, s: usize, cut: usize, boundary: Key },
            Down { cut: usize, model: LinearModel },
        }
        let plan = if !split {
            Plan::Rebuild
        } else {
            let mid = n / 2;
            let mut plan = None;
            if let (Some((a, b)), ParentRef::Inner(inner)) =
                (self.parent_slots(&parent, node_ptr), &parent)
            {
                if b > a {
                    let s = inner.route(pairs[mid].0).clamp(a + 1, b);
                    let boundary = self.slot_boundary_key(inner, s);
                    let cut = pairs.partition_point(|&(pk, _)| pk < boundary);
                    if cut > 0 && cut < n {
                        plan = Some(Plan::Sideways { a, b, s, cut, boundary });
                    }
                }
            }
            plan.unwrap_or_else(|| match two_slot_router(node.range_lo, pairs[mid].0) {
                Some(model) => Plan::Down { cut: mid, model },
                None => Plan::Rebuild,
            })
        };
        if matches!(plan, Plan::Rebuild) {
            // single-node rebuild: capacity rederived from the key
            // count, so this both expands full nodes and contracts
            // underfull ones
            let fresh = build_data_node(&pairs, cfg.avg_density, cfg.max_data_slots, node.range_lo);
            fresh.next.store(next_ptr, Ordering::Relaxed);
            let fresh_ptr = Box::into_raw(Box::new(Node::Data(fresh)));
            self.counters.add(&self.counters.nodes_created, 1);
            self.counters.add(&self.counters.retrain_count, 1);
            self.replace_child(&parent, node_ptr, fresh_ptr);
            replacement_head = fresh_ptr;
        } else {
            let (cut, right_lo) = match &plan {
                Plan::Sideways { cut, boundary, .. } => (*cut, *boundary),
                Plan::Down { cut, .. } => (*cut, pairs[*cut].0),
                Plan::Rebuild => unreachable!(),
            };
            let left = build_data_node(&pairs[..cut], cfg.avg_density, cfg.max_data_slots, node.range_lo);
            let right = build_data_node(&pairs[cut..], cfg.avg_density, cfg.max_data_slots, right_lo);
            right.next.store(next_ptr, Ordering::Relaxed);
            let right_ptr = Box::into_raw(Box::new(Node::Data(right)));
            left.next.store(right_ptr, Ordering::Relaxed);
            let left_ptr = Box::into_raw(Box::new(Node::Data(left)));
            self.counters.add(&self.counters.nodes_created, 2);
            self.counters.add(&self.counters.retrain_count, 2);
            match plan {
                Plan::Sideways { a, b, s, .. } => {
                    self.replace_child_slots(&parent, a, s - 1, left_ptr);
                    self.replace_child_slots(&parent, s, b, right_ptr);
                }
                Plan::Down { model, .. } => {
                    let inner = InnerNode {
                        model,
                        children: vec![AtomicPtr::new(left_ptr), AtomicPtr::new(right_ptr)],
                        lock: SharedExclusiveLock::new(),
                        dead: AtomicBool::new(false),
                    };
                    let inner_ptr = Box::into_raw(Box::new(Node::Inner(inner)));
                    self.counters.add(&self.counters.nodes_created, 1);
                    self.replace_child(&parent, node_ptr, inner_ptr);
                }
                Plan::Rebuild => unreachable!(),
            }
            replacement_head = left_ptr;
        }
        self.finish_smo(node, node_ptr, pred, &parent, replacement_head);
        true
    }

    /// Swaps every parent slot holding `old` to the replacement.
    fn replace_child(&self, parent: &ParentRef<'_>, old: *mut Node, new: *mut Node) {
        match parent {
            ParentRef::Root => {
                debug_assert_eq!(self.root.load(Ordering::Acquire), old);
                self.root.store(new, Ordering::Release);
            }
            ParentRef::Inner(inner) => {
                for c in &inner.children {
                    if c.load(Ordering::Acquire) == old {
                        c.store(new, Ordering::Release);
                    }
                }
            }
        }
    }

    fn replace_child_slots(&self, parent: &ParentRef<'_>, from: usize, to: usize, new: *mut Node) {
        let ParentRef::Inner(inner) = parent else {
            unreachable!("slot replacement needs an inner parent")
        };
        for s in from..=to {
            inner.children[s].store(new, Ordering::Release);
        }
    }

    /// Contiguous run of parent slots referencing `node`, if the
    /// parent is an inner node.
    fn parent_slots(&self, parent: &ParentRef<'_>, node: *mut Node) -> Option<(usize, usize)> {
        let ParentRef::Inner(inner) = parent else { return None };
        let mut from = None;
        let mut to = 0;
        for (s, c) in inner.children.iter().enumerate() {
            if c.load(Ordering::Acquire) == node {
                if from.is_none() {
                    from = Some(s);
                }
                to = s;
            }
        }
        from.map(|f| (f, to))
    }

    fn finish_smo(
        &self,
        node: &DataNode,
        node_ptr: *mut Node,
        pred: Option<&DataNode>,
        parent: &ParentRef<'_>,
        replacement_head: *mut Node,
    ) {
        if let Some(pred) = pred {
            pred.next.store(replacement_head, Ordering::Release);
            pred.lock.unlock_exclusive();
        }
        match parent {
            ParentRef::Root => self.root_lock.unlock_exclusive(),
            ParentRef::Inner(inner) => inner.lock.unlock_exclusive(),
        }
        node.dead.store(true, Ordering::Release);
        node.lock.unlock_exclusive();
        self.counters.add(&self.counters.smo_count, 1);
        unsafe { self.epochs.retire(node_ptr) };
    }

    fn lookup_impl(&self, key: Key) -> Option<Payload> {
        let _guard = self.epochs.pin();
        let mut retries = 0u32;
        loop {
            let (leaf_ptr, _) = self.descend(key);
            let leaf = self.data(leaf_ptr);
            self.counters.add(&self.counters.nodes_traversed, 1);
            match leaf.lock.read_begin() {
                ReadToken::Version(v) => {
                    let res = leaf.find(key).map(|j| leaf.payloads[j].load(Ordering::Relaxed));
                    if leaf.lock.read_validate(v) {
                        return res;
                    }
                }
                ReadToken::Busy => {}
            }
            retries += 1;
            if retries > self.config.optimistic_retries {
                // pessimistic fallback
                leaf.lock.lock_exclusive();
                if !leaf.dead.load(Ordering::Acquire) {
                    let res = leaf.find(key).map(|j| leaf.payloads[j].load(Ordering::Relaxed));
                    leaf.lock.unlock_exclusive();
                    return res;
                }
                leaf.lock.unlock_exclusive();
                retries = 0;
            }
            std::hint::spin_loop();
        }
    }

    fn insert_impl(&self, key: Key, payload: Payload) -> bool {
        debug_assert!(key != NO_KEY, "u64::MAX is reserved as the gap sentinel");
        let _guard = self.epochs.pin();
        loop {
            let (leaf_ptr, parent) = self.descend(key);
            let leaf = self.data(leaf_ptr);
            self.counters.add(&self.counters.nodes_traversed, 1);
            leaf.lock.lock_exclusive();
            if leaf.dead.load(Ordering::Acquire) {
                leaf.lock.unlock_exclusive();
                continue;
            }
            let n = leaf.num_keys.load(Ordering::Relaxed);
            let would_exceed =
                (n + 1) as f64 / leaf.capacity() as f64 > self.config.max_density;
            if would_exceed {
                // duplicate? handle in place, no SMO needed
                if let Some(j) = leaf.find(key) {
                    leaf.payloads[j].store(payload, Ordering::Relaxed);
                    leaf.lock.unlock_exclusive();
                    return false;
                }
                if self.run_smo(leaf_ptr, parent, Some((key, payload)), false) {
                    return true;
                }
                continue; // backout, retry
            }
            match leaf.insert_locked(key, payload) {
                None => {
                    leaf.lock.unlock_exclusive();
                    return false;
                }
                Some(shifts) => {
                    self.counters.add(&self.counters.keys_shifted, shifts);
                    leaf.shifts_since_smo.fetch_add(shifts, Ordering::Relaxed);
                    leaf.inserts_since_smo.fetch_add(1, Ordering::Relaxed);
                    leaf.lock.unlock_exclusive();
                    return true;
                }
            }
        }
    }

    fn remove_impl(&self, key: Key) -> bool {
        let _guard = self.epochs.pin();
        loop {
            let (leaf_ptr, parent) = self.descend(key);
            let leaf = self.data(leaf_ptr);
            leaf.lock.lock_exclusive();
            if leaf.dead.load(Ordering::Acquire) {
                leaf.lock.unlock_exclusive();
                continue;
            }
            let removed = leaf.remove_locked(key);
            if removed
                && self.config.contract_on_underflow
                && leaf.density() < self.config.min_density
                && leaf.num_keys.load(Ordering::Relaxed) > 0
                && leaf.capacity() > MIN_CAPACITY
            {
                if self.run_smo(leaf_ptr, parent, None, true) {
                    return true;
                }
                // SMO backout: the remove itself already happened
                return true;
            }
            leaf.lock.unlock_exclusive();
            return removed;
        }
    }

    fn range_scan_impl(&self, start: Key, count: usize) -> Vec<(Key, Payload)> {
        let mut out = Vec::with_capacity(count.min(1024));
        if count == 0 {
            return out;
        }
        let _guard = self.epochs.pin();
        let mut cursor = start;
        let (mut node_ptr, _) = self.descend(cursor);
        'nodes: loop {
            let node = self.data(node_ptr);
            let mut buf: Vec<(Key, Payload)> = Vec::new();
            let mut next;
            loop {
                buf.clear();
                match node.lock.read_begin() {
                    ReadToken::Version(v) => {
                        let mut i = node.lower_bound(cursor);
                        let cap = node.capacity();
                        while i < cap && buf.len() + out.len() < count {
                            if node.is_occupied(i) {
                                buf.push((node.key_at(i), node.payloads[i].load(Ordering::Relaxed)));
                            }
                            i += 1;
                        }
                        next = node.next.load(Ordering::Acquire);
                        if node.lock.read_validate(v) {
                            break;
                        }
                        if node.dead.load(Ordering::Acquire) {
                            let (p, _) = self.descend(cursor);
                            node_ptr = p;
                            continue 'nodes;
                        }
                    }
                    ReadToken::Busy => std::hint::spin_loop(),
                }
            }
            out.extend_from_slice(&buf);
            if out.len() >= count || next.is_null() {
                return out;
            }
            if let Some(&(k, _)) = out.last() {
                cursor = match k.checked_add(1) {
                    Some(c) => c,
                    None => return out,
                };
            }
            node_ptr = next;
        }
    }

    fn size_in_bytes_impl(&self) -> usize {
        let _guard = self.epochs.pin();
        fn walk(p: *mut Node) -> usize {
            match unsafe { &*p } {
                Node::Inner(inner) => {
                    let mut sum = inner.size_bytes();
                    let mut prev = std::ptr::null_mut();
                    for c in &inner.children {
                        let cp = c.load(Ordering::Acquire);
                        if cp != prev && !cp.is_null() {
                            sum += walk(cp);
                            prev = cp;
                        }
                    }
                    sum
                }
                Node::Data(d) => d.size_bytes(),
            }
        }
        walk(self.root.load(Ordering::Acquire))
    }

    /// Test hook: asserts slot ordering and density bounds node by
    /// node. Quiescent callers only.
    #[doc(hidden)]
    pub fn check_invariants(&self) {
        let _guard = self.epochs.pin();
        let (mut p, _) = self.descend(0);
        let mut last: Option<Key> = None;
        loop {
            let d = self.data(p);
            let mut right = NO_KEY;
            for i in (0..d.capacity()).rev() {
                if d.is_occupied(i) {
                    right = d.key_at(i);
                } else {
                    assert_eq!(d.key_at(i), right, "gap duplicate broken at slot {i}");
                }
            }
            let mut n = 0;
            for i in 0..d.capacity() {
                if d.is_occupied(i) {
                    let k = d.key_at(i);
                    assert!(last.is_none_or(|l| l < k), "slot order broken");
                    last = Some(k);
                    n += 1;
                }
            }
            assert_eq!(n, d.num_keys.load(Ordering::Relaxed));
            let next = d.next.load(Ordering::Acquire);
            if next.is_null() {
                break;
            }
            p = next;
        }
    }

    pub fn config(&self) -> &GappedConfig {
        &self.config
    }
}

impl OrderedIndex for GappedIndex {
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

impl Drop for GappedIndex {
    fn drop(&mut self) {
        fn free(p: *mut Node) {
            if p.is_null() {
                return;
            }
            if let Node::Inner(inner) = unsafe { &*p } {
                let mut prev = std::ptr::null_mut();
                for c in &inner.children {
                    let cp = c.load(Ordering::Relaxed);
                    if cp != prev {
                        free(cp);
                        prev = cp;
                    }
                }
            }
            unsafe { drop(Box::from_raw(p)) };
        }
        free(self.root.load(Ordering::Relaxed));
    }
}

unsafe impl Send for GappedIndex {}
unsafe impl Sync for GappedIndex {}
