//! Baseline B+-tree: fanout 64, linked leaves, one tree-wide
//! shared-exclusive lock. Readers and scans take the lock shared,
//! mutations take it exclusive. Deliberately simple — this is the
//! comparison baseline, not a contender.

use std::cell::UnsafeCell;

use crate::contract::{Counters, CountersSnapshot, OrderedIndex};
use crate::dataset::{Key, Payload};
use crate::sync::SharedExclusiveLock;

const FANOUT: usize = 64;
const MIN_KEYS: usize = FANOUT / 2;

struct Leaf {
    keys: Vec<Key>,
    vals: Vec<Payload>,
    next: *mut Leaf,
}

enum BNode {
    Inner {
        // seps.len() + 1 == children.len(); child i holds keys in
        // [seps[i-1], seps[i])
        seps: Vec<Key>,
        children: Vec<Box<BNode>>,
    },
    Leaf(Leaf),
}

impl BNode {
    fn as_leaf_mut(&mut self) -> &mut Leaf {
        match self {
            BNode::Leaf(l) => l,
            BNode::Inner { .. } => unreachable!(),
        }
    }
}

/// Baseline ordered index.
pub struct BplusTree {
    lock: SharedExclusiveLock,
    root: UnsafeCell<Box<BNode>>,
    counters: Counters,
}

unsafe impl Send for BplusTree {}
unsafe impl Sync for BplusTree {}

enum InsertUp {
    Done { was_new: bool },
    Split { sep: Key, right: Box<BNode> },
}

impl BplusTree {
    pub fn new() -> Self {
        BplusTree {
            lock: SharedExclusiveLock::new(),
            root: UnsafeCell::new(Box::new(BNode::Leaf(Leaf {
                keys: Vec::new(),
                vals: Vec::new(),
                next: std::ptr::null_mut(),
            }))),
            counters: Counters::default(),
        }
    }

    /// Builds from sorted unique pairs by packed leaf construction.
    pub fn bulk_load(pairs: &[(Key, Payload)]) -> Self {
        let tree = BplusTree::new();
        if pairs.is_empty() {
            return tree;
        }
        debug_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0));
        // fill leaves to ~80% so early inserts don't cascade splits
        let per_leaf = (FANOUT * 4 / 5).max(MIN_KEYS);
        let mut leaves: Vec<Box<BNode>> = pairs
            .chunks(per_leaf)
            .map(|c| {
                Box::new(BNode::Leaf(Leaf {
                    keys: c.iter().map(|&(k, _)| k).collect(),
                    vals: c.iter().map(|&(_, v)| v).collect(),
                    next: std::ptr::null_mut(),
                }))
            })
            .collect();
        // avoid an underfull final leaf: merge or rebalance the tail pair
        let mut drop_last = false;
        if let [.., a, b] = &mut leaves[..] {
            let (a, b) = (a.as_leaf_mut(), b.as_leaf_mut());
            if b.keys.len() < MIN_KEYS {
                let mut k = std::mem::take(&mut a.keys);
                let mut v = std::mem::take(&mut a.vals);
                k.append(&mut b.keys);
                v.append(&mut b.vals);
                if k.len() <= FANOUT {
                    a.keys = k;
                    a.vals = v;
                    drop_last = true;
                } else {
                    let mid = k.len() / 2;
                    b.keys = k.split_off(mid);
                    b.vals = v.split_off(mid);
                    a.keys = k;
                    a.vals = v;
                }
            }
        }
        if drop_last {
            leaves.pop();
        }
        for i in 0..leaves.len().saturating_sub(1) {
            let next_ptr: *mut Leaf = leaves[i + 1].as_leaf_mut();
            leaves[i].as_leaf_mut().next = next_ptr;
        }
        tree.counters.add(&tree.counters.nodes_created, leaves.len() as u64);
        // build inner levels bottom-up
        let mut level = leaves;
        while level.len() > 1 {
            let mut parents: Vec<Box<BNode>> = Vec::new();
            for chunk in level.chunks_mut(FANOUT) {
                let children: Vec<Box<BNode>> = chunk.iter_mut().map(std::mem::take).collect();
                let seps = children[1..].iter().map(|c| smallest_key(c)).collect();
                parents.push(Box::new(BNode::Inner { seps, children }));
            }
            tree.counters.add(&tree.counters.nodes_created, parents.len() as u64);
            level = parents;
        }
        unsafe { *tree.root.get() = level.pop().unwrap() };
        tree
    }

    fn insert_rec(&self, node: &mut BNode, key: Key, payload: Payload) -> InsertUp {
        self.counters.add(&self.counters.nodes_traversed, 1);
        match node {
            BNode::Leaf(leaf) => {
                match leaf.keys.binary_search(&key) {
                    Ok(i) => {
                        leaf.vals[i] = payload;
                        InsertUp::Done { was_new: false }
                    }
                    Err(i) => {
                        self.counters
                            .add(&self.counters.keys_shifted, (leaf.keys.len() - i) as u64);
                        leaf.keys.insert(i, key);
                        leaf.vals.insert(i, payload);
                        if leaf.keys.len() <= FANOUT {
                            return InsertUp::Done { was_new: true };
                        }
                        let mid = leaf.keys.len() / 2;
                        let right = Leaf {
                            keys: leaf.keys.split_off(mid),
                            vals: leaf.vals.split_off(mid),
                            next: leaf.next,
                        };
                        let sep = right.keys[0];
                        let mut right = Box::new(BNode::Leaf(right));
                        leaf.next = right.as_leaf_mut();
                        self.counters.add(&self.counters.nodes_created, 1);
                        self.counters.add(&self.counters.smo_count, 1);
                        InsertUp::Split { sep, right }
                    }
                }
            }
            BNode::Inner { seps, children } => {
                let i = seps.partition_point(|&s| s <= key);
                match self.insert_rec(&mut children[i], key, payload) {
                    InsertUp::Done { was_new } => InsertUp::Done { was_new },
                    InsertUp::Split { sep, right } => {
                        seps.insert(i, sep);
                        children.insert(i + 1, right);
                        if children.len() <= FANOUT {
                            return InsertUp::Done { was_new: true };
                        }
                        let mid = children.len() / 2;
                        let up_sep = seps[mid - 1];
                        let right_children = children.split_off(mid);
                        let right_seps = seps.split_off(mid);
                        seps.pop(); // up_sep moves to the parent
                        let right = Box::new(BNode::Inner {
                            seps: right_seps,
                            children: right_children,
                        });
                        self.counters.add(&self.counters.nodes_created, 1);
                        self.counters.add(&self.counters.smo_count, 1);
                        InsertUp::Split { sep: up_sep, right }
                    }
                }
            }
        }
    }

    /// Returns (removed, child now underfull).
    fn remove_rec(&self, node: &mut BNode, key: Key) -> (bool, bool) {
        self.counters.add(&self.counters.nodes_traversed, 1);
        match node {
            BNode::Leaf(leaf) => match leaf.keys.binary_search(&key) {
                Ok(i) => {
                    leaf.keys.remove(i);
                    leaf.vals.remove(i);
                    (true, leaf.keys.len() < MIN_KEYS)
                }
                Err(_) => (false, false),
            },
            BNode::Inner { seps, children } => {
                let i = seps.partition_point(|&s| s <= key);
                let (removed, underfull) = self.remove_rec(&mut children[i], key);
                if !underfull {
                    return (removed, false);
                }
                self.rebalance(seps, children, i);
                (removed, children.len() < MIN_KEYS.max(2))
            }
        }
    }

    /// Fixes underfull child i by borrowing from or merging with a
    /// sibling.
    fn rebalance(&self, seps: &mut Vec<Key>, children: &mut Vec<Box<BNode>>, i: usize) {
        self.counters.add(&self.counters.smo_count, 1);
        let left_idx = if i > 0 { i - 1 } else { i };
        let (l, r) = (left_idx, left_idx + 1);
        if r >= children.len() {
            return; // single child; nothing to balance against
        }
        let (a, b) = children.split_at_mut(r);
        match (a[l].as_mut(), b[0].as_mut()) {
            (BNode::Leaf(lf), BNode::Leaf(rf)) => {
                if lf.keys.len() + rf.keys.len() <= FANOUT {
                    // merge right into left, unlink right
                    lf.keys.append(&mut rf.keys);
                    lf.vals.append(&mut rf.vals);
                    lf.next = rf.next;
                    children.remove(r);
                    seps.remove(l);
                } else if lf.keys.len() < rf.keys.len() {
                    // borrow leading key from right
                    lf.keys.push(rf.keys.remove(0));
                    lf.vals.push(rf.vals.remove(0));
                    seps[l] = rf.keys[0];
                } else {
                    let k = lf.keys.pop().unwrap();
                    let v = lf.vals.pop().unwrap();
                    rf.keys.insert(0, k);
                    rf.vals.insert(0, v);
                    seps[l] = k;
                }
            }
            (
                BNode::Inner { seps: ls, children: lc },
                BNode::Inner { seps: rs, children: rc },
            ) => {
                if lc.len() + rc.len() <= FANOUT {
                    ls.push(seps[l]);
                    ls.append(rs);
                    lc.append(rc);
                    children.remove(r);
                    seps.remove(l);
                } else if lc.len() < rc.len() {
                    ls.push(seps[l]);
                    seps[l] = rs.remove(0);
                    lc.push(rc.remove(0));
                } else {
                    rs.insert(0, seps[l]);
                    seps[l] = ls.pop().unwrap();
                    rc.insert(0, lc.pop().unwrap());
                }
            }
            _ => unreachable!("siblings at different heights"),
        }
    }

    #[doc(hidden)]
    pub fn check_invariants(&self) {
        self.lock.lock_shared();
        let root = unsafe { &**self.root.get() };
        fn walk(n: &BNode, lo: Option<Key>, hi: Option<Key>, is_root: bool, depth: usize) -> usize {
            match n {
                BNode::Leaf(leaf) => {
                    assert!(leaf.keys.windows(2).all(|w| w[0] < w[1]));
                    if let Some(lo) = lo {
                        assert!(leaf.keys.iter().all(|&k| k >= lo));
                    }
                    if let Some(hi) = hi {
                        assert!(leaf.keys.iter().all(|&k| k < hi));
                    }
                    if !is_root {
                        assert!(leaf.keys.len() >= MIN_KEYS, "underfull leaf");
                    }
                    assert!(leaf.keys.len() <= FANOUT);
                    depth
                }
                BNode::Inner { seps, children } => {
                    assert_eq!(seps.len() + 1, children.len());
                    assert!(seps.windows(2).all(|w| w[0] < w[1]));
                    assert!(children.len() <= FANOUT);
                    if !is_root {
                        assert!(children.len() >= 2, "underfull inner");
                    }
                    let mut d = None;
                    for (i, c) in children.iter().enumerate() {
                        let clo = if i == 0 { lo } else { Some(seps[i - 1]) };
                        let chi = if i == seps.len() { hi } else { Some(seps[i]) };
                        let cd = walk(c, clo, chi, false, depth + 1);
                        assert!(d.is_none_or(|d| d == cd), "uneven leaf depth");
                        d = Some(cd);
                    }
                    d.unwrap()
                }
            }
        }
        walk(root, None, None, true, 0);
        self.lock.unlock_shared();
    }
}

impl Default for BplusTree {
    fn default() -> Self {
        Self::new()
    }
}

fn smallest_key(n: &BNode) -> Key {
    match n {
        BNode::Leaf(l) => l.keys[0],
        BNode::Inner { children, .. } => smallest_key(&children[0]),
    }
}

fn node_size(n: &BNode) -> usize {
    match n {
        BNode::Leaf(l) => {
            std::mem::size_of::<BNode>() + l.keys.capacity() * 8 + l.vals.capacity() * 8
        }
        BNode::Inner { seps, children } => {
            std::mem::size_of::<BNode>()
                + seps.capacity() * 8
                + children.capacity() * 8
                + children.iter().map(|c| node_size(c)).sum::<usize>()
        }
    }
}

impl Default for BNode {
    fn default() -> Self {
        BNode::Leaf(Leaf {
            keys: Vec::new(),
            vals: Vec::new(),
            next: std::ptr::null_mut(),
        })
    }
}

impl OrderedIndex for BplusTree {
    fn lookup(&self, key: Key) -> Option<Payload> {
        self.counters.add(&self.counters.lookups, 1);
        self.lock.lock_shared();
        let mut node = unsafe { &**self.root.get() };
        let out = loop {
            self.counters.add(&self.counters.nodes_traversed, 1);
            match node {
                BNode::Leaf(leaf) => {
                    break leaf.keys.binary_search(&key).ok().map(|i| leaf.vals[i]);
                }
                BNode::Inner { seps, children } => {
                    node = &children[seps.partition_point(|&s| s <= key)];
                }
            }
        };
        self.lock.unlock_shared();
        out
    }

    fn insert(&self, key: Key, payload: Payload) -> bool {
        self.counters.add(&self.counters.inserts, 1);
        self.lock.lock_exclusive();
        let root = unsafe { &mut *self.root.get() };
        let was_new = match self.insert_rec(root, key, payload) {
            InsertUp::Done { was_new } => was_new,
            InsertUp::Split { sep, right } => {
                let old = std::mem::take(root);
                **root = BNode::Inner {
                    seps: vec![sep],
                    children: vec![old, right],
                };
                self.counters.add(&self.counters.nodes_created, 1);
                true
            }
        };
        self.lock.unlock_exclusive();
        was_new
    }

    fn remove(&self, key: Key) -> bool {
        self.lock.lock_exclusive();
        let root = unsafe { &mut *self.root.get() };
        let (removed, _) = self.remove_rec(root, key);
        // shrink the root while it has a single child
        loop {
            let only = match root.as_mut() {
                BNode::Inner { children, .. } if children.len() == 1 => {
                    children.pop().unwrap()
                }
                _ => break,
            };
            *root = only;
        }
        self.lock.unlock_exclusive();
        removed
    }

    fn range_scan(&self, start: Key, count: usize) -> Vec<(Key, Payload)> {
        let mut out = Vec::with_capacity(count.min(1024));
        if count == 0 {
            return out;
        }
        self.lock.lock_shared();
        let mut node = unsafe { &**self.root.get() };
        let leaf: &Leaf = loop {
            match node {
                BNode::Leaf(leaf) => break leaf,
                BNode::Inner { seps, children } => {
                    node = &children[seps.partition_point(|&s| s <= start)];
                }
            }
        };
        let mut cur: *const Leaf = leaf;
        let mut i = leaf.keys.partition_point(|&k| k < start);
        while out.len() < count {
            let leaf = unsafe { &*cur };
            while i < leaf.keys.len() && out.len() < count {
                out.push((leaf.keys[i], leaf.vals[i]));
                i += 1;
            }
            if out.len() >= count || leaf.next.is_null() {
                break;
            }
            cur = leaf.next;
            i = 0;
        }
        self.lock.unlock_shared();
        out
    }

    fn size_in_bytes(&self) -> usize {
        self.lock.lock_shared();
        let s = node_size(unsafe { &**self.root.get() });
        self.lock.unlock_shared();
        s
    }

    fn op_stats(&self) -> CountersSnapshot {
        self.counters.snapshot()
    }
}
