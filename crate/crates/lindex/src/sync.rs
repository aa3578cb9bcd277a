//! Concurrency primitives shared by the indexes: versioned optimistic
//! locks, a shared-exclusive spinlock, and epoch-based memory
//! reclamation for out-of-place structure modifications.

use std::cell::RefCell;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

/// Lock word: bit 0 is the locked flag, bits 1..63 the version.
/// Writers lock, mutate, then unlock which bumps the version; readers
/// only verify the version did not change across their access.
#[derive(Debug, Default)]
pub struct VersionedLock {
    word: AtomicU64,
}

pub const LOCKED_BIT: u64 = 1;

/// Result of [`VersionedLock::read_begin`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadToken {
    /// Unlocked; the witnessed word to validate against.
    Version(u64),
    /// A writer holds the lock; retry.
    Busy,
}

impl VersionedLock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Begins an optimistic read. Returns the current word if
    /// unlocked, `Busy` otherwise.
    #[inline]
    pub fn read_begin(&self) -> ReadToken {
        let w = self.word.load(Ordering::Acquire);
        if w & LOCKED_BIT != 0 {
            ReadToken::Busy
        } else {
            ReadToken::Version(w)
        }
    }

    /// True iff the word is still `version` and unlocked, i.e. no
    /// writer completed or is active since the paired `read_begin`.
    #[inline]
    pub fn read_validate(&self, version: u64) -> bool {
        std::sync::atomic::fence(Ordering::Acquire);
        self.word.load(Ordering::Acquire) == version
    }

    /// Spins until the lock is held exclusively.
    #[inline]
    pub fn lock_exclusive(&self) {
        let mut spins = 0u32;
        loop {
            if self.try_lock_exclusive() {
                return;
            }
            backoff(&mut spins);
        }
    }

    #[inline]
    pub fn try_lock_exclusive(&self) -> bool {
        let w = self.word.load(Ordering::Relaxed);
        w & LOCKED_BIT == 0
            && self
                .word
                .compare_exchange_weak(w, w | LOCKED_BIT, Ordering::Acquire, Ordering::Relaxed)
                .is_ok()
    }

    /// Releases the lock, incrementing the version. Caller must hold
    /// the lock.
    #[inline]
    pub fn unlock_exclusive(&self) {
        let w = self.word.load(Ordering::Relaxed);
        debug_assert!(w & LOCKED_BIT != 0, "unlock of an unlocked VersionedLock");
        // clear the flag and bump the version in one store
        self.word.store(w.wrapping_add(1), Ordering::Release);
    }

    /// Raw word, for tests and diagnostics.
    pub fn raw(&self) -> u64 {
        self.word.load(Ordering::Acquire)
    }
}

#[inline]
fn backoff(spins: &mut u32) {
    *spins += 1;
    if *spins < 10 {
        for _ in 0..(1 << (*spins).min(6)) {
            std::hint::spin_loop();
        }
    } else {
        std::thread::yield_now();
    }
}

/// Shared-exclusive spinlock. Word counts readers; `u64::MAX` marks a
/// writer. Used for parent updates during structure modifications.
#[derive(Debug, Default)]
pub struct SharedExclusiveLock {
    state: AtomicU64,
}

const WRITER: u64 = u64::MAX;

impl SharedExclusiveLock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lock_shared(&self) {
        let mut spins = 0u32;
        loop {
            let s = self.state.load(Ordering::Relaxed);
            if s != WRITER
                && self
                    .state
                    .compare_exchange_weak(s, s + 1, Ordering::Acquire, Ordering::Relaxed)
                    .is_ok()
            {
                return;
            }
            backoff(&mut spins);
        }
    }

    pub fn unlock_shared(&self) {
        let prev = self.state.fetch_sub(1, Ordering::Release);
        debug_assert!(prev != 0 && prev != WRITER);
    }

    pub fn lock_exclusive(&self) {
        let mut spins = 0u32;
        loop {
            if self
                .state
                .compare_exchange_weak(0, WRITER, Ordering::Acquire, Ordering::Relaxed)
                .is_ok()
            {
                return;
            }
            backoff(&mut spins);
        }
    }

    pub fn unlock_exclusive(&self) {
        debug_assert_eq!(self.state.load(Ordering::Relaxed), WRITER);
        self.state.store(0, Ordering::Release);
    }
}

const MAX_THREADS: usize = 256;
const ADVANCE_EVERY: u64 = 256;

#[repr(align(128))]
#[derive(Debug)]
struct Slot {
    /// 0 = not pinned; otherwise the epoch the thread is pinned at.
    active: AtomicU64,
    claimed: AtomicBool,
}

struct Retired {
    epoch: u64,
    ptr: *mut u8,
    drop_fn: unsafe fn(*mut u8),
}

// Retired pointers are owned garbage; the mutex serializes access.
unsafe impl Send for Retired {}

struct EpochInner {
    id: u64,
    global: AtomicU64,
    slots: Box<[Slot]>,
    garbage: Mutex<Vec<Retired>>,
    retires: AtomicU64,
}

/// Epoch-based memory reclamation. An object retired in epoch `e` is
/// freed only once every pinned thread is at an epoch greater than
/// `e`.
pub struct EpochManager {
    inner: Arc<EpochInner>,
}

/// RAII pin: the current thread participates in the epoch protocol
/// while the guard lives.
pub struct EpochGuard<'a> {
    inner: &'a EpochInner,
    slot: usize,
}

struct TlsEntry {
    id: u64,
    slot: usize,
    inner: Arc<EpochInner>,
}

struct TlsSlots(Vec<TlsEntry>);

impl Drop for TlsSlots {
    fn drop(&mut self) {
        for e in &self.0 {
            e.inner.slots[e.slot].active.store(0, Ordering::SeqCst);
            e.inner.slots[e.slot].claimed.store(false, Ordering::SeqCst);
        }
    }
}

thread_local! {
    static TLS: RefCell<TlsSlots> = RefCell::new(TlsSlots(Vec::new()));
}

static NEXT_MANAGER_ID: AtomicU64 = AtomicU64::new(1);

impl Default for EpochManager {
    fn default() -> Self {
        Self::new()
    }
}

impl EpochManager {
    pub fn new() -> Self {
        let slots = (0..MAX_THREADS)
            .map(|_| Slot {
                active: AtomicU64::new(0),
                claimed: AtomicBool::new(false),
            })
            .collect();
        EpochManager {
            inner: Arc::new(EpochInner {
                id: NEXT_MANAGER_ID.fetch_add(1, Ordering::Relaxed),
                global: AtomicU64::new(1),
                slots,
                garbage: Mutex::new(Vec::new()),
                retires: AtomicU64::new(0),
            }),
        }
    }

    fn thread_slot(&self) -> usize {
        TLS.with(|tls| {
            let mut tls = tls.borrow_mut();
            if let Some(e) = tls.0.iter().find(|e| e.id == self.inner.id) {
                return e.slot;
            }
            let slot = self
                .inner
                .slots
                .iter()
                .position(|s| {
                    s.claimed
                        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Relaxed)
                        .is_ok()
                })
                .expect("epoch manager thread slots exhausted");
            tls.0.push(TlsEntry {
                id: self.inner.id,
                slot,
                inner: Arc::clone(&self.inner),
            });
            slot
        })
    }

    /// Pins the calling thread at the current epoch.
    pub fn pin(&self) -> EpochGuard<'_> {
        let slot = self.thread_slot();
        let s = &self.inner.slots[slot];
        loop {
            let e = self.inner.global.load(Ordering::SeqCst);
            s.active.store(e, Ordering::SeqCst);
            if self.inner.global.load(Ordering::SeqCst) == e {
                break;
            }
        }
        EpochGuard { inner: &self.inner, slot }
    }

    /// Hands ownership of an unlinked object to the reclamation queue.
    ///
    /// # Safety
    /// `ptr` must come from `Box::into_raw`, be unreachable for threads
    /// pinning after this call, and not be retired twice.
    pub unsafe fn retire<T>(&self, ptr: *mut T) {
        unsafe fn drop_box<T>(p: *mut u8) {
            drop(Box::from_raw(p as *mut T));
        }
        let epoch = self.inner.global.load(Ordering::SeqCst);
        self.inner.garbage.lock().unwrap().push(Retired {
            epoch,
            ptr: ptr as *mut u8,
            drop_fn: drop_box::<T>,
        });
        let n = self.inner.retires.fetch_add(1, Ordering::Relaxed) + 1;
        if n % ADVANCE_EVERY == 0 {
            self.try_advance();
            self.try_reclaim();
        }
    }

    /// Bumps the global epoch if every pinned thread has caught up.
    pub fn try_advance(&self) -> bool {
        let g = self.inner.global.load(Ordering::SeqCst);
        let all_current = self.inner.slots.iter().all(|s| {
            let a = s.active.load(Ordering::SeqCst);
            a == 0 || a == g
        });
        if all_current {
            let _ = self.inner.global.compare_exchange(
                g,
                g + 1,
                Ordering::SeqCst,
                Ordering::SeqCst,
            );
        }
        all_current
    }

    /// Frees every retired object whose retire epoch is below the
    /// minimum pinned epoch. Returns the number reclaimed.
    pub fn try_reclaim(&self) -> usize {
        let min_active = self
            .inner
            .slots
            .iter()
            .map(|s| s.active.load(Ordering::SeqCst))
            .filter(|&a| a != 0)
            .min()
            .unwrap_or(u64::MAX);
        let mut garbage = self.inner.garbage.lock().unwrap();
        let mut freed = 0;
        garbage.retain(|r| {
            if r.epoch < min_active {
                unsafe { (r.drop_fn)(r.ptr) };
                freed += 1;
                false
            } else {
                true
            }
        });
        freed
    }

    /// Retired-but-not-yet-freed object count, for tests.
    pub fn pending(&self) -> usize {
        self.inner.garbage.lock().unwrap().len()
    }
}

impl Drop for EpochInner {
    fn drop(&mut self) {
        // no thread can be pinned if the last Arc is going away
        for r in self.garbage.lock().unwrap().drain(..) {
            unsafe { (r.drop_fn)(r.ptr) };
        }
    }
}

impl Drop for EpochGuard<'_> {
    fn drop(&mut self) {
        self.inner.slots[self.slot].active.store(0, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn read_begin_on_unlocked_returns_version() {
        let l = VersionedLock::new();
        assert_eq!(l.read_begin(), ReadToken::Version(0));
        assert!(l.read_validate(0));
    }

    #[test]
    fn read_begin_on_locked_is_busy() {
        let l = VersionedLock::new();
        l.lock_exclusive();
        assert_eq!(l.read_begin(), ReadToken::Busy);
        l.unlock_exclusive();
    }

    #[test]
    fn writer_in_between_invalidates() {
        let l = VersionedLock::new();
        let ReadToken::Version(v) = l.read_begin() else {
            panic!()
        };
        l.lock_exclusive();
        l.unlock_exclusive();
        assert!(!l.read_validate(v));
    }

    #[test]
    fn lock_unlock_encodes_version_plus_two() {
        let l = VersionedLock::new();
        let before = l.raw();
        l.lock_exclusive();
        assert_eq!(l.raw(), before | LOCKED_BIT);
        l.unlock_exclusive();
        assert_eq!(l.raw(), before + 2);
    }

    /// Exhaustive interleavings of a reader {begin, read, validate}
    /// with a writer {lock, write, unlock} over one protected word.
    /// Whenever the word changed between begin and validate, validate
    /// must fail.
    #[test]
    fn optimistic_read_model_check() {
        // 6 steps, reader order fixed among themselves, writer too:
        // enumerate all C(6,3) = 20 merges.
        for mask in 0u32..(1 << 6) {
            if mask.count_ones() != 3 {
                continue;
            }
            let lock = VersionedLock::new();
            let mut word = 0u64;
            let mut reader_step = 0;
            let mut writer_step = 0;
            let mut token = None;
            let mut word_at_begin = None;
            let mut outcome = None;
            for bit in 0..6 {
                let reader_turn = mask & (1 << bit) != 0;
                if reader_turn {
                    match reader_step {
                        0 => {
                            token = Some(lock.read_begin());
                            word_at_begin = Some(word);
                        }
                        1 => { /* the read itself */ }
                        _ => {
                            let ok = match token.unwrap() {
                                ReadToken::Version(v) => lock.read_validate(v),
                                ReadToken::Busy => false,
                            };
                            outcome = Some((ok, word));
                        }
                    }
                    reader_step += 1;
                } else {
                    match writer_step {
                        0 => lock.lock_exclusive(),
                        1 => word = 1,
                        _ => lock.unlock_exclusive(),
                    }
                    writer_step += 1;
                }
            }
            let (validated, word_at_validate) = outcome.unwrap();
            if word_at_begin.unwrap() != word_at_validate {
                assert!(
                    !validated,
                    "word changed between begin and validate but read validated, mask={mask:06b}"
                );
            }
        }
    }

    #[test]
    fn mutual_exclusion_stress() {
        let lock = Arc::new(VersionedLock::new());
        let counter = Arc::new(AtomicUsize::new(0));
        let threads = 4;
        let iters = 20_000;
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                let lock = Arc::clone(&lock);
                let counter = Arc::clone(&counter);
                std::thread::spawn(move || {
                    for _ in 0..iters {
                        lock.lock_exclusive();
                        let v = counter.load(Ordering::Relaxed);
                        counter.store(v + 1, Ordering::Relaxed);
                        lock.unlock_exclusive();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(counter.load(Ordering::Relaxed), threads * iters);
    }

    #[test]
    fn shared_exclusive_basics() {
        let l = SharedExclusiveLock::new();
        l.lock_shared();
        l.lock_shared();
        l.unlock_shared();
        l.unlock_shared();
        l.lock_exclusive();
        l.unlock_exclusive();
    }

    #[test]
    fn retire_without_readers_reclaims_after_advance() {
        let em = EpochManager::new();
        let b = Box::into_raw(Box::new(42u64));
        unsafe { em.retire(b) };
        assert_eq!(em.pending(), 1);
        em.try_advance();
        assert_eq!(em.try_reclaim(), 1);
        assert_eq!(em.pending(), 0);
    }

    #[test]
    fn pinned_reader_blocks_reclaim() {
        let em = EpochManager::new();
        let guard = em.pin();
        let b = Box::into_raw(Box::new(7u64));
        unsafe { em.retire(b) };
        em.try_advance();
        assert_eq!(em.try_reclaim(), 0, "reader still pinned in old epoch");
        drop(guard);
        em.try_advance();
        assert_eq!(em.try_reclaim(), 1);
    }

    /// Readers chase a shared pointer whose target the writer keeps
    /// replacing and retiring. Canary field must stay intact for the
    /// whole read.
    #[test]
    fn canary_stress() {
        const CANARY: u64 = 0xdead_beef_cafe_f00d;
        struct Node {
            canary: u64,
            value: u64,
        }
        let em = Arc::new(EpochManager::new());
        let current = Arc::new(AtomicU64::new(
            Box::into_raw(Box::new(Node { canary: CANARY, value: 0 })) as u64,
        ));
        let stop = Arc::new(AtomicBool::new(false));

        let mut handles = Vec::new();
        for _ in 0..3 {
            let em = Arc::clone(&em);
            let current = Arc::clone(&current);
            let stop = Arc::clone(&stop);
            handles.push(std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let guard = em.pin();
                    let p = current.load(Ordering::Acquire) as *const Node;
                    let n = unsafe { &*p };
                    assert_eq!(n.canary, CANARY, "use after reclaim");
                    std::hint::black_box(n.value);
                    drop(guard);
                }
            }));
        }
        for i in 0..30_000u64 {
            let guard = em.pin();
            let fresh = Box::into_raw(Box::new(Node { canary: CANARY, value: i }));
            let old = current.swap(fresh as u64, Ordering::AcqRel) as *mut Node;
            unsafe { em.retire(old) };
            drop(guard);
        }
        stop.store(true, Ordering::Relaxed);
        for h in handles {
            h.join().unwrap();
        }
        em.try_advance();
        em.try_advance();
        em.try_reclaim();
    }
}
