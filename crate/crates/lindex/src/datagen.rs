//! Synthetic sorted-key generator with controllable global and local
//! PLA hardness.
//!
//! Keys are sampled from random linear models: for rank `y` under
//! model `y = m k + b` with error budget ε, the key is drawn uniformly
//! from `[max((y-ε-b)/m, prev+1), (y+ε-b)/m]`, which keeps every
//! emitted point within ±ε of the model and strictly increasing.
//! Segment boundaries are forced by pushing the next key just past the
//! point where the previous segment's convex hull stops admitting an
//! ε-feasible line, so the measured optimal-PLA segment count tracks
//! the requested one.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::dataset::Dataset;
use crate::pla::{HullFitter, LinearModel, EPSILON_GLOBAL, EPSILON_LOCAL};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("empty sampling interval at rank {rank} after {retries} model retries")]
    EmptyInterval { rank: u64, retries: u32 },
    #[error("key space exhausted at rank {rank}")]
    KeySpaceExhausted { rank: u64 },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

/// Generation parameters. `n_keys ≥ target_local ≥ target_global ≥ 1`;
/// local segments nest inside global segments.
#[derive(Debug, Clone)]
pub struct GenSpec {
    pub n_keys: u64,
    pub target_global: u64,
    pub target_local: u64,
    pub epsilon_global: u64,
    pub epsilon_local: u64,
    pub seed: u64,
    /// Global segment slope is 2^u with u uniform in this range.
    /// Slopes above 1 would need more ranks than integer keys and
    /// collapse the sampling interval on long segments, so the default
    /// upper end is 0.
    pub slope_log2_range: (f64, f64),
    /// Multiplicative jitter (log2) applied to the global slope for
    /// each local model.
    pub local_slope_jitter_log2: f64,
}

impl GenSpec {
    pub fn new(n_keys: u64, target_global: u64, target_local: u64, seed: u64) -> Self {
        GenSpec {
            n_keys,
            target_global,
            target_local,
            epsilon_global: EPSILON_GLOBAL,
            epsilon_local: EPSILON_LOCAL,
            seed,
            slope_log2_range: (-8.0, 0.0),
            local_slope_jitter_log2: 0.05,
        }
    }

    fn validate(&self) -> Result<(), GenError> {
        if self.target_global < 1
            || self.target_local < self.target_global
            || self.n_keys < self.target_local
        {
            return Err(GenError::InvalidSpec(format!(
                "need n_keys ≥ target_local ≥ target_global ≥ 1, got n={} L={} G={}",
                self.n_keys, self.target_local, self.target_global
            )));
        }
        if self.epsilon_local >= self.epsilon_global {
            return Err(GenError::InvalidSpec(
                "epsilon_local must be below epsilon_global".into(),
            ));
        }
        Ok(())
    }
}

/// State of one in-progress segment: its model, the last emitted key,
/// and the convex hull of the emitted (key, rank) points.
#[derive(Debug, Clone)]
pub struct SegmentState {
    pub model: LinearModel,
    pub prev: u64,
    pub hull: HullFitter,
    pub next_rank: u64,
}

impl SegmentState {
    /// Starts a segment whose model passes exactly through
    /// (start_key, start_rank).
    pub fn anchored(start_key: u64, start_rank: u64, slope: f64) -> Self {
        SegmentState {
            model: LinearModel {
                slope,
                intercept: start_rank as f64 - slope * start_key as f64,
            },
            prev: start_key,
            hull: HullFitter::new(),
            next_rank: start_rank,
        }
    }

    /// Records an emitted key at the current rank.
    pub fn emit(&mut self, key: u64) {
        self.hull.push(key, self.next_rank);
        self.prev = key;
        self.next_rank += 1;
    }
}

// Keys live below 2^53 so rank/key arithmetic stays exact in f64.
const MAX_KEY: u64 = (1u64 << 53) - 1;

/// The model-band key interval for rank `y`: lower bound also floored
/// at `prev + 1` to keep keys strictly increasing.
fn band(model: &LinearModel, epsilon: u64, y: u64, prev: u64) -> (u64, u64) {
    let e = epsilon as f64;
    let lo = ((y as f64 - e - model.intercept) / model.slope).ceil();
    let hi = ((y as f64 + e - model.intercept) / model.slope).floor();
    let lo = if lo <= prev as f64 + 1.0 { prev + 1 } else { lo as u64 };
    let hi = if hi < 0.0 { 0 } else { (hi as u64).min(MAX_KEY) };
    (lo, hi)
}

/// Draws `count` keys for successive ranks from the segment's model
/// band. Errors with `EmptyInterval` when the band collapses (the
/// caller resamples the model).
pub fn gen_segment(
    state: &mut SegmentState,
    epsilon: u64,
    count: u64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<u64>, GenError> {
    let mut keys = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let y = state.next_rank;
        let (lo, hi) = band(&state.model, epsilon, y, state.prev);
        if lo > hi {
            return Err(GenError::EmptyInterval { rank: y, retries: 0 });
        }
        let key = rng.random_range(lo..=hi);
        state.emit(key);
        keys.push(key);
    }
    Ok(keys)
}

/// True iff appending `(key, rank)` would keep the hull ε-feasible.
fn still_feasible(hull: &HullFitter, key: u64, rank: u64, epsilon: u64) -> bool {
    let mut h = hull.clone();
    h.push(key, rank);
    h.feasible(epsilon)
}

/// Smallest key beyond `state.prev` whose (key, next_rank) point makes
/// the finished segment's hull infeasible at ε, found by doubling then
/// binary search on the key increment.
pub fn next_segment_start(state: &SegmentState, epsilon: u64) -> Result<u64, GenError> {
    let rank = state.next_rank;
    let prev = state.prev;
    // points sit at consecutive ranks, so a hull of ≤ 2ε+1 of them
    // spans ≤ 2ε ranks and a flat line fits no matter how far the next
    // key is pushed: no break exists
    if state.hull.len() as u64 <= 2 * epsilon + 1 {
        return Err(GenError::KeySpaceExhausted { rank });
    }
    let mut step: u64 = 1;
    loop {
        let candidate = prev.checked_add(step).filter(|&k| k <= MAX_KEY);
        let candidate = candidate.ok_or(GenError::KeySpaceExhausted { rank })?;
        if !still_feasible(&state.hull, candidate, rank, epsilon) {
            break;
        }
        step = step.checked_mul(2).ok_or(GenError::KeySpaceExhausted { rank })?;
    }
    // invariant: prev + lo feasible (or lo == 1), prev + hi infeasible
    let (mut lo, mut hi) = (step / 2, step);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if still_feasible(&state.hull, prev + mid, rank, epsilon) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(prev + hi)
}

fn split_evenly(total: u64, parts: u64) -> Vec<u64> {
    let base = total / parts;
    let rem = total % parts;
    (0..parts).map(|i| base + u64::from(i < rem)).collect()
}

const MODEL_RETRIES: u32 = 64;

struct Generator<'a> {
    spec: &'a GenSpec,
    rng: ChaCha12Rng,
    keys: Vec<u64>,
    /// hull of the current global segment (all its locals)
    global: SegmentState,
    local: SegmentState,
}

impl<'a> Generator<'a> {
    fn sample_global_slope(&mut self) -> f64 {
        let (lo, hi) = self.spec.slope_log2_range;
        2f64.powf(self.rng.random_range(lo..=hi))
    }

    fn sample_local_slope(&mut self, global_slope: f64) -> f64 {
        let j = self.spec.local_slope_jitter_log2;
        global_slope * 2f64.powf(self.rng.random_range(-j..=j))
    }

    /// One key for the current rank from the intersection of the local
    /// and global model bands. Resamples the local model on collapse.
    fn emit_sampled_key(&mut self) -> Result<(), GenError> {
        let y = self.local.next_rank;
        debug_assert_eq!(y, self.global.next_rank);
        let prev = self.local.prev;
        for retry in 0..=MODEL_RETRIES {
            let (llo, lhi) = band(&self.local.model, self.spec.epsilon_local, y, prev);
            let (glo, ghi) = band(&self.global.model, self.spec.epsilon_global, y, prev);
            let lo = llo.max(glo);
            let hi = lhi.min(ghi);
            if lo <= hi {
                let key = self.rng.random_range(lo..=hi);
                self.local.emit(key);
                self.global.emit(key);
                self.keys.push(key);
                return Ok(());
            }
            // collapse: re-anchor the local model at the previous
            // point; fall back to the exact global slope on later
            // retries
            let slope = if retry < MODEL_RETRIES / 2 {
                self.sample_local_slope(self.global.model.slope)
            } else {
                self.global.model.slope
            };
            self.local = SegmentState::anchored(prev, y.saturating_sub(1), slope);
            self.local.next_rank = y;
            if retry == MODEL_RETRIES / 2 + 2 {
                // prev may have drifted outside the global band; bring
                // the global model back through it
                self.global.model = LinearModel {
                    slope: self.global.model.slope,
                    intercept: y as f64 - self.global.model.slope * (prev + 1) as f64,
                };
            }
        }
        Err(GenError::EmptyInterval { rank: y, retries: MODEL_RETRIES })
    }

    /// Emits the forced first key of a new local (or global) segment.
    fn emit_forced_key(&mut self, key: u64) {
        self.local.emit(key);
        self.global.emit(key);
        self.keys.push(key);
    }
}

/// Produces exactly `spec.n_keys` strictly increasing keys arranged as
/// `target_global` global segments, each holding its share of the
/// `target_local` local segments, every segment with an equal share of
/// keys. Deterministic in the seed.
pub fn generate(spec: &GenSpec) -> Result<Dataset, GenError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let global_sizes = split_evenly(spec.n_keys, spec.target_global);
    let locals_per_global = split_evenly(spec.target_local, spec.target_global);

    let first_key = rng.random_range(1_000..1_000_000u64);
    let mut g = Generator {
        spec,
        rng,
        keys: Vec::with_capacity(spec.n_keys as usize),
        global: SegmentState::anchored(first_key, 0, 1.0),
        local: SegmentState::anchored(first_key, 0, 1.0),
    };

    let mut rank = 0u64;
    for (gi, (&gsize, &nlocals)) in global_sizes.iter().zip(&locals_per_global).enumerate() {
        // pick the global start key: the very first key is free, later
        // ones are forced past the previous global hull's feasibility
        let gslope = g.sample_global_slope();
        let start_key = if gi == 0 {
            first_key
        } else {
            // A hull spanning fewer than 2ε ranks admits a flat line
            // whatever the next key is, so a break cannot always be
            // forced (targets too dense for n); fall back to an
            // unforced boundary in that case.
            match next_segment_start(&g.global, spec.epsilon_global) {
                Ok(mut k) => {
                    // best effort: also break the previous local hull
                    // so the ε-local segmentation sees this boundary
                    while still_feasible(&g.local.hull, k, rank, spec.epsilon_local) {
                        match k.checked_add(k / 2 + 1).filter(|&k2| k2 <= MAX_KEY) {
                            Some(k2) => k = k2,
                            None => break,
                        }
                    }
                    k
                }
                // unforceable global break (segment spans too few
                // ranks for ε_global): still force the local boundary
                Err(GenError::KeySpaceExhausted { .. }) => {
                    match next_segment_start(&g.local, spec.epsilon_local) {
                        Ok(k) => k,
                        Err(_) => g.local.prev + 1,
                    }
                }
                Err(e) => return Err(e),
            }
        };
        g.global = SegmentState::anchored(start_key, rank, gslope);

        let local_sizes = split_evenly(gsize, nlocals.max(1));
        for (li, &lsize) in local_sizes.iter().enumerate() {
            if lsize == 0 {
                continue;
            }
            let start_key = if gi == 0 && li == 0 {
                first_key
            } else if li == 0 {
                start_key
            } else {
                match next_segment_start(&g.local, spec.epsilon_local) {
                    Ok(k) => k,
                    Err(GenError::KeySpaceExhausted { .. }) => g.local.prev + 1,
                    Err(e) => return Err(e),
                }
            };
            let lslope = g.sample_local_slope(g.global.model.slope);
            g.local = SegmentState::anchored(start_key, rank, lslope);
            g.emit_forced_key(start_key);
            rank += 1;
            for _ in 1..lsize {
                g.emit_sampled_key()?;
                rank += 1;
            }
        }
    }
    debug_assert_eq!(g.keys.len() as u64, spec.n_keys);
    Dataset::from_sorted(g.keys).map_err(|e| GenError::InvalidSpec(e.to_string()))
}
