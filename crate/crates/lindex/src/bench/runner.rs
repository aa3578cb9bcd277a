//! Timed workload execution: per-repetition wall-clock throughput,
//! sampled operation latencies (nearest-rank percentiles), counter
//! deltas, and an end-of-run oracle spot check.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::bench::workload::{
    build_workload, build_workload_with_pool, payload_for, BuiltWorkload, WorkloadKind,
    WorkloadSpec,
};
use crate::btree::BplusTree;
use crate::chain::{ChainConfig, ChainIndex};
use crate::contract::{CountersSnapshot, OrderedIndex};
use crate::dataset::{Dataset, Key};
use crate::gapped::{GappedConfig, GappedIndex};
use crate::oracle::{apply_to_index, Op, Oracle};

pub const INDEX_NAMES: [&str; 3] = ["gapped", "chain", "btree"];

/// Instantiates a named index over bulk pairs.
pub fn build_index(name: &str, bulk: &[(Key, u64)]) -> Result<Box<dyn OrderedIndex>> {
    match name {
        "gapped" => Ok(Box::new(
            GappedIndex::bulk_load(bulk, GappedConfig::default()).map_err(anyhow::Error::msg)?,
        )),
        "chain" => Ok(Box::new(
            ChainIndex::bulk_load(bulk, ChainConfig::default()).map_err(anyhow::Error::msg)?,
        )),
        "btree" => Ok(Box::new(BplusTree::bulk_load(bulk))),
        other => bail!("unknown index: {other} (expected gapped|chain|btree)"),
    }
}

#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct LatencyStats {
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub p999_ns: u64,
    pub variance_ns2: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BenchReport {
    pub index: String,
    pub workload: String,
    pub threads: usize,
    pub op_count: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub throughput_ops_s: f64,
    pub per_rep_throughput: Vec<f64>,
    pub latency: LatencyStats,
    pub counters: CountersSnapshot,
    pub memory_bytes_end: usize,
}

/// Nearest-rank percentile over a sorted sample; q in (0, 1].
pub fn percentile_nearest_rank(sorted: &[u64], q: f64) -> u64 {
    assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn latency_stats(mut samples: Vec<u64>) -> LatencyStats {
    if samples.is_empty() {
        return LatencyStats::default();
    }
    samples.sort_unstable();
    let n = samples.len() as f64;
    let mean = samples.iter().map(|&s| s as f64).sum::<f64>() / n;
    let variance = samples
        .iter()
        .map(|&s| (s as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    LatencyStats {
        p50_ns: percentile_nearest_rank(&samples, 0.50),
        p99_ns: percentile_nearest_rank(&samples, 0.99),
        p999_ns: percentile_nearest_rank(&samples, 0.999),
        variance_ns2: variance,
        samples: samples.len(),
    }
}

/// One timed repetition. Returns (elapsed seconds, latency samples).
fn run_once(
    index: &dyn OrderedIndex,
    wl: &BuiltWorkload,
    sample_every: usize,
) -> (f64, Vec<u64>) {
    let barrier = std::sync::Barrier::new(wl.ops.len() + 1);
    let mut all_samples: Vec<u64> = Vec::new();
    let mut elapsed = 0.0;
    std::thread::scope(|scope| {
        let handles: Vec<_> = wl
            .ops
            .iter()
            .map(|stream| {
                let barrier = &barrier;
                scope.spawn(move || {
                    let mut samples = Vec::with_capacity(stream.len() / sample_every + 1);
                    barrier.wait();
                    for (i, &op) in stream.iter().enumerate() {
                        if i % sample_every == 0 {
                            let t = Instant::now();
                            std::hint::black_box(apply_to_index(index, op));
                            samples.push(t.elapsed().as_nanos() as u64);
                        } else {
                            std::hint::black_box(apply_to_index(index, op));
                        }
                    }
                    samples
                })
            })
            .collect();
        barrier.wait();
        let t0 = Instant::now();
        for h in handles {
            all_samples.extend(h.join().expect("worker panicked"));
        }
        elapsed = t0.elapsed().as_secs_f64();
    });
    (elapsed, all_samples)
}

/// End-of-run spot check: replay the streams into the oracle and
/// compare a sample of present/absent keys.
fn spot_verify(index: &dyn OrderedIndex, wl: &BuiltWorkload, rate: f64) -> Result<()> {
    let mut oracle = Oracle::from_pairs(&wl.bulk);
    // per-thread write keys are disjoint, so replay order across
    // threads does not change the final key set
    for stream in &wl.ops {
        for &op in stream {
            match op {
                Op::Insert(..) | Op::Remove(_) => {
                    oracle.apply(op);
                }
                _ => {}
            }
        }
    }
    let every = (1.0 / rate.max(1e-9)) as usize;
    let keys: Vec<Key> = oracle.keys().collect();
    for (i, k) in keys.into_iter().enumerate() {
        if i % every.max(1) != 0 {
            continue;
        }
        let got = index.lookup(k);
        let want = match oracle.apply(Op::Lookup(k)) {
            crate::oracle::OpResult::Found(v) => Some(v),
            _ => None,
        };
        if got != want {
            bail!("spot check diverged at key {k}: index {got:?}, oracle {want:?}");
        }
    }
    Ok(())
}

/// Builds the workload, then runs `repetitions` timed passes over
/// fresh index instances and aggregates.
pub fn run(index_name: &str, spec: &WorkloadSpec, dataset: &Dataset, seed: u64) -> Result<BenchReport> {
    let wl = build_workload(spec, dataset, seed)?;
    run_built(index_name, spec, &wl, seed)
}

pub fn run_built(
    index_name: &str,
    spec: &WorkloadSpec,
    wl: &BuiltWorkload,
    seed: u64,
) -> Result<BenchReport> {
    let sample_every = (1.0 / spec.latency_sample_rate.max(1e-9)).round() as usize;
    let sample_every = sample_every.max(1);
    let total_ops = wl.total_ops();
    let mut per_rep = Vec::with_capacity(spec.repetitions);
    let mut samples = Vec::new();
    let mut counters = CountersSnapshot::default();
    let mut memory = 0usize;
    for rep in 0..spec.repetitions.max(1) {
        let index = build_index(index_name, &wl.bulk)?;
        let base = index.op_stats();
        let (secs, s) = run_once(index.as_ref(), wl, sample_every);
        per_rep.push(total_ops as f64 / secs.max(1e-12));
        samples.extend(s);
        if rep + 1 == spec.repetitions.max(1) {
            counters = index.op_stats().delta(&base);
            memory = index.size_in_bytes();
            spot_verify(index.as_ref(), wl, spec.latency_sample_rate)
                .with_context(|| format!("index {index_name} failed verification"))?;
        }
    }
    let throughput = per_rep.iter().sum::<f64>() / per_rep.len() as f64;
    Ok(BenchReport {
        index: index_name.to_string(),
        workload: spec.kind.name().to_string(),
        threads: spec.thread_count,
        op_count: spec.op_count,
        repetitions: spec.repetitions,
        seed,
        throughput_ops_s: throughput,
        per_rep_throughput: per_rep,
        latency: latency_stats(samples),
        counters,
        memory_bytes_end: memory,
    })
}

/// Integer affine min-max map of `keys` into [lo, hi]; post-scale
/// duplicates are dropped.
pub fn scale_keys_into_domain(keys: &[Key], lo: Key, hi: Key) -> Result<Vec<Key>> {
    let (&ilo, &ihi) = match (keys.first(), keys.last()) {
        (Some(a), Some(b)) if a < b => (a, b),
        _ => bail!("degenerate source domain"),
    };
    if lo >= hi {
        bail!("degenerate target domain");
    }
    let span_t = (hi - lo) as u128;
    let span_s = (ihi - ilo) as u128;
    let mut out: Vec<Key> = keys
        .iter()
        .map(|&k| lo + ((k - ilo) as u128 * span_t / span_s) as Key)
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Bulk loads from `bulk_ds`, then compares a balanced workload whose
/// inserts come from `bulk_ds`'s own held-out half (baseline) against
/// one whose inserts are `insert_ds` scaled into the same key domain.
/// Returns (baseline, shifted, relative throughput change).
pub fn run_data_shift(
    index_name: &str,
    spec: &WorkloadSpec,
    bulk_ds: &Dataset,
    insert_ds: &Dataset,
    seed: u64,
) -> Result<(BenchReport, BenchReport, f64)> {
    let mut spec = spec.clone();
    spec.kind = WorkloadKind::DataShift;
    spec.read_fraction = 0.5;
    let baseline = {
        let wl = build_workload(&spec, bulk_ds, seed)?;
        run_built(index_name, &spec, &wl, seed)?
    };
    let keys = bulk_ds.keys();
    let (lo, hi) = (keys[0], *keys.last().unwrap());
    let scaled = scale_keys_into_domain(insert_ds.keys(), lo, hi)?;
    debug_assert!(scaled.iter().all(|&k| (lo..=hi).contains(&k)));
    // drop keys that collide with the bulk-loaded set so shifted
    // inserts do real work
    let bulk_set: std::collections::HashSet<Key> = keys.iter().copied().collect();
    let pool: Vec<Key> = scaled.into_iter().filter(|k| !bulk_set.contains(k)).collect();
    let shifted = {
        let wl = build_workload_with_pool(&spec, bulk_ds, seed, Some(&pool))?;
        run_built(index_name, &spec, &wl, seed)?
    };
    let change = (shifted.throughput_ops_s - baseline.throughput_ops_s)
        / baseline.throughput_ops_s.max(1e-12);
    Ok((baseline, shifted, change))
}

/// Random-start scans at each size; reports (size, keys/second).
/// Every result is checked sorted; a sample is checked against the
/// oracle.
pub fn run_range_sweep(
    index_name: &str,
    dataset: &Dataset,
    scans_per_size: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    const SIZES: [usize; 4] = [10, 100, 1000, 10_000];
    let bulk: Vec<(Key, u64)> = dataset.keys().iter().map(|&k| (k, payload_for(k))).collect();
    let index = build_index(index_name, &bulk)?;
    let oracle = Oracle::from_pairs(&bulk);
    let keys = dataset.keys();
    let (lo, hi) = (keys[0], *keys.last().unwrap());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(SIZES.len());
    let mut oracle = oracle;
    for size in SIZES {
        let starts: Vec<Key> = (0..scans_per_size).map(|_| rng.random_range(lo..=hi)).collect();
        let t0 = Instant::now();
        let mut keys_read = 0u64;
        for (i, &start) in starts.iter().enumerate() {
            let got = index.range_scan(start, size);
            keys_read += got.len() as u64;
            if !got.windows(2).all(|w| w[0].0 < w[1].0) {
                bail!("unsorted scan at start {start}");
            }
            if i % 100 == 0 {
                let want = oracle.apply(Op::RangeScan(start, size));
                if crate::oracle::OpResult::Scan(got) != want {
                    bail!("scan diverged from oracle at start {start} size {size}");
                }
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        out.push((size, keys_read as f64 / secs.max(1e-12)));
    }
    Ok(out)
}
