//! Seed-deterministic workload construction. Half the dataset is bulk
//! loaded, the other half feeds inserts; per-thread streams use
//! disjoint write-key partitions so concurrent runs stay comparable
//! against a single-threaded oracle replay.

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::Zipf;

use crate::dataset::{Dataset, Key, Payload};
use crate::oracle::Op;

/// Payload convention used everywhere in the harness: a checksum of
/// the key, so torn reads are detectable.
pub fn payload_for(key: Key) -> Payload {
    key.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    ReadOnly,
    ReadIntensive,
    Balanced,
    WriteHeavy,
    WriteOnly,
    DeleteMix,
    RangeScan,
    DataShift,
    ZipfianMix,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 9] = [
        WorkloadKind::ReadOnly,
        WorkloadKind::ReadIntensive,
        WorkloadKind::Balanced,
        WorkloadKind::WriteHeavy,
        WorkloadKind::WriteOnly,
        WorkloadKind::DeleteMix,
        WorkloadKind::RangeScan,
        WorkloadKind::DataShift,
        WorkloadKind::ZipfianMix,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WorkloadKind::ReadOnly => "read_only",
            WorkloadKind::ReadIntensive => "read_intensive",
            WorkloadKind::Balanced => "balanced",
            WorkloadKind::WriteHeavy => "write_heavy",
            WorkloadKind::WriteOnly => "write_only",
            WorkloadKind::DeleteMix => "delete_mix",
            WorkloadKind::RangeScan => "range_scan",
            WorkloadKind::DataShift => "data_shift",
            WorkloadKind::ZipfianMix => "zipfian_mix",
        }
    }

    /// Fraction of read ops implied by the kind.
    pub fn default_read_fraction(&self) -> f64 {
        match self {
            WorkloadKind::ReadOnly => 1.0,
            WorkloadKind::ReadIntensive | WorkloadKind::ZipfianMix => 0.8,
            WorkloadKind::Balanced | WorkloadKind::DataShift => 0.5,
            WorkloadKind::WriteHeavy => 0.2,
            WorkloadKind::WriteOnly => 0.0,
            WorkloadKind::DeleteMix => 0.5,
            WorkloadKind::RangeScan => 1.0,
        }
    }
}

impl std::str::FromStr for WorkloadKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        WorkloadKind::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| anyhow::anyhow!("unknown workload kind: {s}"))
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub read_fraction: f64,
    pub scan_size: usize,
    pub zipf_theta: f64,
    pub bulk_fraction: f64,
    pub op_count: usize,
    pub thread_count: usize,
    pub latency_sample_rate: f64,
    pub repetitions: usize,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, op_count: usize, thread_count: usize) -> Self {
        WorkloadSpec {
            kind,
            read_fraction: kind.default_read_fraction(),
            scan_size: 100,
            zipf_theta: 0.99,
            bulk_fraction: 0.5,
            op_count,
            thread_count,
            latency_sample_rate: 0.01,
            repetitions: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("read_fraction", self.read_fraction),
            ("bulk_fraction", self.bulk_fraction),
            ("latency_sample_rate", self.latency_sample_rate),
        ] {
            if !(0.0..=1.0).contains(&f) {
                bail!("{name} out of range: {f}");
            }
        }
        if self.op_count == 0 {
            bail!("op_count must be positive");
        }
        if self.thread_count == 0 {
            bail!("thread_count must be positive");
        }
        Ok(())
    }
}

/// Bulk pairs plus one op stream per thread.
#[derive(Debug)]
pub struct BuiltWorkload {
    pub bulk: Vec<(Key, Payload)>,
    pub ops: Vec<Vec<Op>>,
}

impl BuiltWorkload {
    pub fn total_ops(&self) -> usize {
        self.ops.iter().map(Vec::len).sum()
    }
}

pub fn build_workload(spec: &WorkloadSpec, dataset: &Dataset, seed: u64) -> Result<BuiltWorkload> {
    build_workload_with_pool(spec, dataset, seed, None)
}

/// `insert_pool` overrides where insert keys come from (data-shift
/// experiments); by default the non-bulk half of the dataset is used.
pub fn build_workload_with_pool(
    spec: &WorkloadSpec,
    dataset: &Dataset,
    seed: u64,
    insert_pool: Option<&[Key]>,
) -> Result<BuiltWorkload> {
    spec.validate()?;
    let keys = dataset.keys();
    if keys.len() < 2 {
        bail!("dataset too small for workload construction");
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut shuffled: Vec<Key> = keys.to_vec();
    shuffled.shuffle(&mut rng);
    let n_bulk = ((keys.len() as f64 * spec.bulk_fraction).round() as usize)
        .clamp(1, keys.len());
    let mut bulk_keys: Vec<Key> = shuffled[..n_bulk].to_vec();
    bulk_keys.sort_unstable();
    let bulk: Vec<(Key, Payload)> = bulk_keys.iter().map(|&k| (k, payload_for(k))).collect();
    let default_pool = &shuffled[n_bulk..];
    let pool: &[Key] = insert_pool.unwrap_or(default_pool);
    if spec.read_fraction < 1.0 && pool.is_empty() && spec.kind != WorkloadKind::DeleteMix {
        bail!("workload writes but the insert pool is empty");
    }

    let t = spec.thread_count;
    let mut ops: Vec<Vec<Op>> = Vec::with_capacity(t);
    let (key_lo, key_hi) = (bulk_keys[0], *bulk_keys.last().unwrap());
    let zipf = Zipf::new(n_bulk as f64, spec.zipf_theta)
        .map_err(|e| anyhow::anyhow!("zipf: {e}"))?;
    for tid in 0..t {
        // per-thread op budget, spreading the remainder
        let ops_t = spec.op_count / t + usize::from(tid < spec.op_count % t);
        // disjoint write-key partition
        let pool_t: Vec<Key> = pool
            .iter()
            .skip(tid)
            .step_by(t)
            .copied()
            .collect();
        let bulk_part_t: Vec<Key> = bulk_keys.iter().skip(tid).step_by(t).copied().collect();
        let mut trng = ChaCha12Rng::seed_from_u64(seed ^ (0x9e37 + tid as u64 * 0x1_0001));
        let writes_t = match spec.kind {
            WorkloadKind::DeleteMix => {
                // delete until (scaled) half the loaded keys are gone
                ((ops_t as f64 * (1.0 - spec.read_fraction)).round() as usize)
                    .min(bulk_part_t.len())
            }
            _ => (ops_t as f64 * (1.0 - spec.read_fraction)).round() as usize,
        };
        let reads_t = ops_t - writes_t;
        if writes_t > 0 && spec.kind != WorkloadKind::DeleteMix && pool_t.is_empty() {
            bail!("insert pool too small for {t} threads");
        }
        let mut kinds: Vec<bool> = std::iter::repeat_n(false, reads_t)
            .chain(std::iter::repeat_n(true, writes_t))
            .collect();
        kinds.shuffle(&mut trng);
        let mut stream = Vec::with_capacity(ops_t);
        let mut next_write = 0usize;
        for is_write in kinds {
            let op = if is_write {
                match spec.kind {
                    WorkloadKind::DeleteMix => {
                        let k = bulk_part_t[next_write];
                        next_write += 1;
                        Op::Remove(k)
                    }
                    _ => {
                        let k = pool_t[next_write % pool_t.len()];
                        next_write += 1;
                        Op::Insert(k, payload_for(k))
                    }
                }
            } else {
                match spec.kind {
                    WorkloadKind::RangeScan => {
                        let start = trng.random_range(key_lo..=key_hi);
                        Op::RangeScan(start, spec.scan_size)
                    }
                    WorkloadKind::ZipfianMix => {
                        let rank = trng.sample(zipf) as usize;
                        Op::Lookup(bulk_keys[(rank - 1).min(n_bulk - 1)])
                    }
                    _ => Op::Lookup(bulk_keys[trng.random_range(0..n_bulk)]),
                }
            };
            stream.push(op);
        }
        ops.push(stream);
    }
    Ok(BuiltWorkload { bulk, ops })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(n: u64) -> Dataset {
        Dataset::from_sorted((0..n).map(|i| i * 7 + 1).collect()).unwrap()
    }

    fn count_kinds(w: &BuiltWorkload) -> (usize, usize, usize, usize) {
        let (mut l, mut i, mut r, mut s) = (0, 0, 0, 0);
        for stream in &w.ops {
            for op in stream {
                match op {
                    Op::Lookup(_) => l += 1,
                    Op::Insert(..) => i += 1,
                    Op::Remove(_) => r += 1,
                    Op::RangeScan(..) => s += 1,
                }
            }
        }
        (l, i, r, s)
    }

    #[test]
    fn read_intensive_is_80_20() {
        let spec = WorkloadSpec::new(WorkloadKind::ReadIntensive, 10_000, 1);
        let w = build_workload(&spec, &ds(40_000), 1).unwrap();
        let (l, i, r, s) = count_kinds(&w);
        assert_eq!((l, i, r, s), (8000, 2000, 0, 0));
    }

    #[test]
    fn ratios_exact_up_to_rounding_across_threads() {
        let spec = WorkloadSpec::new(WorkloadKind::WriteHeavy, 9_999, 4);
        let w = build_workload(&spec, &ds(40_000), 7).unwrap();
        let (l, i, _, _) = count_kinds(&w);
        assert_eq!(l + i, 9_999);
        assert!((i as f64 - 0.8 * 9_999.0).abs() <= 4.0, "inserts {i}");
    }

    #[test]
    fn read_only_has_no_mutations() {
        let spec = WorkloadSpec::new(WorkloadKind::ReadOnly, 5_000, 4);
        let w = build_workload(&spec, &ds(10_000), 3).unwrap();
        let (_, i, r, _) = count_kinds(&w);
        assert_eq!((i, r), (0, 0));
    }

    #[test]
    fn same_seed_identical_stream() {
        let spec = WorkloadSpec::new(WorkloadKind::Balanced, 20_000, 4);
        let a = build_workload(&spec, &ds(50_000), 99).unwrap();
        let b = build_workload(&spec, &ds(50_000), 99).unwrap();
        assert_eq!(a.bulk, b.bulk);
        assert_eq!(a.ops, b.ops);
        let c = build_workload(&spec, &ds(50_000), 100).unwrap();
        assert_ne!(a.ops, c.ops);
    }

    #[test]
    fn write_keys_disjoint_across_threads() {
        let spec = WorkloadSpec::new(WorkloadKind::WriteOnly, 10_000, 8);
        let w = build_workload(&spec, &ds(40_000), 5).unwrap();
        let mut seen = std::collections::HashSet::new();
        for (t, stream) in w.ops.iter().enumerate() {
            let mut mine = std::collections::HashSet::new();
            for op in stream {
                if let Op::Insert(k, _) = op {
                    mine.insert(*k);
                }
            }
            for k in &mine {
                assert!(seen.insert(*k), "key {k} written by two threads (t={t})");
            }
        }
    }

    #[test]
    fn delete_mix_removes_distinct_loaded_keys() {
        let spec = WorkloadSpec::new(WorkloadKind::DeleteMix, 10_000, 2);
        let w = build_workload(&spec, &ds(30_000), 5).unwrap();
        let bulk: std::collections::HashSet<Key> = w.bulk.iter().map(|&(k, _)| k).collect();
        let mut removed = std::collections::HashSet::new();
        for stream in &w.ops {
            for op in stream {
                if let Op::Remove(k) = op {
                    assert!(bulk.contains(k));
                    assert!(removed.insert(*k), "key {k} removed twice");
                }
            }
        }
        assert!(!removed.is_empty());
    }

    #[test]
    fn zipf_draws_skew_toward_few_keys() {
        let spec = WorkloadSpec::new(WorkloadKind::ZipfianMix, 50_000, 1);
        let w = build_workload(&spec, &ds(50_000), 11).unwrap();
        let mut freq = std::collections::HashMap::new();
        let mut lookups = 0u64;
        for op in &w.ops[0] {
            if let Op::Lookup(k) = op {
                *freq.entry(*k).or_insert(0u64) += 1;
                lookups += 1;
            }
        }
        let mut counts: Vec<u64> = freq.values().copied().collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let top100: u64 = counts.iter().take(100).sum();
        assert!(
            top100 as f64 > 0.3 * lookups as f64,
            "zipf not skewed: top100={top100} of {lookups}"
        );
    }
}
