//! Acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line (plus per-case detail on failure) before asserting.
//!
//! Criteria that compare against oracles are exact; directional
//! performance criteria use the pinned tolerances stated inline.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use lindex::bench::{
    build_workload, emit_heatmap, payload_for, run as bench_run, run_range_sweep, HeatmapPlan,
    WorkloadKind, WorkloadSpec, HEATMAP_HEADER,
};
use lindex::chain::{ChainConfig, ChainIndex};
use lindex::contract::OrderedIndex;
use lindex::datagen::{generate, GenSpec};
use lindex::dataset::{Dataset, Key, Payload};
use lindex::gapped::{GappedConfig, GappedIndex};
use lindex::oracle::{apply_to_index, Op, OpResult, Oracle};
use lindex::pla::{hardness_profile, optimal_pla, segment_feasible, HullFitter};

const MAX_KEY: u64 = (1 << 52) - 1;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    if detail.is_empty() {
        println!("criterion {n} [{name}]: {verdict}");
    } else {
        println!("criterion {n} [{name}]: {verdict} — {detail}");
    }
    assert!(pass, "criterion {n} [{name}] failed: {detail}");
}

/// Random sorted dataset mixing easy and hard key patterns. Sizes are
/// skewed small so the O(n²) DP oracle stays tractable.
fn random_dataset(rng: &mut ChaCha12Rng) -> Dataset {
    let r: f64 = rng.random();
    let n = 20 + (r * r * 1980.0) as usize;
    let pattern = rng.random_range(0..4u32);
    let mut keys: Vec<Key> = Vec::with_capacity(n);
    match pattern {
        0 => {
            // Uniform: near-linear CDF, long PLA segments.
            let span = rng.random_range(1u64 << 20..1 << 44);
            for _ in 0..n {
                keys.push(rng.random_range(0..span));
            }
        }
        1 => {
            // Piecewise: a few runs with very different strides.
            let mut k = rng.random_range(0..1u64 << 30);
            let runs = rng.random_range(2..12usize);
            for _ in 0..runs {
                let stride = 1u64 << rng.random_range(0..24u32);
                let jitter = (stride / 2).max(1);
                for _ in 0..n / runs + 1 {
                    k = k.saturating_add(stride + rng.random_range(0..jitter));
                    keys.push(k & MAX_KEY);
                }
            }
            keys.truncate(n);
        }
        2 => {
            // Clusters: tight groups separated by huge gaps.
            let clusters = rng.random_range(2..20usize);
            let mut base = rng.random_range(0..1u64 << 40);
            for _ in 0..clusters {
                for _ in 0..n / clusters + 1 {
                    keys.push((base + rng.random_range(0..512)) & MAX_KEY);
                }
                base = base.saturating_add(rng.random_range(1 << 20..1 << 36)) & MAX_KEY;
            }
            keys.truncate(n);
        }
        _ => {
            // Heavy-tailed gaps.
            let mut k = 0u64;
            for _ in 0..n {
                let shift = rng.random_range(0..36u32);
                k = k.saturating_add(1 + rng.random_range(0..1u64 << shift));
                keys.push(k & MAX_KEY);
            }
        }
    }
    Dataset::from_keys(keys).expect("non-empty key set")
}

/// O(n²) dynamic program over exact segment feasibility: dp[j] is the
/// minimum number of ε-feasible segments covering the first j points.
/// Feasibility is monotone in segment length, so each start scans
/// forward until the hull breaks.
fn dp_optimal_segments(points: &[(u64, u64)], epsilon: u64) -> usize {
    let n = points.len();
    let mut dp = vec![usize::MAX; n + 1];
    dp[0] = 0;
    for i in 0..n {
        if dp[i] == usize::MAX {
            continue;
        }
        let mut hull = HullFitter::new();
        for (j, &(k, r)) in points.iter().enumerate().skip(i) {
            hull.push(k, r);
            if !hull.feasible(epsilon) {
                break;
            }
            dp[j + 1] = dp[j + 1].min(dp[i] + 1);
        }
    }
    dp[n]
}

/// Independent feasibility oracle: the minimum worst-case vertical
/// deviation of any line is convex in the slope, so ternary search
/// over the adjacent-slope bracket finds it to high precision.
fn chebyshev_deviation(points: &[(u64, u64)]) -> f64 {
    let dev = |s: f64| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(x, y) in points {
            let r = y as f64 - s * x as f64;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (hi - lo) / 2.0
    };
    let mut a = f64::INFINITY;
    let mut b = f64::NEG_INFINITY;
    for w in points.windows(2) {
        let s = (w[1].1 - w[0].1) as f64 / (w[1].0 - w[0].0) as f64;
        a = a.min(s);
        b = b.max(s);
    }
    if !a.is_finite() {
        return 0.0;
    }
    for _ in 0..300 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if dev(m1) < dev(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    dev((a + b) / 2.0)
}

#[test]
fn criterion_01_pla_optimality() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xACC1);
    let mut mismatches = Vec::new();
    let mut checked = 0usize;
    for d in 0..200 {
        let ds = random_dataset(&mut rng);
        let points: Vec<(u64, u64)> = ds
            .keys()
            .iter()
            .enumerate()
            .map(|(r, &k)| (k, r as u64))
            .collect();
        for &eps in &[0u64, 4, 16, 32] {
            let greedy = optimal_pla(&ds, eps).segments.len();
            let dp = dp_optimal_segments(&points, eps);
            checked += 1;
            if greedy != dp {
                mismatches.push(format!(
                    "dataset {d} (n={}) eps={eps}: greedy={greedy} dp={dp}",
                    ds.len()
                ));
            }
        }
    }

    // Supplementary oracle for the feasibility primitive itself: exact
    // Chebyshev deviation on small point sets, skipping knife-edge
    // cases within 1e-3 of the threshold.
    for _ in 0..100 {
        let n = rng.random_range(3..200usize);
        let mut keys: Vec<u64> = (0..n).map(|_| rng.random_range(0..1u64 << 30)).collect();
        keys.sort_unstable();
        keys.dedup();
        let points: Vec<(u64, u64)> = keys
            .iter()
            .enumerate()
            .map(|(r, &k)| (k, r as u64))
            .collect();
        let exact = chebyshev_deviation(&points);
        for &eps in &[0u64, 1, 4, 16] {
            if (exact - eps as f64).abs() <= 1e-3 {
                continue;
            }
            let hull = segment_feasible(&points, eps);
            let oracle = exact <= eps as f64;
            if hull != oracle {
                mismatches.push(format!(
                    "feasibility n={} eps={eps}: hull={hull} chebyshev dev={exact:.6}",
                    points.len()
                ));
            }
        }
    }

    for m in &mismatches {
        println!("  {m}");
    }
    report(
        1,
        "pla-optimality",
        mismatches.is_empty(),
        &format!("{} checks, {} mismatches", checked, mismatches.len()),
    );
}

#[test]
fn criterion_02_hardness_monotonicity() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xACC2);
    let mut violations = Vec::new();
    let mut datasets: Vec<Dataset> = (0..200).map(|_| random_dataset(&mut rng)).collect();
    for &(g, l) in &[(2u64, 8u64), (8, 64), (8, 256)] {
        datasets.push(generate(&GenSpec::new(200_000, g, l, 0xACC2)).expect("generate"));
    }
    for (i, ds) in datasets.iter().enumerate() {
        let p = hardness_profile(ds);
        if p.local_h < p.global_h {
            violations.push(format!(
                "dataset {i} (n={}): H(32)={} < H(4096)={}",
                ds.len(),
                p.local_h,
                p.global_h
            ));
        }
    }
    for v in &violations {
        println!("  {v}");
    }
    report(
        2,
        "hardness-monotonicity",
        violations.is_empty(),
        &format!("{} datasets, {} violations", datasets.len(), violations.len()),
    );
}

// Note on the global=32 row: a convex hull spanning ≤ 2ε consecutive
// ranks always fits within ±ε, so every optimal segmentation can keep
// merging until each segment covers > 2ε ranks. At n = 200k and
// ε = 4096 that caps the reachable global hardness near n/(2ε) ≈ 24 in
// theory and ~10 in practice once the local-hardness constraint pins
// most of the key layout; the (32, 8) cell is contradictory outright
// because H(32) ≥ H(4096) for every dataset. Those cells fail here by
// construction, not by generator defect.
#[test]
fn criterion_03_generator_fidelity() {
    let mut failures = Vec::new();
    let within = |measured: u64, target: u64| {
        measured + 1 >= target && measured as f64 <= 1.25 * target as f64
    };
    for &g in &[2u64, 8, 32] {
        for &l in &[8u64, 64, 256] {
            let spec = GenSpec::new(200_000, g, l, 0xACC3);
            let ds = match generate(&spec) {
                Ok(ds) => ds,
                Err(e) => {
                    failures.push(format!("cell ({g},{l}): generation failed: {e}"));
                    continue;
                }
            };
            let again = generate(&spec).expect("second run of a spec that succeeded once");
            if ds.keys() != again.keys() {
                failures.push(format!("cell ({g},{l}): not seed-deterministic"));
                continue;
            }
            let p = hardness_profile(&ds);
            if !within(p.global_h, g) || !within(p.local_h, l) {
                failures.push(format!(
                    "cell ({g},{l}): measured global_h={} local_h={} outside \
                     [target-1, 1.25*target]",
                    p.global_h, p.local_h
                ));
            }
        }
    }
    for f in &failures {
        println!("  {f}");
    }
    report(
        3,
        "generator-fidelity",
        failures.is_empty(),
        &format!("9 cells, {} out of tolerance", failures.len()),
    );
}

/// Differential run at a given thread count. Keys are partitioned by
/// `key % threads`; each thread mutates only its own partition and
/// checks every result against a thread-local oracle. Range scans are
/// compared exactly when single-threaded; under concurrency only the
/// caller's partition is stable, so scans are checked for sortedness
/// and for correct membership/payload of own-partition keys.
fn differential_run(index_name: &str, threads: usize, total_ops: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut universe: Vec<Key> = (0..400_000).map(|_| rng.random::<u64>() & MAX_KEY).collect();
    universe.sort_unstable();
    universe.dedup();

    let bulk: Vec<(Key, Payload)> = universe
        .iter()
        .enumerate()
        .filter(|(r, _)| r % 2 == 0)
        .map(|(_, &k)| (k, payload_for(k)))
        .collect();
    let index = lindex::bench::build_index(index_name, &bulk).expect("build index");

    let partitions: Vec<Vec<Key>> = (0..threads)
        .map(|t| {
            universe
                .iter()
                .copied()
                .filter(|k| (*k as usize) % threads == t)
                .collect()
        })
        .collect();

    let ops_per_thread = total_ops / threads;
    let index_ref: &dyn OrderedIndex = &*index;
    let bulk = &bulk;
    let results: Vec<Vec<String>> = std::thread::scope(|s| {
        let handles: Vec<_> = partitions
            .iter()
            .enumerate()
            .map(|(tid, own)| {
                s.spawn(move || {
                    let mut errs = Vec::new();
                    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ (tid as u64 + 1) << 17);
                    let mut oracle = Oracle::from_pairs(
                        &bulk
                            .iter()
                            .copied()
                            .filter(|(k, _)| (*k as usize) % threads == tid)
                            .collect::<Vec<_>>(),
                    );
                    for opno in 0..ops_per_thread {
                        if !errs.is_empty() && errs.len() > 5 {
                            break;
                        }
                        let key = own[rng.random_range(0..own.len())];
                        let roll: f64 = rng.random();
                        let op = if roll < 0.40 {
                            Op::Lookup(key)
                        } else if roll < 0.70 {
                            Op::Insert(key, rng.random::<u64>())
                        } else if roll < 0.90 {
                            Op::Remove(key)
                        } else {
                            Op::RangeScan(key.saturating_sub(rng.random_range(0..1 << 20)), 64)
                        };
                        match op {
                            Op::RangeScan(start, count) if threads > 1 => {
                                let got = index_ref.range_scan(start, count);
                                if !got.windows(2).all(|w| w[0].0 < w[1].0) {
                                    errs.push(format!("t{tid} op{opno}: scan not sorted"));
                                }
                                for &(k, v) in &got {
                                    if k < start {
                                        errs.push(format!("t{tid} op{opno}: scan key below start"));
                                    }
                                    if (k as usize) % threads == tid {
                                        match oracle.apply(Op::Lookup(k)) {
                                            OpResult::Found(want) if want == v => {}
                                            other => errs.push(format!(
                                                "t{tid} op{opno}: scan returned ({k},{v}) but \
                                                 oracle says {other:?}"
                                            )),
                                        }
                                    }
                                }
                            }
                            op => {
                                let got = apply_to_index(index_ref, op);
                                let want = oracle.apply(op);
                                if got != want {
                                    errs.push(format!(
                                        "t{tid} op{opno} {op:?}: index={got:?} oracle={want:?}"
                                    ));
                                }
                            }
                        }
                    }
                    (oracle, errs)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                let (mut oracle, mut errs) = h.join().expect("worker");
                // Post-run: the merged view is checked below; stash the
                // oracle pairs through the error vec channel-free path.
                for k in oracle.keys().collect::<Vec<_>>() {
                    let want = oracle.apply(Op::Lookup(k));
                    let got = apply_to_index(index_ref, Op::Lookup(k));
                    if got != want {
                        errs.push(format!("post-run lookup {k}: index={got:?} oracle={want:?}"));
                        if errs.len() > 10 {
                            break;
                        }
                    }
                }
                errs
            })
            .collect()
    });
    results.into_iter().flatten().collect()
}

#[test]
fn criterion_04_functional_correctness() {
    let mut failures = Vec::new();
    for index_name in ["gapped", "chain", "btree"] {
        for &threads in &[1usize, 4, 8] {
            let errs = differential_run(index_name, threads, 1_000_000, 0xACC4);
            if !errs.is_empty() {
                failures.push(format!(
                    "{index_name} @ {threads} threads: {} divergences, first: {}",
                    errs.len(),
                    errs[0]
                ));
            }
        }
    }
    for f in &failures {
        println!("  {f}");
    }
    report(
        4,
        "functional-correctness",
        failures.is_empty(),
        &format!("3 indexes x threads {{1,4,8}} x 1M ops, {} divergent runs", failures.len()),
    );
}

/// Splits a dataset into a sorted bulk half (even ranks) and a
/// shuffled insert half (odd ranks).
fn split_write_workload(ds: &Dataset, seed: u64) -> (Vec<(Key, Payload)>, Vec<(Key, Payload)>) {
    let bulk: Vec<(Key, Payload)> = ds
        .keys()
        .iter()
        .enumerate()
        .filter(|(r, _)| r % 2 == 0)
        .map(|(_, &k)| (k, payload_for(k)))
        .collect();
    let mut inserts: Vec<(Key, Payload)> = ds
        .keys()
        .iter()
        .enumerate()
        .filter(|(r, _)| r % 2 == 1)
        .map(|(_, &k)| (k, payload_for(k)))
        .collect();
    inserts.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
    (bulk, inserts)
}

fn gapped_mean_shifts(ds: &Dataset, seed: u64) -> f64 {
    let (bulk, inserts) = split_write_workload(ds, seed);
    let idx = GappedIndex::bulk_load(&bulk, GappedConfig::default()).expect("bulk");
    let before = idx.op_stats();
    for &(k, v) in &inserts {
        idx.insert(k, v);
    }
    let d = idx.op_stats().delta(&before);
    d.keys_shifted as f64 / d.inserts as f64
}

#[test]
fn criterion_05_write_amplification() {
    let easy = generate(&GenSpec::new(1_000_000, 2, 8, 0xACC5)).expect("easy dataset");
    let hard = generate(&GenSpec::new(1_000_000, 2, 256, 0xACC5)).expect("hard dataset");
    let shifts_easy = gapped_mean_shifts(&easy, 0xACC5);
    let shifts_hard = gapped_mean_shifts(&hard, 0xACC5);
    let gapped_ok = shifts_hard >= 2.0 * shifts_easy;

    // Chain per-insert allocation, with subtree rebuilds disabled so
    // nodes_created counts only collision chaining.
    let (bulk, inserts) = split_write_workload(&hard, 0xACC5);
    let idx = ChainIndex::bulk_load(&bulk, ChainConfig::without_rebuilds()).expect("bulk");
    let start = idx.op_stats().nodes_created;
    let mut prev = start;
    let mut over = 0usize;
    for &(k, v) in &inserts {
        idx.insert(k, v);
        let now = idx.op_stats().nodes_created;
        if now - prev > 1 {
            over += 1;
        }
        prev = now;
    }
    let mean_created = (prev - start) as f64 / inserts.len() as f64;
    let chain_ok = over == 0 && mean_created > 0.0 && mean_created <= 1.0;

    report(
        5,
        "write-amplification",
        gapped_ok && chain_ok,
        &format!(
            "gapped keys_shifted/insert easy={shifts_easy:.3} hard={shifts_hard:.3} \
             (need hard >= 2x easy); chain nodes/insert mean={mean_created:.4}, \
             {over} inserts created >1 node"
        ),
    );
}

fn lookup_throughput(idx: &dyn OrderedIndex, keys: &[Key]) -> f64 {
    let mut best = 0f64;
    for _ in 0..2 {
        let t0 = Instant::now();
        for &k in keys {
            std::hint::black_box(idx.lookup(k));
        }
        best = best.max(keys.len() as f64 / t0.elapsed().as_secs_f64());
    }
    best
}

#[test]
fn criterion_06_deletion_lightweightness() {
    let ds = generate(&GenSpec::new(1_000_000, 8, 64, 0xACC6)).expect("dataset");
    let pairs: Vec<(Key, Payload)> = ds.keys().iter().map(|&k| (k, payload_for(k))).collect();
    let idx = GappedIndex::bulk_load(&pairs, GappedConfig::default()).expect("bulk");

    let mut survivors: Vec<Key> = ds.keys().iter().copied().step_by(2).collect();
    survivors.shuffle(&mut ChaCha12Rng::seed_from_u64(0xACC6));
    let pre = lookup_throughput(&idx, &survivors);

    let retrains_before = idx.op_stats().retrain_count;
    for &k in ds.keys().iter().skip(1).step_by(2) {
        assert!(idx.remove(k), "delete of present key must succeed");
    }
    let retrain_delta = idx.op_stats().retrain_count - retrains_before;

    let post = lookup_throughput(&idx, &survivors);
    let ratio = post / pre;
    report(
        6,
        "deletion-lightweightness",
        retrain_delta == 0 && ratio >= 0.9,
        &format!(
            "retrain_count delta={retrain_delta} (need 0); post/pre lookup \
             throughput={ratio:.3} (need >= 0.9)"
        ),
    );
}

#[test]
fn criterion_07_memory_ordering() {
    let ds = generate(&GenSpec::new(1_000_000, 8, 64, 0xACC7)).expect("dataset");
    let (bulk, inserts) = split_write_workload(&ds, 0xACC7);
    let write_only_size = |idx: &dyn OrderedIndex| {
        for &(k, v) in &inserts {
            idx.insert(k, v);
        }
        idx.size_in_bytes()
    };

    let chain = ChainIndex::bulk_load(&bulk, ChainConfig::default()).expect("bulk");
    let chain_size = write_only_size(&chain);
    let gapped = GappedIndex::bulk_load(&bulk, GappedConfig::default()).expect("bulk");
    let gapped_size = write_only_size(&gapped);
    let cross_ok = chain_size > 2 * gapped_size;

    let sparse = GappedIndex::bulk_load(&bulk, GappedConfig::with_density(0.25)).expect("bulk");
    let sparse_size = write_only_size(&sparse);
    let dense = GappedIndex::bulk_load(&bulk, GappedConfig::with_density(0.7)).expect("bulk");
    let dense_size = write_only_size(&dense);
    let density_ok = sparse_size >= 2 * dense_size;

    report(
        7,
        "memory-ordering",
        cross_ok && density_ok,
        &format!(
            "chain={:.1}MB vs gapped={:.1}MB (need >2x); gapped@0.25={:.1}MB vs \
             gapped@0.7={:.1}MB (need >=2x)",
            chain_size as f64 / 1e6,
            gapped_size as f64 / 1e6,
            sparse_size as f64 / 1e6,
            dense_size as f64 / 1e6
        ),
    );
}

// Requires real hardware parallelism: on a single-core host the
// 8-thread/1-thread ratio is ~1 and both write-scaling factors are
// scheduler noise, so this criterion cannot pass there. The printed
// hardware-thread count makes that case identifiable.
#[test]
fn criterion_08_scalability_direction() {
    let ds = generate(&GenSpec::new(500_000, 8, 64, 0xACC8)).expect("dataset");
    let tput = |index: &str, kind: WorkloadKind, threads: usize, ops: usize| {
        let mut spec = WorkloadSpec::new(kind, ops, threads);
        spec.repetitions = 2;
        bench_run(index, &spec, &ds, 0xACC8)
            .expect("bench run")
            .throughput_ops_s
    };

    let mut detail = Vec::new();
    let mut read_ok = true;
    let mut write_scaling = std::collections::HashMap::new();
    for index in ["gapped", "chain"] {
        let r1 = tput(index, WorkloadKind::ReadOnly, 1, 400_000);
        let r8 = tput(index, WorkloadKind::ReadOnly, 8, 400_000);
        let factor = r8 / r1;
        detail.push(format!("{index} read 8t/1t={factor:.2} (need >=3)"));
        read_ok &= factor >= 3.0;

        let w1 = tput(index, WorkloadKind::WriteOnly, 1, 200_000);
        let w8 = tput(index, WorkloadKind::WriteOnly, 8, 200_000);
        write_scaling.insert(index, w8 / w1);
    }
    let write_ok = write_scaling["chain"] <= write_scaling["gapped"];
    detail.push(format!(
        "write scaling chain={:.2} gapped={:.2} (need chain <= gapped)",
        write_scaling["chain"], write_scaling["gapped"]
    ));

    let hw = std::thread::available_parallelism().map_or(0, |p| p.get());
    report(
        8,
        "scalability-direction",
        read_ok && write_ok,
        &format!("{} [{} hardware threads]", detail.join("; "), hw),
    );
}

#[test]
fn criterion_09_range_scan_direction() {
    let ds = generate(&GenSpec::new(300_000, 8, 64, 0xACC9)).expect("dataset");
    let mut failures = Vec::new();
    for index in ["gapped", "chain", "btree"] {
        let sweep = run_range_sweep(index, &ds, 300, 0xACC9).expect("sweep verified");
        let (s_small, kps_small) = sweep[0];
        let (s_large, kps_large) = *sweep.last().unwrap();
        assert_eq!((s_small, s_large), (10, 10_000));
        if kps_large < kps_small {
            failures.push(format!(
                "{index}: {kps_large:.0} keys/s @10000 < {kps_small:.0} keys/s @10"
            ));
        }
    }
    for f in &failures {
        println!("  {f}");
    }
    report(
        9,
        "range-scan-direction",
        failures.is_empty(),
        &format!("3 indexes, scans sorted + oracle-checked, {} regressions", failures.len()),
    );
}

#[test]
fn criterion_10_harness_determinism() {
    let ds = generate(&GenSpec::new(100_000, 8, 64, 0xACCA)).expect("dataset");
    let spec = WorkloadSpec::new(WorkloadKind::Balanced, 200_000, 4);
    let a = build_workload(&spec, &ds, 0xACCA).expect("workload");
    let b = build_workload(&spec, &ds, 0xACCA).expect("workload");
    let streams_ok = a.bulk == b.bulk && a.ops == b.ops;

    // End-of-run key set: replay one op stream on a real index and the
    // oracle; the surviving key sets must match bit-exactly.
    let idx = GappedIndex::bulk_load(&a.bulk, GappedConfig::default()).expect("bulk");
    let mut oracle = Oracle::from_pairs(&a.bulk);
    for ops in &a.ops {
        for &op in ops {
            apply_to_index(&idx, op);
            oracle.apply(op);
        }
    }
    let want: Vec<(Key, Payload)> = match oracle.apply(Op::RangeScan(0, usize::MAX)) {
        OpResult::Scan(v) => v,
        _ => unreachable!(),
    };
    let got = idx.range_scan(0, want.len() + 16);
    let keyset_ok = got == want;

    let plan = HeatmapPlan::from_toml(
        "seed = 1\nn = 20000\nops = 5000\nthreads = 2\nrepetitions = 1\n\
         globals = [2]\nlocals = [8]\nworkloads = [\"balanced\"]\n",
    )
    .expect("plan");
    let csv = emit_heatmap(&plan).expect("heatmap");
    let mut lines = csv.lines();
    let mut schema_ok = lines.next() == Some(HEATMAP_HEADER);
    for row in lines {
        let cols: Vec<&str> = row.split(',').collect();
        schema_ok &= cols.len() == 7
            && cols[0].parse::<u64>().is_ok()
            && cols[1].parse::<u64>().is_ok()
            && !cols[2].is_empty()
            && cols[3..].iter().all(|c| c.parse::<f64>().is_ok());
    }

    report(
        10,
        "harness-determinism",
        streams_ok && keyset_ok && schema_ok,
        &format!(
            "op streams identical={streams_ok}; end key set identical={keyset_ok}; \
             heatmap schema ok={schema_ok}"
        ),
    );
}
