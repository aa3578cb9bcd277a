//! Command-line harness over the index library: dataset hardness
//! analysis, synthetic key generation, and benchmark runs.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use lindex::bench::{
    emit_heatmap, run as bench_run, run_data_shift, run_range_sweep, HeatmapPlan, WorkloadKind,
    WorkloadSpec,
};
use lindex::datagen::{generate, GenSpec};
use lindex::pla::{hardness_profile, optimal_pla};
use lindex::Dataset;

#[derive(Parser)]
#[command(name = "lindex", about = "learned ordered-index benchmark harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print PLA hardness of a binary key file as CSV.
    Hardness {
        /// Binary dataset (little-endian u64 count + keys).
        file: PathBuf,
        /// Extra ε values to segment at, beyond the 4096/32 profile.
        #[arg(long = "epsilon")]
        epsilons: Vec<u64>,
    },
    /// Generate a synthetic dataset with target hardness.
    Generate {
        #[arg(long)]
        n: u64,
        /// Target global hardness H(ε=4096).
        #[arg(long = "global")]
        global: u64,
        /// Target local hardness H(ε=32).
        #[arg(long = "local")]
        local: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark runs and sweeps.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run one workload against one index and write a JSON report.
    Run(RunArgs),
    /// Run a hardness-grid plan and write the heatmap CSV.
    Heatmap {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Data-shift experiment: bulk one dataset, insert another scaled
    /// into its domain.
    Shift(ShiftArgs),
    /// Range-scan size sweep, keys/second per size.
    Ranges {
        #[arg(long)]
        index: String,
        #[command(flatten)]
        data: DataSource,
        #[arg(long, default_value_t = 2000)]
        scans: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// gapped | chain | btree
    #[arg(long)]
    index: String,
    /// Workload kind (read_only, read_intensive, balanced,
    /// write_heavy, write_only, delete_mix, range_scan, zipfian_mix).
    #[arg(long)]
    workload: WorkloadKind,
    #[command(flatten)]
    data: DataSource,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1_000_000)]
    ops: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value_t = 100)]
    scan_size: usize,
    /// Report path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ShiftArgs {
    #[arg(long)]
    index: String,
    /// G,L,N generator spec for the bulk-loaded dataset.
    #[arg(long, value_parser = parse_gen)]
    bulk_gen: GenTriple,
    /// G,L,N generator spec for the inserted dataset.
    #[arg(long, value_parser = parse_gen)]
    insert_gen: GenTriple,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    #[arg(long, default_value_t = 500_000)]
    ops: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Either a binary key file or an inline generator spec.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataSource {
    /// Binary dataset file.
    #[arg(long)]
    keys: Option<PathBuf>,
    /// Generate instead: G,L,N (global target, local target, keys).
    #[arg(long, value_parser = parse_gen)]
    gen: Option<GenTriple>,
}

#[derive(Clone, Copy, Debug)]
struct GenTriple {
    global: u64,
    local: u64,
    n: u64,
}

fn parse_gen(s: &str) -> Result<GenTriple, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [g, l, n] = parts[..] else {
        return Err(format!("expected G,L,N, got {s}"));
    };
    let parse = |x: &str| x.trim().parse::<u64>().map_err(|e| format!("{x}: {e}"));
    Ok(GenTriple {
        global: parse(g)?,
        local: parse(l)?,
        n: parse(n)?,
    })
}

impl DataSource {
    fn load(&self, seed: u64) -> Result<Dataset> {
        match (&self.keys, &self.gen) {
            (Some(path), None) => {
                Dataset::load(path).with_context(|| format!("loading {}", path.display()))
            }
            (None, Some(t)) => generate(&GenSpec::new(t.n, t.global, t.local, seed))
                .context("generating dataset"),
            _ => unreachable!("clap group enforces exactly one source"),
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Hardness { file, epsilons } => {
            let ds = Dataset::load(&file).with_context(|| format!("loading {}", file.display()))?;
            let profile = hardness_profile(&ds);
            println!("epsilon,segments");
            println!("4096,{}", profile.global_h);
            println!("32,{}", profile.local_h);
            for eps in epsilons {
                if eps == 4096 || eps == 32 {
                    continue;
                }
                println!("{eps},{}", optimal_pla(&ds, eps).segments.len());
            }
            eprintln!(
                "profile: global_h={} local_h={} ({} keys)",
                profile.global_h,
                profile.local_h,
                ds.len()
            );
        }
        Command::Generate { n, global, local, seed, out } => {
            let ds = generate(&GenSpec::new(n, global, local, seed)).context("generation failed")?;
            ds.save(&out).with_context(|| format!("writing {}", out.display()))?;
            let profile = hardness_profile(&ds);
            eprintln!(
                "wrote {} keys to {} (measured global_h={} local_h={})",
                ds.len(),
                out.display(),
                profile.global_h,
                profile.local_h
            );
        }
        Command::Bench(BenchCommand::Run(a)) => {
            let ds = a.data.load(a.seed)?;
            let mut spec = WorkloadSpec::new(a.workload, a.ops, a.threads);
            spec.repetitions = a.repetitions;
            spec.scan_size = a.scan_size;
            let report = bench_run(&a.index, &spec, &ds, a.seed)?;
            std::fs::write(&a.out, serde_json::to_string_pretty(&report)?)
                .with_context(|| format!("writing {}", a.out.display()))?;
            eprintln!(
                "{} {} x{}: {:.0} ops/s (p50 {} ns, p999 {} ns)",
                report.index,
                report.workload,
                report.threads,
                report.throughput_ops_s,
                report.latency.p50_ns,
                report.latency.p999_ns
            );
        }
        Command::Bench(BenchCommand::Heatmap { plan, out }) => {
            let text = std::fs::read_to_string(&plan)
                .with_context(|| format!("reading {}", plan.display()))?;
            let plan = HeatmapPlan::from_toml(&text)?;
            let csv = emit_heatmap(&plan)?;
            std::fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("wrote heatmap to {}", out.display());
        }
        Command::Bench(BenchCommand::Shift(a)) => {
            let bulk = generate(&GenSpec::new(
                a.bulk_gen.n,
                a.bulk_gen.global,
                a.bulk_gen.local,
                a.seed,
            ))?;
            let ins = generate(&GenSpec::new(
                a.insert_gen.n,
                a.insert_gen.global,
                a.insert_gen.local,
                a.seed + 1,
            ))?;
            let spec = WorkloadSpec::new(WorkloadKind::DataShift, a.ops, a.threads);
            let (base, shifted, change) = run_data_shift(&a.index, &spec, &bulk, &ins, a.seed)?;
            let report = serde_json::json!({
                "baseline": base,
                "shifted": shifted,
                "relative_change": change,
            });
            std::fs::write(&a.out, serde_json::to_string_pretty(&report)?)
                .with_context(|| format!("writing {}", a.out.display()))?;
            eprintln!("data shift relative change: {:+.1}%", change * 100.0);
        }
        Command::Bench(BenchCommand::Ranges { index, data, scans, seed }) => {
            let ds = data.load(seed)?;
            println!("scan_size,keys_per_s");
            for (size, kps) in run_range_sweep(&index, &ds, scans, seed)? {
                println!("{size},{kps:.0}");
            }
        }
    }
    Ok(())
}
