//! Hardness-grid heatmap: for each (global, local) generator target
//! and workload, run every index and report the signed ratio between
//! the best learned index and the best traditional one.

use anyhow::{Context, Result};

use crate::bench::runner::{run, BenchReport};
use crate::bench::workload::{WorkloadKind, WorkloadSpec};
use crate::datagen::{generate, GenSpec};

pub const HEATMAP_HEADER: &str =
    "global_h,local_h,workload,gapped_ops_s,chain_ops_s,btree_ops_s,winner_ratio";

const LEARNED: [&str; 2] = ["gapped", "chain"];
const TRADITIONAL: [&str; 1] = ["btree"];

/// TOML plan for a heatmap sweep.
#[derive(Debug, Clone, serde::Deserialize)]
pub struct HeatmapPlan {
    pub seed: u64,
    /// Keys per generated dataset.
    pub n: u64,
    /// Ops per cell run.
    pub ops: usize,
    pub threads: usize,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    pub globals: Vec<u64>,
    pub locals: Vec<u64>,
    pub workloads: Vec<WorkloadKind>,
}

fn default_reps() -> usize {
    3
}

impl HeatmapPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing heatmap plan")
    }
}

/// Signed winner ratio: +r when the best learned index wins by r×,
/// −r when the best traditional index wins by r×, 1.0 on a tie.
pub fn winner_ratio(best_learned: f64, best_traditional: f64) -> f64 {
    if best_learned >= best_traditional {
        best_learned / best_traditional
    } else {
        -(best_traditional / best_learned)
    }
}

/// Runs the whole plan and renders the CSV.
pub fn emit_heatmap(plan: &HeatmapPlan) -> Result<String> {
    let mut csv = String::from(HEATMAP_HEADER);
    csv.push('\n');
    for &g in &plan.globals {
        for &l in &plan.locals {
            let ds = generate(&GenSpec::new(plan.n, g, l, plan.seed))
                .with_context(|| format!("generating cell ({g}, {l})"))?;
            for &kind in &plan.workloads {
                let mut spec = WorkloadSpec::new(kind, plan.ops, plan.threads);
                spec.repetitions = plan.repetitions;
                let mut tput = std::collections::HashMap::new();
                for name in LEARNED.iter().chain(TRADITIONAL.iter()) {
                    let r: BenchReport = run(name, &spec, &ds, plan.seed)
                        .with_context(|| format!("cell ({g},{l}) {} on {name}", kind.name()))?;
                    tput.insert(*name, r.throughput_ops_s);
                }
                let best_learned = LEARNED
                    .iter()
                    .map(|n| tput[n])
                    .fold(f64::MIN, f64::max);
                let best_trad = TRADITIONAL
                    .iter()
                    .map(|n| tput[n])
                    .fold(f64::MIN, f64::max);
                csv.push_str(&format!(
                    "{g},{l},{},{:.1},{:.1},{:.1},{:.4}\n",
                    kind.name(),
                    tput["gapped"],
                    tput["chain"],
                    tput["btree"],
                    winner_ratio(best_learned, best_trad),
                ));
            }
        }
    }
    Ok(csv)
}
