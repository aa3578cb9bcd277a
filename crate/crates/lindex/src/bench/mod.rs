//! Benchmark harness: workload construction, timed runs, and heatmap
//! summaries over generated datasets.

pub mod heatmap;
pub mod runner;
pub mod workload;

pub use heatmap::{emit_heatmap, HeatmapPlan, HEATMAP_HEADER};
pub use runner::{
    build_index, percentile_nearest_rank, run, run_data_shift, run_range_sweep, BenchReport,
    LatencyStats,
};
pub use workload::{build_workload, payload_for, BuiltWorkload, WorkloadKind, WorkloadSpec};
