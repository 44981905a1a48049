//! Synthetic interaction benchmark: seeded trace generation, replay through
//! the store on a virtual clock, and the retention/storage/conflict metric
//! suite.

pub mod metrics;
pub mod runner;
pub mod trace;

pub use metrics::{
    compute_rp_at_k, compute_srr, compute_tcs, ConflictStats, MetricError, MetricsReport,
    RunCounts,
};
pub use runner::{
    run_benchmark, run_fifo_baseline, DailySample, FifoReport, RunArtifacts, RunError, RunLog,
    RETENTION_TOP_K,
};
pub use trace::{
    generate_trace, read_jsonl, validate_trace, write_jsonl, Category, ConflictLabel,
    ConflictType, EventKind, EventLabels, ProbeKind, TraceError, TraceEvent, TraceParams,
};
