//! Benchmark metric primitives and the per-run report.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::record::{MemoryId, Timestamp};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("storage reduction is undefined for zero observed memories")]
    ZeroTotal,
    #[error("retained count {retained} exceeds total {total}")]
    RetainedExceedsTotal { retained: usize, total: usize },
}

/// Storage Reduction Rate: `1 - retained/total`. Fused records count once.
pub fn compute_srr(retained: usize, total_observed: usize) -> Result<f64, MetricError> {
    if total_observed == 0 {
        return Err(MetricError::ZeroTotal);
    }
    if retained > total_observed {
        return Err(MetricError::RetainedExceedsTotal {
            retained,
            total: total_observed,
        });
    }
    Ok(1.0 - retained as f64 / total_observed as f64)
}

/// Relevance precision at k: relevant hits in the top-k prefix over
/// `min(k, retrieved)`. Empty retrieval scores zero.
pub fn compute_rp_at_k(retrieved: &[MemoryId], relevant: &BTreeSet<MemoryId>, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    if retrieved.is_empty() {
        return 0.0;
    }
    let depth = k.min(retrieved.len());
    let hits = retrieved[..depth].iter().filter(|id| relevant.contains(id)).count();
    hits as f64 / depth as f64
}

/// Temporal Consistency Score: the fraction of result pairs whose retrieval
/// order agrees with chronological order (older first). Fewer than two
/// results score 1.0 by convention.
pub fn compute_tcs(created_order: &[Timestamp]) -> f64 {
    let n = created_order.len();
    if n < 2 {
        return 1.0;
    }
    let mut concordant = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            total += 1;
            if created_order[i] <= created_order[j] {
                concordant += 1;
            }
        }
    }
    concordant as f64 / total as f64
}

/// Per-conflict-type rates; `None` when the run carries no such conflicts
/// (or the mode has no strategy selection at all, as with the FIFO baseline).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConflictStats {
    pub contradiction: Option<f64>,
    pub update: Option<f64>,
    pub overlap: Option<f64>,
}

impl ConflictStats {
    pub fn macro_average(&self) -> Option<f64> {
        let present: Vec<f64> = [self.contradiction, self.update, self.overlap]
            .into_iter()
            .flatten()
            .collect();
        if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        }
    }
}

/// Run statistics attached to a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunCounts {
    pub events: usize,
    pub observes: usize,
    pub queries: usize,
    pub conflicts: usize,
    pub retained: usize,
    pub total_observed: usize,
    pub pruned: usize,
    pub evicted: usize,
    pub fused_groups: usize,
    pub fusion_rejections: usize,
    pub critical_facts: usize,
    pub contextual_facts: usize,
}

/// Everything one benchmark run reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub srr: f64,
    pub rp_at_k: BTreeMap<usize, f64>,
    pub tcs: f64,
    pub retention_critical: f64,
    pub retention_contextual: f64,
    pub conflict_accuracy: ConflictStats,
    pub conflict_consistency: ConflictStats,
    pub counts: RunCounts,
}

impl MetricsReport {
    /// Flat `metric,value` CSV, deterministic row order.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("srr".into(), format_float(self.srr)),
            ("tcs".into(), format_float(self.tcs)),
            ("retention_critical".into(), format_float(self.retention_critical)),
            ("retention_contextual".into(), format_float(self.retention_contextual)),
        ];
        for (k, v) in &self.rp_at_k {
            rows.push((format!("rp_at_{k}"), format_float(*v)));
        }
        for (name, stats) in [
            ("conflict_accuracy", &self.conflict_accuracy),
            ("conflict_consistency", &self.conflict_consistency),
        ] {
            for (ctype, value) in [
                ("contradiction", stats.contradiction),
                ("update", stats.update),
                ("overlap", stats.overlap),
            ] {
                rows.push((
                    format!("{name}_{ctype}"),
                    value.map_or_else(|| "-".to_string(), format_float),
                ));
            }
        }
        rows.push(("retained".into(), self.counts.retained.to_string()));
        rows.push(("total_observed".into(), self.counts.total_observed.to_string()));
        rows.push(("events".into(), self.counts.events.to_string()));
        rows.push(("conflicts".into(), self.counts.conflicts.to_string()));
        rows.push(("fused_groups".into(), self.counts.fused_groups.to_string()));
        rows.push(("pruned".into(), self.counts.pruned.to_string()));
        rows.push(("evicted".into(), self.counts.evicted.to_string()));

        let mut csv = String::from("metric,value\n");
        for (name, value) in rows {
            csv.push_str(&name);
            csv.push(',');
            csv.push_str(&value);
            csv.push('\n');
        }
        csv
    }
}

fn format_float(v: f64) -> String {
    format!("{v:.6}")
}
