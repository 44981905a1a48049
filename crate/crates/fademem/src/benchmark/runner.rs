//! Trace replay through the store, metric assembly, and the FIFO-window
//! baseline used for equal-budget retention comparisons.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::benchmark::metrics::{
    compute_rp_at_k, compute_srr, compute_tcs, ConflictStats, MetricError, MetricsReport,
    RunCounts,
};
use crate::benchmark::trace::{
    Category, ConflictType, EventKind, ProbeKind, TraceEvent,
};
use crate::config::EngineConfig;
use crate::conflict::Relation;
use crate::embedding::{dot, Embedding, EmbeddingProvider};
use crate::oracle::{MergeOracle, RelationOracle};
use crate::record::{MemoryId, Timestamp};
use crate::store::{MemoryStore, StoreError};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("trace replay needs at least one observe event")]
    EmptyTrace,
}

/// Raw per-query outcome kept for metric recomputation.
#[derive(Debug, Clone)]
pub struct QueryRecord {
    pub event_id: u64,
    pub probe: Option<ProbeKind>,
    pub probe_conflict: Option<ConflictType>,
    pub category: Option<Category>,
    pub retrieved: Vec<MemoryId>,
    pub retrieved_created: Vec<Timestamp>,
    pub retrieved_contents: Vec<String>,
    pub relevant: BTreeSet<MemoryId>,
    pub holder: Option<MemoryId>,
    pub expect_value: Option<String>,
    pub fact_key: Option<String>,
}

/// Raw per-conflict outcome.
#[derive(Debug, Clone)]
pub struct ConflictRecord {
    pub event_id: u64,
    pub ctype: ConflictType,
    pub expected: Relation,
    pub applied: Option<Relation>,
}

/// Everything a run leaves behind besides the report itself.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub queries: Vec<QueryRecord>,
    pub conflicts: Vec<ConflictRecord>,
}

/// End-of-day storage sample for plotting retention/storage dynamics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DailySample {
    pub day: u32,
    pub records: usize,
    pub lml: usize,
    pub sml: usize,
    pub observed: u64,
}

pub struct RunArtifacts {
    pub report: MetricsReport,
    pub store: MemoryStore,
    pub raw: RunLog,
    pub storage_curve: Vec<DailySample>,
}

/// Records ranked inside this window count as recovered for retention.
pub const RETENTION_TOP_K: usize = 5;

/// Replays a trace through a fresh store and assembles the metric report.
///
/// Queries run at the largest requested depth so every `rp@k` can be read
/// off one ranking; a tick precedes any query that advances the clock, so
/// prune-eligible records are gone before they could be retrieved.
pub fn run_benchmark(
    trace: &[TraceEvent],
    config: EngineConfig,
    embedder: &dyn EmbeddingProvider,
    classifier: &dyn RelationOracle,
    merger: &dyn MergeOracle,
    k_values: &[usize],
) -> Result<RunArtifacts, RunError> {
    if !trace.iter().any(|e| e.kind == EventKind::Observe) {
        return Err(RunError::EmptyTrace);
    }
    let k_run = k_values
        .iter()
        .copied()
        .max()
        .unwrap_or(RETENTION_TOP_K)
        .max(RETENTION_TOP_K);

    let mut store = MemoryStore::new(config);
    let mut placement: HashMap<u64, MemoryId> = HashMap::new();
    let mut raw = RunLog::default();
    let mut storage_curve = Vec::new();
    let mut counts = RunCounts::default();
    let mut sampled_day: i64 = -1;

    for event in trace {
        let event_day = event.at.days().floor() as i64;
        if event_day > sampled_day {
            // State before the first event of a new day is the previous
            // day's closing state.
            if sampled_day >= 0 {
                storage_curve.push(sample(&store, sampled_day as u32));
            }
            sampled_day = event_day;
        }
        counts.events += 1;

        match event.kind {
            EventKind::Observe => {
                counts.observes += 1;
                let target_before = event
                    .labels
                    .conflict
                    .as_ref()
                    .and_then(|c| placement.get(&c.target_id).copied());

                let outcome = store.observe_labeled(
                    &event.text,
                    event.labels.category.map(Category::label),
                    event.at,
                    embedder,
                    classifier,
                    merger,
                )?;

                counts.pruned += outcome.pruned.len();
                counts.evicted += outcome.evicted.len();
                counts.fused_groups += outcome.fused.len();
                counts.fusion_rejections += outcome.fusion_rejections;

                for id in &outcome.pruned {
                    placement.retain(|_, v| v != id);
                }
                if let Some(resident) = outcome.resolution.resident_id() {
                    placement.insert(event.id, resident);
                    for removed in &outcome.resolution.removed {
                        for value in placement.values_mut() {
                            if value == removed {
                                *value = resident;
                            }
                        }
                    }
                }
                for fusion in &outcome.fused {
                    for value in placement.values_mut() {
                        if fusion.member_ids.contains(value) {
                            *value = fusion.fused_id;
                        }
                    }
                }
                for id in &outcome.evicted {
                    placement.retain(|_, v| v != id);
                }

                if let Some(label) = &event.labels.conflict {
                    counts.conflicts += 1;
                    let applied = target_before.and_then(|target| {
                        outcome
                            .resolution
                            .applied
                            .iter()
                            .find(|a| a.existing == target)
                            .map(|a| a.relation)
                    });
                    raw.conflicts.push(ConflictRecord {
                        event_id: event.id,
                        ctype: label.ctype,
                        expected: label.correct_strategy,
                        applied,
                    });
                }
            }
            EventKind::Query => {
                counts.queries += 1;
                if event.at > store.clock() {
                    store.tick(event.at)?;
                }
                let hits = store.query(&event.text, k_run, event.at, embedder)?;
                let relevant: BTreeSet<MemoryId> = event
                    .labels
                    .relevant_ids
                    .iter()
                    .filter_map(|id| placement.get(id).copied())
                    .collect();
                raw.queries.push(QueryRecord {
                    event_id: event.id,
                    probe: event.labels.probe,
                    probe_conflict: event.labels.probe_conflict,
                    category: event.labels.category,
                    retrieved: hits.iter().map(|h| h.id).collect(),
                    retrieved_created: hits.iter().map(|h| h.created_at).collect(),
                    retrieved_contents: hits.iter().map(|h| h.content.clone()).collect(),
                    relevant,
                    holder: event
                        .labels
                        .holder_id
                        .and_then(|id| placement.get(&id).copied()),
                    expect_value: event.labels.expect_value.clone(),
                    fact_key: event.labels.fact_key.clone(),
                });
            }
        }
    }
    if sampled_day >= 0 {
        storage_curve.push(sample(&store, sampled_day as u32));
    }

    counts.retained = store.len();
    counts.total_observed = store.observed_total() as usize;
    counts.critical_facts = trace
        .iter()
        .filter(|e| {
            e.labels.probe == Some(ProbeKind::Retention)
                && e.labels.category == Some(Category::Critical)
        })
        .count();
    counts.contextual_facts = trace
        .iter()
        .filter(|e| {
            e.labels.probe == Some(ProbeKind::Retention)
                && e.labels.category == Some(Category::Contextual)
        })
        .count();

    let report = assemble_report(&store, &raw, counts, k_values)?;
    Ok(RunArtifacts {
        report,
        store,
        raw,
        storage_curve,
    })
}

fn sample(store: &MemoryStore, day: u32) -> DailySample {
    let stats = store.stats();
    DailySample {
        day,
        records: stats.total,
        lml: stats.lml,
        sml: stats.sml,
        observed: stats.observed_total,
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Does the best-ranked retrieved record about this fact carry the expected
/// current value? Key matching is token-based so that records merged by
/// subsumption (whose content concatenates sentences) still match.
fn consistency_hit(record: &QueryRecord) -> bool {
    let (Some(fact_key), Some(expect)) = (&record.fact_key, &record.expect_value) else {
        return false;
    };
    let key_tokens = tokenize(fact_key);
    let expect_token = expect.to_lowercase();
    for content in &record.retrieved_contents {
        let tokens = tokenize(content);
        if key_tokens.iter().all(|k| tokens.contains(k)) {
            return tokens.contains(&expect_token);
        }
    }
    false
}

/// Is the fact's current holder inside the retention window?
fn retention_hit(record: &QueryRecord) -> bool {
    match record.holder {
        Some(holder) => record
            .retrieved
            .iter()
            .take(RETENTION_TOP_K)
            .any(|id| *id == holder),
        None => false,
    }
}

fn assemble_report(
    store: &MemoryStore,
    raw: &RunLog,
    counts: RunCounts,
    k_values: &[usize],
) -> Result<MetricsReport, RunError> {
    let srr = compute_srr(store.len(), store.observed_total() as usize)?;

    let mut rp_at_k = BTreeMap::new();
    for &k in k_values {
        let scores: Vec<f64> = raw
            .queries
            .iter()
            .filter(|q| !q.relevant.is_empty())
            .map(|q| compute_rp_at_k(&q.retrieved, &q.relevant, k))
            .collect();
        rp_at_k.insert(k, mean(&scores));
    }

    let tcs_scores: Vec<f64> = raw
        .queries
        .iter()
        .filter(|q| q.retrieved.len() >= 2)
        .map(|q| compute_tcs(&q.retrieved_created))
        .collect();
    let tcs = if tcs_scores.is_empty() { 1.0 } else { mean(&tcs_scores) };

    let retention = |category: Category| -> f64 {
        let probes: Vec<&QueryRecord> = raw
            .queries
            .iter()
            .filter(|q| q.probe == Some(ProbeKind::Retention) && q.category == Some(category))
            .collect();
        if probes.is_empty() {
            return 0.0;
        }
        probes.iter().filter(|q| retention_hit(q)).count() as f64 / probes.len() as f64
    };
    let retention_critical = retention(Category::Critical);
    let retention_contextual = retention(Category::Contextual);

    let per_type = |ctype: ConflictType| -> Option<f64> {
        let entries: Vec<&ConflictRecord> =
            raw.conflicts.iter().filter(|c| c.ctype == ctype).collect();
        if entries.is_empty() {
            return None;
        }
        let matched = entries
            .iter()
            .filter(|c| c.applied == Some(c.expected))
            .count();
        Some(matched as f64 / entries.len() as f64)
    };
    let conflict_accuracy = ConflictStats {
        contradiction: per_type(ConflictType::Contradiction),
        update: per_type(ConflictType::Update),
        overlap: per_type(ConflictType::Overlap),
    };

    let consistency_for = |ctype: ConflictType| -> Option<f64> {
        let probes: Vec<&QueryRecord> = raw
            .queries
            .iter()
            .filter(|q| q.probe == Some(ProbeKind::Consistency) && q.probe_conflict == Some(ctype))
            .collect();
        if probes.is_empty() {
            return None;
        }
        Some(probes.iter().filter(|q| consistency_hit(q)).count() as f64 / probes.len() as f64)
    };
    let conflict_consistency = ConflictStats {
        contradiction: consistency_for(ConflictType::Contradiction),
        update: consistency_for(ConflictType::Update),
        overlap: consistency_for(ConflictType::Overlap),
    };

    Ok(MetricsReport {
        srr,
        rp_at_k,
        tcs,
        retention_critical,
        retention_contextual,
        conflict_accuracy,
        conflict_consistency,
        counts,
    })
}

// ── FIFO-window baseline ────────────────────────────────────────────

/// Retention figures for a fixed-budget FIFO window replay. The baseline
/// selects no strategies, so conflict accuracy follows the "-" convention
/// and is simply absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FifoReport {
    pub budget: usize,
    pub retained: usize,
    pub total_observed: usize,
    pub srr: f64,
    pub retention_critical: f64,
    pub retention_contextual: f64,
}

/// Replays the trace through a FIFO window holding at most `budget` records:
/// every observation enters, the oldest leaves. Queries rank by similarity
/// alone. Retention is scored exactly as for the engine run.
pub fn run_fifo_baseline(
    trace: &[TraceEvent],
    budget: usize,
    embedder: &dyn EmbeddingProvider,
) -> Result<FifoReport, RunError> {
    let budget = budget.max(1);
    let mut window: VecDeque<(u64, Embedding)> = VecDeque::new();
    let mut total_observed = 0usize;
    let mut hits_by_category: BTreeMap<&'static str, (usize, usize)> = BTreeMap::new();

    for event in trace {
        match event.kind {
            EventKind::Observe => {
                total_observed += 1;
                let embedding = embedder.embed(&event.text).map_err(StoreError::Embed)?;
                window.push_back((event.id, embedding));
                while window.len() > budget {
                    window.pop_front();
                }
            }
            EventKind::Query => {
                if event.labels.probe != Some(ProbeKind::Retention) {
                    continue;
                }
                let Some(category) = event.labels.category else {
                    continue;
                };
                let Some(holder) = event.labels.holder_id else {
                    continue;
                };
                let query = embedder.embed(&event.text).map_err(StoreError::Embed)?;
                let mut ranked: Vec<(f64, u64)> = window
                    .iter()
                    .map(|(id, e)| (dot(&query, e), *id))
                    .collect();
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
                let hit = ranked
                    .iter()
                    .take(RETENTION_TOP_K)
                    .any(|(_, id)| *id == holder);
                let entry = hits_by_category.entry(category.label()).or_insert((0, 0));
                entry.1 += 1;
                if hit {
                    entry.0 += 1;
                }
            }
        }
    }

    let rate = |label: &str| -> f64 {
        match hits_by_category.get(label) {
            Some((hits, total)) if *total > 0 => *hits as f64 / *total as f64,
            _ => 0.0,
        }
    };
    let retained = window.len();
    Ok(FifoReport {
        budget,
        retained,
        total_observed,
        srr: compute_srr(retained, total_observed)?,
        retention_critical: rate("critical"),
        retention_contextual: rate("contextual"),
    })
}
