//! Conflict detection and four-way resolution for semantically overlapping
//! memories: compatible coexistence with a redundancy penalty, temporal
//! suppression of contradicted memories, and subsumption merging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::dynamics::strength_at;
use crate::embedding::dot;
use crate::oracle::{MergeOracle, RelationOracle};
use crate::record::{MemoryId, MemoryRecord, Timestamp};

/// The four relationship classes between a new memory and an existing one.
/// `Subsumes` means the new memory absorbs the existing one; `Subsumed` the
/// converse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    Compatible,
    Contradictory,
    Subsumes,
    Subsumed,
}

impl std::fmt::Display for Relation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Relation::Compatible => "compatible",
            Relation::Contradictory => "contradictory",
            Relation::Subsumes => "subsumes",
            Relation::Subsumed => "subsumed",
        };
        write!(f, "{name}")
    }
}

/// Classification result from a relation oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationVerdict {
    pub relation: Relation,
    pub rationale: Option<String>,
}

impl RelationVerdict {
    pub fn new(relation: Relation) -> Self {
        RelationVerdict {
            relation,
            rationale: None,
        }
    }

    pub fn with_rationale(relation: Relation, rationale: String) -> Self {
        RelationVerdict {
            relation,
            rationale: Some(rationale),
        }
    }
}

/// An existing record close enough to the incoming one to need resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: MemoryId,
    pub similarity: f64,
}

/// One audited mutation of a record's scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldChange {
    pub id: MemoryId,
    pub field: &'static str,
    pub old: f64,
    pub new: f64,
}

/// Strategy actually applied to one (new, existing) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedResolution {
    pub existing: MemoryId,
    pub relation: Relation,
    pub similarity: f64,
    /// True when the classifier failed and the pair fell back to Compatible.
    pub fallback: bool,
}

/// Audit trail of one resolution pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResolutionOutcome {
    /// Id of the new record, when it was inserted standalone.
    pub inserted: Option<MemoryId>,
    /// Absorber id, when the new memory was subsumed instead of inserted.
    pub absorbed_into: Option<MemoryId>,
    /// Ids that survive the pass (candidates not removed, plus the new id).
    pub kept: Vec<MemoryId>,
    /// Ids removed by subsumption.
    pub removed: Vec<MemoryId>,
    pub modified: Vec<FieldChange>,
    pub merged_content: Option<String>,
    pub applied: Vec<AppliedResolution>,
    /// Pairs where an oracle failed; resolution degraded to Compatible.
    pub oracle_failures: Vec<MemoryId>,
}

impl ResolutionOutcome {
    /// Where the new content lives after the pass.
    pub fn resident_id(&self) -> Option<MemoryId> {
        self.inserted.or(self.absorbed_into)
    }
}

/// Records whose similarity to the incoming embedding strictly exceeds the
/// gate, most similar first; ties broken by older creation time, then id.
pub fn find_conflict_candidates<'a, I>(
    new: &MemoryRecord,
    store_view: I,
    cfg: &EngineConfig,
) -> Vec<Candidate>
where
    I: IntoIterator<Item = &'a MemoryRecord>,
{
    let mut hits: Vec<(Candidate, Timestamp)> = store_view
        .into_iter()
        .filter(|r| r.id != new.id)
        .filter_map(|r| {
            let similarity = dot(&new.embedding, &r.embedding);
            (similarity > cfg.theta_sim).then_some((
                Candidate {
                    id: r.id,
                    similarity,
                },
                r.created_at,
            ))
        })
        .collect();
    hits.sort_by(|(a, ta), (b, tb)| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(ta.total_cmp(tb))
            .then(a.id.cmp(&b.id))
    });
    hits.into_iter().map(|(c, _)| c).collect()
}

/// Compatible coexistence: the existing memory's importance is shrunk by the
/// redundancy penalty `1 - omega * sim`. Both memories are retained.
pub fn resolve_compatible(existing: &MemoryRecord, sim: f64, cfg: &EngineConfig) -> MemoryRecord {
    let mut out = existing.clone();
    out.importance = existing.importance * (1.0 - cfg.omega * sim);
    out
}

/// Contradiction: the newer memory suppresses the older one by scaling its
/// current strength with `exp(-rho * clip(age_gap / w_age, 0, 1))`, applied
/// as an anchor reset at `now`. Both memories are retained.
pub fn resolve_contradictory(
    existing: &MemoryRecord,
    tau_new: Timestamp,
    now: Timestamp,
    cfg: &EngineConfig,
) -> MemoryRecord {
    let gap = (tau_new.days() - existing.created_at.days()) / cfg.w_age_days;
    let factor = (-cfg.rho * gap.clamp(0.0, 1.0)).exp();
    let mut out = existing.clone();
    out.anchor_strength = strength_at(existing, now, cfg) * factor;
    out.anchor_time = now;
    out
}

/// Subsumption: the general record absorbs the specific one. On success the
/// general record is updated in place (merged content, union of accesses,
/// anchor at the stronger of the two current strengths) and the outcome lists
/// the specific record as removed; the caller drops it. On merge failure both
/// records stay untouched and the outcome flags the failure.
pub fn resolve_subsumption(
    general: &mut MemoryRecord,
    specific: &MemoryRecord,
    merger: &dyn MergeOracle,
    now: Timestamp,
    cfg: &EngineConfig,
) -> ResolutionOutcome {
    let mut outcome = ResolutionOutcome::default();
    // Merge sources ordered by creation time.
    let (first, second) = if specific.created_at.total_cmp(&general.created_at).is_lt() {
        (specific, &*general)
    } else {
        (&*general, specific)
    };
    let merged = match merger.merge(&[&first.content, &second.content]) {
        Ok(text) => text,
        Err(_) => {
            outcome.oracle_failures.push(specific.id);
            outcome.kept = vec![general.id, specific.id];
            return outcome;
        }
    };

    let strength = strength_at(general, now, cfg).max(strength_at(specific, now, cfg));
    outcome.modified.push(FieldChange {
        id: general.id,
        field: "anchor_strength",
        old: general.anchor_strength,
        new: strength,
    });

    general.content = merged.clone();
    general.anchor_strength = strength;
    general.anchor_time = now;
    // Union of access histories, restricted to the absorber's own lifetime:
    // a record's access times never precede its creation.
    let mut accesses = general.access_times.clone();
    accesses.extend(
        specific
            .access_times
            .iter()
            .copied()
            .filter(|t| *t >= general.created_at),
    );
    accesses.sort_by(Timestamp::total_cmp);
    accesses.dedup();
    general.access_times = accesses;

    outcome.merged_content = Some(merged);
    outcome.removed.push(specific.id);
    outcome.kept.push(general.id);
    outcome
}

/// Runs the full resolution pass for one incoming memory against its
/// candidates, most similar first. Returns the audit trail; `records` is
/// mutated in place.
///
/// A candidate removed by an earlier subsumption is skipped. If the new
/// memory is subsumed, its content merges into the absorber, it is never
/// inserted, and the pass stops (every later pair would involve the removed
/// memory). Classifier failures degrade the pair to Compatible.
pub fn resolve(
    records: &mut BTreeMap<MemoryId, MemoryRecord>,
    mut new: MemoryRecord,
    candidates: &[Candidate],
    classifier: &dyn RelationOracle,
    merger: &dyn MergeOracle,
    now: Timestamp,
    cfg: &EngineConfig,
) -> ResolutionOutcome {
    let mut outcome = ResolutionOutcome::default();

    for candidate in candidates {
        if outcome.removed.contains(&candidate.id) {
            continue;
        }
        let Some(existing) = records.get(&candidate.id) else {
            continue;
        };

        let (relation, fallback) = match classifier.classify(&new.content, &existing.content) {
            Ok(verdict) => (verdict.relation, false),
            Err(_) => {
                outcome.oracle_failures.push(candidate.id);
                (Relation::Compatible, true)
            }
        };
        outcome.applied.push(AppliedResolution {
            existing: candidate.id,
            relation,
            similarity: candidate.similarity,
            fallback,
        });

        match relation {
            Relation::Compatible => {
                let updated = resolve_compatible(existing, candidate.similarity, cfg);
                outcome.modified.push(FieldChange {
                    id: candidate.id,
                    field: "importance",
                    old: existing.importance,
                    new: updated.importance,
                });
                records.insert(candidate.id, updated);
            }
            Relation::Contradictory => {
                let updated = resolve_contradictory(existing, new.created_at, now, cfg);
                outcome.modified.push(FieldChange {
                    id: candidate.id,
                    field: "anchor_strength",
                    old: strength_at(existing, now, cfg),
                    new: updated.anchor_strength,
                });
                records.insert(candidate.id, updated);
            }
            Relation::Subsumes => {
                // The new memory absorbs the candidate.
                let specific = existing.clone();
                let sub = resolve_subsumption(&mut new, &specific, merger, now, cfg);
                if sub.merged_content.is_some() {
                    records.remove(&candidate.id);
                    outcome.removed.extend(sub.removed);
                    outcome.modified.extend(sub.modified);
                    outcome.merged_content = sub.merged_content;
                } else {
                    outcome.oracle_failures.push(candidate.id);
                }
            }
            Relation::Subsumed => {
                // The candidate absorbs the new memory; nothing is inserted
                // and the pass ends here.
                let mut general = existing.clone();
                let sub = resolve_subsumption(&mut general, &new, merger, now, cfg);
                if sub.merged_content.is_some() {
                    records.insert(candidate.id, general);
                    outcome.modified.extend(sub.modified);
                    outcome.merged_content = sub.merged_content;
                    outcome.absorbed_into = Some(candidate.id);
                    break;
                } else {
                    outcome.oracle_failures.push(candidate.id);
                }
            }
        }
    }

    if outcome.absorbed_into.is_none() {
        outcome.inserted = Some(new.id);
        outcome.kept.push(new.id);
        records.insert(new.id, new);
    }

    for candidate in candidates {
        if !outcome.removed.contains(&candidate.id)
            && records.contains_key(&candidate.id)
            && !outcome.kept.contains(&candidate.id)
        {
            outcome.kept.push(candidate.id);
        }
    }
    outcome
}
