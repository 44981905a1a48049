//! The memory store: ingestion through the decay/resolution/fusion pipeline,
//! strength-weighted retrieval, capacity enforcement, and an append-only
//! operation log that makes every run replayable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::conflict::{self, ResolutionOutcome};
use crate::dynamics::{self, ContextWindow};
use crate::embedding::{dot, EmbedError, EmbeddingProvider};
use crate::fusion::{self, FuseOutcome};
use crate::oracle::{MergeOracle, RelationOracle};
use crate::record::{Layer, MemoryId, MemoryRecord, Timestamp};
use crate::snapshot::{self, SnapshotError};

/// One logged store operation; the log replays to an identical store under
/// deterministic providers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedOp {
    pub at: Timestamp,
    pub op: StoreOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StoreOp {
    Observe {
        text: String,
        category: Option<String>,
    },
    Query {
        text: String,
        k: usize,
    },
    Tick,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("clock regression: now {now} precedes store clock {clock}")]
    ClockRegression { now: f64, clock: f64 },
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

/// A fusion applied by the pipeline: members were replaced by the fused id.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionApplied {
    pub fused_id: MemoryId,
    pub member_ids: Vec<MemoryId>,
}

/// What one observation did to the store.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserveOutcome {
    /// Where the observed content lives now; `None` if it was removed again
    /// within the same pipeline run (pruned cluster, eviction).
    pub resident_id: Option<MemoryId>,
    /// False when the new memory was absorbed by an existing record.
    pub inserted: bool,
    pub resolution: ResolutionOutcome,
    pub fused: Vec<FusionApplied>,
    pub fusion_rejections: usize,
    pub pruned: Vec<MemoryId>,
    pub evicted: Vec<MemoryId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub pruned: Vec<MemoryId>,
    pub evicted: Vec<MemoryId>,
}

/// One retrieval hit: similarity weighted by current strength.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryHit {
    pub id: MemoryId,
    pub score: f64,
    pub similarity: f64,
    /// Strength at query time, before the consolidation this access triggers.
    pub strength: f64,
    pub layer: Layer,
    pub created_at: Timestamp,
    pub content: String,
}

/// Aggregate store statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoreStats {
    pub total: usize,
    pub lml: usize,
    pub sml: usize,
    pub observed_total: u64,
    /// 1 - retained/observed; zero before anything was observed.
    pub srr_so_far: f64,
    /// Record counts in ten equal strength bins over [0,1].
    pub strength_histogram: [usize; 10],
    pub clock_days: f64,
}

/// Single-writer memory store. All mutating operations take `&mut self`;
/// read-only inspection clones or borrows immutably.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    config: EngineConfig,
    records: BTreeMap<MemoryId, MemoryRecord>,
    context: ContextWindow,
    clock: Timestamp,
    next_id: u64,
    observed_total: u64,
    event_log: Vec<LoggedOp>,
}

impl MemoryStore {
    pub fn new(config: EngineConfig) -> MemoryStore {
        MemoryStore {
            config,
            records: BTreeMap::new(),
            context: ContextWindow::new(),
            clock: Timestamp::new(0.0),
            next_id: 0,
            observed_total: 0,
            event_log: Vec::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.values()
    }

    pub fn get(&self, id: MemoryId) -> Option<&MemoryRecord> {
        self.records.get(&id)
    }

    pub fn context(&self) -> &ContextWindow {
        &self.context
    }

    pub fn event_log(&self) -> &[LoggedOp] {
        &self.event_log
    }

    pub fn observed_total(&self) -> u64 {
        self.observed_total
    }

    fn check_clock(&self, now: Timestamp) -> Result<(), StoreError> {
        if now < self.clock {
            return Err(StoreError::ClockRegression {
                now: now.days(),
                clock: self.clock.days(),
            });
        }
        Ok(())
    }

    fn allocate_id(&mut self) -> MemoryId {
        let id = MemoryId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Embeddings entering the store must match the resident dimension.
    fn check_dimension(&self, embedding: &crate::embedding::Embedding) -> Result<(), StoreError> {
        if let Some(first) = self.records.values().next() {
            if first.embedding.dimension() != embedding.dimension() {
                return Err(StoreError::Embed(EmbedError::DimensionMismatch(
                    first.embedding.dimension(),
                    embedding.dimension(),
                )));
            }
        }
        Ok(())
    }

    /// Decay phase: refresh every record's importance, apply layer
    /// transitions, then remove prune-eligible records.
    fn decay_phase(&mut self, now: Timestamp) -> Vec<MemoryId> {
        for record in self.records.values_mut() {
            record.importance = dynamics::importance(record, &self.context, now, &self.config);
            record.layer = dynamics::assign_layer(record, &self.config);
        }
        let doomed: Vec<MemoryId> = self
            .records
            .values()
            .filter(|r| dynamics::prune_eligible(r, now, &self.config))
            .map(|r| r.id)
            .collect();
        for id in &doomed {
            self.records.remove(id);
        }
        doomed
    }

    /// One fusion pass: clusters are found on the current record set and
    /// applied together (greedy claiming makes them disjoint). Fused records
    /// do not participate again within the same pass.
    fn fusion_pass(
        &mut self,
        now: Timestamp,
        merger: &dyn MergeOracle,
        verifier: &dyn MergeOracle,
    ) -> (Vec<FusionApplied>, usize) {
        let clusters = fusion::find_fusion_clusters(self.records.values(), &self.config);
        let mut applied = Vec::new();
        let mut rejections = 0;
        for cluster in clusters {
            let members: Vec<&MemoryRecord> = cluster
                .member_ids
                .iter()
                .filter_map(|id| self.records.get(id))
                .collect();
            if members.len() != cluster.member_ids.len() {
                continue;
            }
            let fused_id = MemoryId(self.next_id);
            match fusion::fuse(
                &cluster,
                &members,
                merger,
                verifier,
                &self.context,
                now,
                fused_id,
                &self.config,
            ) {
                FuseOutcome::Fused(fused) => {
                    self.next_id += 1;
                    for id in &cluster.member_ids {
                        self.records.remove(id);
                    }
                    self.records.insert(fused.id, fused);
                    applied.push(FusionApplied {
                        fused_id,
                        member_ids: cluster.member_ids.clone(),
                    });
                }
                FuseOutcome::Rejected(_) => {
                    rejections += 1;
                }
            }
        }
        (applied, rejections)
    }

    /// Evicts the weakest records (ties: oldest creation, then smallest id)
    /// from any layer over its capacity.
    fn enforce_capacity(&mut self, now: Timestamp) -> Vec<MemoryId> {
        let mut evicted = Vec::new();
        for layer in [Layer::Lml, Layer::Sml] {
            let cap = self.config.cap_for(layer);
            loop {
                let mut in_layer: Vec<(f64, Timestamp, MemoryId)> = self
                    .records
                    .values()
                    .filter(|r| r.layer == layer)
                    .map(|r| (dynamics::strength_at(r, now, &self.config), r.created_at, r.id))
                    .collect();
                if in_layer.len() <= cap {
                    break;
                }
                in_layer.sort_by(|a, b| {
                    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2))
                });
                let (_, _, weakest) = in_layer[0];
                self.records.remove(&weakest);
                evicted.push(weakest);
            }
        }
        evicted
    }

    /// Observes new content. Pipeline order: decay phase over the whole
    /// store, conflict resolution of the new memory against its candidate
    /// set, one fusion pass, then capacity enforcement.
    pub fn observe(
        &mut self,
        text: &str,
        now: Timestamp,
        embedder: &dyn EmbeddingProvider,
        classifier: &dyn RelationOracle,
        merger: &dyn MergeOracle,
    ) -> Result<ObserveOutcome, StoreError> {
        self.observe_labeled(text, None, now, embedder, classifier, merger)
    }

    /// `observe` with a benchmark category label attached to the record.
    pub fn observe_labeled(
        &mut self,
        text: &str,
        category: Option<&str>,
        now: Timestamp,
        embedder: &dyn EmbeddingProvider,
        classifier: &dyn RelationOracle,
        merger: &dyn MergeOracle,
    ) -> Result<ObserveOutcome, StoreError> {
        self.check_clock(now)?;
        // Embed before touching anything: a failed embedding must leave the
        // store unchanged.
        let embedding = embedder.embed(text)?;
        self.check_dimension(&embedding)?;

        let mut pruned = self.decay_phase(now);

        let id = self.allocate_id();
        let mut record = MemoryRecord::new(id, text.to_string(), embedding, now, Layer::Sml, 0.0);
        record.category_label = category.map(str::to_string);
        record.importance = dynamics::importance(&record, &self.context, now, &self.config);
        record.layer = dynamics::assign_layer(&record, &self.config);

        let candidates =
            conflict::find_conflict_candidates(&record, self.records.values(), &self.config);
        let resolution = conflict::resolve(
            &mut self.records,
            record,
            &candidates,
            classifier,
            merger,
            now,
            &self.config,
        );
        // Suppression may have pushed a contradicted record under the prune
        // floor; it is forgotten before fusion can pick it up.
        let suppressed_away: Vec<MemoryId> = self
            .records
            .values()
            .filter(|r| dynamics::strength_at(r, now, &self.config) < self.config.eps_prune)
            .map(|r| r.id)
            .collect();
        for id in &suppressed_away {
            self.records.remove(id);
        }
        pruned.extend(suppressed_away);

        let (fused, fusion_rejections) = self.fusion_pass(now, merger, merger);
        let evicted = self.enforce_capacity(now);

        let mut resident_id = resolution.resident_id();
        if let Some(resident) = resident_id {
            for fusion in &fused {
                if fusion.member_ids.contains(&resident) {
                    resident_id = Some(fusion.fused_id);
                    break;
                }
            }
        }
        if let Some(resident) = resident_id {
            if !self.records.contains_key(&resident) {
                resident_id = None;
            }
        }

        self.observed_total += 1;
        self.clock = now;
        self.event_log.push(LoggedOp {
            at: now,
            op: StoreOp::Observe {
                text: text.to_string(),
                category: category.map(str::to_string),
            },
        });

        Ok(ObserveOutcome {
            resident_id,
            inserted: resolution.inserted.is_some(),
            resolution,
            fused,
            fusion_rejections,
            pruned,
            evicted,
        })
    }

    /// Ranked retrieval: cosine similarity times current strength, best
    /// first; ties prefer the newer record. Returned records are consolidated
    /// (the access is recorded) and the query embedding joins the context
    /// window.
    pub fn query(
        &mut self,
        text: &str,
        k: usize,
        now: Timestamp,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Vec<QueryHit>, StoreError> {
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        self.check_clock(now)?;
        let query_embedding = embedder.embed(text)?;
        self.check_dimension(&query_embedding)?;

        let mut scored: Vec<QueryHit> = self
            .records
            .values()
            .map(|r| {
                let similarity = dot(&query_embedding, &r.embedding);
                let strength = dynamics::strength_at(r, now, &self.config);
                QueryHit {
                    id: r.id,
                    score: similarity * strength,
                    similarity,
                    strength,
                    layer: r.layer,
                    created_at: r.created_at,
                    content: r.content.clone(),
                }
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.created_at.total_cmp(&a.created_at))
                .then(b.id.cmp(&a.id))
        });
        scored.truncate(k);

        for hit in &scored {
            let consolidated =
                dynamics::consolidate(&self.records[&hit.id], now, &self.config);
            self.records.insert(hit.id, consolidated);
        }
        self.context
            .push(query_embedding, self.config.context_window_len);

        self.clock = now;
        self.event_log.push(LoggedOp {
            at: now,
            op: StoreOp::Query {
                text: text.to_string(),
                k,
            },
        });
        Ok(scored)
    }

    /// Advances the clock through a decay phase only: importance refresh,
    /// layer transitions, pruning. No insertion, no fusion. Capacity is
    /// still enforced, since transitions alone can overfill a layer.
    pub fn tick(&mut self, now: Timestamp) -> Result<TickOutcome, StoreError> {
        self.check_clock(now)?;
        let pruned = self.decay_phase(now);
        let evicted = self.enforce_capacity(now);
        self.clock = now;
        self.event_log.push(LoggedOp {
            at: now,
            op: StoreOp::Tick,
        });
        Ok(TickOutcome { pruned, evicted })
    }

    pub fn stats(&self) -> StoreStats {
        let mut histogram = [0usize; 10];
        let mut lml = 0;
        let mut sml = 0;
        for record in self.records.values() {
            match record.layer {
                Layer::Lml => lml += 1,
                Layer::Sml => sml += 1,
            }
            let strength = dynamics::strength_at(record, self.clock, &self.config);
            let bin = ((strength * 10.0).floor() as usize).min(9);
            histogram[bin] += 1;
        }
        let srr_so_far = if self.observed_total == 0 {
            0.0
        } else {
            1.0 - self.records.len() as f64 / self.observed_total as f64
        };
        StoreStats {
            total: self.records.len(),
            lml,
            sml,
            observed_total: self.observed_total,
            srr_so_far,
            strength_histogram: histogram,
            clock_days: self.clock.days(),
        }
    }

    /// Replays an operation log against a fresh store with the same config.
    /// With deterministic providers the result is identical to the store
    /// that produced the log.
    pub fn replay(
        config: EngineConfig,
        ops: &[LoggedOp],
        embedder: &dyn EmbeddingProvider,
        classifier: &dyn RelationOracle,
        merger: &dyn MergeOracle,
    ) -> Result<MemoryStore, StoreError> {
        let mut store = MemoryStore::new(config);
        for logged in ops {
            match &logged.op {
                StoreOp::Observe { text, category } => {
                    store.observe_labeled(
                        text,
                        category.as_deref(),
                        logged.at,
                        embedder,
                        classifier,
                        merger,
                    )?;
                }
                StoreOp::Query { text, k } => {
                    store.query(text, *k, logged.at, embedder)?;
                }
                StoreOp::Tick => {
                    store.tick(logged.at)?;
                }
            }
        }
        Ok(store)
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<(), SnapshotError> {
        snapshot::save(self, path)
    }

    pub fn load_snapshot(path: &Path) -> Result<MemoryStore, SnapshotError> {
        snapshot::load(path)
    }

    /// Snapshot constructor; only the snapshot codec builds stores this way.
    pub(crate) fn from_parts(
        config: EngineConfig,
        records: BTreeMap<MemoryId, MemoryRecord>,
        context: ContextWindow,
        clock: Timestamp,
        next_id: u64,
        observed_total: u64,
        event_log: Vec<LoggedOp>,
    ) -> MemoryStore {
        MemoryStore {
            config,
            records,
            context,
            clock,
            next_id,
            observed_total,
            event_log,
        }
    }

    pub(crate) fn parts(
        &self,
    ) -> (
        &EngineConfig,
        &BTreeMap<MemoryId, MemoryRecord>,
        &ContextWindow,
        Timestamp,
        u64,
        u64,
        &[LoggedOp],
    ) {
        (
            &self.config,
            &self.records,
            &self.context,
            self.clock,
            self.next_id,
            self.observed_total,
            &self.event_log,
        )
    }
}
