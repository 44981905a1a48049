//! Scalar memory dynamics: importance scoring, adaptive decay, consolidation,
//! half-life, layer transitions, and pruning eligibility.
//!
//! Everything here is a pure function of its inputs; the store decides when
//! to apply the results.

use crate::config::EngineConfig;
use crate::embedding::{dot, Embedding};
use crate::record::{Layer, MemoryRecord, Timestamp};

/// Bounded window of recent query embeddings; the context against which
/// relevance is scored. Oldest entries are evicted first.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct ContextWindow {
    entries: Vec<Embedding>,
}

impl ContextWindow {
    pub fn new() -> Self {
        ContextWindow::default()
    }

    pub fn push(&mut self, embedding: Embedding, capacity: usize) {
        self.entries.push(embedding);
        while self.entries.len() > capacity {
            self.entries.remove(0);
        }
    }

    pub fn entries(&self) -> &[Embedding] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Exponentially time-decayed access rate: `sum_j exp(-kappa * (now - t_j))`
/// over the record's access history.
pub fn decayed_access_rate(record: &MemoryRecord, now: Timestamp, kappa: f64) -> f64 {
    record
        .access_times
        .iter()
        .map(|&t| (-kappa * now.since(t)).exp())
        .sum()
}

/// Max cosine similarity between the record and the context window, clamped
/// to [0,1]; zero for an empty context.
pub fn contextual_relevance(embedding: &Embedding, ctx: &ContextWindow) -> f64 {
    ctx.entries()
        .iter()
        .map(|q| dot(embedding, q))
        .fold(0.0f64, f64::max)
        .clamp(0.0, 1.0)
}

/// Importance score in [0,1]: a convex combination of contextual relevance,
/// the saturated decayed access rate, and recency.
pub fn importance(
    record: &MemoryRecord,
    ctx: &ContextWindow,
    now: Timestamp,
    cfg: &EngineConfig,
) -> f64 {
    let rel = contextual_relevance(&record.embedding, ctx);
    let rate = decayed_access_rate(record, now, cfg.kappa);
    let freq = rate / (1.0 + rate);
    let recency = (-cfg.delta * now.since(record.created_at)).exp();
    cfg.alpha * rel + cfg.beta_freq * freq + cfg.gamma * recency
}

/// Decay rate adapted to importance: `lambda_base * decay_scale * exp(-mu * I)`.
pub fn decay_rate(importance: f64, decay_scale: f64, cfg: &EngineConfig) -> f64 {
    cfg.lambda_base * decay_scale * (-cfg.mu * importance).exp()
}

/// Strength at `now`, decayed from the record's anchor:
/// `anchor * exp(-lambda * elapsed^beta)` with the layer's shape exponent.
pub fn strength_at(record: &MemoryRecord, now: Timestamp, cfg: &EngineConfig) -> f64 {
    let lambda = decay_rate(record.importance, record.decay_scale, cfg);
    let elapsed = now.since(record.anchor_time);
    let beta = cfg.shape_for(record.layer);
    record.anchor_strength * (-lambda * elapsed.powf(beta)).exp()
}

/// Days until strength halves: `(ln 2 / lambda)^(1/beta)` at unit decay scale.
pub fn half_life(importance: f64, layer: Layer, cfg: &EngineConfig) -> f64 {
    let lambda = decay_rate(importance, 1.0, cfg);
    (std::f64::consts::LN_2 / lambda).powf(1.0 / cfg.shape_for(layer))
}

/// Access-triggered reinforcement with diminishing returns (spacing effect):
/// `v+ = v + delta_v * (1 - v) * exp(-n/N)` where `n` counts accesses within
/// the last `window_days` before `now`. Resets the anchor to `now` and
/// appends the access.
pub fn consolidate(record: &MemoryRecord, now: Timestamp, cfg: &EngineConfig) -> MemoryRecord {
    let current = strength_at(record, now, cfg);
    let recent = record
        .access_times
        .iter()
        .filter(|&&t| t <= now && now.since(t) < cfg.window_days)
        .count() as f64;
    let reinforced = current + cfg.delta_v * (1.0 - current) * (-recent / cfg.big_n).exp();
    let mut out = record.clone();
    out.anchor_strength = reinforced.clamp(0.0, 1.0);
    out.anchor_time = now;
    out.access_times.push(now);
    out
}

/// Two-threshold layer assignment; importance inside the hysteresis band
/// keeps the current layer.
pub fn assign_layer(record: &MemoryRecord, cfg: &EngineConfig) -> Layer {
    if record.importance >= cfg.theta_promote {
        Layer::Lml
    } else if record.importance < cfg.theta_demote {
        Layer::Sml
    } else {
        record.layer
    }
}

/// True when the record should be removed: strength under the prune floor, or
/// dormant (no access or creation activity) longer than the dormancy limit.
pub fn prune_eligible(record: &MemoryRecord, now: Timestamp, cfg: &EngineConfig) -> bool {
    strength_at(record, now, cfg) < cfg.eps_prune
        || now.since(record.last_activity()) > cfg.t_max_days
}
